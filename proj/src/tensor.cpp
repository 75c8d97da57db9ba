#include "mirrorseg/tensor.hpp"
#include "mirrorseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mirrorseg {

std::string Shape5::str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(d) + "," +
           std::to_string(h) + "," + std::to_string(w) + "]";
}

Tensor Tensor::zeros(const Shape5& s, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = s;
    impl->data.assign(s.numel(), 0.f);
    impl->requires_grad = requires_grad;
    impl->needs_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape5& s, float value, bool requires_grad) {
    Tensor t = zeros(s, requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

Tensor Tensor::from_data(const Shape5& s, std::vector<float> data, bool requires_grad) {
    if (static_cast<int64_t>(data.size()) != s.numel())
        throw Error("data", "tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + s.str());
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = s;
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    impl->needs_grad = requires_grad;
    return Tensor(std::move(impl));
}

std::span<float> Tensor::grad() const {
    if (impl_->grad.size() != impl_->data.size())
        throw Error("train", "gradient not materialized; run backward first");
    return impl_->grad;
}

void Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    impl_->needs_grad = v;
}

float Tensor::item() const {
    if (numel() != 1) throw Error("data", "item() on non-scalar tensor " + shape().str());
    return impl_->data[0];
}

double Tensor::item_f64() const {
    if (numel() != 1) throw Error("data", "item_f64() on non-scalar tensor " + shape().str());
    return impl_->has_scalar_f64 ? impl_->scalar_f64 : static_cast<double>(impl_->data[0]);
}

namespace autograd {

namespace {
thread_local bool g_grad_enabled = true;
bool g_finite_checks = false;
} // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

void check_finite(const Tensor& t, const char* op_name) {
    if (!g_finite_checks) return;
    const auto data = t.data();
    for (size_t i = 0; i < data.size(); ++i)
        if (!std::isfinite(data[i]))
            throw Error("train", std::string(op_name) + ": non-finite output at element " +
                                     std::to_string(i));
}

Tensor make_result(const Shape5& shape, const std::vector<Tensor>& parents) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data.assign(shape.numel(), 0.f);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.impl()->needs_grad;
    impl->needs_grad = needs && g_grad_enabled;
    if (impl->needs_grad) {
        impl->parents.reserve(parents.size());
        for (const auto& p : parents) impl->parents.push_back(p.impl_ptr());
    }
    return Tensor(std::move(impl));
}

void set_backward(Tensor& out, std::function<void(TensorImpl&)> fn) {
    if (out.impl()->needs_grad) out.impl()->backward_fn = std::move(fn);
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw Error("train", "backward requires a scalar loss");
    if (!loss.impl()->needs_grad)
        throw Error("train", "backward on a graph with no parameters requiring grad");

    // Post-order DFS over parent edges; reverse gives a valid execution order.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    struct Frame {
        TensorImpl* node;
        size_t next_parent;
    };
    std::vector<Frame> stack{{loss.impl(), 0}};
    seen.insert(loss.impl());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorImpl* p = f.node->parents[f.next_parent++].get();
            if (p->needs_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    loss.impl()->ensure_grad();
    loss.impl()->grad[0] = 1.f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
}

} // namespace autograd

GradCheckReport grad_check_fd(const std::function<double(std::span<const float>)>& f,
                              std::span<const float> x0, std::span<const float> analytic,
                              double eps, double tol) {
    if (x0.size() != analytic.size())
        throw Error("data", "grad_check_fd: gradient length mismatch");

    std::vector<float> x(x0.begin(), x0.end());
    std::vector<double> fd(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const float saved = x[i];
        const float xp = static_cast<float>(saved + eps);
        const float xm = static_cast<float>(saved - eps);
        x[i] = xp;
        const double fp = f(x);
        x[i] = xm;
        const double fm = f(x);
        x[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw Error("train", "grad_check_fd: non-finite function value");
        // Divide by the realized f32 step, not the nominal one.
        fd[i] = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
    }

    double scale = 0.0;
    for (size_t i = 0; i < fd.size(); ++i)
        scale = std::max({scale, std::abs(fd[i]), std::abs(static_cast<double>(analytic[i]))});

    GradCheckReport rep;
    for (size_t i = 0; i < fd.size(); ++i) {
        const double a = analytic[i];
        const double diff = std::abs(a - fd[i]);
        const double denom = std::max({std::abs(a), std::abs(fd[i]), 0.01 * scale, 1e-12});
        const double rel = diff / denom;
        rep.max_abs_err = std::max(rep.max_abs_err, diff);
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_index = static_cast<int64_t>(i);
        }
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps, double tol) {
    Tensor probe = Tensor::from_data(x.shape(), {x.data().begin(), x.data().end()}, true);
    Tensor loss = f(probe);
    autograd::backward(loss);
    std::vector<float> analytic(probe.grad().begin(), probe.grad().end());

    auto eval = [&](std::span<const float> vals) {
        autograd::NoGradGuard no_grad;
        Tensor xe = Tensor::from_data(x.shape(), {vals.begin(), vals.end()}, false);
        return f(xe).item_f64();
    };
    return grad_check_fd(eval, x.data(), analytic, eps, tol);
}

} // namespace mirrorseg
