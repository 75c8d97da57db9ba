#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mirrorseg {

struct Shape5 {
    int64_t n = 1, c = 1, d = 1, h = 1, w = 1;

    int64_t numel() const { return n * c * d * h * w; }
    int64_t spatial() const { return d * h * w; }
    bool operator==(const Shape5&) const = default;
    std::string str() const;
};

struct TensorImpl {
    Shape5 shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until backward touches this node
    bool requires_grad = false;  // leaf parameters
    bool needs_grad = false;     // requires_grad or downstream of one
    bool has_scalar_f64 = false;  // reductions keep their f64 value
    double scalar_f64 = 0.0;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.f);
    }
};

// Value-semantic handle onto a shared tensor node. Copies alias.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(const Shape5& s, bool requires_grad = false);
    static Tensor full(const Shape5& s, float value, bool requires_grad = false);
    static Tensor from_data(const Shape5& s, std::vector<float> data, bool requires_grad = false);

    explicit operator bool() const { return impl_ != nullptr; }
    const Shape5& shape() const { return impl_->shape; }
    int64_t numel() const { return impl_->shape.numel(); }

    std::span<float> data() { return impl_->data; }
    std::span<const float> data() const { return impl_->data; }
    std::span<float> grad() const;  // throws if not materialized

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v);
    void zero_grad() { impl_->grad.clear(); }

    float item() const;
    // Scalar value at the precision the producing reduction computed it.
    double item_f64() const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

namespace autograd {

// Runs reverse-mode accumulation from a scalar loss over the recorded graph.
void backward(const Tensor& loss);

// Scoped switch that disables graph recording (inference / validation).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Extension hooks for defining differentiable ops outside the engine.
// make_result computes needs_grad from the parents and, when recording is
// active, retains them; set_backward attaches the node's backward function.
Tensor make_result(const Shape5& shape, const std::vector<Tensor>& parents);
void set_backward(Tensor& out, std::function<void(TensorImpl&)> fn);

// Helper for backward functions: accumulate `delta` into a parent grad.
inline void accumulate(const std::shared_ptr<TensorImpl>& parent, int64_t index, float delta) {
    parent->grad[index] += delta;
}

// Engine-wide finite checks (used by tests); throws on NaN/Inf op outputs.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();
void check_finite(const Tensor& t, const char* op_name);

} // namespace autograd

// Finite-difference gradient verification. `f` is evaluated at perturbed
// copies of x0 (central differences, step eps) and compared against
// `analytic`. Relative error is measured against the larger magnitude with a
// floor at 1% of the gradient scale, so exact zeros compare absolutely.
struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int64_t worst_index = -1;
    bool pass = false;
};

GradCheckReport grad_check_fd(const std::function<double(std::span<const float>)>& f,
                              std::span<const float> x0, std::span<const float> analytic,
                              double eps, double tol);

// Convenience form running both passes through the engine: f maps a tensor to
// a scalar tensor; the analytic gradient comes from backward().
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps, double tol);

} // namespace mirrorseg
