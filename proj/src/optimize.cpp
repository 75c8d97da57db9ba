#include "mirrorseg/optimize.hpp"
#include "mirrorseg/error.hpp"
#include "mirrorseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace mirrorseg {

void TrainConfig::validate() const {
    if (lr0 <= 0) throw Error("config", "initial learning rate must be positive");
    if (n_epochs < 1) throw Error("config", "n_epochs must be >= 1");
    if (batch_size < 1) throw Error("config", "batch_size must be >= 1");
    if (patch_size < 2) throw Error("config", "patch_size must be >= 2");
    if (swa_keep_every < 1 || swa_average_last < 1)
        throw Error("config", "SWA settings must be >= 1");
    if (int64_t(swa_average_last) * swa_keep_every > n_epochs)
        throw Error("config", "swa_average_last * swa_keep_every exceeds n_epochs");
}

double lr_schedule(int ep, int n_ep, double lr0, double power) {
    if (ep < 0 || ep > n_ep)
        throw Error("train", "epoch " + std::to_string(ep) + " outside [0, " +
                                 std::to_string(n_ep) + "]");
    return lr0 * std::pow(1.0 - static_cast<double>(ep) / static_cast<double>(n_ep), power);
}

// --- Losses -----------------------------------------------------------------

Tensor dice_loss(const Tensor& probs, const Tensor& target, float smooth) {
    if (!(probs.shape() == target.shape()))
        throw Error("data", "dice_loss: shape mismatch " + probs.shape().str() + " vs " +
                                target.shape().str());
    const Shape5 s = probs.shape();
    const int64_t pairs = s.n * s.c;
    const int64_t sp = s.spatial();

    Tensor out = autograd::make_result({1, 1, 1, 1, 1}, {probs, target});
    // Per (sample, channel) stats reused by the backward pass.
    auto stats = std::make_shared<std::vector<double>>(pairs * 2);  // numerator A, denom B
    const float* pd = probs.data().data();
    const float* td = target.data().data();
    double mean_dice = 0.0;
    for (int64_t pl = 0; pl < pairs; ++pl) {
        const float* p = pd + pl * sp;
        const float* t = td + pl * sp;
        double inter = 0.0, psum = 0.0, tsum = 0.0;
        for (int64_t i = 0; i < sp; ++i) {
            inter += static_cast<double>(p[i]) * t[i];
            psum += p[i];
            tsum += t[i];
        }
        const double A = 2.0 * inter + smooth;
        const double B = psum + tsum + smooth;
        (*stats)[2 * pl] = A;
        (*stats)[2 * pl + 1] = B;
        mean_dice += A / B;
    }
    mean_dice /= static_cast<double>(pairs);
    out.data()[0] = static_cast<float>(1.0 - mean_dice);
    out.impl()->scalar_f64 = 1.0 - mean_dice;
    out.impl()->has_scalar_f64 = true;

    auto p_impl = probs.impl_ptr();
    auto t_impl = target.impl_ptr();
    autograd::set_backward(out, [p_impl, t_impl, stats, pairs, sp](TensorImpl& self) {
        if (!p_impl->needs_grad) return;
        p_impl->ensure_grad();
        const double go = self.grad[0];
        const float* td = t_impl->data.data();
#pragma omp parallel for schedule(static)
        for (int64_t pl = 0; pl < pairs; ++pl) {
            const double A = (*stats)[2 * pl], B = (*stats)[2 * pl + 1];
            const float* t = td + pl * sp;
            float* gp = p_impl->grad.data() + pl * sp;
            const double scale = go / static_cast<double>(pairs);
            for (int64_t i = 0; i < sp; ++i) {
                // d(1 - A/B)/dp_i = (A - 2 t_i B) / B^2
                gp[i] += static_cast<float>(scale * (A - 2.0 * t[i] * B) / (B * B));
            }
        }
    });
    autograd::check_finite(out, "dice_loss");
    return out;
}

Tensor bce_loss(const Tensor& logits, const Tensor& target) {
    if (!(logits.shape() == target.shape()))
        throw Error("data", "bce_loss: shape mismatch " + logits.shape().str() + " vs " +
                                target.shape().str());
    const int64_t n = logits.numel();
    Tensor out = autograd::make_result({1, 1, 1, 1, 1}, {logits, target});
    const float* zd = logits.data().data();
    const float* td = target.data().data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double z = zd[i], t = td[i];
        acc += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    out.data()[0] = static_cast<float>(acc / static_cast<double>(n));
    out.impl()->scalar_f64 = acc / static_cast<double>(n);
    out.impl()->has_scalar_f64 = true;

    auto z_impl = logits.impl_ptr();
    auto t_impl = target.impl_ptr();
    autograd::set_backward(out, [z_impl, t_impl, n](TensorImpl& self) {
        if (!z_impl->needs_grad) return;
        z_impl->ensure_grad();
        const double go = self.grad[0] / static_cast<double>(n);
        const float* zd = z_impl->data.data();
        const float* td = t_impl->data.data();
        float* gz = z_impl->grad.data();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            const double z = zd[i];
            const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                      : std::exp(z) / (1.0 + std::exp(z));
            gz[i] += static_cast<float>(go * (sig - td[i]));
        }
    });
    autograd::check_finite(out, "bce_loss");
    return out;
}

namespace {
constexpr double kBceEps = 1e-12;
}

Tensor bce_probs_loss(const Tensor& probs, const Tensor& target) {
    if (!(probs.shape() == target.shape()))
        throw Error("data", "bce_probs_loss: shape mismatch");
    const int64_t n = probs.numel();
    constexpr double kEps = kBceEps;
    Tensor out = autograd::make_result({1, 1, 1, 1, 1}, {probs, target});
    const float* pd = probs.data().data();
    const float* td = target.data().data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double p = std::clamp(static_cast<double>(pd[i]), kEps, 1.0 - kEps);
        const double t = td[i];
        acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    out.data()[0] = static_cast<float>(acc / static_cast<double>(n));

    auto p_impl = probs.impl_ptr();
    auto t_impl = target.impl_ptr();
    autograd::set_backward(out, [p_impl, t_impl, n](TensorImpl& self) {
        if (!p_impl->needs_grad) return;
        p_impl->ensure_grad();
        const double go = self.grad[0] / static_cast<double>(n);
        const float* pd = p_impl->data.data();
        const float* td = t_impl->data.data();
        float* gp = p_impl->grad.data();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            const double p = std::clamp(static_cast<double>(pd[i]), kBceEps, 1.0 - kBceEps);
            gp[i] += static_cast<float>(go * (p - td[i]) / (p * (1.0 - p)));
        }
    });
    autograd::check_finite(out, "bce_probs_loss");
    return out;
}

// --- SGD ---------------------------------------------------------------------

void sgd_step(std::span<float> param, std::span<const float> grad, std::span<float> velocity,
              double lr, double momentum) {
    if (param.size() != grad.size() || param.size() != velocity.size())
        throw Error("train", "sgd_step: buffer size mismatch");
    for (size_t i = 0; i < param.size(); ++i) {
        velocity[i] = static_cast<float>(momentum * velocity[i] + grad[i]);
        param[i] -= static_cast<float>(lr * velocity[i]);
    }
}

SGD::SGD(std::vector<NamedParam> params, double momentum)
    : params_(std::move(params)), momentum_(momentum) {
    velocity_.reserve(params_.size());
    for (const auto& p : params_) velocity_.emplace_back(p.tensor.numel(), 0.f);
}

void SGD::step(double lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& t = params_[i].tensor;
        if (t.impl()->grad.size() != t.impl()->data.size()) continue;  // untouched this step
        sgd_step(t.data(), t.impl()->grad, velocity_[i], lr, momentum_);
    }
}

void SGD::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

// --- SWA ----------------------------------------------------------------------

std::vector<NamedParam> swa_average(const std::vector<Checkpoint>& checkpoints) {
    if (checkpoints.empty()) throw Error("train", "swa_average: no checkpoints");
    const auto& ref = checkpoints.front().params;
    for (const auto& c : checkpoints) {
        if (c.params.size() != ref.size())
            throw Error("train", "swa_average: checkpoint parameter sets differ");
        for (size_t i = 0; i < ref.size(); ++i)
            if (c.params[i].name != ref[i].name ||
                !(c.params[i].tensor.shape() == ref[i].tensor.shape()))
                throw Error("train", "swa_average: mismatch at parameter " + ref[i].name);
    }

    const size_t k = checkpoints.size();
    std::vector<NamedParam> out;
    out.reserve(ref.size());
    std::vector<double> vals(k);
    for (size_t pi = 0; pi < ref.size(); ++pi) {
        const int64_t n = ref[pi].tensor.numel();
        std::vector<float> avg(n);
        for (int64_t e = 0; e < n; ++e) {
            for (size_t c = 0; c < k; ++c) vals[c] = checkpoints[c].params[pi].tensor.data()[e];
            std::sort(vals.begin(), vals.end());  // order-independent sum
            double s = 0.0;
            for (double v : vals) s += v;
            avg[e] = static_cast<float>(s / static_cast<double>(k));
        }
        out.push_back({ref[pi].name, Tensor::from_data(ref[pi].tensor.shape(), std::move(avg))});
    }
    return out;
}

// --- Training driver -----------------------------------------------------------

namespace {

std::vector<NamedParam> snapshot_params(const MirrorNet& net) {
    std::vector<NamedParam> out;
    for (const auto& p : net.parameters()) {
        std::vector<float> copy(p.tensor.data().begin(), p.tensor.data().end());
        out.push_back({p.name, Tensor::from_data(p.tensor.shape(), std::move(copy))});
    }
    return out;
}

struct BatchTensors {
    Tensor ct;      // [B,1,P,P,P]
    Tensor pet;     // [B,1,P,P,P]
    Tensor target;  // [B,1,P,P,P] lesions or [B,C,P,P,P] one-hot tissues
};

BatchTensors assemble_batch(const std::vector<Patch>& patches, Stage stage,
                            int64_t class_count) {
    const auto B = static_cast<int64_t>(patches.size());
    const int64_t P = patches.front().size;
    const int64_t sp = P * P * P;

    std::vector<float> ct(B * sp), pet(B * sp);
    for (int64_t b = 0; b < B; ++b) {
        std::copy(patches[b].ct.begin(), patches[b].ct.end(), ct.begin() + b * sp);
        std::copy(patches[b].pet.begin(), patches[b].pet.end(), pet.begin() + b * sp);
    }

    BatchTensors out;
    out.ct = Tensor::from_data({B, 1, P, P, P}, std::move(ct));
    out.pet = Tensor::from_data({B, 1, P, P, P}, std::move(pet));

    if (stage == Stage::CT) {
        std::vector<float> onehot(B * class_count * sp, 0.f);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < sp; ++i) {
                const uint32_t cls = patches[b].tissues[i];
                if (cls >= static_cast<uint32_t>(class_count))
                    throw Error("data", "tissue label " + std::to_string(cls) +
                                            " exceeds CT branch output channels " +
                                            std::to_string(class_count));
                onehot[(b * class_count + cls) * sp + i] = 1.f;
            }
        out.target = Tensor::from_data({B, class_count, P, P, P}, std::move(onehot));
    } else {
        std::vector<float> lesion(B * sp);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < sp; ++i)
                lesion[b * sp + i] = static_cast<float>(patches[b].lesions[i] != 0);
        out.target = Tensor::from_data({B, 1, P, P, P}, std::move(lesion));
    }
    return out;
}

Tensor stage_loss(const MirrorNet& net, Stage stage, const BatchTensors& batch) {
    if (stage == Stage::CT) {
        Tensor logits = net.forward_ct(batch.ct).tissue_logits;
        Tensor probs = softmax_channels(logits);
        return add(bce_probs_loss(probs, batch.target), dice_loss(probs, batch.target));
    }
    Tensor logits = net.forward_full(batch.ct, batch.pet);
    return add(bce_loss(logits, batch.target), dice_loss(sigmoid(logits), batch.target));
}

double run_epoch_pass(MirrorNet& net, const std::vector<Study>& studies,
                      const std::vector<std::vector<PatchIndex>>& per_study,
                      const TrainConfig& cfg, const AugmentConfig& aug, int ep, bool training,
                      SGD* opt) {
    std::vector<PatchIndex> all;
    for (const auto& ps : per_study) all.insert(all.end(), ps.begin(), ps.end());
    const uint64_t salt = training ? 0x7121 : 0x5a1d;
    const auto list =
        balance_epoch(all, rng::derive_seed(cfg.seed, salt + static_cast<uint64_t>(ep)));

    const int64_t class_count = net.ct_config().out_channels;
    double loss_sum = 0.0;
    int64_t sample_count = 0;
    const double lr = lr_schedule(ep, cfg.n_epochs, cfg.lr0, cfg.poly_power);

    for (size_t start = 0; start < list.size(); start += cfg.batch_size) {
        const size_t end = std::min(list.size(), start + cfg.batch_size);
        std::vector<Patch> patches;
        patches.reserve(end - start);
        for (size_t i = start; i < end; ++i) {
            Patch p = extract_patch(studies[list[i].study], list[i]);
            if (training)
                augment(p, aug,
                        rng::derive_seed(cfg.seed,
                                         0xa06'0000ULL + static_cast<uint64_t>(ep) * 100000 + i));
            patches.push_back(std::move(p));
        }
        const BatchTensors batch = assemble_batch(patches, cfg.stage, class_count);

        double loss_value;
        if (training) {
            Tensor loss = stage_loss(net, cfg.stage, batch);
            loss_value = loss.item();
            if (!std::isfinite(loss_value))
                throw Error("train", std::string("non-finite loss in ") +
                                         stage_name(cfg.stage) + " stage, epoch " +
                                         std::to_string(ep + 1) + ", batch " +
                                         std::to_string(start / cfg.batch_size));
            autograd::backward(loss);
            opt->step(lr);
            opt->zero_grad();
        } else {
            autograd::NoGradGuard no_grad;
            loss_value = stage_loss(net, cfg.stage, batch).item();
        }
        loss_sum += loss_value * static_cast<double>(end - start);
        sample_count += static_cast<int64_t>(end - start);
    }
    return sample_count ? loss_sum / static_cast<double>(sample_count)
                        : std::numeric_limits<double>::quiet_NaN();
}

} // namespace

TrainResult train_stage(MirrorNet& net, const std::vector<Study>& train_set,
                        const std::vector<Study>& val_set, const TrainConfig& cfg,
                        const AugmentConfig& aug, const std::string& checkpoint_dir,
                        const EpochMonitor& monitor) {
    cfg.validate();
    if (train_set.empty()) throw Error("train", "empty training set");
    if (cfg.stage == Stage::PET && !net.ct_frozen())
        throw Error("train", "PET stage requires a frozen CT branch");

    std::vector<std::vector<PatchIndex>> train_patches, val_patches;
    for (size_t i = 0; i < train_set.size(); ++i)
        train_patches.push_back(enumerate_patches(train_set[i], static_cast<int64_t>(i),
                                                  cfg.patch_size, cfg.patch_size));
    for (size_t i = 0; i < val_set.size(); ++i)
        val_patches.push_back(enumerate_patches(val_set[i], static_cast<int64_t>(i),
                                                cfg.patch_size, cfg.patch_size));

    SGD opt(net.parameters(cfg.stage == Stage::CT ? BranchFilter::CT : BranchFilter::PET),
            cfg.momentum);

    TrainResult result;
    for (int ep = 0; ep < cfg.n_epochs; ++ep) {
        EpochRecord rec;
        rec.epoch = ep + 1;
        rec.stage = cfg.stage;
        rec.lr = lr_schedule(ep, cfg.n_epochs, cfg.lr0, cfg.poly_power);
        rec.train_loss = run_epoch_pass(net, train_set, train_patches, cfg, aug, ep, true, &opt);
        rec.val_loss = val_set.empty()
                           ? std::numeric_limits<double>::quiet_NaN()
                           : run_epoch_pass(net, val_set, val_patches, cfg, aug, ep, false,
                                            nullptr);
        result.log.push_back(rec);
        if (monitor) monitor(rec);

        if ((ep + 1) % cfg.swa_keep_every == 0) {
            Checkpoint ckpt;
            ckpt.epoch = ep + 1;
            ckpt.config_hash = net.architecture_hash();
            ckpt.params = snapshot_params(net);
            if (!checkpoint_dir.empty()) {
                char name[64];
                std::snprintf(name, sizeof name, "%s_ep%03d", stage_name(cfg.stage), ep + 1);
                save_checkpoint(checkpoint_dir + "/" + name, ckpt.params, ckpt.epoch,
                                ckpt.config_hash);
            }
            result.kept.push_back(std::move(ckpt));
        }
    }

    if (cfg.stage == Stage::PET) {
        const auto last = static_cast<size_t>(cfg.swa_average_last);
        if (result.kept.size() < last)
            throw Error("train", "fewer kept checkpoints than swa_average_last");
        std::vector<Checkpoint> tail(result.kept.end() - last, result.kept.end());
        net.load_parameters(swa_average(tail));
    }
    return result;
}

void write_loss_log(const std::vector<EpochRecord>& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error("io", "cannot open for writing: " + path);
    f << "epoch,stage,train_loss,val_loss,lr\n";
    char buf[160];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof buf, "%d,%s,%.9g,%.9g,%.9g\n", r.epoch, stage_name(r.stage),
                      r.train_loss, r.val_loss, r.lr);
        f << buf;
    }
}

} // namespace mirrorseg
