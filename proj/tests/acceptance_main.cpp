// Acceptance suite: runs every acceptance criterion end to end and prints one
// pass/fail line per criterion. Exit code is the number of failed criteria.

#include "mirrorseg/checkpoint.hpp"
#include "mirrorseg/inference.hpp"
#include "mirrorseg/metrics.hpp"
#include "mirrorseg/mirror_net.hpp"
#include "mirrorseg/optimize.hpp"
#include "mirrorseg/pipeline.hpp"
#include "mirrorseg/run_config.hpp"
#include "mirrorseg/rng.hpp"

#include "metrics_oracle.hpp"
#include "ref_net.hpp"
#include "ref_ops.hpp"
#include "test_fixtures.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace mirrorseg;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail,
            double seconds) {
    std::printf("[%s] criterion %d: %s (%s; %.1fs)\n", ok ? "PASS" : "FAIL", id, name.c_str(),
                detail.c_str(), seconds);
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

struct Timer {
    clk::time_point t0 = clk::now();
    double elapsed() const { return std::chrono::duration<double>(clk::now() - t0).count(); }
};

std::string fmt(double v, int prec = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    return buf;
}

// --- criterion 1: paper-anchored metric oracle -------------------------------

void criterion_1() {
    Timer timer;
    std::vector<StudyMetrics> rows = {
        {"case1", 0.00, 0.00, 0.00}, {"case2", 0.85, 0.00, 0.36},
        {"case3", 0.90, 0.91, 2.07}, {"case4", 0.93, 0.04, 1.63},
        {"case5", 0.00, 0.00, 1.59}};
    const CohortReport rep = aggregate_metrics(rows);
    const bool exact = std::abs(rep.mean_dice - 0.536) < 1e-6 &&
                       std::abs(rep.mean_fnv_ml - 0.190) < 1e-6 &&
                       std::abs(rep.mean_fpv_ml - 1.130) < 1e-6;
    const bool rounded = std::round(rep.mean_dice * 100) == 54 &&
                         std::round(rep.mean_fnv_ml * 100) == 19 &&
                         std::round(rep.mean_fpv_ml * 100) == 113;
    report(1, "metric oracle reproduces reported means", exact && rounded,
           "means " + fmt(rep.mean_dice) + "/" + fmt(rep.mean_fnv_ml) + "/" +
               fmt(rep.mean_fpv_ml) + " -> 0.54/0.19/1.13",
           timer.elapsed());
}

// --- criterion 2: metric equivalence against brute force ----------------------

LabelMap random_mask(Shape3 shape, std::mt19937_64& g, double p) {
    LabelMap m = LabelMap::filled(shape, {2, 2, 2}, LabelSemantics::BinaryMask, 0);
    for (auto& v : m.data) v = rng::uniform(g) < p ? 1 : 0;
    return m;
}

void criterion_2() {
    Timer timer;
    int64_t mismatches = 0;
    const Spacing3 sp{2, 2, 2};

    // Exhaustive 2x2x2 pairs.
    for (uint32_t pb = 0; pb < 256; ++pb)
        for (uint32_t gb = 0; gb < 256; ++gb) {
            LabelMap pred = LabelMap::filled({2, 2, 2}, sp, LabelSemantics::BinaryMask, 0);
            LabelMap gt = pred;
            for (int i = 0; i < 8; ++i) {
                pred.data[i] = (pb >> i) & 1;
                gt.data[i] = (gb >> i) & 1;
            }
            for (Connectivity c : {Connectivity::C6, Connectivity::C18, Connectivity::C26}) {
                const StudyMetrics oracle =
                    testutil::metrics_oracle(pred, gt, sp, static_cast<int>(c));
                mismatches += dice(pred, gt) != oracle.dice;
                mismatches += false_positive_volume(pred, gt, sp, c) != oracle.fpv_ml;
                mismatches += false_negative_volume(pred, gt, sp, c) != oracle.fnv_ml;
            }
        }

    // 1e4 random 8^3 pairs at each connectivity.
    std::mt19937_64 g(20240901);
    for (int trial = 0; trial < 10000; ++trial) {
        const double p = rng::uniform(g, 0.05, 0.5);
        LabelMap pred = random_mask({8, 8, 8}, g, p);
        LabelMap gt = random_mask({8, 8, 8}, g, p);
        for (Connectivity c : {Connectivity::C6, Connectivity::C18, Connectivity::C26}) {
            const StudyMetrics oracle =
                testutil::metrics_oracle(pred, gt, sp, static_cast<int>(c));
            mismatches += dice(pred, gt) != oracle.dice;
            mismatches += false_positive_volume(pred, gt, sp, c) != oracle.fpv_ml;
            mismatches += false_negative_volume(pred, gt, sp, c) != oracle.fnv_ml;
        }
    }
    report(2, "dice/FPV/FNV match brute force exactly", mismatches == 0,
           "65536 exhaustive 2^3 pairs + 10000 random 8^3 pairs x {6,18,26}, " +
               std::to_string(mismatches) + " mismatches",
           timer.elapsed());
}

// --- criterion 3: gradient suite ----------------------------------------------

double dot_ref(const refops::Vec& a, const std::vector<float>& c) {
    double acc = 0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * c[i];
    return acc;
}

void criterion_3() {
    Timer timer;
    double worst = 0.0;
    std::string worst_op = "none";
    auto track = [&](const std::string& op, const GradCheckReport& rep) {
        if (rep.max_rel_err > worst) {
            worst = rep.max_rel_err;
            worst_op = op;
        }
    };
    auto weighted = [](const Tensor& out, const std::vector<float>& c) {
        return sum_all(mul(out, Tensor::from_data(out.shape(), c)));
    };

    {  // conv3d: input, weights, bias
        std::mt19937_64 g(3);
        ConvSpec spec = make_conv(2, 3, {3, 3, 3}, 1, 1, g);
        spec.weights.set_requires_grad(true);
        spec.bias.set_requires_grad(true);
        Tensor x = Tensor::from_data({1, 2, 4, 4, 4}, testutil::random_floats(128, 55), true);
        Tensor out = conv3d(x, spec);
        const auto c = testutil::random_floats(out.numel(), 77);
        autograd::backward(weighted(out, c));

        const refops::Vec w64(spec.weights.data().begin(), spec.weights.data().end());
        const refops::Vec b64(spec.bias.data().begin(), spec.bias.data().end());
        const refops::Vec x64(x.data().begin(), x.data().end());
        const refops::Dims xd{1, 2, 4, 4, 4};
        refops::Dims od;
        track("conv3d/x", grad_check_fd(
                              [&](std::span<const float> xs) {
                                  return dot_ref(refops::conv3d({xs.begin(), xs.end()}, xd,
                                                                w64, 3, {3, 3, 3}, 1, 1, b64,
                                                                od),
                                                 c);
                              },
                              x.data(), x.grad(), 1e-3, 1e-4));
        track("conv3d/w", grad_check_fd(
                              [&](std::span<const float> ws) {
                                  return dot_ref(refops::conv3d(x64, xd, {ws.begin(), ws.end()},
                                                                3, {3, 3, 3}, 1, 1, b64, od),
                                                 c);
                              },
                              spec.weights.data(), spec.weights.grad(), 1e-3, 1e-4));
        track("conv3d/b", grad_check_fd(
                              [&](std::span<const float> bs) {
                                  return dot_ref(refops::conv3d(x64, xd, w64, 3, {3, 3, 3}, 1,
                                                                1, {bs.begin(), bs.end()}, od),
                                                 c);
                              },
                              spec.bias.data(), spec.bias.grad(), 1e-3, 1e-4));
    }
    {  // pooling / upsampling
        Tensor x = Tensor::from_data({1, 2, 4, 4, 4}, testutil::random_floats(128, 91), true);
        Tensor y = downsample_max2(x);
        const auto c = testutil::random_floats(y.numel(), 92);
        autograd::backward(weighted(y, c));
        refops::Dims od;
        track("downsample_max2",
              grad_check_fd(
                  [&](std::span<const float> xs) {
                      return dot_ref(
                          refops::maxpool2({xs.begin(), xs.end()}, {1, 2, 4, 4, 4}, od), c);
                  },
                  x.data(), x.grad(), 1e-4, 1e-4));

        Tensor x2 = Tensor::from_data({1, 2, 2, 2, 2}, testutil::random_floats(16, 93), true);
        Tensor y2 = upsample_nearest2(x2);
        const auto c2 = testutil::random_floats(y2.numel(), 94);
        autograd::backward(weighted(y2, c2));
        track("upsample_nearest2",
              grad_check_fd(
                  [&](std::span<const float> xs) {
                      return dot_ref(
                          refops::upsample2({xs.begin(), xs.end()}, {1, 2, 2, 2, 2}, od), c2);
                  },
                  x2.data(), x2.grad(), 1e-3, 1e-4));
    }
    {  // instance norm
        Tensor x = Tensor::from_data({2, 2, 3, 3, 3}, testutil::random_floats(108, 23), true);
        Tensor gamma = Tensor::from_data({1, 2, 1, 1, 1}, {1.2f, 0.8f}, true);
        Tensor beta = Tensor::from_data({1, 2, 1, 1, 1}, {0.1f, -0.2f}, true);
        Tensor y = instance_norm(x, gamma, beta, 1e-5f);
        const auto c = testutil::random_floats(y.numel(), 24);
        autograd::backward(weighted(y, c));
        const refops::Dims xd{2, 2, 3, 3, 3};
        auto eval = [&](std::span<const float> vs, int which) {
            refops::Vec xv(x.data().begin(), x.data().end());
            refops::Vec gv(gamma.data().begin(), gamma.data().end());
            refops::Vec bv(beta.data().begin(), beta.data().end());
            refops::Vec& target = which == 0 ? xv : which == 1 ? gv : bv;
            std::copy(vs.begin(), vs.end(), target.begin());
            return dot_ref(refops::instance_norm(xv, xd, gv, bv, 1e-5), c);
        };
        track("instance_norm/x",
              grad_check_fd([&](std::span<const float> v) { return eval(v, 0); }, x.data(),
                            x.grad(), 1e-3, 1e-4));
        track("instance_norm/gamma",
              grad_check_fd([&](std::span<const float> v) { return eval(v, 1); },
                            gamma.data(), gamma.grad(), 1e-3, 1e-4));
        track("instance_norm/beta",
              grad_check_fd([&](std::span<const float> v) { return eval(v, 2); },
                            beta.data(), beta.grad(), 1e-3, 1e-4));
    }
    {  // pointwise ops
        const refops::Dims xd{1, 3, 3, 3, 3};
        Tensor x = Tensor::from_data({1, 3, 3, 3, 3},
                                     testutil::random_floats(81, 71, -2.f, 2.f), true);
        const auto c = testutil::random_floats(81, 72);
        {
            Tensor y = relu(x);
            autograd::backward(weighted(y, c));
            track("relu", grad_check_fd(
                              [&](std::span<const float> xs) {
                                  return dot_ref(refops::relu({xs.begin(), xs.end()}), c);
                              },
                              x.data(), x.grad(), 1e-4, 1e-4));
            x.zero_grad();
        }
        {
            Tensor y = sigmoid(x);
            autograd::backward(weighted(y, c));
            track("sigmoid", grad_check_fd(
                                 [&](std::span<const float> xs) {
                                     return dot_ref(refops::sigmoid({xs.begin(), xs.end()}), c);
                                 },
                                 x.data(), x.grad(), 1e-3, 1e-4));
            x.zero_grad();
        }
        {
            Tensor y = softmax_channels(x);
            autograd::backward(weighted(y, c));
            track("softmax_channels",
                  grad_check_fd(
                      [&](std::span<const float> xs) {
                          return dot_ref(
                              refops::softmax_channels({xs.begin(), xs.end()}, xd), c);
                      },
                      x.data(), x.grad(), 1e-3, 1e-4));
            x.zero_grad();
        }
        {
            Tensor b = Tensor::from_data({1, 2, 3, 3, 3}, testutil::random_floats(54, 73),
                                         true);
            Tensor y = concat_channels(x, b);
            const auto cc = testutil::random_floats(y.numel(), 74);
            autograd::backward(weighted(y, cc));
            track("concat_channels",
                  grad_check_fd(
                      [&](std::span<const float> xs) {
                          refops::Vec joined(xs.begin(), xs.end());
                          joined.insert(joined.end(), b.data().begin(), b.data().end());
                          return dot_ref(joined, cc);
                      },
                      x.data(), x.grad(), 1e-3, 1e-4));
        }
    }
    {  // losses
        const Shape5 s{2, 2, 2, 2, 2};
        auto tv = testutil::random_floats(s.numel(), 12, 0.f, 1.f);
        for (auto& v : tv) v = v > 0.5f ? 1.f : 0.f;
        Tensor t = Tensor::from_data(s, tv);
        const refops::Vec t64(tv.begin(), tv.end());
        const refops::Dims d{2, 2, 2, 2, 2};

        Tensor p = Tensor::from_data(s, testutil::random_floats(s.numel(), 11, 0.05f, 0.95f),
                                     true);
        autograd::backward(dice_loss(p, t));
        track("dice_loss", grad_check_fd(
                               [&](std::span<const float> ps) {
                                   return refops::dice_loss({ps.begin(), ps.end()}, t64, d,
                                                            1e-5);
                               },
                               p.data(), p.grad(), 1e-4, 1e-4));

        Tensor z = Tensor::from_data(s, testutil::random_floats(s.numel(), 13, -3.f, 3.f),
                                     true);
        autograd::backward(bce_loss(z, t));
        track("bce_loss", grad_check_fd(
                              [&](std::span<const float> zs) {
                                  return refops::bce_logits({zs.begin(), zs.end()}, t64);
                              },
                              z.data(), z.grad(), 1e-3, 1e-4));

        Tensor p2 = Tensor::from_data(s, testutil::random_floats(s.numel(), 14, 0.05f, 0.95f),
                                      true);
        autograd::backward(bce_probs_loss(p2, t));
        track("bce_probs_loss", grad_check_fd(
                                    [&](std::span<const float> ps) {
                                        return refops::bce_probs({ps.begin(), ps.end()}, t64);
                                    },
                                    p2.data(), p2.grad(), 1e-4, 1e-4));
    }
    const bool primitives_ok = worst < 1e-4;

    // Full mirror-net loss at the tiny configuration, with the f64 reference
    // network as the finite-difference oracle.
    MirrorNet net({2, 2, 1, 4}, {2, 2, 1, 1}, 2024);
    const int64_t P = 8;
    const int64_t n = P * P * P;
    auto tv = testutil::random_floats(n, 303, 0.f, 1.f);
    for (auto& v : tv) v = v > 0.8f ? 1.f : 0.f;
    Tensor target = Tensor::from_data({1, 1, P, P, P}, tv);
    Tensor ct_patch = Tensor::from_data({1, 1, P, P, P}, testutil::random_floats(n, 301));
    Tensor pet_patch = Tensor::from_data({1, 1, P, P, P}, testutil::random_floats(n, 302),
                                         true);
    ct_patch.set_requires_grad(true);

    Tensor logits = net.forward_full(ct_patch, pet_patch);
    Tensor loss = add(bce_loss(logits, target), dice_loss(sigmoid(logits), target));
    autograd::backward(loss);

    const refnet::ParamTable params(net);
    const refops::Vec target64(tv.begin(), tv.end());
    const refops::Vec ct64(ct_patch.data().begin(), ct_patch.data().end());
    const refops::Vec pet64(pet_patch.data().begin(), pet_patch.data().end());
    const refops::Dims patch_dims{1, 1, P, P, P};

    // The reference must agree with the engine forward before its finite
    // differences can arbitrate the backward.
    const double ref_loss = refnet::full_loss(params, net, ct64, pet64, target64, patch_dims);
    const bool forward_agrees = std::abs(ref_loss - loss.item_f64()) < 1e-4;

    const auto rep_pet = grad_check_fd(
        [&](std::span<const float> vals) {
            return refnet::full_loss(params, net, ct64, {vals.begin(), vals.end()}, target64,
                                     patch_dims);
        },
        pet_patch.data(), pet_patch.grad(), 1e-3, 1e-3);
    const auto rep_ct = grad_check_fd(
        [&](std::span<const float> vals) {
            return refnet::full_loss(params, net, {vals.begin(), vals.end()}, pet64, target64,
                                     patch_dims);
        },
        ct_patch.data(), ct_patch.grad(), 1e-3, 1e-3);
    const double net_worst = std::max(rep_pet.max_rel_err, rep_ct.max_rel_err);

    report(3, "gradient suite", primitives_ok && forward_agrees && rep_pet.pass && rep_ct.pass,
           "primitive max rel err " + fmt(worst) + " (" + worst_op +
               "), mirror-net loss max rel err " + fmt(net_worst) + ", |ref - engine| = " +
               fmt(std::abs(ref_loss - loss.item_f64())),
           timer.elapsed());
}

// --- criterion 4: Eq. of the learning-rate schedule ---------------------------

void criterion_4() {
    Timer timer;
    bool ok = lr_schedule(0, 100, 0.01) == 0.01 && lr_schedule(100, 100, 0.01) == 0.0 &&
              lr_schedule(0, 200, 0.004) == 0.004 && lr_schedule(200, 200, 0.004) == 0.0;
    const double mid = lr_schedule(50, 100, 0.01);
    const double expect = 0.01 * std::pow(0.5, 0.9);
    ok = ok && std::abs(mid - expect) < 1e-9;
    for (int n_ep : {100, 200}) {
        double prev = lr_schedule(0, n_ep, 0.01);
        for (int ep = 1; ep <= n_ep; ++ep) {
            const double lr = lr_schedule(ep, n_ep, 0.01);
            ok = ok && lr < prev;
            prev = lr;
        }
    }
    report(4, "poly schedule endpoints, midpoint, monotonicity", ok,
           "mid = " + fmt(mid, 9) + " vs " + fmt(expect, 9), timer.elapsed());
}

// --- criterion 5: frozen-branch invariant -------------------------------------

void criterion_5() {
    Timer timer;
    auto studies = testutil::make_studies(2, 16, 5000);
    MirrorNet net({2, 2, 1, 4}, {2, 2, 1, 1}, 50);
    net.freeze_ct();
    std::vector<std::vector<float>> before;
    for (const auto& p : net.parameters(BranchFilter::CT))
        before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());

    TrainConfig cfg;
    cfg.stage = Stage::PET;
    cfg.n_epochs = 3;
    cfg.lr0 = 0.004;
    cfg.batch_size = 2;
    cfg.patch_size = 16;
    cfg.swa_keep_every = 1;
    cfg.swa_average_last = 3;
    cfg.seed = 51;
    train_stage(net, studies, {}, cfg, AugmentConfig::disabled());

    int64_t diffs = 0;
    auto after = net.parameters(BranchFilter::CT);
    for (size_t i = 0; i < after.size(); ++i) {
        const auto data = after[i].tensor.data();
        for (size_t j = 0; j < before[i].size(); ++j) diffs += data[j] != before[i][j];
    }
    report(5, "frozen CT branch bitwise unchanged after 3-epoch PET stage", diffs == 0,
           std::to_string(diffs) + " differing parameter elements", timer.elapsed());
}

// --- criterion 6: SWA -----------------------------------------------------------

void criterion_6() {
    Timer timer;
    std::vector<Checkpoint> ckpts;
    for (int k = 0; k < 6; ++k) {
        Checkpoint c;
        c.epoch = 150 + 10 * k;
        c.params.push_back({"p/a", Tensor::from_data({1, 1, 1, 4, 16},
                                                     testutil::random_floats(64, 600 + k))});
        c.params.push_back({"p/b", Tensor::from_data({1, 2, 1, 1, 8},
                                                     testutil::random_floats(16, 700 + k))});
        ckpts.push_back(std::move(c));
    }
    auto avg = swa_average(ckpts);
    int64_t value_errors = 0;
    for (size_t pi = 0; pi < 2; ++pi)
        for (int64_t e = 0; e < avg[pi].tensor.numel(); ++e) {
            std::vector<double> vals;
            for (const auto& c : ckpts) vals.push_back(c.params[pi].tensor.data()[e]);
            std::sort(vals.begin(), vals.end());
            double s = 0;
            for (double v : vals) s += v;
            const float expect = static_cast<float>(s / 6.0);
            // f32 ulp-scale agreement with the oracle mean.
            if (std::abs(avg[pi].tensor.data()[e] - expect) >
                2 * std::abs(expect) * 1.2e-7 + 1e-12)
                ++value_errors;
        }

    std::vector<Checkpoint> shuffled{ckpts[5], ckpts[2], ckpts[0], ckpts[4], ckpts[1],
                                     ckpts[3]};
    auto avg2 = swa_average(shuffled);
    int64_t perm_errors = 0;
    for (size_t pi = 0; pi < 2; ++pi)
        for (int64_t e = 0; e < avg[pi].tensor.numel(); ++e)
            perm_errors += avg[pi].tensor.data()[e] != avg2[pi].tensor.data()[e];

    report(6, "SWA equals the elementwise mean oracle and is permutation-invariant",
           value_errors == 0 && perm_errors == 0,
           std::to_string(value_errors) + " value errors, " + std::to_string(perm_errors) +
               " permutation differences",
           timer.elapsed());
}

// --- criteria 7/8: blending identity and TTA equivariance ------------------------

void criterion_7() {
    Timer timer;
    const float logit = -0.4f;
    const double expect = 1.0 / (1.0 + std::exp(0.4));
    auto stub = [logit](const Tensor& ct, const Tensor&) {
        return Tensor::full(ct.shape(), logit);
    };
    double max_dev = 0.0;
    for (Shape3 shape : {Shape3{64, 64, 64}, Shape3{96, 96, 96}, Shape3{100, 80, 72}}) {
        Volume ct;
        ct.shape = shape;
        ct.spacing = {2, 2, 2};
        ct.modality = Modality::CT_HU;
        ct.data = testutil::random_floats(voxel_count(shape), 71, -500.f, 500.f);
        Volume pet = ct;
        pet.modality = Modality::PET_SUV;
        Volume prob = sliding_window_predict(stub, ct, pet, 64, 0.125);
        for (float p : prob.data) max_dev = std::max(max_dev, std::abs(p - expect));
    }

    // Single-window case against a direct forward pass of a pointwise stub.
    auto pointwise = [](const Tensor&, const Tensor& pet) {
        std::vector<float> out(pet.numel());
        for (int64_t i = 0; i < pet.numel(); ++i) out[i] = 0.5f * pet.data()[i];
        return Tensor::from_data(pet.shape(), std::move(out));
    };
    Volume pet;
    pet.shape = {64, 64, 64};
    pet.spacing = {2, 2, 2};
    pet.modality = Modality::PET_SUV;
    pet.data = testutil::random_floats(voxel_count(pet.shape), 72, 0.f, 6.f);
    Volume ct = pet;
    ct.modality = Modality::CT_HU;
    Volume prob = sliding_window_predict(pointwise, ct, pet, 64, 0.125);
    double max_dev_single = 0.0;
    for (size_t i = 0; i < prob.data.size(); ++i) {
        const double direct = 1.0 / (1.0 + std::exp(-0.5 * pet.data[i]));
        max_dev_single = std::max(max_dev_single, std::abs(prob.data[i] - direct));
    }
    report(7, "constant-logit blending identity and single-window equality",
           max_dev < 1e-6 && max_dev_single < 1e-6,
           "max deviation " + fmt(max_dev) + ", single-window " + fmt(max_dev_single),
           timer.elapsed());
}

void criterion_8() {
    Timer timer;
    auto pointwise = [](const Tensor&, const Tensor& pet) {
        std::vector<float> out(pet.numel());
        for (int64_t i = 0; i < pet.numel(); ++i) out[i] = 2.f * pet.data()[i] - 1.f;
        return Tensor::from_data(pet.shape(), std::move(out));
    };
    Volume pet;
    pet.shape = {48, 40, 32};
    pet.spacing = {2, 2, 2};
    pet.modality = Modality::PET_SUV;
    pet.data = testutil::random_floats(voxel_count(pet.shape), 81, 0.f, 3.f);
    Volume ct = pet;
    ct.modality = Modality::CT_HU;

    Volume single = sliding_window_predict(pointwise, ct, pet, 32, 0.125);
    Volume tta = tta_predict(pointwise, ct, pet, 32, 0.125);
    double max_dev = 0.0;
    for (size_t i = 0; i < single.data.size(); ++i)
        max_dev = std::max(max_dev, std::abs(double(single.data[i]) - tta.data[i]));
    report(8, "TTA equivariance for a pointwise stub", max_dev < 1e-6,
           "max |tta - single| = " + fmt(max_dev), timer.elapsed());
}

// --- criteria 9/10: end-to-end desk-scale learning and determinism ----------------

struct EndToEnd {
    RunConfig cfg;
    PipelineResult result;
    double tissue_accuracy = 0.0;
    double ablated_dice = 0.0;
    double elapsed_s = 0.0;
};

EndToEnd run_end_to_end(const std::string& workspace, const std::string& out_name,
                        bool reuse_data) {
    EndToEnd e2e;
    Timer timer;
    RunConfig& cfg = e2e.cfg;
    cfg = RunConfig::defaults();
    cfg.data_dir = workspace + "/data";
    cfg.output_dir = workspace + "/" + out_name;

    if (!reuse_data) generate_dataset(cfg);
    e2e.result = run_training(cfg);

    const MirrorNet net = load_model(cfg, e2e.result.model_path);
    const SplitManifest manifest = read_split_manifest(cfg.data_dir + "/split.json");

    // Held-out tissue accuracy of the CT branch (argmax over patches).
    int64_t correct = 0, total = 0;
    {
        autograd::NoGradGuard no_grad;
        for (const auto& id : manifest.val) {
            const Study study = load_study(cfg.data_dir, id, cfg.preprocess);
            const auto patches =
                enumerate_patches(study, 0, cfg.patch_size, cfg.patch_size);
            for (const auto& pi : patches) {
                const Patch patch = extract_patch(study, pi);
                Tensor ct = Tensor::from_data({1, 1, pi.size, pi.size, pi.size},
                                              std::vector<float>(patch.ct));
                const auto pred = channel_argmax(net.forward_ct(ct).tissue_logits);
                for (size_t i = 0; i < pred.size(); ++i) {
                    correct += pred[i] == patch.tissues[i];
                    ++total;
                }
            }
        }
    }
    e2e.tissue_accuracy = total ? double(correct) / double(total) : 0.0;

    // Fusion ablation: zero the CT bottleneck at inference.
    std::vector<StudyEvalInput> ablated;
    for (const auto& id : manifest.val) {
        const Study study = load_study(cfg.data_dir, id, cfg.preprocess);
        StudyEvalInput in;
        in.study_id = id;
        in.pred = binarize(predict_study(cfg, net, study, true), cfg.inference.threshold);
        in.gt = read_labelmap(cfg.data_dir + "/" + id + "_lesions",
                              LabelSemantics::BinaryMask);
        ablated.push_back(std::move(in));
    }
    e2e.ablated_dice = evaluate_cohort(ablated, cfg.connectivity).mean_dice;
    e2e.elapsed_s = timer.elapsed();
    return e2e;
}

bool files_equal(const std::string& a, const std::string& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    if (!fa || !fb) return false;
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    return sa.str() == sb.str();
}

void criteria_9_10() {
    const std::string workspace =
        (fs::temp_directory_path() / "mirrorseg_acceptance").string();
    fs::remove_all(workspace);
    fs::create_directories(workspace);

    const EndToEnd first = run_end_to_end(workspace, "out_a", false);
    const double val_dice = first.result.val_report ? first.result.val_report->mean_dice : 0.0;
    const double normals_fpv =
        first.result.lesion_free_report ? first.result.lesion_free_report->mean_fpv_ml : 1e9;

    const bool learn_ok = val_dice > 0.5 && normals_fpv < 2.0;
    const bool ablation_ok = first.ablated_dice < val_dice;
    const bool accuracy_ok = first.tissue_accuracy > 0.80;
    report(9, "desk-scale end-to-end learning",
           learn_ok && ablation_ok && accuracy_ok,
           "val dice " + fmt(val_dice, 4) + " (>0.5), lesion-free FPV " +
               fmt(normals_fpv, 4) + " ml (<2), ablated dice " + fmt(first.ablated_dice, 4) +
               " (< val dice), tissue acc " + fmt(first.tissue_accuracy, 4) +
               " (>0.8), runtime " + fmt(first.elapsed_s / 60.0, 3) + " min",
           first.elapsed_s);

    Timer timer10;
    const EndToEnd second = run_end_to_end(workspace, "out_b", true);
    const bool ckpt_same =
        files_equal(workspace + "/out_a/mirror_final.raw",
                    workspace + "/out_b/mirror_final.raw") &&
        files_equal(workspace + "/out_a/mirror_final.json",
                    workspace + "/out_b/mirror_final.json");
    const bool csv_same = files_equal(workspace + "/out_a/val_metrics.csv",
                                      workspace + "/out_b/val_metrics.csv") &&
                          files_equal(workspace + "/out_a/normals_metrics.csv",
                                      workspace + "/out_b/normals_metrics.csv");
    report(10, "seeded rerun reproduces checkpoint and metrics bitwise",
           ckpt_same && csv_same,
           std::string("checkpoint ") + (ckpt_same ? "identical" : "DIFFERS") + ", CSV " +
               (csv_same ? "identical" : "DIFFERS"),
           timer10.elapsed());

    fs::remove_all(workspace);
}

} // namespace

int main(int argc, char** argv) {
    // Optional args select criteria (9 and 10 share one run).
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
    auto wants = [&](int id) {
        if (selected.empty()) return true;
        for (int s : selected)
            if (s == id) return true;
        return false;
    };

    std::printf("acceptance suite\n");
    if (wants(1)) criterion_1();
    if (wants(2)) criterion_2();
    if (wants(3)) criterion_3();
    if (wants(4)) criterion_4();
    if (wants(5)) criterion_5();
    if (wants(6)) criterion_6();
    if (wants(7)) criterion_7();
    if (wants(8)) criterion_8();
    if (wants(9) || wants(10)) criteria_9_10();
    std::printf("%d criteria failed\n", g_failures);
    return g_failures;
}
