#include "mirrorseg/inference.hpp"
#include "mirrorseg/error.hpp"
#include "mirrorseg/ops.hpp"

#include <algorithm>
#include <cmath>

namespace mirrorseg {

namespace {

std::vector<int64_t> axis_corners(int64_t dim, int64_t patch) {
    std::vector<int64_t> out;
    const int64_t stride = patch / 2;
    for (int64_t c = 0; c + patch <= dim; c += stride) out.push_back(c);
    const int64_t last = dim - patch;
    if (out.empty() || out.back() != last) out.push_back(last);
    return out;
}

} // namespace

WindowPlan plan_windows(Shape3 shape, int64_t patch) {
    if (patch < 2 || patch % 2 != 0)
        throw Error("config", "window patch size must be even and >= 2");
    WindowPlan plan;
    plan.patch = patch;
    for (int a = 0; a < 3; ++a) plan.padded_shape[a] = std::max(shape[a], patch);

    const auto ds = axis_corners(plan.padded_shape[0], patch);
    const auto hs = axis_corners(plan.padded_shape[1], patch);
    const auto ws = axis_corners(plan.padded_shape[2], patch);
    for (int64_t d : ds)
        for (int64_t h : hs)
            for (int64_t w : ws) plan.corners.push_back({d, h, w});
    return plan;
}

WeightMap gaussian_weights(int64_t patch, double sigma_scale) {
    if (patch < 2) throw Error("config", "weight map patch size must be >= 2");
    if (sigma_scale <= 0) throw Error("config", "sigma_scale must be positive");
    const double sigma = sigma_scale * static_cast<double>(patch);
    const int64_t c = patch / 2;

    WeightMap map;
    map.patch = patch;
    map.weights.resize(patch * patch * patch);
    int64_t i = 0;
    for (int64_t d = 0; d < patch; ++d)
        for (int64_t h = 0; h < patch; ++h)
            for (int64_t w = 0; w < patch; ++w, ++i) {
                const double dist2 = static_cast<double>((d - c) * (d - c) + (h - c) * (h - c) +
                                                         (w - c) * (w - c));
                map.weights[i] = static_cast<float>(std::exp(-dist2 / (2.0 * sigma * sigma)));
            }
    return map;
}

PatchPredictor net_predictor(const MirrorNet& net) {
    return [&net](const Tensor& ct, const Tensor& pet) {
        autograd::NoGradGuard no_grad;
        return net.forward_full(ct, pet);
    };
}

Volume sliding_window_predict(const PatchPredictor& predict, const Volume& ct,
                              const Volume& pet, int64_t patch, double sigma_scale) {
    if (ct.shape != pet.shape || ct.spacing != pet.spacing)
        throw Error("data", "sliding_window_predict: PET and CT are not aligned");

    const Shape3 original = pet.shape;
    const Volume ct_p = pad_to_min(ct, patch);
    const Volume pet_p = pad_to_min(pet, patch);
    const WindowPlan plan = plan_windows(ct_p.shape, patch);
    const WeightMap wmap = gaussian_weights(patch, sigma_scale);

    const auto [D, H, W] = plan.padded_shape;
    std::vector<double> prob_acc(D * H * W, 0.0);
    std::vector<double> weight_acc(D * H * W, 0.0);

    const int64_t P = patch;
    for (const auto& corner : plan.corners) {
        std::vector<float> ct_patch(P * P * P), pet_patch(P * P * P);
        int64_t i = 0;
        for (int64_t d = 0; d < P; ++d)
            for (int64_t h = 0; h < P; ++h)
                for (int64_t w = 0; w < P; ++w, ++i) {
                    ct_patch[i] = ct_p.at(corner[0] + d, corner[1] + h, corner[2] + w);
                    pet_patch[i] = pet_p.at(corner[0] + d, corner[1] + h, corner[2] + w);
                }
        autograd::NoGradGuard no_grad;
        Tensor logits = predict(Tensor::from_data({1, 1, P, P, P}, std::move(ct_patch)),
                                Tensor::from_data({1, 1, P, P, P}, std::move(pet_patch)));
        if (!(logits.shape() == Shape5{1, 1, P, P, P}))
            throw Error("infer", "predictor returned shape " + logits.shape().str());
        Tensor probs = sigmoid(logits);

        const auto pd = probs.data();
        i = 0;
        for (int64_t d = 0; d < P; ++d)
            for (int64_t h = 0; h < P; ++h)
                for (int64_t w = 0; w < P; ++w, ++i) {
                    const int64_t vox =
                        ((corner[0] + d) * H + corner[1] + h) * W + corner[2] + w;
                    const double wt = wmap.weights[i];
                    prob_acc[vox] += wt * pd[i];
                    weight_acc[vox] += wt;
                }
    }

    Volume prob;
    prob.shape = plan.padded_shape;
    prob.spacing = pet.spacing;
    prob.modality = Modality::PET_SUV;
    prob.data.resize(D * H * W);
    for (int64_t i = 0; i < D * H * W; ++i)
        prob.data[i] = static_cast<float>(prob_acc[i] / weight_acc[i]);

    if (prob.shape != original)
        prob = crop_to_box(prob, {{0, 0, 0}, original});
    return prob;
}

namespace {

Volume flip_volume(const Volume& v, bool fd, bool fh, bool fw) {
    Volume out = v;
    const auto [D, H, W] = v.shape;
    for (int64_t d = 0; d < D; ++d)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w)
                out.at(d, h, w) =
                    v.at(fd ? D - 1 - d : d, fh ? H - 1 - h : h, fw ? W - 1 - w : w);
    return out;
}

} // namespace

Volume tta_predict(const PatchPredictor& predict, const Volume& ct, const Volume& pet,
                   int64_t patch, double sigma_scale) {
    std::vector<double> acc(voxel_count(pet.shape), 0.0);
    for (int bits = 0; bits < 8; ++bits) {
        const bool fd = bits & 1, fh = bits & 2, fw = bits & 4;
        const Volume prob = sliding_window_predict(
            predict, flip_volume(ct, fd, fh, fw), flip_volume(pet, fd, fh, fw), patch,
            sigma_scale);
        const Volume restored = flip_volume(prob, fd, fh, fw);
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += restored.data[i];
    }
    Volume out = pet;
    out.modality = Modality::PET_SUV;
    for (size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i] / 8.0);
    return out;
}

LabelMap binarize(const Volume& prob, double threshold) {
    LabelMap mask = LabelMap::filled(prob.shape, prob.spacing, LabelSemantics::BinaryMask, 0);
    for (size_t i = 0; i < prob.data.size(); ++i)
        mask.data[i] = prob.data[i] > threshold ? 1 : 0;
    return mask;
}

} // namespace mirrorseg
