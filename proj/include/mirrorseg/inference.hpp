#pragma once

#include "mirrorseg/mirror_net.hpp"
#include "mirrorseg/tensor.hpp"
#include "mirrorseg/volume.hpp"

#include <functional>

namespace mirrorseg {

// Half-overlapping window cover: corners at multiples of P/2, the last window
// per axis clamped to end exactly at the (padded) volume edge.
struct WindowPlan {
    int64_t patch = 0;
    Shape3 padded_shape{};
    std::vector<Shape3> corners;
};

WindowPlan plan_windows(Shape3 shape, int64_t patch);

// Gaussian importance weights over a patch, sigma = sigma_scale * P, value 1
// at the center voxel and strictly positive everywhere.
struct WeightMap {
    int64_t patch = 0;
    std::vector<float> weights;
};

WeightMap gaussian_weights(int64_t patch, double sigma_scale = 0.125);

// Maps aligned [1,1,P,P,P] CT/PET patches to lesion logits of the same shape.
using PatchPredictor = std::function<Tensor(const Tensor& ct, const Tensor& pet)>;

PatchPredictor net_predictor(const MirrorNet& net);

// Whole-volume probability map: per window, sigmoid(logits) accumulated with
// the Gaussian weights in f64, then normalized per voxel.
Volume sliding_window_predict(const PatchPredictor& predict, const Volume& ct,
                              const Volume& pet, int64_t patch, double sigma_scale = 0.125);

// Mean over sliding-window predictions for all 8 axis-flip combinations
// (inputs flipped, outputs flipped back).
Volume tta_predict(const PatchPredictor& predict, const Volume& ct, const Volume& pet,
                   int64_t patch, double sigma_scale = 0.125);

// mask = prob > threshold (strict).
LabelMap binarize(const Volume& prob, double threshold = 0.5);

} // namespace mirrorseg
