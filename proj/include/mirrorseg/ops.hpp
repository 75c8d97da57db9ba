#pragma once

#include "mirrorseg/tensor.hpp"

#include <array>
#include <random>

namespace mirrorseg {

// 3D cross-correlation parameters. Weights are [out, in, kd, kh, kw]; bias is
// one value per output channel.
struct ConvSpec {
    int64_t in_channels = 0;
    int64_t out_channels = 0;
    std::array<int64_t, 3> kernel{3, 3, 3};
    int64_t stride = 1;
    int64_t padding = 1;
    Tensor weights;
    Tensor bias;
};

// He-initialized spec (normal weights scaled by sqrt(2 / fan_in), zero bias).
ConvSpec make_conv(int64_t in_channels, int64_t out_channels, std::array<int64_t, 3> kernel,
                   int64_t stride, int64_t padding, std::mt19937_64& gen);

Tensor conv3d(const Tensor& x, const ConvSpec& spec);

// 2x2x2 max pooling; ties resolve to the lowest linear index.
Tensor downsample_max2(const Tensor& x);
// 2x nearest-neighbor upsampling.
Tensor upsample_nearest2(const Tensor& x);

// Per-sample, per-channel standardization over spatial dims with affine
// (gamma, beta), no running statistics. gamma/beta have shape [1,C,1,1,1].
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     float eps = 1e-5f);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax_channels(const Tensor& x);
Tensor concat_channels(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Per-voxel argmax over channels; returns N*D*H*W class indices.
std::vector<uint32_t> channel_argmax(const Tensor& x);

} // namespace mirrorseg
