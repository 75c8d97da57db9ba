#pragma once

#include "mirrorseg/ops.hpp"
#include "mirrorseg/tensor.hpp"
#include "mirrorseg/volume.hpp"

#include <array>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace mirrorseg {

struct BranchConfig {
    int levels = 3;
    int base_channels = 8;
    int in_channels = 1;
    int out_channels = 16;

    void validate() const;
    int64_t bottleneck_channels() const { return int64_t(base_channels) << levels; }
};

// Ordered tissue-group names; "others" is the last index and covers body
// voxels with no finer label.
struct TissueGrouping {
    static const std::array<const char*, 16> kGroupNames;

    std::unordered_map<uint32_t, uint32_t> mapping;  // fine label -> group index

    static TissueGrouping identity(uint32_t class_count);
};

LabelMap group_tissues(const LabelMap& fine_labels, const TissueGrouping& grouping);

// One U-shaped branch: double-conv blocks (conv3, instance norm, relu) per
// level, 2x max-pool downsampling, nearest-neighbor upsampling with skip
// concatenation, and a 1x1x1 logit head. `fusion_extra_channels` widens the
// first decoder stage for features concatenated at the bottleneck.
class UNetBranch {
public:
    UNetBranch() = default;
    UNetBranch(std::string prefix, const BranchConfig& cfg, int64_t fusion_extra_channels,
               std::mt19937_64& gen);

    struct Output {
        Tensor logits;
        Tensor bottleneck;
    };
    // `extra_bottleneck` (may be null) is concatenated onto this branch's own
    // bottleneck features before decoding.
    Output forward(const Tensor& x, const Tensor& extra_bottleneck) const;

    const BranchConfig& config() const { return cfg_; }
    std::vector<NamedParam> parameters() const;
    void set_requires_grad(bool value);

private:
    struct Block {
        ConvSpec conv1;
        Tensor gamma1, beta1;
        ConvSpec conv2;
        Tensor gamma2, beta2;
    };
    Block make_block(const std::string& name, int64_t in_ch, int64_t out_ch,
                     std::mt19937_64& gen);
    Tensor block_forward(const Block& b, const Tensor& x) const;
    void collect_block(const Block& b, const std::string& name,
                       std::vector<NamedParam>& out) const;

    std::string prefix_;
    BranchConfig cfg_;
    std::vector<Block> enc_;
    Block bottleneck_;
    std::vector<Block> dec_;  // indexed by level
    ConvSpec head_;
};

enum class BranchFilter { All, CT, PET };

// The mirror pair: a CT branch segmenting tissue groups and a PET branch
// segmenting lesions, joined by concatenating the CT encoder bottleneck into
// the PET bottleneck. Read-only during inference; training mutates
// parameters and needs exclusive access.
class MirrorNet {
public:
    MirrorNet(const BranchConfig& ct_cfg, const BranchConfig& pet_cfg, uint64_t seed);

    struct CtOutput {
        Tensor tissue_logits;
        Tensor bottleneck;
    };
    CtOutput forward_ct(const Tensor& ct_patch) const;
    Tensor forward_pet(const Tensor& pet_patch, const Tensor& ct_bottleneck) const;
    Tensor forward_full(const Tensor& ct_patch, const Tensor& pet_patch) const;

    void freeze_ct();
    bool ct_frozen() const { return ct_frozen_; }

    std::vector<NamedParam> parameters(BranchFilter filter = BranchFilter::All) const;
    void load_parameters(const std::vector<NamedParam>& params);

    const BranchConfig& ct_config() const { return ct_.config(); }
    const BranchConfig& pet_config() const { return pet_.config(); }
    std::string architecture_hash() const;

private:
    UNetBranch ct_;
    UNetBranch pet_;
    bool ct_frozen_ = false;
};

} // namespace mirrorseg
