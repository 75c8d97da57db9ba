#include "mirrorseg/mirror_net.hpp"
#include "mirrorseg/checkpoint.hpp"
#include "mirrorseg/error.hpp"

#include <algorithm>

namespace mirrorseg {

void BranchConfig::validate() const {
    if (levels < 1) throw Error("config", "branch levels must be >= 1");
    if (base_channels < 1) throw Error("config", "base_channels must be >= 1");
    if (in_channels < 1 || out_channels < 1)
        throw Error("config", "channel counts must be >= 1");
}

const std::array<const char*, 16> TissueGrouping::kGroupNames = {
    "brain",          "trachea",       "lungs",          "adrenal glands",
    "thyroid",        "spleen",        "liver",          "gallbladder",
    "pancreas",       "urinary system", "cardiovascular system",
    "gastrointestinal tract", "bones", "muscles",        "fat",
    "others"};

TissueGrouping TissueGrouping::identity(uint32_t class_count) {
    TissueGrouping g;
    for (uint32_t i = 0; i < class_count; ++i) g.mapping[i] = i;
    return g;
}

LabelMap group_tissues(const LabelMap& fine_labels, const TissueGrouping& grouping) {
    LabelMap out = fine_labels;
    out.semantics = LabelSemantics::TissueGroups;
    for (size_t i = 0; i < out.data.size(); ++i) {
        const auto it = grouping.mapping.find(fine_labels.data[i]);
        if (it == grouping.mapping.end())
            throw Error("data", "group_tissues: unmapped fine label " +
                                    std::to_string(fine_labels.data[i]));
        if (it->second >= TissueGrouping::kGroupNames.size())
            throw Error("data", "group_tissues: group index " + std::to_string(it->second) +
                                    " out of range");
        out.data[i] = it->second;
    }
    return out;
}

// --- UNetBranch ---------------------------------------------------------

UNetBranch::Block UNetBranch::make_block(const std::string&, int64_t in_ch, int64_t out_ch,
                                         std::mt19937_64& gen) {
    Block b;
    b.conv1 = make_conv(in_ch, out_ch, {3, 3, 3}, 1, 1, gen);
    b.gamma1 = Tensor::full({1, out_ch, 1, 1, 1}, 1.f, true);
    b.beta1 = Tensor::zeros({1, out_ch, 1, 1, 1}, true);
    b.conv2 = make_conv(out_ch, out_ch, {3, 3, 3}, 1, 1, gen);
    b.gamma2 = Tensor::full({1, out_ch, 1, 1, 1}, 1.f, true);
    b.beta2 = Tensor::zeros({1, out_ch, 1, 1, 1}, true);
    return b;
}

UNetBranch::UNetBranch(std::string prefix, const BranchConfig& cfg,
                       int64_t fusion_extra_channels, std::mt19937_64& gen)
    : prefix_(std::move(prefix)), cfg_(cfg) {
    cfg_.validate();
    auto ch = [&](int level) { return int64_t(cfg_.base_channels) << level; };

    int64_t in_ch = cfg_.in_channels;
    for (int l = 0; l < cfg_.levels; ++l) {
        enc_.push_back(make_block(prefix_ + "/enc" + std::to_string(l), in_ch, ch(l), gen));
        in_ch = ch(l);
    }
    bottleneck_ = make_block(prefix_ + "/bottleneck", ch(cfg_.levels - 1), ch(cfg_.levels), gen);

    dec_.resize(cfg_.levels);
    int64_t prev_ch = ch(cfg_.levels) + fusion_extra_channels;
    for (int l = cfg_.levels - 1; l >= 0; --l) {
        dec_[l] = make_block(prefix_ + "/dec" + std::to_string(l), prev_ch + ch(l), ch(l), gen);
        prev_ch = ch(l);
    }
    head_ = make_conv(ch(0), cfg_.out_channels, {1, 1, 1}, 1, 0, gen);
}

Tensor UNetBranch::block_forward(const Block& b, const Tensor& x) const {
    Tensor y = relu(instance_norm(conv3d(x, b.conv1), b.gamma1, b.beta1));
    return relu(instance_norm(conv3d(y, b.conv2), b.gamma2, b.beta2));
}

UNetBranch::Output UNetBranch::forward(const Tensor& x, const Tensor& extra_bottleneck) const {
    const Shape5 s = x.shape();
    const int64_t div = int64_t(1) << cfg_.levels;
    if (s.d % div || s.h % div || s.w % div)
        throw Error("data", "patch dims " + s.str() + " not divisible by 2^levels = " +
                                std::to_string(div));
    if (s.c != cfg_.in_channels)
        throw Error("data", "branch expects " + std::to_string(cfg_.in_channels) +
                                " input channels, got " + std::to_string(s.c));

    std::vector<Tensor> skips;
    Tensor cur = x;
    for (int l = 0; l < cfg_.levels; ++l) {
        cur = block_forward(enc_[l], cur);
        skips.push_back(cur);
        cur = downsample_max2(cur);
    }
    Tensor bottleneck = block_forward(bottleneck_, cur);

    Tensor fused = bottleneck;
    if (extra_bottleneck) fused = concat_channels(bottleneck, extra_bottleneck);

    cur = fused;
    for (int l = cfg_.levels - 1; l >= 0; --l) {
        cur = upsample_nearest2(cur);
        cur = concat_channels(cur, skips[l]);
        cur = block_forward(dec_[l], cur);
    }
    return {conv3d(cur, head_), bottleneck};
}

void UNetBranch::collect_block(const Block& b, const std::string& name,
                               std::vector<NamedParam>& out) const {
    out.push_back({name + "/conv1/weight", b.conv1.weights});
    out.push_back({name + "/conv1/bias", b.conv1.bias});
    out.push_back({name + "/norm1/gamma", b.gamma1});
    out.push_back({name + "/norm1/beta", b.beta1});
    out.push_back({name + "/conv2/weight", b.conv2.weights});
    out.push_back({name + "/conv2/bias", b.conv2.bias});
    out.push_back({name + "/norm2/gamma", b.gamma2});
    out.push_back({name + "/norm2/beta", b.beta2});
}

std::vector<NamedParam> UNetBranch::parameters() const {
    std::vector<NamedParam> out;
    for (int l = 0; l < cfg_.levels; ++l)
        collect_block(enc_[l], prefix_ + "/enc" + std::to_string(l), out);
    collect_block(bottleneck_, prefix_ + "/bottleneck", out);
    for (int l = cfg_.levels - 1; l >= 0; --l)
        collect_block(dec_[l], prefix_ + "/dec" + std::to_string(l), out);
    out.push_back({prefix_ + "/head/weight", head_.weights});
    out.push_back({prefix_ + "/head/bias", head_.bias});
    return out;
}

void UNetBranch::set_requires_grad(bool value) {
    for (auto& p : parameters()) p.tensor.set_requires_grad(value);
}

// --- MirrorNet ------------------------------------------------------------

MirrorNet::MirrorNet(const BranchConfig& ct_cfg, const BranchConfig& pet_cfg, uint64_t seed) {
    if (ct_cfg.levels != pet_cfg.levels)
        throw Error("config", "branches must share the level count for bottleneck fusion");
    std::mt19937_64 gen(seed);
    ct_ = UNetBranch("ct", ct_cfg, 0, gen);
    pet_ = UNetBranch("pet", pet_cfg, ct_cfg.bottleneck_channels(), gen);
}

MirrorNet::CtOutput MirrorNet::forward_ct(const Tensor& ct_patch) const {
    auto out = ct_.forward(ct_patch, Tensor());
    return {out.logits, out.bottleneck};
}

Tensor MirrorNet::forward_pet(const Tensor& pet_patch, const Tensor& ct_bottleneck) const {
    if (!ct_bottleneck)
        throw Error("data", "forward_pet requires the CT bottleneck features");
    return pet_.forward(pet_patch, ct_bottleneck).logits;
}

Tensor MirrorNet::forward_full(const Tensor& ct_patch, const Tensor& pet_patch) const {
    return forward_pet(pet_patch, forward_ct(ct_patch).bottleneck);
}

void MirrorNet::freeze_ct() {
    ct_.set_requires_grad(false);
    ct_frozen_ = true;
}

std::vector<NamedParam> MirrorNet::parameters(BranchFilter filter) const {
    std::vector<NamedParam> out;
    if (filter == BranchFilter::All || filter == BranchFilter::CT) {
        auto ps = ct_.parameters();
        out.insert(out.end(), ps.begin(), ps.end());
    }
    if (filter == BranchFilter::All || filter == BranchFilter::PET) {
        auto ps = pet_.parameters();
        out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
}

void MirrorNet::load_parameters(const std::vector<NamedParam>& params) {
    auto own = parameters();
    std::unordered_map<std::string, Tensor> by_name;
    for (auto& p : own) by_name.emplace(p.name, p.tensor);
    if (params.size() != own.size())
        throw Error("data", "parameter count mismatch: checkpoint has " +
                                std::to_string(params.size()) + ", architecture has " +
                                std::to_string(own.size()));
    for (const auto& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end())
            throw Error("data", "unknown parameter in checkpoint: " + p.name);
        if (!(it->second.shape() == p.tensor.shape()))
            throw Error("data", "shape mismatch for " + p.name + ": " +
                                    it->second.shape().str() + " vs " +
                                    p.tensor.shape().str());
        std::copy(p.tensor.data().begin(), p.tensor.data().end(),
                  it->second.data().begin());
    }
}

std::string MirrorNet::architecture_hash() const {
    auto desc = [](const BranchConfig& c) {
        return std::to_string(c.levels) + ":" + std::to_string(c.base_channels) + ":" +
               std::to_string(c.in_channels) + ":" + std::to_string(c.out_channels);
    };
    return config_hash_of("mirror/" + desc(ct_config()) + "/" + desc(pet_config()));
}

} // namespace mirrorseg
