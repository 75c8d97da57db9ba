#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mirrorseg {

using Shape3 = std::array<int64_t, 3>;   // D, H, W voxel counts
using Spacing3 = std::array<double, 3>;  // mm per voxel, (sd, sh, sw)

inline int64_t voxel_count(const Shape3& s) { return s[0] * s[1] * s[2]; }

enum class Modality { PET_SUV, CT_HU };

// Dense 3D scalar grid in DHW row-major order (w fastest).
struct Volume {
    Shape3 shape{};
    Spacing3 spacing{1.0, 1.0, 1.0};
    Modality modality = Modality::CT_HU;
    std::vector<float> data;

    int64_t index(int64_t d, int64_t h, int64_t w) const {
        return (d * shape[1] + h) * shape[2] + w;
    }
    float at(int64_t d, int64_t h, int64_t w) const { return data[index(d, h, w)]; }
    float& at(int64_t d, int64_t h, int64_t w) { return data[index(d, h, w)]; }

    static Volume filled(Shape3 shape, Spacing3 spacing, Modality m, float value);
};

enum class LabelSemantics { BinaryMask, TissueGroups, ComponentLabels };

// Integer grid sharing a Volume's geometry.
struct LabelMap {
    Shape3 shape{};
    Spacing3 spacing{1.0, 1.0, 1.0};
    LabelSemantics semantics = LabelSemantics::BinaryMask;
    std::vector<uint32_t> data;

    int64_t index(int64_t d, int64_t h, int64_t w) const {
        return (d * shape[1] + h) * shape[2] + w;
    }
    uint32_t at(int64_t d, int64_t h, int64_t w) const { return data[index(d, h, w)]; }
    uint32_t& at(int64_t d, int64_t h, int64_t w) { return data[index(d, h, w)]; }

    static LabelMap filled(Shape3 shape, Spacing3 spacing, LabelSemantics s, uint32_t value);
};

// Voxel-index box, lo inclusive, hi exclusive.
struct BoundingBox {
    Shape3 lo{};
    Shape3 hi{};

    Shape3 extent() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
};

// --- File I/O -------------------------------------------------------------
//
// A volume on disk is <name>.json + <name>.raw. The JSON sidecar carries
// {"shape":[D,H,W], "spacing_mm":[sd,sh,sw], "dtype":"f32"|"u8"|"u16",
//  "modality":"PET_SUV"|"CT_HU"|"LABEL", "order":"DHW-row-major"} and the
// raw file is the little-endian packed payload with exactly D*H*W elements.
// `path` may be the bare base name or end in ".json"/".raw".

void write_volume(const Volume& vol, const std::string& path);
Volume read_volume(const std::string& path);

void write_labelmap(const LabelMap& map, const std::string& path);
LabelMap read_labelmap(const std::string& path, LabelSemantics semantics);

// --- Geometry -------------------------------------------------------------

// Largest 26-connected component of voxels with HU > hu_threshold, with
// fully enclosed cavities filled. Throws if nothing exceeds the threshold.
LabelMap body_mask(const Volume& ct, float hu_threshold = -500.0f);

// Tight bounding box of mask >= 1, dilated by margin_vox and clamped to the
// parent shape.
BoundingBox mask_bounding_box(const LabelMap& mask, int64_t margin_vox);

std::pair<Volume, BoundingBox> crop_to_mask(const Volume& vol, const LabelMap& mask,
                                            int64_t margin_vox);

Volume crop_to_box(const Volume& vol, const BoundingBox& box);
LabelMap crop_to_box(const LabelMap& map, const BoundingBox& box);

// Trilinear resampling with voxel-center alignment of the two grids over the
// same physical extent; samples outside the source grid clamp to edge values.
Volume resample_trilinear(const Volume& vol, Shape3 target_shape, Spacing3 target_spacing);

// Edge-replicating pad so every axis is at least min_extent voxels. Content
// keeps its original offset at the low corner.
Volume pad_to_min(const Volume& vol, int64_t min_extent);
LabelMap pad_to_min(const LabelMap& map, int64_t min_extent);

} // namespace mirrorseg
