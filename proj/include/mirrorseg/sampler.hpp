#pragma once

#include "mirrorseg/dataset.hpp"
#include "mirrorseg/volume.hpp"

#include <cstdint>
#include <vector>

namespace mirrorseg {

struct PatchIndex {
    int64_t study = 0;  // index into the study list the enumeration came from
    Shape3 corner{};
    int64_t size = 0;
    bool has_lesion = false;
};

// Regular grid with the given stride, final positions clamped to end at the
// volume edge; patches entirely outside the body mask are discarded.
std::vector<PatchIndex> enumerate_patches(const Study& study, int64_t study_index, int64_t patch,
                                          int64_t stride);

// All lesion patches plus an equally sized draw of non-lesion patches
// (without replacement when enough exist), shuffled. A different sample every
// epoch comes from varying epoch_seed.
std::vector<PatchIndex> balance_epoch(const std::vector<PatchIndex>& patches,
                                      uint64_t epoch_seed);

struct AugmentConfig {
    double blur_p = 0.2;
    double blur_sigma_lo = 0.5, blur_sigma_hi = 1.0;  // voxels
    double noise_p = 0.1;
    double noise_rel_hi = 0.1;  // sigma as a fraction of the patch std
    double contrast_p = 0.15;
    double contrast_lo = 0.75, contrast_hi = 1.25;
    double rotation_p = 0.2;
    double rotation_max_deg = 30.0;  // about each axis
    double scaling_p = 0.2;
    double scaling_lo = 0.7, scaling_hi = 1.4;
    double gamma_p = 0.3;
    double gamma_lo = 0.7, gamma_hi = 1.5;
    double mirror_p = 0.5;  // per axis
    uint64_t seed = 0;

    static AugmentConfig disabled();
    void validate() const;
};

// Cubic patch with aligned PET/CT intensities and label grids.
struct Patch {
    int64_t size = 0;
    std::vector<float> ct, pet;
    std::vector<uint32_t> tissues, lesions;
};

Patch extract_patch(const Study& study, const PatchIndex& index);

// Applies the configured transforms in a fixed order, deterministically in
// draw_seed. Spatial transforms (rotation, scaling, mirroring) hit intensity
// and label grids identically; labels resample nearest-neighbor. Intensity
// transforms never touch the labels.
void augment(Patch& patch, const AugmentConfig& cfg, uint64_t draw_seed);

} // namespace mirrorseg
