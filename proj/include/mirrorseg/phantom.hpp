#pragma once

#include "mirrorseg/volume.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace mirrorseg {

// Synthetic PET/CT study generator. Tissue class 0 is "others" (outside the
// body), class 1 the body bulk, classes 2.. nested organ shapes. Organs get a
// per-study uptake factor so some healthy tissue is PET-avid without reaching
// lesion intensity.
struct PhantomConfig {
    Shape3 shape{64, 64, 64};
    Spacing3 spacing{2.0, 2.0, 2.0};
    int tissue_class_count = 4;  // >= 2, <= 16
    std::array<int64_t, 2> lesion_count_range{1, 3};
    std::array<double, 2> lesion_radius_range_mm{4.0, 8.0};
    std::array<double, 2> lesion_suv_range{4.0, 8.0};
    std::array<double, 2> background_suv_range{0.5, 1.5};
    std::vector<float> hu_per_tissue;  // per-class plateau; defaults when empty
    double noise_std = 0.2;
    uint64_t seed = 0;

    void validate() const;
    std::vector<float> effective_hu() const;
};

struct Phantom {
    Volume ct;
    Volume pet;
    LabelMap tissues;  // TissueGroups
    LabelMap lesions;  // BinaryMask, exact voxelized union of lesion spheres
};

Phantom generate_phantom(const PhantomConfig& cfg);

} // namespace mirrorseg
