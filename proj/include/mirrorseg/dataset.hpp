#pragma once

#include "mirrorseg/volume.hpp"

#include <string>
#include <vector>

namespace mirrorseg {

// A study ready for training/inference: body-cropped with margin and
// edge-padded so every axis is at least the patch size. crop_box maps the
// cropped grid back into the original one.
struct Study {
    std::string id;
    Volume ct, pet;
    LabelMap tissues, lesions, body;
    BoundingBox crop_box;
    Shape3 original_shape{};
};

struct PreprocessOptions {
    float hu_threshold = -500.f;
    int64_t crop_margin_vox = 2;
    int64_t min_extent = 32;  // patch size
};

Study preprocess_study(std::string id, Volume ct, Volume pet, LabelMap tissues,
                       LabelMap lesions, const PreprocessOptions& opts);

// Dataset directory layout: <id>_ct, <id>_pet, <id>_tissues, <id>_lesions
// volume files plus split.json {"train":[...],"val":[...],"test":[...],
// "lesion_free":[...]}.
struct SplitManifest {
    std::vector<std::string> train, val, test, lesion_free;
};

void write_split_manifest(const SplitManifest& manifest, const std::string& path);
SplitManifest read_split_manifest(const std::string& path);

Study load_study(const std::string& data_dir, const std::string& id,
                 const PreprocessOptions& opts);

} // namespace mirrorseg
