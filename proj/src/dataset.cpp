#include "mirrorseg/dataset.hpp"
#include "mirrorseg/error.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace mirrorseg {

using nlohmann::json;

Study preprocess_study(std::string id, Volume ct, Volume pet, LabelMap tissues,
                       LabelMap lesions, const PreprocessOptions& opts) {
    if (ct.shape != pet.shape || ct.shape != tissues.shape || ct.shape != lesions.shape)
        throw Error("data", "study " + id + ": PET/CT/label grids are not aligned");

    Study s;
    s.id = std::move(id);
    s.original_shape = ct.shape;

    LabelMap body = body_mask(ct, opts.hu_threshold);
    s.crop_box = mask_bounding_box(body, opts.crop_margin_vox);

    s.ct = pad_to_min(crop_to_box(ct, s.crop_box), opts.min_extent);
    s.pet = pad_to_min(crop_to_box(pet, s.crop_box), opts.min_extent);
    s.tissues = pad_to_min(crop_to_box(tissues, s.crop_box), opts.min_extent);
    s.lesions = pad_to_min(crop_to_box(lesions, s.crop_box), opts.min_extent);
    s.body = pad_to_min(crop_to_box(body, s.crop_box), opts.min_extent);
    return s;
}

void write_split_manifest(const SplitManifest& manifest, const std::string& path) {
    json j{{"train", manifest.train},
           {"val", manifest.val},
           {"test", manifest.test},
           {"lesion_free", manifest.lesion_free}};
    std::ofstream f(path);
    if (!f) throw Error("io", "cannot open for writing: " + path);
    f << j.dump(2) << "\n";
}

SplitManifest read_split_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("io", "missing split manifest: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw Error("data", "malformed split manifest " + path + ": " + e.what());
    }
    SplitManifest m;
    m.train = j.value("train", std::vector<std::string>{});
    m.val = j.value("val", std::vector<std::string>{});
    m.test = j.value("test", std::vector<std::string>{});
    m.lesion_free = j.value("lesion_free", std::vector<std::string>{});
    return m;
}

Study load_study(const std::string& data_dir, const std::string& id,
                 const PreprocessOptions& opts) {
    const std::string base = data_dir + "/" + id;
    Volume ct = read_volume(base + "_ct");
    Volume pet = read_volume(base + "_pet");
    LabelMap tissues = read_labelmap(base + "_tissues", LabelSemantics::TissueGroups);
    LabelMap lesions = read_labelmap(base + "_lesions", LabelSemantics::BinaryMask);
    return preprocess_study(id, std::move(ct), std::move(pet), std::move(tissues),
                            std::move(lesions), opts);
}

} // namespace mirrorseg
