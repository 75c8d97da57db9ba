#pragma once

#include "mirrorseg/dataset.hpp"
#include "mirrorseg/metrics.hpp"
#include "mirrorseg/mirror_net.hpp"
#include "mirrorseg/optimize.hpp"
#include "mirrorseg/phantom.hpp"
#include "mirrorseg/sampler.hpp"

#include <string>
#include <vector>

namespace mirrorseg {

struct PhantomCounts {
    int train = 40;
    int val = 10;
    int test = 0;
    int lesion_free = 5;  // extra lesion-free validation studies
};

struct InferenceParams {
    int64_t patch = 32;
    double sigma_scale = 0.125;
    double threshold = 0.5;
    bool tta = true;
};

// One file drives phantom generation, both training stages, inference and
// evaluation. Defaults form a complete desk-scale run.
struct RunConfig {
    std::string data_dir = "data";
    std::string output_dir = "out";
    uint64_t seed = 1234;
    int64_t patch_size = 32;

    PhantomConfig phantom;
    PhantomCounts counts;
    PreprocessOptions preprocess;
    BranchConfig ct_branch;
    BranchConfig pet_branch;
    TrainConfig train_ct;
    TrainConfig train_pet;
    AugmentConfig augment;
    InferenceParams inference;
    Connectivity connectivity = Connectivity::C26;

    static RunConfig defaults();
    void validate() const;
};

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});
std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
void save_run_config(const RunConfig& cfg, const std::string& path);

} // namespace mirrorseg
