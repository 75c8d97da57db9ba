#pragma once

#include "mirrorseg/metrics.hpp"
#include "mirrorseg/run_config.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mirrorseg {

// Writes <id>_ct/_pet/_tissues/_lesions volume files for every split plus
// split.json into cfg.data_dir. Deterministic in cfg.seed.
SplitManifest generate_dataset(const RunConfig& cfg);

struct PipelineResult {
    std::vector<EpochRecord> loss_log;
    std::optional<CohortReport> val_report;          // lesion-bearing validation studies
    std::optional<CohortReport> lesion_free_report;  // FPV monitoring on normals
    std::string model_path;                          // final checkpoint base path
};

// CT stage, freeze, PET stage with SWA; writes mirror_final plus loss_log.csv,
// checkpoints, and validation metrics reports into cfg.output_dir.
PipelineResult run_training(const RunConfig& cfg);

// Loads `model_path` and writes <id>_prob and <id>_mask volumes (original
// geometry) into cfg.output_dir for each requested study.
void run_inference(const RunConfig& cfg, const std::string& model_path,
                   const std::vector<std::string>& study_ids);

// Builds a MirrorNet matching cfg and loads the checkpoint into it.
MirrorNet load_model(const RunConfig& cfg, const std::string& model_path);

// Predicted probability map for one study in its original geometry, with a
// hook to zero the CT bottleneck (fusion ablation).
Volume predict_study(const RunConfig& cfg, const MirrorNet& net, const Study& study,
                     bool zero_ct_bottleneck = false);

// Compares <id>_mask files in pred_dir against <id>_lesions in gt_dir.
CohortReport evaluate_directories(const std::string& pred_dir, const std::string& gt_dir,
                                  Connectivity connectivity);

} // namespace mirrorseg
