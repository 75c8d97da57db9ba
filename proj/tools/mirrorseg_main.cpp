#include "mirrorseg/error.hpp"
#include "mirrorseg/pipeline.hpp"
#include "mirrorseg/run_config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace mirrorseg;

int main(int argc, char** argv) {
    CLI::App app{"PET/CT lesion segmentation: phantom data, two-stage training, "
                 "sliding-window inference and cohort metrics"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run config JSON")->required();
        cmd->add_option("--set", overrides, "override config entries, key.path=value");
    };

    auto* phantom = app.add_subcommand("phantom", "generate a synthetic dataset");
    add_common(phantom);

    auto* train = app.add_subcommand("train", "run both training stages and evaluate");
    add_common(train);

    auto* infer = app.add_subcommand("infer", "predict probability and mask volumes");
    add_common(infer);
    std::string model_path;
    std::vector<std::string> ids;
    infer->add_option("--model", model_path, "checkpoint base path")->required();
    infer->add_option("--ids", ids, "study ids (default: val + test splits)");

    auto* eval = app.add_subcommand("eval", "score predicted masks against ground truth");
    std::string pred_dir, gt_dir, out_csv;
    int connectivity = 26;
    eval->add_option("--pred-dir", pred_dir, "directory with <id>_mask volumes")->required();
    eval->add_option("--gt-dir", gt_dir, "directory with <id>_lesions volumes")->required();
    eval->add_option("--out", out_csv, "report CSV path (default: stdout only)");
    eval->add_option("--connectivity", connectivity, "6, 18 or 26")->default_val(26);

    auto* init = app.add_subcommand("init-config", "write a default run config");
    std::string init_path = "run_config.json";
    init->add_option("path", init_path, "output path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (phantom->parsed()) {
            const RunConfig cfg = load_run_config(config_path, overrides);
            const SplitManifest m = generate_dataset(cfg);
            std::printf("wrote %zu train / %zu val / %zu test / %zu lesion-free studies to %s\n",
                        m.train.size(), m.val.size(), m.test.size(), m.lesion_free.size(),
                        cfg.data_dir.c_str());
        } else if (train->parsed()) {
            const RunConfig cfg = load_run_config(config_path, overrides);
            const PipelineResult r = run_training(cfg);
            std::printf("model: %s\n", r.model_path.c_str());
            if (r.val_report)
                std::printf("validation: mean dice %.4f, mean FNV %.4f ml, mean FPV %.4f ml\n",
                            r.val_report->mean_dice, r.val_report->mean_fnv_ml,
                            r.val_report->mean_fpv_ml);
            if (r.lesion_free_report)
                std::printf("lesion-free FPV: %.4f ml\n", r.lesion_free_report->mean_fpv_ml);
        } else if (infer->parsed()) {
            const RunConfig cfg = load_run_config(config_path, overrides);
            if (ids.empty()) {
                const SplitManifest m = read_split_manifest(cfg.data_dir + "/split.json");
                ids = m.val;
                ids.insert(ids.end(), m.test.begin(), m.test.end());
            }
            run_inference(cfg, model_path, ids);
            std::printf("wrote %zu probability/mask pairs to %s\n", ids.size(),
                        cfg.output_dir.c_str());
        } else if (eval->parsed()) {
            if (connectivity != 6 && connectivity != 18 && connectivity != 26)
                throw Error("config", "connectivity must be 6, 18 or 26");
            const CohortReport report = evaluate_directories(
                pred_dir, gt_dir, static_cast<Connectivity>(connectivity));
            std::printf("study_id,dice,fnv_ml,fpv_ml\n");
            for (const auto& s : report.studies)
                std::printf("%s,%.6f,%.6f,%.6f\n", s.study_id.c_str(), s.dice, s.fnv_ml,
                            s.fpv_ml);
            std::printf("MEAN,%.6f,%.6f,%.6f\n", report.mean_dice, report.mean_fnv_ml,
                        report.mean_fpv_ml);
            if (!out_csv.empty()) write_cohort_csv(report, out_csv);
        } else if (init->parsed()) {
            save_run_config(RunConfig::defaults(), init_path);
            std::printf("wrote %s\n", init_path.c_str());
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
