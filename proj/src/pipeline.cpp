#include "mirrorseg/pipeline.hpp"
#include "mirrorseg/checkpoint.hpp"
#include "mirrorseg/error.hpp"
#include "mirrorseg/inference.hpp"
#include "mirrorseg/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

namespace mirrorseg {

namespace fs = std::filesystem;

namespace {

std::string padded_id(const std::string& prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03d", prefix.c_str(), i);
    return buf;
}

void write_study_files(const std::string& dir, const std::string& id, const Phantom& ph) {
    write_volume(ph.ct, dir + "/" + id + "_ct");
    write_volume(ph.pet, dir + "/" + id + "_pet");
    write_labelmap(ph.tissues, dir + "/" + id + "_tissues");
    write_labelmap(ph.lesions, dir + "/" + id + "_lesions");
}

} // namespace

SplitManifest generate_dataset(const RunConfig& cfg) {
    fs::create_directories(cfg.data_dir);

    SplitManifest manifest;
    uint64_t study_index = 0;
    auto make_split = [&](const std::string& prefix, int count, bool lesion_free,
                          std::vector<std::string>& ids) {
        for (int i = 0; i < count; ++i) {
            PhantomConfig pc = cfg.phantom;
            pc.seed = rng::derive_seed(cfg.seed, 0xda7a + study_index++);
            if (lesion_free) pc.lesion_count_range = {0, 0};
            const std::string id = padded_id(prefix, i);
            write_study_files(cfg.data_dir, id, generate_phantom(pc));
            ids.push_back(id);
        }
    };
    make_split("train", cfg.counts.train, false, manifest.train);
    make_split("val", cfg.counts.val, false, manifest.val);
    make_split("test", cfg.counts.test, false, manifest.test);
    make_split("normal", cfg.counts.lesion_free, true, manifest.lesion_free);

    write_split_manifest(manifest, cfg.data_dir + "/split.json");
    return manifest;
}

MirrorNet load_model(const RunConfig& cfg, const std::string& model_path) {
    MirrorNet net(cfg.ct_branch, cfg.pet_branch, cfg.seed);
    const Checkpoint ckpt = load_checkpoint(model_path);
    if (!ckpt.config_hash.empty() && ckpt.config_hash != net.architecture_hash())
        throw Error("config", "checkpoint " + model_path +
                                  " was trained with a different architecture");
    net.load_parameters(ckpt.params);
    return net;
}

Volume predict_study(const RunConfig& cfg, const MirrorNet& net, const Study& study,
                     bool zero_ct_bottleneck) {
    PatchPredictor predictor;
    if (zero_ct_bottleneck) {
        predictor = [&net](const Tensor& ct, const Tensor& pet) {
            autograd::NoGradGuard no_grad;
            const Tensor bottleneck = net.forward_ct(ct).bottleneck;
            return net.forward_pet(pet, Tensor::zeros(bottleneck.shape()));
        };
    } else {
        predictor = net_predictor(net);
    }

    const Volume prob_cropped =
        cfg.inference.tta
            ? tta_predict(predictor, study.ct, study.pet, cfg.inference.patch,
                          cfg.inference.sigma_scale)
            : sliding_window_predict(predictor, study.ct, study.pet, cfg.inference.patch,
                                     cfg.inference.sigma_scale);

    // Strip the training pad, then paste at the crop offset of the original grid.
    const Volume prob_box = crop_to_box(prob_cropped, {{0, 0, 0}, study.crop_box.extent()});
    Volume prob = Volume::filled(study.original_shape, prob_cropped.spacing,
                                 Modality::PET_SUV, 0.f);
    const auto [D, H, W] = prob_box.shape;
    for (int64_t d = 0; d < D; ++d)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w)
                prob.at(study.crop_box.lo[0] + d, study.crop_box.lo[1] + h,
                        study.crop_box.lo[2] + w) = prob_box.at(d, h, w);
    return prob;
}

namespace {

CohortReport evaluate_studies(const RunConfig& cfg, const MirrorNet& net,
                              const std::vector<std::string>& ids) {
    std::vector<StudyEvalInput> inputs;
    for (const auto& id : ids) {
        const Study study = load_study(cfg.data_dir, id, cfg.preprocess);
        const Volume prob = predict_study(cfg, net, study);
        StudyEvalInput in;
        in.study_id = id;
        in.pred = binarize(prob, cfg.inference.threshold);
        in.gt = read_labelmap(cfg.data_dir + "/" + id + "_lesions", LabelSemantics::BinaryMask);
        inputs.push_back(std::move(in));
    }
    return evaluate_cohort(inputs, cfg.connectivity);
}

} // namespace

PipelineResult run_training(const RunConfig& cfg) {
    const SplitManifest manifest = read_split_manifest(cfg.data_dir + "/split.json");
    if (manifest.train.empty()) throw Error("train", "split manifest has no training studies");

    std::vector<Study> train_set, val_set;
    for (const auto& id : manifest.train)
        train_set.push_back(load_study(cfg.data_dir, id, cfg.preprocess));
    for (const auto& id : manifest.val)
        val_set.push_back(load_study(cfg.data_dir, id, cfg.preprocess));

    fs::create_directories(cfg.output_dir);
    const std::string ckpt_dir = cfg.output_dir + "/checkpoints";
    fs::create_directories(ckpt_dir);

    MirrorNet net(cfg.ct_branch, cfg.pet_branch, cfg.seed);

    PipelineResult result;
    const TrainResult ct_result =
        train_stage(net, train_set, val_set, cfg.train_ct, cfg.augment, ckpt_dir);
    net.freeze_ct();
    const TrainResult pet_result =
        train_stage(net, train_set, val_set, cfg.train_pet, cfg.augment, ckpt_dir);

    result.loss_log = ct_result.log;
    result.loss_log.insert(result.loss_log.end(), pet_result.log.begin(),
                           pet_result.log.end());
    write_loss_log(result.loss_log, cfg.output_dir + "/loss_log.csv");

    result.model_path = cfg.output_dir + "/mirror_final";
    save_checkpoint(result.model_path, net.parameters(), cfg.train_pet.n_epochs,
                    net.architecture_hash());

    if (!manifest.val.empty()) {
        result.val_report = evaluate_studies(cfg, net, manifest.val);
        write_cohort_csv(*result.val_report, cfg.output_dir + "/val_metrics.csv");
    }
    if (!manifest.lesion_free.empty()) {
        result.lesion_free_report = evaluate_studies(cfg, net, manifest.lesion_free);
        write_cohort_csv(*result.lesion_free_report, cfg.output_dir + "/normals_metrics.csv");
    }
    return result;
}

void run_inference(const RunConfig& cfg, const std::string& model_path,
                   const std::vector<std::string>& study_ids) {
    if (study_ids.empty()) throw Error("infer", "no study ids requested");
    const MirrorNet net = load_model(cfg, model_path);
    fs::create_directories(cfg.output_dir);
    for (const auto& id : study_ids) {
        const Study study = load_study(cfg.data_dir, id, cfg.preprocess);
        const Volume prob = predict_study(cfg, net, study);
        write_volume(prob, cfg.output_dir + "/" + id + "_prob");
        write_labelmap(binarize(prob, cfg.inference.threshold),
                       cfg.output_dir + "/" + id + "_mask");
    }
}

CohortReport evaluate_directories(const std::string& pred_dir, const std::string& gt_dir,
                                  Connectivity connectivity) {
    std::vector<std::string> ids;
    const std::string suffix = "_lesions.json";
    if (!fs::is_directory(gt_dir)) throw Error("io", "not a directory: " + gt_dir);
    for (const auto& entry : fs::directory_iterator(gt_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw Error("eval", "no *_lesions volumes found in " + gt_dir);

    std::string missing;
    for (const auto& id : ids)
        if (!fs::exists(pred_dir + "/" + id + "_mask.json")) missing += " " + id;
    if (!missing.empty())
        throw Error("eval", "prediction masks missing for:" + missing);

    std::vector<StudyEvalInput> inputs;
    for (const auto& id : ids) {
        StudyEvalInput in;
        in.study_id = id;
        in.pred = read_labelmap(pred_dir + "/" + id + "_mask", LabelSemantics::BinaryMask);
        in.gt = read_labelmap(gt_dir + "/" + id + "_lesions", LabelSemantics::BinaryMask);
        inputs.push_back(std::move(in));
    }
    return evaluate_cohort(inputs, connectivity);
}

} // namespace mirrorseg
