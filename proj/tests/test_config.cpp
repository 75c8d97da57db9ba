#include <doctest.h>

#include "mirrorseg/error.hpp"
#include "mirrorseg/optimize.hpp"
#include "mirrorseg/pipeline.hpp"
#include "mirrorseg/run_config.hpp"
#include "test_fixtures.hpp"
#include "test_util.hpp"

#include <cstdlib>
#include <fstream>

using namespace mirrorseg;

TEST_CASE("run config round trips parse -> serialize -> parse") {
    RunConfig cfg = RunConfig::defaults();
    cfg.seed = 777;
    cfg.counts.train = 3;
    cfg.phantom.noise_std = 0.15;
    cfg.augment.gamma_p = 0.45;
    cfg.inference.tta = false;
    const std::string text = run_config_to_json(cfg);
    RunConfig back = run_config_from_json(text);
    CHECK(run_config_to_json(back) == text);
    CHECK(back.seed == 777);
    CHECK(back.counts.train == 3);
    CHECK(back.phantom.noise_std == doctest::Approx(0.15));
    CHECK(back.augment.gamma_p == doctest::Approx(0.45));
    CHECK(back.inference.tta == false);
}

TEST_CASE("config overrides reach nested keys") {
    testutil::TempDir dir;
    save_run_config(RunConfig::defaults(), dir.file("cfg.json"));
    RunConfig cfg = load_run_config(dir.file("cfg.json"),
                                    {"train_pet.n_epochs=7", "train_pet.swa_keep_every=2",
                                     "train_pet.swa_average_last=2", "seed=42",
                                     "inference.tta=false", "data_dir=somewhere"});
    CHECK(cfg.train_pet.n_epochs == 7);
    CHECK(cfg.train_pet.swa_keep_every == 2);
    CHECK(cfg.seed == 42);
    CHECK(cfg.inference.tta == false);
    CHECK(cfg.data_dir == "somewhere");

    CHECK_THROWS_AS(load_run_config(dir.file("cfg.json"), {"no_equals_sign"}), Error);
}

TEST_CASE("invalid configs are rejected with the config category") {
    RunConfig cfg = RunConfig::defaults();
    cfg.patch_size = 7;  // odd
    try {
        cfg.validate();
        FAIL("expected validation error");
    } catch (const Error& e) {
        CHECK(e.category() == "config");
    }
}

TEST_CASE("generate_dataset writes studies and a split manifest") {
    testutil::TempDir dir;
    RunConfig cfg = RunConfig::defaults();
    cfg.data_dir = dir.file("data");
    cfg.output_dir = dir.file("out");
    cfg.phantom.shape = {32, 32, 32};
    cfg.counts = {2, 1, 1, 2};
    const SplitManifest m = generate_dataset(cfg);
    CHECK(m.train.size() == 2);
    CHECK(m.val.size() == 1);
    CHECK(m.test.size() == 1);
    CHECK(m.lesion_free.size() == 2);

    const SplitManifest back = read_split_manifest(cfg.data_dir + "/split.json");
    CHECK(back.train == m.train);
    CHECK(back.lesion_free == m.lesion_free);

    // Lesion-free studies have empty lesion masks.
    for (const auto& id : m.lesion_free) {
        LabelMap lesions =
            read_labelmap(cfg.data_dir + "/" + id + "_lesions", LabelSemantics::BinaryMask);
        for (uint32_t v : lesions.data) CHECK(v == 0);
    }

    // Same seed regenerates identical bytes.
    testutil::TempDir dir2;
    RunConfig cfg2 = cfg;
    cfg2.data_dir = dir2.file("data");
    generate_dataset(cfg2);
    for (const auto& id : m.train) {
        Volume a = read_volume(cfg.data_dir + "/" + id + "_pet");
        Volume b = read_volume(cfg2.data_dir + "/" + id + "_pet");
        CHECK(a.data == b.data);
    }
}

TEST_CASE("train_stage smoke: one epoch runs, logs, and checkpoints") {
    auto train = testutil::make_studies(2, 16, 400);
    auto val = testutil::make_studies(1, 16, 410);
    MirrorNet net({2, 2, 1, 4}, {2, 2, 1, 1}, 5);

    TrainConfig cfg;
    cfg.stage = Stage::CT;
    cfg.n_epochs = 1;
    cfg.lr0 = 0.01;
    cfg.batch_size = 2;
    cfg.patch_size = 16;
    cfg.swa_keep_every = 1;
    cfg.swa_average_last = 1;
    cfg.seed = 9;

    testutil::TempDir dir;
    TrainResult result =
        train_stage(net, train, val, cfg, AugmentConfig::disabled(), dir.path());
    CHECK(result.log.size() == 1);
    CHECK(result.kept.size() == 1);
    CHECK(std::isfinite(result.log[0].train_loss));
    CHECK(std::isfinite(result.log[0].val_loss));
    CHECK(result.log[0].lr == 0.01);
    CHECK(std::filesystem::exists(dir.file("ct_ep001.json")));
    CHECK(std::filesystem::exists(dir.file("ct_ep001.raw")));

    write_loss_log(result.log, dir.file("loss.csv"));
    std::ifstream log(dir.file("loss.csv"));
    std::string header, row;
    std::getline(log, header);
    std::getline(log, row);
    CHECK(header == "epoch,stage,train_loss,val_loss,lr");
    CHECK(row.rfind("1,ct,", 0) == 0);
}

TEST_CASE("PET stage requires a frozen CT branch and preserves it bitwise") {
    auto train = testutil::make_studies(2, 16, 420);
    MirrorNet net({2, 2, 1, 4}, {2, 2, 1, 1}, 6);

    TrainConfig cfg;
    cfg.stage = Stage::PET;
    cfg.n_epochs = 2;
    cfg.lr0 = 0.004;
    cfg.batch_size = 2;
    cfg.patch_size = 16;
    cfg.swa_keep_every = 1;
    cfg.swa_average_last = 2;
    cfg.seed = 10;

    CHECK_THROWS_AS(train_stage(net, train, {}, cfg, AugmentConfig::disabled()), Error);

    net.freeze_ct();
    std::vector<std::vector<float>> before;
    for (const auto& p : net.parameters(BranchFilter::CT))
        before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    train_stage(net, train, {}, cfg, AugmentConfig::disabled());
    auto after = net.parameters(BranchFilter::CT);
    for (size_t i = 0; i < after.size(); ++i) {
        const auto data = after[i].tensor.data();
        for (size_t j = 0; j < before[i].size(); ++j) CHECK(data[j] == before[i][j]);
    }
}

TEST_CASE("train_stage is bit-reproducible for a fixed seed") {
    auto train = testutil::make_studies(2, 16, 430);
    auto val = testutil::make_studies(1, 16, 440);

    auto run = [&] {
        MirrorNet net({2, 2, 1, 4}, {2, 2, 1, 1}, 77);
        TrainConfig cfg;
        cfg.stage = Stage::CT;
        cfg.n_epochs = 2;
        cfg.lr0 = 0.01;
        cfg.batch_size = 2;
        cfg.patch_size = 16;
        cfg.swa_keep_every = 2;
        cfg.swa_average_last = 1;
        cfg.seed = 123;
        AugmentConfig aug;  // all transforms active
        aug.seed = 123;
        TrainResult r = train_stage(net, train, val, cfg, aug);
        std::vector<float> params;
        for (const auto& p : net.parameters())
            params.insert(params.end(), p.tensor.data().begin(), p.tensor.data().end());
        return std::pair{r.log, params};
    };
    auto [log1, p1] = run();
    auto [log2, p2] = run();
    REQUIRE(p1.size() == p2.size());
    CHECK(p1 == p2);
    REQUIRE(log1.size() == log2.size());
    for (size_t i = 0; i < log1.size(); ++i) {
        CHECK(log1[i].train_loss == log2[i].train_loss);
        CHECK(log1[i].val_loss == log2[i].val_loss);
    }
}

#ifdef MIRRORSEG_BIN
TEST_CASE("cli exit codes: 0 on success, nonzero with category on failure") {
    testutil::TempDir dir;
    RunConfig cfg = RunConfig::defaults();
    cfg.data_dir = dir.file("data");
    cfg.output_dir = dir.file("out");
    cfg.phantom.shape = {24, 24, 24};
    cfg.counts = {1, 0, 0, 0};
    save_run_config(cfg, dir.file("cfg.json"));

    const std::string bin = MIRRORSEG_BIN;
    CHECK(std::system((bin + " phantom --config " + dir.file("cfg.json") +
                       " > /dev/null 2>&1")
                          .c_str()) == 0);
    // Missing config file fails with a nonzero code and an error line.
    const std::string err_out = dir.file("err.txt");
    const int rc = std::system(
        (bin + " train --config /nonexistent.json 2> " + err_out + " > /dev/null").c_str());
    CHECK(rc != 0);
    std::ifstream err(err_out);
    std::string line;
    std::getline(err, line);
    CHECK(line.rfind("error: io:", 0) == 0);
}
#endif
