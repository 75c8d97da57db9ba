#include <doctest.h>

#include "mirrorseg/error.hpp"
#include "mirrorseg/sampler.hpp"
#include "test_fixtures.hpp"
#include "test_util.hpp"

#include <map>
#include <set>

using namespace mirrorseg;

namespace {

Study synthetic_study(Shape3 shape, int64_t body_from, int64_t body_to) {
    Study s;
    s.id = "synthetic";
    s.ct = Volume::filled(shape, {1, 1, 1}, Modality::CT_HU, 0.f);
    s.pet = Volume::filled(shape, {1, 1, 1}, Modality::PET_SUV, 1.f);
    s.tissues = LabelMap::filled(shape, {1, 1, 1}, LabelSemantics::TissueGroups, 0);
    s.lesions = LabelMap::filled(shape, {1, 1, 1}, LabelSemantics::BinaryMask, 0);
    s.body = LabelMap::filled(shape, {1, 1, 1}, LabelSemantics::BinaryMask, 0);
    for (int64_t d = body_from; d < body_to; ++d)
        for (int64_t h = body_from; h < body_to; ++h)
            for (int64_t w = body_from; w < body_to; ++w) s.body.at(d, h, w) = 1;
    s.original_shape = shape;
    s.crop_box = {{0, 0, 0}, shape};
    return s;
}

} // namespace

TEST_CASE("patch enumeration grid arithmetic") {
    SUBCASE("volume exactly P^3 gives one patch") {
        Study s = synthetic_study({16, 16, 16}, 0, 16);
        auto patches = enumerate_patches(s, 0, 16, 16);
        CHECK(patches.size() == 1);
        CHECK(patches[0].corner == Shape3{0, 0, 0});
    }
    SUBCASE("96^3 with P=64, stride 64 clamps to corners {0,32}") {
        Study s = synthetic_study({96, 96, 96}, 0, 96);
        auto patches = enumerate_patches(s, 0, 64, 64);
        CHECK(patches.size() == 8);
        std::set<int64_t> corners;
        for (const auto& p : patches) {
            corners.insert(p.corner[0]);
            corners.insert(p.corner[1]);
            corners.insert(p.corner[2]);
        }
        CHECK(corners == std::set<int64_t>{0, 32});
    }
    SUBCASE("fully outside-body patches are discarded") {
        // Body only in the low corner 16^3; the rest of 32^3 is air.
        Study s = synthetic_study({32, 32, 32}, 0, 16);
        auto patches = enumerate_patches(s, 0, 16, 16);
        CHECK(patches.size() == 1);
    }
    SUBCASE("undersized volumes are an error") {
        Study s = synthetic_study({8, 8, 8}, 0, 8);
        CHECK_THROWS_AS(enumerate_patches(s, 0, 16, 16), Error);
    }
}

TEST_CASE("patch lesion flags reflect lesion content") {
    Study s = synthetic_study({32, 32, 32}, 0, 32);
    s.lesions.at(20, 20, 20) = 1;
    auto patches = enumerate_patches(s, 0, 16, 16);
    CHECK(patches.size() == 8);
    int with = 0;
    for (const auto& p : patches) with += p.has_lesion;
    CHECK(with == 1);
    for (const auto& p : patches)
        if (p.has_lesion) CHECK(p.corner == Shape3{16, 16, 16});
}

TEST_CASE("balance_epoch contract") {
    std::vector<PatchIndex> patches;
    for (int i = 0; i < 10; ++i) patches.push_back({0, {0, 0, int64_t(i)}, 8, true});
    for (int i = 0; i < 100; ++i) patches.push_back({0, {1, 0, int64_t(i)}, 8, false});

    auto list = balance_epoch(patches, 42);
    CHECK(list.size() == 20);
    int lesion = 0;
    std::set<int64_t> background_picks;
    for (const auto& p : list) {
        lesion += p.has_lesion;
        if (!p.has_lesion) background_picks.insert(p.corner[2]);
    }
    CHECK(lesion == 10);
    CHECK(background_picks.size() == 10);  // without replacement

    auto again = balance_epoch(patches, 42);
    REQUIRE(again.size() == list.size());
    for (size_t i = 0; i < list.size(); ++i) {
        CHECK(again[i].corner == list[i].corner);
        CHECK(again[i].has_lesion == list[i].has_lesion);
    }
    auto different = balance_epoch(patches, 43);
    bool any_differs = false;
    for (size_t i = 0; i < list.size(); ++i)
        any_differs = any_differs || !(different[i].corner == list[i].corner);
    CHECK(any_differs);
}

TEST_CASE("balance_epoch samples background uniformly across epochs") {
    std::vector<PatchIndex> patches;
    patches.push_back({0, {0, 0, 0}, 8, true});
    // has_lesion count 10 so each epoch draws 10 of 100 background patches.
    for (int i = 1; i < 10; ++i) patches.push_back({0, {0, 0, int64_t(i)}, 8, true});
    for (int i = 0; i < 100; ++i) patches.push_back({0, {2, 0, int64_t(i)}, 8, false});

    std::map<int64_t, int> freq;
    const int epochs = 200;
    for (int ep = 0; ep < epochs; ++ep)
        for (const auto& p : balance_epoch(patches, 1000 + ep))
            if (!p.has_lesion) ++freq[p.corner[2]];
    // Expected pick rate 10/100 = 0.1 per epoch; exactly 10 drawn each epoch.
    int64_t total = 0;
    for (const auto& [corner, count] : freq) total += count;
    CHECK(total == epochs * 10);
    // Per-patch empirical frequency 0.1 +- 0.05, allowing a few binomial
    // outliers at this sample size.
    int outliers = 0;
    for (int i = 0; i < 100; ++i) {
        const double f = freq.count(i) ? freq[i] / double(epochs) : 0.0;
        if (std::abs(f - 0.1) > 0.05) ++outliers;
    }
    CHECK(outliers <= 10);
}

TEST_CASE("balance_epoch with scarce background samples with replacement") {
    std::vector<PatchIndex> patches;
    for (int i = 0; i < 8; ++i) patches.push_back({0, {0, 0, int64_t(i)}, 8, true});
    patches.push_back({0, {1, 0, 0}, 8, false});
    auto list = balance_epoch(patches, 7);
    CHECK(list.size() == 16);

    std::vector<PatchIndex> lesions_only(patches.begin(), patches.begin() + 8);
    CHECK(balance_epoch(lesions_only, 7).size() == 8);

    std::vector<PatchIndex> no_lesions{{0, {0, 0, 0}, 8, false}};
    CHECK_THROWS_AS(balance_epoch(no_lesions, 7), Error);
}

TEST_CASE("augment with zero probabilities is the identity") {
    auto studies = testutil::make_studies(1, 16, 900);
    auto patches = enumerate_patches(studies[0], 0, 16, 16);
    REQUIRE(!patches.empty());
    Patch p = extract_patch(studies[0], patches[0]);
    Patch q = p;
    augment(q, AugmentConfig::disabled(), 123);
    CHECK(q.ct == p.ct);
    CHECK(q.pet == p.pet);
    CHECK(q.tissues == p.tissues);
    CHECK(q.lesions == p.lesions);
}

TEST_CASE("mirroring with p=1 applied twice is the identity") {
    auto studies = testutil::make_studies(1, 16, 901);
    Patch p = extract_patch(studies[0], enumerate_patches(studies[0], 0, 16, 16)[0]);
    Patch q = p;
    AugmentConfig cfg = AugmentConfig::disabled();
    cfg.mirror_p = 1.0;
    augment(q, cfg, 5);
    bool changed = q.pet != p.pet;
    CHECK(changed);
    augment(q, cfg, 6);  // all axes flip again regardless of seed
    CHECK(q.ct == p.ct);
    CHECK(q.pet == p.pet);
    CHECK(q.tissues == p.tissues);
    CHECK(q.lesions == p.lesions);
}

TEST_CASE("rotation keeps the lesion voxel count within a few percent") {
    PhantomConfig pc;
    pc.shape = {32, 32, 32};
    pc.spacing = {2, 2, 2};
    pc.seed = 31;
    pc.lesion_count_range = {1, 1};
    pc.lesion_radius_range_mm = {6.0, 6.0};
    Phantom ph = generate_phantom(pc);
    PreprocessOptions opts;
    opts.min_extent = 24;
    opts.crop_margin_vox = 4;
    Study s = preprocess_study("rot", std::move(ph.ct), std::move(ph.pet),
                               std::move(ph.tissues), std::move(ph.lesions), opts);

    // Pick the patch with the most lesion voxels fully inside.
    auto patches = enumerate_patches(s, 0, 24, 24);
    Patch best;
    int64_t best_count = -1;
    for (const auto& pi : patches) {
        Patch p = extract_patch(s, pi);
        int64_t c = 0;
        for (auto v : p.lesions) c += v;
        if (c > best_count) {
            best_count = c;
            best = std::move(p);
        }
    }
    REQUIRE(best_count > 50);

    AugmentConfig cfg = AugmentConfig::disabled();
    cfg.rotation_p = 1.0;
    cfg.rotation_max_deg = 90.0;
    int64_t checked = 0;
    for (uint64_t seed = 0; seed < 6; ++seed) {
        Patch q = best;
        augment(q, cfg, seed);
        int64_t after = 0;
        for (auto v : q.lesions) after += v;
        // Nearest-neighbor resampling keeps the count nearly constant as long
        // as the rotated sphere stays inside the patch.
        if (after > 0) {
            CHECK(std::abs(double(after - best_count)) / double(best_count) < 0.1);
            ++checked;
        }
    }
    CHECK(checked >= 4);
}

TEST_CASE("spatial augmentations preserve label value sets") {
    auto studies = testutil::make_studies(1, 16, 903);
    Patch p = extract_patch(studies[0], enumerate_patches(studies[0], 0, 16, 16)[0]);
    std::set<uint32_t> before(p.tissues.begin(), p.tissues.end());

    AugmentConfig cfg = AugmentConfig::disabled();
    cfg.rotation_p = 1.0;
    cfg.scaling_p = 1.0;
    cfg.mirror_p = 0.5;
    for (uint64_t seed = 0; seed < 8; ++seed) {
        Patch q = p;
        augment(q, cfg, seed);
        for (uint32_t v : q.tissues) CHECK(before.count(v) == 1);
        for (uint32_t v : q.lesions) CHECK((v == 0 || v == 1));
    }
}

TEST_CASE("augmentation is reproducible and intensity transforms skip labels") {
    auto studies = testutil::make_studies(1, 16, 904);
    Patch p = extract_patch(studies[0], enumerate_patches(studies[0], 0, 16, 16)[0]);

    AugmentConfig cfg;  // all defaults active
    cfg.seed = 77;
    Patch a = p, b = p;
    augment(a, cfg, 99);
    augment(b, cfg, 99);
    CHECK(a.ct == b.ct);
    CHECK(a.pet == b.pet);
    CHECK(a.tissues == b.tissues);
    CHECK(a.lesions == b.lesions);

    AugmentConfig intensity_only = AugmentConfig::disabled();
    intensity_only.blur_p = 1.0;
    intensity_only.noise_p = 1.0;
    intensity_only.gamma_p = 1.0;
    intensity_only.contrast_p = 1.0;
    Patch c = p;
    augment(c, intensity_only, 3);
    CHECK(c.tissues == p.tissues);
    CHECK(c.lesions == p.lesions);
    CHECK(c.pet != p.pet);
}
