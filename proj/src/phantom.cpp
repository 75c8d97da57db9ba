#include "mirrorseg/phantom.hpp"
#include "mirrorseg/error.hpp"
#include "mirrorseg/rng.hpp"

#include <algorithm>
#include <cmath>

namespace mirrorseg {

namespace {

struct Ellipsoid {
    std::array<double, 3> center_mm;
    std::array<double, 3> semi_mm;

    double level(double d_mm, double h_mm, double w_mm) const {
        const double a = (d_mm - center_mm[0]) / semi_mm[0];
        const double b = (h_mm - center_mm[1]) / semi_mm[1];
        const double c = (w_mm - center_mm[2]) / semi_mm[2];
        return a * a + b * b + c * c;
    }
    bool contains(double d_mm, double h_mm, double w_mm) const {
        return level(d_mm, h_mm, w_mm) <= 1.0;
    }
};

constexpr int kMaxPlacementRetries = 200;

} // namespace

void PhantomConfig::validate() const {
    auto nonempty = [](const auto& r) { return r[0] <= r[1]; };
    if (voxel_count(shape) <= 0 || spacing[0] <= 0 || spacing[1] <= 0 || spacing[2] <= 0)
        throw Error("config", "phantom shape/spacing must be positive");
    if (tissue_class_count < 2 || tissue_class_count > 16)
        throw Error("config", "tissue_class_count must be in [2, 16]");
    if (!nonempty(lesion_count_range) || lesion_count_range[0] < 0)
        throw Error("config", "lesion_count_range is empty");
    if (!nonempty(lesion_radius_range_mm) || lesion_radius_range_mm[0] <= 0)
        throw Error("config", "lesion_radius_range_mm is empty");
    if (!nonempty(lesion_suv_range) || !nonempty(background_suv_range))
        throw Error("config", "SUV ranges are empty");
    if (lesion_suv_range[0] <= background_suv_range[1])
        throw Error("config", "lesion SUV range must lie strictly above background SUV range");
    if (!hu_per_tissue.empty() &&
        static_cast<int>(hu_per_tissue.size()) < tissue_class_count)
        throw Error("config", "hu_per_tissue shorter than tissue_class_count");
    if (noise_std < 0) throw Error("config", "noise_std must be >= 0");
}

std::vector<float> PhantomConfig::effective_hu() const {
    if (!hu_per_tissue.empty()) return hu_per_tissue;
    // Air, soft-tissue body, then distinct organ plateaus.
    return {-1000.f, 40.f, -80.f, 120.f, 250.f, -400.f, 400.f, 80.f,
            160.f,   20.f, 60.f,  -200.f, 700.f, 100.f,  -60.f, 30.f};
}

Phantom generate_phantom(const PhantomConfig& cfg) {
    cfg.validate();
    std::mt19937_64 g(rng::derive_seed(cfg.seed, 0x9e7));

    const auto [D, H, W] = cfg.shape;
    const auto& sp = cfg.spacing;
    const std::array<double, 3> extent_mm{D * sp[0], H * sp[1], W * sp[2]};
    auto center_of = [&](int64_t i, int a) { return (static_cast<double>(i) + 0.5) * sp[a]; };

    // Body: one large ellipsoid with mild per-study jitter.
    Ellipsoid body;
    for (int a = 0; a < 3; ++a) {
        body.center_mm[a] = 0.5 * extent_mm[a];
        const double frac = (a == 0 ? 0.40 : 0.36) * rng::uniform(g, 0.92, 1.05);
        body.semi_mm[a] = frac * extent_mm[a];
    }

    // Organ shapes nested inside the body.
    const int organ_classes = cfg.tissue_class_count - 2;  // classes 2..C-1
    std::vector<Ellipsoid> organs;
    std::vector<double> organ_uptake;
    for (int k = 0; k < organ_classes; ++k) {
        Ellipsoid e;
        for (int a = 0; a < 3; ++a) {
            e.center_mm[a] = body.center_mm[a] + rng::uniform(g, -0.45, 0.45) * body.semi_mm[a];
            e.semi_mm[a] = rng::uniform(g, 0.12, 0.28) * body.semi_mm[a];
        }
        organs.push_back(e);
        organ_uptake.push_back(rng::uniform(g, 1.0, 2.2));
    }

    const std::vector<float> hu = cfg.effective_hu();

    LabelMap tissues = LabelMap::filled(cfg.shape, sp, LabelSemantics::TissueGroups, 0);
    Volume ct = Volume::filled(cfg.shape, sp, Modality::CT_HU, hu[0]);
    for (int64_t d = 0; d < D; ++d)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w) {
                const double dm = center_of(d, 0), hm = center_of(h, 1), wm = center_of(w, 2);
                if (!body.contains(dm, hm, wm)) continue;
                uint32_t cls = 1;
                for (int k = organ_classes - 1; k >= 0; --k)
                    if (organs[k].contains(dm, hm, wm)) {
                        cls = static_cast<uint32_t>(2 + k);
                        break;
                    }
                tissues.at(d, h, w) = cls;
                ct.at(d, h, w) = hu[cls];
            }

    // Lesions: spheres fully inside the body (every covered voxel center
    // satisfies the body equation), with bounded placement retries.
    const int64_t lesion_count =
        rng::uniform_int(g, cfg.lesion_count_range[0], cfg.lesion_count_range[1]);
    LabelMap lesions = LabelMap::filled(cfg.shape, sp, LabelSemantics::BinaryMask, 0);
    const double background_suv =
        rng::uniform(g, cfg.background_suv_range[0], cfg.background_suv_range[1]);
    Volume pet = Volume::filled(cfg.shape, sp, Modality::PET_SUV, 0.f);
    for (int64_t i = 0; i < voxel_count(cfg.shape); ++i) {
        if (tissues.data[i] == 0) continue;
        double v = background_suv;
        if (tissues.data[i] >= 2) v *= organ_uptake[tissues.data[i] - 2];
        pet.data[i] = static_cast<float>(v);
    }

    for (int64_t les = 0; les < lesion_count; ++les) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxPlacementRetries && !placed; ++attempt) {
            const double r = rng::uniform(g, cfg.lesion_radius_range_mm[0],
                                          cfg.lesion_radius_range_mm[1]);
            std::array<double, 3> c;
            for (int a = 0; a < 3; ++a)
                c[a] = body.center_mm[a] + rng::uniform(g, -0.85, 0.85) * body.semi_mm[a];
            const double suv = rng::uniform(g, cfg.lesion_suv_range[0], cfg.lesion_suv_range[1]);

            // Candidate voxels within the sphere; reject if any falls outside the body.
            std::vector<int64_t> covered;
            bool inside = true;
            const int64_t d0 = std::max<int64_t>(0, static_cast<int64_t>((c[0] - r) / sp[0]) - 1);
            const int64_t d1 = std::min(D, static_cast<int64_t>((c[0] + r) / sp[0]) + 2);
            const int64_t h0 = std::max<int64_t>(0, static_cast<int64_t>((c[1] - r) / sp[1]) - 1);
            const int64_t h1 = std::min(H, static_cast<int64_t>((c[1] + r) / sp[1]) + 2);
            const int64_t w0 = std::max<int64_t>(0, static_cast<int64_t>((c[2] - r) / sp[2]) - 1);
            const int64_t w1 = std::min(W, static_cast<int64_t>((c[2] + r) / sp[2]) + 2);
            for (int64_t d = d0; d < d1 && inside; ++d)
                for (int64_t h = h0; h < h1 && inside; ++h)
                    for (int64_t w = w0; w < w1 && inside; ++w) {
                        const double dm = center_of(d, 0), hm = center_of(h, 1),
                                     wm = center_of(w, 2);
                        const double dist2 = (dm - c[0]) * (dm - c[0]) +
                                             (hm - c[1]) * (hm - c[1]) +
                                             (wm - c[2]) * (wm - c[2]);
                        if (dist2 > r * r) continue;
                        if (!body.contains(dm, hm, wm)) {
                            inside = false;
                            break;
                        }
                        covered.push_back(tissues.index(d, h, w));
                    }
            if (!inside || covered.empty()) continue;
            for (int64_t i : covered) {
                lesions.data[i] = 1;
                pet.data[i] = std::max(pet.data[i], static_cast<float>(suv));
            }
            placed = true;
        }
        if (!placed)
            throw Error("data", "lesion placement failed after " +
                                    std::to_string(kMaxPlacementRetries) + " retries");
    }

    if (cfg.noise_std > 0) {
        for (auto& v : pet.data)
            v = std::max(0.f, v + static_cast<float>(cfg.noise_std * rng::normal(g)));
    }

    return {std::move(ct), std::move(pet), std::move(tissues), std::move(lesions)};
}

} // namespace mirrorseg
