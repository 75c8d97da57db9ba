#include "mirrorseg/sampler.hpp"
#include "mirrorseg/error.hpp"
#include "mirrorseg/rng.hpp"

#include <algorithm>
#include <cmath>

namespace mirrorseg {

namespace {

std::vector<int64_t> grid_positions(int64_t dim, int64_t patch, int64_t stride) {
    std::vector<int64_t> out;
    for (int64_t c = 0; c + patch <= dim; c += stride) out.push_back(c);
    const int64_t last = dim - patch;
    if (out.empty() || out.back() != last) out.push_back(last);
    return out;
}

} // namespace

std::vector<PatchIndex> enumerate_patches(const Study& study, int64_t study_index,
                                          int64_t patch, int64_t stride) {
    const Shape3 shape = study.ct.shape;
    for (int a = 0; a < 3; ++a)
        if (shape[a] < patch)
            throw Error("data", "study " + study.id + " smaller than patch size " +
                                    std::to_string(patch) + "; pad it first");
    if (stride < 1) throw Error("config", "patch stride must be >= 1");

    const auto ds = grid_positions(shape[0], patch, stride);
    const auto hs = grid_positions(shape[1], patch, stride);
    const auto ws = grid_positions(shape[2], patch, stride);

    std::vector<PatchIndex> out;
    for (int64_t d : ds)
        for (int64_t h : hs)
            for (int64_t w : ws) {
                bool in_body = false, has_lesion = false;
                for (int64_t dd = d; dd < d + patch && !(in_body && has_lesion); ++dd)
                    for (int64_t hh = h; hh < h + patch; ++hh)
                        for (int64_t ww = w; ww < w + patch; ++ww) {
                            in_body = in_body || study.body.at(dd, hh, ww) != 0;
                            has_lesion = has_lesion || study.lesions.at(dd, hh, ww) != 0;
                        }
                if (!in_body) continue;
                out.push_back({study_index, {d, h, w}, patch, has_lesion});
            }
    return out;
}

std::vector<PatchIndex> balance_epoch(const std::vector<PatchIndex>& patches,
                                      uint64_t epoch_seed) {
    std::vector<PatchIndex> lesion, background;
    for (const auto& p : patches) (p.has_lesion ? lesion : background).push_back(p);
    if (lesion.empty()) throw Error("data", "balance_epoch: no lesion patches available");

    std::mt19937_64 g(rng::derive_seed(epoch_seed, 0xba1a));
    std::vector<PatchIndex> out = lesion;
    const size_t need = lesion.size();
    if (background.size() >= need) {
        // Partial Fisher-Yates draw without replacement.
        for (size_t i = 0; i < need; ++i) {
            const auto j = static_cast<size_t>(
                rng::uniform_int(g, static_cast<int64_t>(i),
                                 static_cast<int64_t>(background.size()) - 1));
            std::swap(background[i], background[j]);
            out.push_back(background[i]);
        }
    } else if (!background.empty()) {
        for (size_t i = 0; i < need; ++i)
            out.push_back(background[static_cast<size_t>(rng::uniform_int(
                g, 0, static_cast<int64_t>(background.size()) - 1))]);
    }
    for (size_t i = out.size(); i > 1; --i) {
        const auto j = static_cast<size_t>(rng::uniform_int(g, 0, static_cast<int64_t>(i) - 1));
        std::swap(out[i - 1], out[j]);
    }
    return out;
}

Patch extract_patch(const Study& study, const PatchIndex& index) {
    const int64_t P = index.size;
    const auto [d0, h0, w0] = index.corner;
    Patch patch;
    patch.size = P;
    patch.ct.resize(P * P * P);
    patch.pet.resize(P * P * P);
    patch.tissues.resize(P * P * P);
    patch.lesions.resize(P * P * P);
    int64_t i = 0;
    for (int64_t d = 0; d < P; ++d)
        for (int64_t h = 0; h < P; ++h)
            for (int64_t w = 0; w < P; ++w, ++i) {
                patch.ct[i] = study.ct.at(d0 + d, h0 + h, w0 + w);
                patch.pet[i] = study.pet.at(d0 + d, h0 + h, w0 + w);
                patch.tissues[i] = study.tissues.at(d0 + d, h0 + h, w0 + w);
                patch.lesions[i] = study.lesions.at(d0 + d, h0 + h, w0 + w);
            }
    return patch;
}

// --- Augmentation -----------------------------------------------------------

AugmentConfig AugmentConfig::disabled() {
    AugmentConfig c;
    c.blur_p = c.noise_p = c.contrast_p = c.rotation_p = c.scaling_p = c.gamma_p =
        c.mirror_p = 0.0;
    return c;
}

void AugmentConfig::validate() const {
    for (double p : {blur_p, noise_p, contrast_p, rotation_p, scaling_p, gamma_p, mirror_p})
        if (p < 0.0 || p > 1.0) throw Error("config", "augment probabilities must be in [0,1]");
    if (blur_sigma_lo > blur_sigma_hi || contrast_lo > contrast_hi ||
        scaling_lo > scaling_hi || gamma_lo > gamma_hi || noise_rel_hi < 0)
        throw Error("config", "augment parameter range is empty");
}

namespace {

void blur_axis(std::vector<float>& grid, int64_t P, int axis,
               const std::vector<double>& kernel) {
    const auto r = static_cast<int64_t>(kernel.size() / 2);
    std::vector<float> src = grid;
    const int64_t strides[3] = {P * P, P, 1};
    const int64_t stride = strides[axis];
    for (int64_t d = 0; d < P; ++d)
        for (int64_t h = 0; h < P; ++h)
            for (int64_t w = 0; w < P; ++w) {
                const int64_t pos[3] = {d, h, w};
                const int64_t base = (d * P + h) * P + w;
                double acc = 0.0;
                for (int64_t k = -r; k <= r; ++k) {
                    const int64_t q = std::clamp<int64_t>(pos[axis] + k, 0, P - 1);
                    acc += kernel[k + r] * src[base + (q - pos[axis]) * stride];
                }
                grid[base] = static_cast<float>(acc);
            }
}

void gaussian_blur(std::vector<float>& grid, int64_t P, double sigma) {
    const auto r = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * r + 1);
    double sum = 0.0;
    for (int64_t k = -r; k <= r; ++k) {
        kernel[k + r] = std::exp(-0.5 * (k * k) / (sigma * sigma));
        sum += kernel[k + r];
    }
    for (auto& v : kernel) v /= sum;
    for (int axis = 0; axis < 3; ++axis) blur_axis(grid, P, axis, kernel);
}

struct Mat3 {
    double m[3][3];

    static Mat3 identity() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                r.m[i][j] = 0;
                for (int k = 0; k < 3; ++k) r.m[i][j] += m[i][k] * o.m[k][j];
            }
        return r;
    }
};

Mat3 rotation_about(int axis, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    Mat3 r = Mat3::identity();
    const int a = (axis + 1) % 3, b = (axis + 2) % 3;
    r.m[a][a] = c;
    r.m[a][b] = -s;
    r.m[b][a] = s;
    r.m[b][b] = c;
    return r;
}

float sample_trilinear(const std::vector<float>& grid, int64_t P, double d, double h, double w) {
    const double cd = std::clamp(d, 0.0, double(P - 1));
    const double ch = std::clamp(h, 0.0, double(P - 1));
    const double cw = std::clamp(w, 0.0, double(P - 1));
    const auto d0 = static_cast<int64_t>(cd), h0 = static_cast<int64_t>(ch),
               w0 = static_cast<int64_t>(cw);
    const int64_t d1 = std::min(d0 + 1, P - 1), h1 = std::min(h0 + 1, P - 1),
                  w1 = std::min(w0 + 1, P - 1);
    const double fd = cd - d0, fh = ch - h0, fw = cw - w0;
    auto at = [&](int64_t a, int64_t b, int64_t c) {
        return static_cast<double>(grid[(a * P + b) * P + c]);
    };
    const double c00 = at(d0, h0, w0) * (1 - fw) + at(d0, h0, w1) * fw;
    const double c01 = at(d0, h1, w0) * (1 - fw) + at(d0, h1, w1) * fw;
    const double c10 = at(d1, h0, w0) * (1 - fw) + at(d1, h0, w1) * fw;
    const double c11 = at(d1, h1, w0) * (1 - fw) + at(d1, h1, w1) * fw;
    return static_cast<float>((c00 * (1 - fh) + c01 * fh) * (1 - fd) +
                              (c10 * (1 - fh) + c11 * fh) * fd);
}

uint32_t sample_nearest(const std::vector<uint32_t>& grid, int64_t P, double d, double h,
                        double w) {
    const auto rd = std::clamp<int64_t>(std::llround(d), 0, P - 1);
    const auto rh = std::clamp<int64_t>(std::llround(h), 0, P - 1);
    const auto rw = std::clamp<int64_t>(std::llround(w), 0, P - 1);
    return grid[(rd * P + rh) * P + rw];
}

void apply_affine(Patch& patch, const Mat3& inv) {
    const int64_t P = patch.size;
    const double c = 0.5 * static_cast<double>(P - 1);
    Patch src = patch;
    for (int64_t d = 0; d < P; ++d)
        for (int64_t h = 0; h < P; ++h)
            for (int64_t w = 0; w < P; ++w) {
                const double vd = d - c, vh = h - c, vw = w - c;
                const double ud = c + inv.m[0][0] * vd + inv.m[0][1] * vh + inv.m[0][2] * vw;
                const double uh = c + inv.m[1][0] * vd + inv.m[1][1] * vh + inv.m[1][2] * vw;
                const double uw = c + inv.m[2][0] * vd + inv.m[2][1] * vh + inv.m[2][2] * vw;
                const int64_t i = (d * P + h) * P + w;
                patch.pet[i] = sample_trilinear(src.pet, P, ud, uh, uw);
                patch.ct[i] = sample_trilinear(src.ct, P, ud, uh, uw);
                patch.tissues[i] = sample_nearest(src.tissues, P, ud, uh, uw);
                patch.lesions[i] = sample_nearest(src.lesions, P, ud, uh, uw);
            }
}

void mirror_axis(Patch& patch, int axis) {
    const int64_t P = patch.size;
    auto flip = [&](auto& grid) {
        for (int64_t d = 0; d < P; ++d)
            for (int64_t h = 0; h < P; ++h)
                for (int64_t w = 0; w < P; ++w) {
                    const int64_t idx[3] = {d, h, w};
                    if (idx[axis] >= P / 2) continue;  // each pair swapped once
                    int64_t m[3] = {d, h, w};
                    m[axis] = P - 1 - m[axis];
                    std::swap(grid[(d * P + h) * P + w], grid[(m[0] * P + m[1]) * P + m[2]]);
                }
    };
    flip(patch.pet);
    flip(patch.ct);
    flip(patch.tissues);
    flip(patch.lesions);
}

double patch_mean(const std::vector<float>& g) {
    double s = 0.0;
    for (float v : g) s += v;
    return s / static_cast<double>(g.size());
}

double patch_std(const std::vector<float>& g) {
    const double mu = patch_mean(g);
    double s = 0.0;
    for (float v : g) s += (v - mu) * (v - mu);
    return std::sqrt(s / static_cast<double>(g.size()));
}

void apply_gamma(std::vector<float>& g, double gamma) {
    const auto [mn_it, mx_it] = std::minmax_element(g.begin(), g.end());
    const double mn = *mn_it, range = *mx_it - *mn_it;
    if (range < 1e-7) return;
    for (auto& v : g)
        v = static_cast<float>(mn + range * std::pow((v - mn) / range, gamma));
}

} // namespace

void augment(Patch& patch, const AugmentConfig& cfg, uint64_t draw_seed) {
    cfg.validate();
    std::mt19937_64 g(rng::derive_seed(cfg.seed, draw_seed));
    const double deg = 3.14159265358979323846 / 180.0;

    if (rng::bernoulli(g, cfg.blur_p)) {
        const double sigma = rng::uniform(g, cfg.blur_sigma_lo, cfg.blur_sigma_hi);
        gaussian_blur(patch.pet, patch.size, sigma);
        gaussian_blur(patch.ct, patch.size, sigma);
    }
    if (rng::bernoulli(g, cfg.noise_p)) {
        const double rel = rng::uniform(g, 0.0, cfg.noise_rel_hi);
        for (auto* grid : {&patch.pet, &patch.ct}) {
            const double sigma = rel * patch_std(*grid);
            for (auto& v : *grid) v += static_cast<float>(sigma * rng::normal(g));
        }
    }
    if (rng::bernoulli(g, cfg.contrast_p)) {
        const double factor = rng::uniform(g, cfg.contrast_lo, cfg.contrast_hi);
        for (auto* grid : {&patch.pet, &patch.ct}) {
            const double mu = patch_mean(*grid);
            for (auto& v : *grid) v = static_cast<float>(mu + (v - mu) * factor);
        }
    }

    const bool rotate = rng::bernoulli(g, cfg.rotation_p);
    double angles[3] = {0, 0, 0};
    if (rotate)
        for (auto& a : angles)
            a = rng::uniform(g, -cfg.rotation_max_deg, cfg.rotation_max_deg) * deg;
    const bool scale = rng::bernoulli(g, cfg.scaling_p);
    const double zoom = scale ? rng::uniform(g, cfg.scaling_lo, cfg.scaling_hi) : 1.0;
    if (rotate || scale) {
        // Inverse map: undo zoom, then the rotations in reverse order.
        Mat3 inv = Mat3::identity();
        for (int i = 0; i < 3; ++i) inv.m[i][i] = 1.0 / zoom;
        inv = rotation_about(2, -angles[2]) * inv;
        inv = rotation_about(1, -angles[1]) * inv;
        inv = rotation_about(0, -angles[0]) * inv;
        apply_affine(patch, inv);
    }

    if (rng::bernoulli(g, cfg.gamma_p)) {
        const double gamma = rng::uniform(g, cfg.gamma_lo, cfg.gamma_hi);
        apply_gamma(patch.pet, gamma);
        apply_gamma(patch.ct, gamma);
    }
    for (int axis = 0; axis < 3; ++axis)
        if (rng::bernoulli(g, cfg.mirror_p)) mirror_axis(patch, axis);
}

} // namespace mirrorseg
