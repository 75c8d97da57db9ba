#include "mirrorseg/ops.hpp"
#include "mirrorseg/error.hpp"
#include "mirrorseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mirrorseg {

namespace {

int64_t ceil_div(int64_t a, int64_t b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
int64_t floor_div(int64_t a, int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

struct ConvDims {
    int64_t N, CI, D, H, W;
    int64_t CO, KD, KH, KW;
    int64_t s, p;
    int64_t OD, OH, OW;
};

ConvDims conv_dims(const Shape5& x, const ConvSpec& spec) {
    ConvDims m{};
    m.N = x.n;
    m.CI = x.c;
    m.D = x.d;
    m.H = x.h;
    m.W = x.w;
    m.CO = spec.out_channels;
    m.KD = spec.kernel[0];
    m.KH = spec.kernel[1];
    m.KW = spec.kernel[2];
    m.s = spec.stride;
    m.p = spec.padding;
    if (x.c != spec.in_channels)
        throw Error("data", "conv3d: input channels " + std::to_string(x.c) +
                                " != spec in_channels " + std::to_string(spec.in_channels));
    m.OD = (m.D + 2 * m.p - m.KD) / m.s + 1;
    m.OH = (m.H + 2 * m.p - m.KH) / m.s + 1;
    m.OW = (m.W + 2 * m.p - m.KW) / m.s + 1;
    if (m.OD <= 0 || m.OH <= 0 || m.OW <= 0)
        throw Error("data", "conv3d: non-positive output extent for input " + x.str());
    return m;
}

// Valid output range along one axis: o in [lo, hi) keeps o*s + k - p inside
// [0, dim).
std::pair<int64_t, int64_t> valid_range(int64_t out_dim, int64_t in_dim, int64_t k, int64_t s,
                                        int64_t p) {
    const int64_t lo = std::max<int64_t>(0, ceil_div(p - k, s));
    const int64_t hi = std::min(out_dim, floor_div(in_dim - 1 - k + p, s) + 1);
    return {lo, hi};
}

} // namespace

namespace {

// Fused 3x3x3 stencil for the stride-1, pad-1 case: acc (same dims as the
// plane) accumulates the correlation of xplane with the 27 taps. For each
// (kd, kh) slice all valid rows are processed as one flat run; the row-wrap
// products that cross the w border are subtracted afterwards, keeping the
// vectorized inner loop long even for small W.
void stencil333_add(const float* __restrict xplane, const float* taps, float* __restrict acc,
                    int64_t D, int64_t H, int64_t W) {
    for (int kd = 0; kd < 3; ++kd) {
        const int64_t dlo = std::max<int64_t>(0, 1 - kd);
        const int64_t dhi = std::min<int64_t>(D, D + 1 - kd);
        for (int kh = 0; kh < 3; ++kh) {
            const int64_t hlo = std::max<int64_t>(0, 1 - kh);
            const int64_t hhi = std::min<int64_t>(H, H + 1 - kh);
            const int64_t rows = hhi - hlo;
            if (rows <= 0) continue;
            const float w0 = taps[(kd * 3 + kh) * 3 + 0];
            const float w1 = taps[(kd * 3 + kh) * 3 + 1];
            const float w2 = taps[(kd * 3 + kh) * 3 + 2];
            const int64_t len = rows * W;
            for (int64_t od = dlo; od < dhi; ++od) {
                const int64_t id = od + kd - 1;
                const float* __restrict xr = xplane + (id * H + hlo + kh - 1) * W;
                float* __restrict o = acc + (od * H + hlo) * W;
                o[0] += w1 * xr[0] + w2 * xr[1];
                for (int64_t i = 1; i < len - 1; ++i)
                    o[i] += w0 * xr[i - 1] + w1 * xr[i] + w2 * xr[i + 1];
                o[len - 1] += w0 * xr[len - 2] + w1 * xr[len - 1];
                for (int64_t r = 1; r < rows; ++r) {
                    o[r * W] -= w0 * xr[r * W - 1];
                    o[r * W - 1] -= w2 * xr[r * W];
                }
            }
        }
    }
}

bool is_fast_conv(const ConvDims& m) {
    return m.s == 1 && m.p == 1 && m.KD == 3 && m.KH == 3 && m.KW == 3 && m.W >= 2;
}

} // namespace

ConvSpec make_conv(int64_t in_channels, int64_t out_channels, std::array<int64_t, 3> kernel,
                   int64_t stride, int64_t padding, std::mt19937_64& gen) {
    ConvSpec spec;
    spec.in_channels = in_channels;
    spec.out_channels = out_channels;
    spec.kernel = kernel;
    spec.stride = stride;
    spec.padding = padding;

    const Shape5 wshape{out_channels, in_channels, kernel[0], kernel[1], kernel[2]};
    std::vector<float> w(wshape.numel());
    const double fan_in = static_cast<double>(in_channels * kernel[0] * kernel[1] * kernel[2]);
    const double std_dev = std::sqrt(2.0 / fan_in);
    for (auto& v : w) v = static_cast<float>(std_dev * rng::normal(gen));
    spec.weights = Tensor::from_data(wshape, std::move(w), true);
    spec.bias = Tensor::zeros({1, out_channels, 1, 1, 1}, true);
    return spec;
}

Tensor conv3d(const Tensor& x, const ConvSpec& spec) {
    const ConvDims m = conv_dims(x.shape(), spec);
    Tensor out = autograd::make_result({m.N, m.CO, m.OD, m.OH, m.OW},
                                       {x, spec.weights, spec.bias});

    const float* xd = x.data().data();
    const float* wd = spec.weights.data().data();
    const float* bd = spec.bias.data().data();
    float* od = out.data().data();
    const int64_t in_sp = m.D * m.H * m.W;
    const int64_t out_sp = m.OD * m.OH * m.OW;

    if (is_fast_conv(m)) {
#pragma omp parallel for collapse(2) schedule(static)
        for (int64_t n = 0; n < m.N; ++n)
            for (int64_t oc = 0; oc < m.CO; ++oc) {
                float* oplane = od + (n * m.CO + oc) * out_sp;
                std::fill(oplane, oplane + out_sp, bd[oc]);
                for (int64_t ic = 0; ic < m.CI; ++ic)
                    stencil333_add(xd + (n * m.CI + ic) * in_sp, wd + (oc * m.CI + ic) * 27,
                                   oplane, m.D, m.H, m.W);
            }
    } else {
#pragma omp parallel
        {
            std::vector<double> acc;
#pragma omp for collapse(2) schedule(static)
            for (int64_t n = 0; n < m.N; ++n)
                for (int64_t oc = 0; oc < m.CO; ++oc) {
                    acc.assign(out_sp, static_cast<double>(bd[oc]));
                    for (int64_t ic = 0; ic < m.CI; ++ic) {
                        const float* xplane = xd + (n * m.CI + ic) * in_sp;
                        const float* wk = wd + (oc * m.CI + ic) * m.KD * m.KH * m.KW;
                        for (int64_t kd = 0; kd < m.KD; ++kd) {
                            const auto [dlo, dhi] = valid_range(m.OD, m.D, kd, m.s, m.p);
                            for (int64_t kh = 0; kh < m.KH; ++kh) {
                                const auto [hlo, hhi] = valid_range(m.OH, m.H, kh, m.s, m.p);
                                for (int64_t kw = 0; kw < m.KW; ++kw) {
                                    const auto [wlo, whi] = valid_range(m.OW, m.W, kw, m.s, m.p);
                                    if (wlo >= whi) continue;
                                    const double wv = wk[(kd * m.KH + kh) * m.KW + kw];
                                    for (int64_t od_ = dlo; od_ < dhi; ++od_) {
                                        const int64_t id = od_ * m.s + kd - m.p;
                                        for (int64_t oh = hlo; oh < hhi; ++oh) {
                                            const int64_t ih = oh * m.s + kh - m.p;
                                            const float* src = xplane + (id * m.H + ih) * m.W;
                                            double* dst = acc.data() + (od_ * m.OH + oh) * m.OW;
                                            if (m.s == 1) {
                                                const float* srow = src + (wlo + kw - m.p);
                                                for (int64_t ow = wlo; ow < whi; ++ow)
                                                    dst[ow] += wv * srow[ow - wlo];
                                            } else {
                                                for (int64_t ow = wlo; ow < whi; ++ow)
                                                    dst[ow] += wv * src[ow * m.s + kw - m.p];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    float* oplane = od + (n * m.CO + oc) * out_sp;
                    for (int64_t i = 0; i < out_sp; ++i) oplane[i] = static_cast<float>(acc[i]);
                }
        }
    }

    auto x_impl = x.impl_ptr();
    auto w_impl = spec.weights.impl_ptr();
    auto b_impl = spec.bias.impl_ptr();
    autograd::set_backward(out, [m, x_impl, w_impl, b_impl](TensorImpl& self) {
        const float* go = self.grad.data();
        const int64_t in_sp = m.D * m.H * m.W;
        const int64_t out_sp = m.OD * m.OH * m.OW;

        if (b_impl->needs_grad) {
            b_impl->ensure_grad();
#pragma omp parallel for schedule(static)
            for (int64_t oc = 0; oc < m.CO; ++oc) {
                double acc = 0.0;
                for (int64_t n = 0; n < m.N; ++n) {
                    const float* gplane = go + (n * m.CO + oc) * out_sp;
                    for (int64_t i = 0; i < out_sp; ++i) acc += gplane[i];
                }
                b_impl->grad[oc] += static_cast<float>(acc);
            }
        }

        if (w_impl->needs_grad && is_fast_conv(m)) {
            w_impl->ensure_grad();
            // Each tap is a plane dot between the output grad and the shifted
            // input. Rows are flattened into one long SIMD dot per (tap, od);
            // the row-wrap products that do not belong to the tap are
            // subtracted afterwards.
#pragma omp parallel for collapse(2) schedule(static)
            for (int64_t oc = 0; oc < m.CO; ++oc)
                for (int64_t ic = 0; ic < m.CI; ++ic) {
                    double a[27] = {};
                    for (int64_t n = 0; n < m.N; ++n) {
                        const float* gplane = go + (n * m.CO + oc) * out_sp;
                        const float* xplane = x_impl->data.data() + (n * m.CI + ic) * in_sp;
                        for (int kd = 0; kd < 3; ++kd) {
                            const int64_t dlo = std::max<int64_t>(0, 1 - kd);
                            const int64_t dhi = std::min(m.D, m.D + 1 - kd);
                            for (int kh = 0; kh < 3; ++kh) {
                                const int64_t hlo = std::max<int64_t>(0, 1 - kh);
                                const int64_t hhi = std::min(m.H, m.H + 1 - kh);
                                const int64_t rows = hhi - hlo;
                                if (rows <= 0) continue;
                                for (int kw = 0; kw < 3; ++kw) {
                                    double tap = 0.0;
                                    for (int64_t od_ = dlo; od_ < dhi; ++od_) {
                                        const int64_t id = od_ + kd - 1;
                                        const float* __restrict g0 =
                                            gplane + (od_ * m.H + hlo) * m.W;
                                        const float* __restrict x0 =
                                            xplane + (id * m.H + hlo + kh - 1) * m.W +
                                            (kw - 1);
                                        const int64_t len = rows * m.W;
                                        const int64_t i0 = kw == 0 ? 1 : 0;
                                        const int64_t i1 = len - (kw == 2 ? 1 : 0);
                                        float s = 0.f;
#pragma omp simd reduction(+ : s)
                                        for (int64_t i = i0; i < i1; ++i) s += g0[i] * x0[i];
                                        double corr = 0.0;
                                        if (kw == 0)
                                            for (int64_t r = 1; r < rows; ++r)
                                                corr += static_cast<double>(g0[r * m.W]) *
                                                        x0[r * m.W];
                                        if (kw == 2)
                                            for (int64_t r = 0; r + 1 < rows; ++r)
                                                corr += static_cast<double>(
                                                            g0[r * m.W + m.W - 1]) *
                                                        x0[r * m.W + m.W - 1];
                                        tap += static_cast<double>(s) - corr;
                                    }
                                    a[(kd * 3 + kh) * 3 + kw] += tap;
                                }
                            }
                        }
                    }
                    float* gw = w_impl->grad.data() + (oc * m.CI + ic) * 27;
                    for (int t = 0; t < 27; ++t) gw[t] += static_cast<float>(a[t]);
                }
        } else if (w_impl->needs_grad) {
            w_impl->ensure_grad();
#pragma omp parallel for schedule(static)
            for (int64_t oc = 0; oc < m.CO; ++oc) {
                for (int64_t ic = 0; ic < m.CI; ++ic) {
                    float* gw = w_impl->grad.data() + (oc * m.CI + ic) * m.KD * m.KH * m.KW;
                    for (int64_t kd = 0; kd < m.KD; ++kd) {
                        const auto [dlo, dhi] = valid_range(m.OD, m.D, kd, m.s, m.p);
                        for (int64_t kh = 0; kh < m.KH; ++kh) {
                            const auto [hlo, hhi] = valid_range(m.OH, m.H, kh, m.s, m.p);
                            for (int64_t kw = 0; kw < m.KW; ++kw) {
                                const auto [wlo, whi] = valid_range(m.OW, m.W, kw, m.s, m.p);
                                if (wlo >= whi) continue;
                                double acc = 0.0;
                                for (int64_t n = 0; n < m.N; ++n) {
                                    const float* gplane = go + (n * m.CO + oc) * out_sp;
                                    const float* xplane =
                                        x_impl->data.data() + (n * m.CI + ic) * in_sp;
                                    for (int64_t od_ = dlo; od_ < dhi; ++od_) {
                                        const int64_t id = od_ * m.s + kd - m.p;
                                        for (int64_t oh = hlo; oh < hhi; ++oh) {
                                            const int64_t ih = oh * m.s + kh - m.p;
                                            const float* grow =
                                                gplane + (od_ * m.OH + oh) * m.OW;
                                            const float* xrow =
                                                xplane + (id * m.H + ih) * m.W;
                                            if (m.s == 1) {
                                                const float* xs = xrow + (wlo + kw - m.p);
                                                for (int64_t ow = wlo; ow < whi; ++ow)
                                                    acc += static_cast<double>(grow[ow]) *
                                                           xs[ow - wlo];
                                            } else {
                                                for (int64_t ow = wlo; ow < whi; ++ow)
                                                    acc += static_cast<double>(grow[ow]) *
                                                           xrow[ow * m.s + kw - m.p];
                                            }
                                        }
                                    }
                                }
                                gw[(kd * m.KH + kh) * m.KW + kw] += static_cast<float>(acc);
                            }
                        }
                    }
                }
            }
        }

        if (x_impl->needs_grad && is_fast_conv(m)) {
            x_impl->ensure_grad();
            // grad wrt input = correlation of the output grad with the
            // axis-reversed kernel, same pad-1 geometry.
#pragma omp parallel
            {
                std::vector<float> taps(27);
#pragma omp for collapse(2) schedule(static)
                for (int64_t n = 0; n < m.N; ++n)
                    for (int64_t ic = 0; ic < m.CI; ++ic) {
                        float* gx = x_impl->grad.data() + (n * m.CI + ic) * in_sp;
                        for (int64_t oc = 0; oc < m.CO; ++oc) {
                            const float* wk = w_impl->data.data() + (oc * m.CI + ic) * 27;
                            for (int kd = 0; kd < 3; ++kd)
                                for (int kh = 0; kh < 3; ++kh)
                                    for (int kw = 0; kw < 3; ++kw)
                                        taps[(kd * 3 + kh) * 3 + kw] =
                                            wk[((2 - kd) * 3 + (2 - kh)) * 3 + (2 - kw)];
                            stencil333_add(go + (n * m.CO + oc) * out_sp, taps.data(), gx,
                                           m.D, m.H, m.W);
                        }
                    }
            }
        } else if (x_impl->needs_grad) {
            x_impl->ensure_grad();
#pragma omp parallel
            {
                std::vector<double> acc;
#pragma omp for collapse(2) schedule(static)
                for (int64_t n = 0; n < m.N; ++n)
                    for (int64_t ic = 0; ic < m.CI; ++ic) {
                        acc.assign(in_sp, 0.0);
                        for (int64_t oc = 0; oc < m.CO; ++oc) {
                            const float* gplane = go + (n * m.CO + oc) * out_sp;
                            const float* wk = w_impl->data.data() +
                                              (oc * m.CI + ic) * m.KD * m.KH * m.KW;
                            for (int64_t kd = 0; kd < m.KD; ++kd) {
                                const auto [dlo, dhi] = valid_range(m.OD, m.D, kd, m.s, m.p);
                                for (int64_t kh = 0; kh < m.KH; ++kh) {
                                    const auto [hlo, hhi] =
                                        valid_range(m.OH, m.H, kh, m.s, m.p);
                                    for (int64_t kw = 0; kw < m.KW; ++kw) {
                                        const auto [wlo, whi] =
                                            valid_range(m.OW, m.W, kw, m.s, m.p);
                                        if (wlo >= whi) continue;
                                        const double wv = wk[(kd * m.KH + kh) * m.KW + kw];
                                        for (int64_t od_ = dlo; od_ < dhi; ++od_) {
                                            const int64_t id = od_ * m.s + kd - m.p;
                                            for (int64_t oh = hlo; oh < hhi; ++oh) {
                                                const int64_t ih = oh * m.s + kh - m.p;
                                                const float* grow =
                                                    gplane + (od_ * m.OH + oh) * m.OW;
                                                double* arow =
                                                    acc.data() + (id * m.H + ih) * m.W;
                                                if (m.s == 1) {
                                                    double* as = arow + (wlo + kw - m.p);
                                                    for (int64_t ow = wlo; ow < whi; ++ow)
                                                        as[ow - wlo] += wv * grow[ow];
                                                } else {
                                                    for (int64_t ow = wlo; ow < whi; ++ow)
                                                        arow[ow * m.s + kw - m.p] +=
                                                            wv * grow[ow];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        float* gx = x_impl->grad.data() + (n * m.CI + ic) * in_sp;
                        for (int64_t i = 0; i < in_sp; ++i)
                            gx[i] += static_cast<float>(acc[i]);
                    }
            }
        }
    });
    autograd::check_finite(out, "conv3d");
    return out;
}

Tensor downsample_max2(const Tensor& x) {
    const Shape5 s = x.shape();
    if (s.d % 2 || s.h % 2 || s.w % 2)
        throw Error("data", "downsample_max2 requires even spatial dims, got " + s.str());
    const Shape5 os{s.n, s.c, s.d / 2, s.h / 2, s.w / 2};
    Tensor out = autograd::make_result(os, {x});

    const int64_t planes = s.n * s.c;
    const int64_t in_sp = s.spatial();
    const int64_t out_sp = os.spatial();
    auto argmax = std::make_shared<std::vector<int32_t>>(os.numel());
    const float* xd = x.data().data();
    float* od = out.data().data();

#pragma omp parallel for schedule(static)
    for (int64_t pl = 0; pl < planes; ++pl) {
        const float* xp = xd + pl * in_sp;
        float* op = od + pl * out_sp;
        int32_t* am = argmax->data() + pl * out_sp;
        for (int64_t zd = 0; zd < os.d; ++zd)
            for (int64_t zh = 0; zh < os.h; ++zh)
                for (int64_t zw = 0; zw < os.w; ++zw) {
                    float best = -std::numeric_limits<float>::infinity();
                    int32_t best_off = 0;
                    for (int dd = 0; dd < 2; ++dd)
                        for (int hh = 0; hh < 2; ++hh)
                            for (int ww = 0; ww < 2; ++ww) {
                                const int64_t idx = ((2 * zd + dd) * s.h + 2 * zh + hh) * s.w +
                                                    2 * zw + ww;
                                if (xp[idx] > best) {
                                    best = xp[idx];
                                    best_off = static_cast<int32_t>(idx);
                                }
                            }
                    const int64_t oidx = (zd * os.h + zh) * os.w + zw;
                    op[oidx] = best;
                    am[oidx] = best_off;
                }
    }

    auto x_impl = x.impl_ptr();
    autograd::set_backward(out, [x_impl, argmax, in_sp, out_sp, planes](TensorImpl& self) {
        if (!x_impl->needs_grad) return;
        x_impl->ensure_grad();
#pragma omp parallel for schedule(static)
        for (int64_t pl = 0; pl < planes; ++pl) {
            const float* gp = self.grad.data() + pl * out_sp;
            const int32_t* am = argmax->data() + pl * out_sp;
            float* gx = x_impl->grad.data() + pl * in_sp;
            for (int64_t i = 0; i < out_sp; ++i) gx[am[i]] += gp[i];
        }
    });
    autograd::check_finite(out, "downsample_max2");
    return out;
}

Tensor upsample_nearest2(const Tensor& x) {
    const Shape5 s = x.shape();
    const Shape5 os{s.n, s.c, s.d * 2, s.h * 2, s.w * 2};
    Tensor out = autograd::make_result(os, {x});

    const int64_t planes = s.n * s.c;
    const int64_t in_sp = s.spatial();
    const int64_t out_sp = os.spatial();
    const float* xd = x.data().data();
    float* od = out.data().data();

#pragma omp parallel for schedule(static)
    for (int64_t pl = 0; pl < planes; ++pl) {
        const float* xp = xd + pl * in_sp;
        float* op = od + pl * out_sp;
        for (int64_t zd = 0; zd < os.d; ++zd)
            for (int64_t zh = 0; zh < os.h; ++zh) {
                const float* xrow = xp + ((zd / 2) * s.h + zh / 2) * s.w;
                float* orow = op + (zd * os.h + zh) * os.w;
                for (int64_t zw = 0; zw < os.w; ++zw) orow[zw] = xrow[zw / 2];
            }
    }

    auto x_impl = x.impl_ptr();
    autograd::set_backward(out, [x_impl, s, os, planes, in_sp, out_sp](TensorImpl& self) {
        if (!x_impl->needs_grad) return;
        x_impl->ensure_grad();
#pragma omp parallel for schedule(static)
        for (int64_t pl = 0; pl < planes; ++pl) {
            const float* gp = self.grad.data() + pl * out_sp;
            float* gx = x_impl->grad.data() + pl * in_sp;
            for (int64_t zd = 0; zd < s.d; ++zd)
                for (int64_t zh = 0; zh < s.h; ++zh)
                    for (int64_t zw = 0; zw < s.w; ++zw) {
                        double acc = 0.0;
                        for (int dd = 0; dd < 2; ++dd)
                            for (int hh = 0; hh < 2; ++hh)
                                for (int ww = 0; ww < 2; ++ww)
                                    acc += gp[((2 * zd + dd) * os.h + 2 * zh + hh) * os.w +
                                              2 * zw + ww];
                        gx[(zd * s.h + zh) * s.w + zw] += static_cast<float>(acc);
                    }
        }
    });
    autograd::check_finite(out, "upsample_nearest2");
    return out;
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    const Shape5 s = x.shape();
    if (gamma.shape().c != s.c || beta.shape().c != s.c)
        throw Error("data", "instance_norm: gamma/beta channel mismatch");
    if (s.spatial() < 2)
        throw Error("data", "instance_norm requires spatial size >= 2");

    Tensor out = autograd::make_result(s, {x, gamma, beta});
    const int64_t planes = s.n * s.c;
    const int64_t sp = s.spatial();
    auto stats = std::make_shared<std::vector<double>>(planes * 2);  // mu, inv_std pairs

    const float* xd = x.data().data();
    const float* gd = gamma.data().data();
    const float* bd = beta.data().data();
    float* od = out.data().data();

#pragma omp parallel for schedule(static)
    for (int64_t pl = 0; pl < planes; ++pl) {
        const int64_t c = pl % s.c;
        const float* xp = xd + pl * sp;
        float* op = od + pl * sp;
        double sum = 0.0, sum2 = 0.0;
        for (int64_t i = 0; i < sp; ++i) {
            sum += xp[i];
            sum2 += static_cast<double>(xp[i]) * xp[i];
        }
        const double mu = sum / static_cast<double>(sp);
        const double var = std::max(0.0, sum2 / static_cast<double>(sp) - mu * mu);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        (*stats)[2 * pl] = mu;
        (*stats)[2 * pl + 1] = inv_std;
        const double g = gd[c], b = bd[c];
        for (int64_t i = 0; i < sp; ++i)
            op[i] = static_cast<float>((xp[i] - mu) * inv_std * g + b);
    }

    auto x_impl = x.impl_ptr();
    auto g_impl = gamma.impl_ptr();
    auto b_impl = beta.impl_ptr();
    autograd::set_backward(out, [x_impl, g_impl, b_impl, stats, s, planes, sp](
                                    TensorImpl& self) {
        const float* go = self.grad.data();
        const float* xd = x_impl->data.data();
        const float* gd = g_impl->data.data();

        if (g_impl->needs_grad || b_impl->needs_grad) {
            g_impl->ensure_grad();
            b_impl->ensure_grad();
#pragma omp parallel for schedule(static)
            for (int64_t c = 0; c < s.c; ++c) {
                double dg = 0.0, db = 0.0;
                for (int64_t n = 0; n < s.n; ++n) {
                    const int64_t pl = n * s.c + c;
                    const double mu = (*stats)[2 * pl], inv_std = (*stats)[2 * pl + 1];
                    const float* gp = go + pl * sp;
                    const float* xp = xd + pl * sp;
                    for (int64_t i = 0; i < sp; ++i) {
                        dg += static_cast<double>(gp[i]) * (xp[i] - mu) * inv_std;
                        db += gp[i];
                    }
                }
                g_impl->grad[c] += static_cast<float>(dg);
                b_impl->grad[c] += static_cast<float>(db);
            }
        }

        if (x_impl->needs_grad) {
            x_impl->ensure_grad();
#pragma omp parallel for schedule(static)
            for (int64_t pl = 0; pl < planes; ++pl) {
                const int64_t c = pl % s.c;
                const double mu = (*stats)[2 * pl], inv_std = (*stats)[2 * pl + 1];
                const double g = gd[c];
                const float* gp = go + pl * sp;
                const float* xp = xd + pl * sp;
                float* gx = x_impl->grad.data() + pl * sp;
                double m1 = 0.0, m2 = 0.0;
                for (int64_t i = 0; i < sp; ++i) {
                    const double dxhat = static_cast<double>(gp[i]) * g;
                    const double xhat = (xp[i] - mu) * inv_std;
                    m1 += dxhat;
                    m2 += dxhat * xhat;
                }
                m1 /= static_cast<double>(sp);
                m2 /= static_cast<double>(sp);
                for (int64_t i = 0; i < sp; ++i) {
                    const double dxhat = static_cast<double>(gp[i]) * g;
                    const double xhat = (xp[i] - mu) * inv_std;
                    gx[i] += static_cast<float>(inv_std * (dxhat - m1 - xhat * m2));
                }
            }
        }
    });
    autograd::check_finite(out, "instance_norm");
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = autograd::make_result(x.shape(), {x});
    const float* xd = x.data().data();
    float* od = out.data().data();
    const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) od[i] = xd[i] > 0.f ? xd[i] : 0.f;

    auto x_impl = x.impl_ptr();
    autograd::set_backward(out, [x_impl, n](TensorImpl& self) {
        if (!x_impl->needs_grad) return;
        x_impl->ensure_grad();
        const float* xd = x_impl->data.data();
        const float* go = self.grad.data();
        float* gx = x_impl->grad.data();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i)
            if (xd[i] > 0.f) gx[i] += go[i];
    });
    autograd::check_finite(out, "relu");
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = autograd::make_result(x.shape(), {x});
    const float* xd = x.data().data();
    float* od = out.data().data();
    const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const double v = xd[i];
        od[i] = static_cast<float>(v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                          : std::exp(v) / (1.0 + std::exp(v)));
    }

    auto x_impl = x.impl_ptr();
    autograd::set_backward(out, [x_impl, n](TensorImpl& self) {
        if (!x_impl->needs_grad) return;
        x_impl->ensure_grad();
        const float* y = self.data.data();
        const float* go = self.grad.data();
        float* gx = x_impl->grad.data();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * y[i] * (1.f - y[i]);
    });
    autograd::check_finite(out, "sigmoid");
    return out;
}

Tensor softmax_channels(const Tensor& x) {
    const Shape5 s = x.shape();
    Tensor out = autograd::make_result(s, {x});
    const int64_t sp = s.spatial();
    const float* xd = x.data().data();
    float* od = out.data().data();

#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t i = 0; i < sp; ++i) {
            const float* xcol = xd + n * s.c * sp + i;
            float* ocol = od + n * s.c * sp + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t c = 0; c < s.c; ++c) mx = std::max(mx, double(xcol[c * sp]));
            double denom = 0.0;
            for (int64_t c = 0; c < s.c; ++c) denom += std::exp(xcol[c * sp] - mx);
            for (int64_t c = 0; c < s.c; ++c)
                ocol[c * sp] = static_cast<float>(std::exp(xcol[c * sp] - mx) / denom);
        }

    auto x_impl = x.impl_ptr();
    autograd::set_backward(out, [x_impl, s, sp](TensorImpl& self) {
        if (!x_impl->needs_grad) return;
        x_impl->ensure_grad();
        const float* y = self.data.data();
        const float* go = self.grad.data();
        float* gx = x_impl->grad.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t i = 0; i < sp; ++i) {
                const int64_t base = n * s.c * sp + i;
                double dot = 0.0;
                for (int64_t c = 0; c < s.c; ++c)
                    dot += static_cast<double>(go[base + c * sp]) * y[base + c * sp];
                for (int64_t c = 0; c < s.c; ++c)
                    gx[base + c * sp] += static_cast<float>(
                        y[base + c * sp] * (go[base + c * sp] - dot));
            }
    });
    autograd::check_finite(out, "softmax_channels");
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Shape5 sa = a.shape(), sb = b.shape();
    if (sa.n != sb.n || sa.d != sb.d || sa.h != sb.h || sa.w != sb.w)
        throw Error("data", "concat_channels: shape mismatch " + sa.str() + " vs " + sb.str());
    const Shape5 os{sa.n, sa.c + sb.c, sa.d, sa.h, sa.w};
    Tensor out = autograd::make_result(os, {a, b});

    const int64_t sp = sa.spatial();
    const float* ad = a.data().data();
    const float* bd = b.data().data();
    float* od = out.data().data();
    for (int64_t n = 0; n < sa.n; ++n) {
        std::copy(ad + n * sa.c * sp, ad + (n + 1) * sa.c * sp, od + n * os.c * sp);
        std::copy(bd + n * sb.c * sp, bd + (n + 1) * sb.c * sp,
                  od + n * os.c * sp + sa.c * sp);
    }

    auto a_impl = a.impl_ptr();
    auto b_impl = b.impl_ptr();
    autograd::set_backward(out, [a_impl, b_impl, sa, sb, os, sp](TensorImpl& self) {
        const float* go = self.grad.data();
        if (a_impl->needs_grad) {
            a_impl->ensure_grad();
            for (int64_t n = 0; n < sa.n; ++n) {
                const float* src = go + n * os.c * sp;
                float* dst = a_impl->grad.data() + n * sa.c * sp;
                for (int64_t i = 0; i < sa.c * sp; ++i) dst[i] += src[i];
            }
        }
        if (b_impl->needs_grad) {
            b_impl->ensure_grad();
            for (int64_t n = 0; n < sb.n; ++n) {
                const float* src = go + n * os.c * sp + sa.c * sp;
                float* dst = b_impl->grad.data() + n * sb.c * sp;
                for (int64_t i = 0; i < sb.c * sp; ++i) dst[i] += src[i];
            }
        }
    });
    autograd::check_finite(out, "concat_channels");
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape()))
        throw Error("data", "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor out = autograd::make_result(a.shape(), {a, b});
    const float* ad = a.data().data();
    const float* bd = b.data().data();
    float* od = out.data().data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) od[i] = ad[i] + bd[i];
    if (n == 1) {
        out.impl()->scalar_f64 = a.item_f64() + b.item_f64();
        out.impl()->has_scalar_f64 = true;
    }

    auto a_impl = a.impl_ptr();
    auto b_impl = b.impl_ptr();
    autograd::set_backward(out, [a_impl, b_impl, n](TensorImpl& self) {
        const float* go = self.grad.data();
        if (a_impl->needs_grad) {
            a_impl->ensure_grad();
            for (int64_t i = 0; i < n; ++i) a_impl->grad[i] += go[i];
        }
        if (b_impl->needs_grad) {
            b_impl->ensure_grad();
            for (int64_t i = 0; i < n; ++i) b_impl->grad[i] += go[i];
        }
    });
    autograd::check_finite(out, "add");
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape()))
        throw Error("data", "mul: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor out = autograd::make_result(a.shape(), {a, b});
    const float* ad = a.data().data();
    const float* bd = b.data().data();
    float* od = out.data().data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) od[i] = ad[i] * bd[i];

    auto a_impl = a.impl_ptr();
    auto b_impl = b.impl_ptr();
    autograd::set_backward(out, [a_impl, b_impl, n](TensorImpl& self) {
        const float* go = self.grad.data();
        if (a_impl->needs_grad) {
            a_impl->ensure_grad();
            for (int64_t i = 0; i < n; ++i) a_impl->grad[i] += go[i] * b_impl->data[i];
        }
        if (b_impl->needs_grad) {
            b_impl->ensure_grad();
            for (int64_t i = 0; i < n; ++i) b_impl->grad[i] += go[i] * a_impl->data[i];
        }
    });
    autograd::check_finite(out, "mul");
    return out;
}

Tensor sum_all(const Tensor& x) {
    Tensor out = autograd::make_result({1, 1, 1, 1, 1}, {x});
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    out.data()[0] = static_cast<float>(acc);
    out.impl()->scalar_f64 = acc;
    out.impl()->has_scalar_f64 = true;

    auto x_impl = x.impl_ptr();
    autograd::set_backward(out, [x_impl](TensorImpl& self) {
        if (!x_impl->needs_grad) return;
        x_impl->ensure_grad();
        const float g = self.grad[0];
        for (auto& v : x_impl->grad) v += g;
    });
    autograd::check_finite(out, "sum_all");
    return out;
}

Tensor mean_all(const Tensor& x) {
    Tensor out = autograd::make_result({1, 1, 1, 1, 1}, {x});
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    const auto n = static_cast<double>(x.numel());
    out.data()[0] = static_cast<float>(acc / n);
    out.impl()->scalar_f64 = acc / n;
    out.impl()->has_scalar_f64 = true;

    auto x_impl = x.impl_ptr();
    autograd::set_backward(out, [x_impl, n](TensorImpl& self) {
        if (!x_impl->needs_grad) return;
        x_impl->ensure_grad();
        const float g = static_cast<float>(self.grad[0] / n);
        for (auto& v : x_impl->grad) v += g;
    });
    autograd::check_finite(out, "mean_all");
    return out;
}

std::vector<uint32_t> channel_argmax(const Tensor& x) {
    const Shape5 s = x.shape();
    const int64_t sp = s.spatial();
    std::vector<uint32_t> out(s.n * sp);
    const float* xd = x.data().data();
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t i = 0; i < sp; ++i) {
            const float* col = xd + n * s.c * sp + i;
            uint32_t best = 0;
            float bv = col[0];
            for (int64_t c = 1; c < s.c; ++c)
                if (col[c * sp] > bv) {
                    bv = col[c * sp];
                    best = static_cast<uint32_t>(c);
                }
            out[n * sp + i] = best;
        }
    return out;
}

} // namespace mirrorseg
