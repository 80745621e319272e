#pragma once

// Layer primitives: standard/depth-wise/dilated/deformable convolution,
// batch norm, activations, resampling and the gated broadcast products used
// by the decoder attention blocks. All maps are NCHW.

#include <cmath>

#include "hbformer/ops.hpp"
#include "hbformer/tensor.hpp"

namespace hbf {

template <typename T>
struct Conv2dParams {
    Tensor<T> weight;  // [out_ch, in_ch/groups, kh, kw]
    Tensor<T> bias;    // [out_ch] or undefined
    int stride = 1;
    int padding = 0;
    int dilation = 1;
    int groups = 1;
};

namespace detail {

inline int div_ceil(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

inline int conv_out_size(const char* op, int in, int k, int stride, int pad, int dil) {
    const int span = (k - 1) * dil + 1;
    const int num = in + 2 * pad - span;
    if (num < 0 || num % stride != 0)
        throw std::invalid_argument(std::string(op) + ": non-integer output size for input " +
                                    std::to_string(in) + ", kernel " + std::to_string(k) +
                                    ", stride " + std::to_string(stride) + ", pad " +
                                    std::to_string(pad) + ", dilation " + std::to_string(dil));
    return num / stride + 1;
}

template <typename T>
void check_conv_args(const char* op, const Tensor<T>& x, const Conv2dParams<T>& p) {
    if (x.ndim() != 4)
        throw std::invalid_argument(std::string(op) + ": input must be [B,C,H,W], got " +
                                    shape_str(x.shape()));
    if (p.weight.ndim() != 4)
        throw std::invalid_argument(std::string(op) + ": weight must be rank 4, got " +
                                    shape_str(p.weight.shape()));
    if (p.stride < 1 || p.dilation < 1 || p.padding < 0 || p.groups < 1)
        throw std::invalid_argument(std::string(op) + ": invalid stride/pad/dilation/groups");
    const int cin = x.dim(1), cout = p.weight.dim(0);
    if (cin % p.groups != 0 || cout % p.groups != 0)
        throw std::invalid_argument(std::string(op) + ": channels " + std::to_string(cin) + "/" +
                                    std::to_string(cout) + " not divisible by groups " +
                                    std::to_string(p.groups));
    if (p.weight.dim(1) != cin / p.groups)
        throw std::invalid_argument(std::string(op) + ": weight " + shape_str(p.weight.shape()) +
                                    " does not match input channels " + std::to_string(cin) +
                                    " with groups " + std::to_string(p.groups));
    if (p.bias.defined() && (p.bias.ndim() != 1 || p.bias.dim(0) != cout))
        throw std::invalid_argument(std::string(op) + ": bias " + shape_str(p.bias.shape()) +
                                    " does not match out channels " + std::to_string(cout));
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dParams<T>& p) {
    detail::check_conv_args("conv2d", x, p);
    const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = p.weight.dim(0), kh = p.weight.dim(2), kw = p.weight.dim(3);
    const int s = p.stride, pad = p.padding, dil = p.dilation, G = p.groups;
    const int Ho = detail::conv_out_size("conv2d", H, kh, s, pad, dil);
    const int Wo = detail::conv_out_size("conv2d", W, kw, s, pad, dil);
    const int icpg = Cin / G, ocpg = Cout / G;

    Tensor<T> out({B, Cout, Ho, Wo});
    const T* px = x.data();
    const T* pw = p.weight.data();
    const T* pb = p.bias.defined() ? p.bias.data() : nullptr;
    T* po = out.data();

    // Valid output ranges per kernel tap so inner loops never test bounds.
    // Captures by value: the backward closure outlives this frame.
    auto tap_range = [s, pad, dil](int k, int in, int lo_out, int& lo, int& hi) {
        lo = std::max(0, detail::div_ceil(pad - k * dil, s));
        hi = std::min(lo_out, detail::div_ceil(in + pad - k * dil, s));
    };

    for (int b = 0; b < B; ++b) {
        for (int oc = 0; oc < Cout; ++oc) {
            T* oplane = po + ((static_cast<size_t>(b) * Cout + oc) * Ho) * Wo;
            const T bias = pb ? pb[oc] : T(0);
            for (int i = 0; i < Ho * Wo; ++i) oplane[i] = bias;
        }
        for (int g = 0; g < G; ++g) {
            for (int ocg = 0; ocg < ocpg; ++ocg) {
                const int oc = g * ocpg + ocg;
                T* oplane = po + ((static_cast<size_t>(b) * Cout + oc) * Ho) * Wo;
                for (int icg = 0; icg < icpg; ++icg) {
                    const int ic = g * icpg + icg;
                    const T* iplane = px + ((static_cast<size_t>(b) * Cin + ic) * H) * W;
                    const T* wk = pw + ((static_cast<size_t>(oc) * icpg + icg) * kh) * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                        int oy_lo, oy_hi;
                        tap_range(ky, H, Ho, oy_lo, oy_hi);
                        for (int kx = 0; kx < kw; ++kx) {
                            const T wv = wk[ky * kw + kx];
                            int ox_lo, ox_hi;
                            tap_range(kx, W, Wo, ox_lo, ox_hi);
                            for (int oy = oy_lo; oy < oy_hi; ++oy) {
                                const int iy = oy * s - pad + ky * dil;
                                const T* irow = iplane + static_cast<size_t>(iy) * W +
                                                (ox_lo * s - pad + kx * dil);
                                T* orow = oplane + static_cast<size_t>(oy) * Wo + ox_lo;
                                const int n = ox_hi - ox_lo;
                                if (s == 1) {
                                    for (int j = 0; j < n; ++j) orow[j] += wv * irow[j];
                                } else {
                                    for (int j = 0; j < n; ++j) orow[j] += wv * irow[j * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    const bool need = x.requires_grad() || p.weight.requires_grad() ||
                      (p.bias.defined() && p.bias.requires_grad());
    Tensor<T> xw = x, ww = p.weight, bw = p.bias;
    record_if_needed(need, out, [xw, ww, bw, out, B, Cin, Cout, H, W, Ho, Wo, kh, kw, s, pad, dil,
                                 G, icpg, ocpg, tap_range]() mutable {
        const T* g = out.grad();
        const T* px2 = xw.data();
        const T* pw2 = ww.data();
        const bool ngx = xw.requires_grad();
        const bool ngw = ww.requires_grad();
        T* gx = ngx ? xw.grad() : nullptr;
        T* gw = ngw ? ww.grad() : nullptr;
        if (bw.defined() && bw.requires_grad()) {
            T* gb = bw.grad();
            for (int b = 0; b < B; ++b)
                for (int oc = 0; oc < Cout; ++oc) {
                    const T* gp = g + ((static_cast<size_t>(b) * Cout + oc) * Ho) * Wo;
                    T acc = 0;
                    for (int i = 0; i < Ho * Wo; ++i) acc += gp[i];
                    gb[oc] += acc;
                }
        }
        if (!ngx && !ngw) return;
        for (int b = 0; b < B; ++b) {
            for (int gi = 0; gi < G; ++gi) {
                for (int ocg = 0; ocg < ocpg; ++ocg) {
                    const int oc = gi * ocpg + ocg;
                    const T* gplane = g + ((static_cast<size_t>(b) * Cout + oc) * Ho) * Wo;
                    for (int icg = 0; icg < icpg; ++icg) {
                        const int ic = gi * icpg + icg;
                        const T* iplane = px2 + ((static_cast<size_t>(b) * Cin + ic) * H) * W;
                        T* gxplane = ngx ? gx + ((static_cast<size_t>(b) * Cin + ic) * H) * W
                                         : nullptr;
                        const size_t wbase = ((static_cast<size_t>(oc) * icpg + icg) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            int oy_lo, oy_hi;
                            tap_range(ky, H, Ho, oy_lo, oy_hi);
                            for (int kx = 0; kx < kw; ++kx) {
                                int ox_lo, ox_hi;
                                tap_range(kx, W, Wo, ox_lo, ox_hi);
                                const T wv = pw2[wbase + ky * kw + kx];
                                T wacc = 0;
                                for (int oy = oy_lo; oy < oy_hi; ++oy) {
                                    const int iy = oy * s - pad + ky * dil;
                                    const int ix0 = ox_lo * s - pad + kx * dil;
                                    const T* grow = gplane + static_cast<size_t>(oy) * Wo + ox_lo;
                                    const T* irow = iplane + static_cast<size_t>(iy) * W + ix0;
                                    const int n = ox_hi - ox_lo;
                                    if (ngw) {
                                        for (int j = 0; j < n; ++j) wacc += grow[j] * irow[j * s];
                                    }
                                    if (ngx) {
                                        T* gxrow = gxplane + static_cast<size_t>(iy) * W + ix0;
                                        for (int j = 0; j < n; ++j) gxrow[j * s] += wv * grow[j];
                                    }
                                }
                                if (ngw) gw[wbase + ky * kw + kx] += wacc;
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Conv2dParams<T>& p) {
    const int c = x.ndim() == 4 ? x.dim(1) : -1;
    if (p.groups != c || p.weight.dim(0) != c)
        throw std::invalid_argument("depthwise_conv2d: groups " + std::to_string(p.groups) +
                                    " must equal channels " + std::to_string(c) +
                                    " with one filter per channel, weight " +
                                    shape_str(p.weight.shape()));
    return conv2d(x, p);
}

// ---------------------------------------------------------------------------
// deformable convolution

// offsets: [B, 2*kh*kw, Ho, Wo]; channel 2t holds dy and 2t+1 holds dx for
// kernel tap t in row-major kernel order. Sampling is bilinear with
// zero-padding semantics outside the map; gradients flow to input, weight,
// bias and the offset field.
template <typename T>
Tensor<T> deformable_conv2d(const Tensor<T>& x, const Conv2dParams<T>& p,
                            const Tensor<T>& offsets) {
    detail::check_conv_args("deformable_conv2d", x, p);
    if (p.groups != 1)
        throw std::invalid_argument("deformable_conv2d: groups must be 1");
    const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = p.weight.dim(0), kh = p.weight.dim(2), kw = p.weight.dim(3);
    const int s = p.stride, pad = p.padding, dil = p.dilation;
    const int Ho = detail::conv_out_size("deformable_conv2d", H, kh, s, pad, dil);
    const int Wo = detail::conv_out_size("deformable_conv2d", W, kw, s, pad, dil);
    const int K = kh * kw;
    if (offsets.ndim() != 4 || offsets.dim(0) != B || offsets.dim(1) != 2 * K ||
        offsets.dim(2) != Ho || offsets.dim(3) != Wo)
        throw std::invalid_argument("deformable_conv2d: offsets " + shape_str(offsets.shape()) +
                                    " must be [" + std::to_string(B) + ", " +
                                    std::to_string(2 * K) + ", " + std::to_string(Ho) + ", " +
                                    std::to_string(Wo) + "]");

    Tensor<T> out({B, Cout, Ho, Wo});
    const T* px = x.data();
    const T* pw = p.weight.data();
    const T* pb = p.bias.defined() ? p.bias.data() : nullptr;
    const T* poff = offsets.data();
    T* po = out.data();

    // Bilinear sample of one channel plane with zero outside [0,H)x[0,W).
    auto sample = [H, W](const T* plane, T py, T pxx) -> T {
        const int y0 = static_cast<int>(std::floor(py));
        const int x0 = static_cast<int>(std::floor(pxx));
        const T fy = py - y0, fx = pxx - x0;
        T v = 0;
        for (int dy = 0; dy < 2; ++dy) {
            const int yy = y0 + dy;
            if (yy < 0 || yy >= H) continue;
            const T wy = dy ? fy : T(1) - fy;
            for (int dx = 0; dx < 2; ++dx) {
                const int xx = x0 + dx;
                if (xx < 0 || xx >= W) continue;
                const T wx = dx ? fx : T(1) - fx;
                v += wy * wx * plane[static_cast<size_t>(yy) * W + xx];
            }
        }
        return v;
    };

    std::vector<T> col(static_cast<size_t>(Cin) * K);
    for (int b = 0; b < B; ++b) {
        const T* xb = px + static_cast<size_t>(b) * Cin * H * W;
        const T* offb = poff + static_cast<size_t>(b) * 2 * K * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
                const size_t loc = static_cast<size_t>(oy) * Wo + ox;
                for (int t = 0; t < K; ++t) {
                    const int ky = t / kw, kx = t % kw;
                    const T py = oy * s - pad + ky * dil + offb[(2 * t) * Ho * Wo + loc];
                    const T pxx = ox * s - pad + kx * dil + offb[(2 * t + 1) * Ho * Wo + loc];
                    for (int ic = 0; ic < Cin; ++ic)
                        col[static_cast<size_t>(ic) * K + t] =
                            sample(xb + static_cast<size_t>(ic) * H * W, py, pxx);
                }
                for (int oc = 0; oc < Cout; ++oc) {
                    const T* wrow = pw + static_cast<size_t>(oc) * Cin * K;
                    T acc = pb ? pb[oc] : T(0);
                    for (size_t i = 0; i < static_cast<size_t>(Cin) * K; ++i)
                        acc += wrow[i] * col[i];
                    po[((static_cast<size_t>(b) * Cout + oc) * Ho + oy) * Wo + ox] = acc;
                }
            }
        }
    }

    const bool need = x.requires_grad() || p.weight.requires_grad() || offsets.requires_grad() ||
                      (p.bias.defined() && p.bias.requires_grad());
    Tensor<T> xw = x, ww = p.weight, bw = p.bias, ow = offsets;
    record_if_needed(need, out, [xw, ww, bw, ow, out, B, Cin, Cout, H, W, Ho, Wo, kh, kw, s, pad,
                                 dil, K]() mutable {
        const T* g = out.grad();
        const T* px2 = xw.data();
        const T* pw2 = ww.data();
        const T* poff2 = ow.data();
        const bool ngx = xw.requires_grad(), ngw = ww.requires_grad(), ngo = ow.requires_grad();
        T* gx = ngx ? xw.grad() : nullptr;
        T* gw = ngw ? ww.grad() : nullptr;
        T* go = ngo ? ow.grad() : nullptr;
        if (bw.defined() && bw.requires_grad()) {
            T* gb = bw.grad();
            for (int b = 0; b < B; ++b)
                for (int oc = 0; oc < Cout; ++oc) {
                    const T* gp = g + ((static_cast<size_t>(b) * Cout + oc) * Ho) * Wo;
                    T acc = 0;
                    for (int i = 0; i < Ho * Wo; ++i) acc += gp[i];
                    gb[oc] += acc;
                }
        }
        std::vector<T> col(static_cast<size_t>(Cin) * K);
        std::vector<T> dcol(static_cast<size_t>(Cin) * K);
        for (int b = 0; b < B; ++b) {
            const T* xb = px2 + static_cast<size_t>(b) * Cin * H * W;
            T* gxb = ngx ? gx + static_cast<size_t>(b) * Cin * H * W : nullptr;
            const T* offb = poff2 + static_cast<size_t>(b) * 2 * K * Ho * Wo;
            T* gob = ngo ? go + static_cast<size_t>(b) * 2 * K * Ho * Wo : nullptr;
            for (int oy = 0; oy < Ho; ++oy) {
                for (int ox = 0; ox < Wo; ++ox) {
                    const size_t loc = static_cast<size_t>(oy) * Wo + ox;
                    // dcol = W^T * g over output channels; col rebuilt for dW.
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    for (int oc = 0; oc < Cout; ++oc) {
                        const T gv =
                            g[((static_cast<size_t>(b) * Cout + oc) * Ho + oy) * Wo + ox];
                        if (gv == T(0)) continue;
                        const T* wrow = pw2 + static_cast<size_t>(oc) * Cin * K;
                        for (size_t i = 0; i < static_cast<size_t>(Cin) * K; ++i)
                            dcol[i] += gv * wrow[i];
                    }
                    for (int t = 0; t < K; ++t) {
                        const int ky = t / kw, kx = t % kw;
                        const T py = oy * s - pad + ky * dil + offb[(2 * t) * Ho * Wo + loc];
                        const T pxx =
                            ox * s - pad + kx * dil + offb[(2 * t + 1) * Ho * Wo + loc];
                        const int y0 = static_cast<int>(std::floor(py));
                        const int x0 = static_cast<int>(std::floor(pxx));
                        const T fy = py - y0, fx = pxx - x0;
                        T dpy_total = 0, dpx_total = 0;
                        for (int ic = 0; ic < Cin; ++ic) {
                            const T* plane = xb + static_cast<size_t>(ic) * H * W;
                            T* gplane = ngx ? gxb + static_cast<size_t>(ic) * H * W : nullptr;
                            const T dc = dcol[static_cast<size_t>(ic) * K + t];
                            T v = 0, dvdy = 0, dvdx = 0;
                            for (int dy = 0; dy < 2; ++dy) {
                                const int yy = y0 + dy;
                                if (yy < 0 || yy >= H) continue;
                                const T wy = dy ? fy : T(1) - fy;
                                const T sy = dy ? T(1) : T(-1);
                                for (int dx = 0; dx < 2; ++dx) {
                                    const int xx = x0 + dx;
                                    if (xx < 0 || xx >= W) continue;
                                    const T wx = dx ? fx : T(1) - fx;
                                    const T sx = dx ? T(1) : T(-1);
                                    const T pv = plane[static_cast<size_t>(yy) * W + xx];
                                    v += wy * wx * pv;
                                    dvdy += sy * wx * pv;
                                    dvdx += wy * sx * pv;
                                    if (ngx && dc != T(0))
                                        gplane[static_cast<size_t>(yy) * W + xx] +=
                                            dc * wy * wx;
                                }
                            }
                            col[static_cast<size_t>(ic) * K + t] = v;
                            dpy_total += dc * dvdy;
                            dpx_total += dc * dvdx;
                        }
                        if (ngo) {
                            gob[(2 * t) * Ho * Wo + loc] += dpy_total;
                            gob[(2 * t + 1) * Ho * Wo + loc] += dpx_total;
                        }
                    }
                    if (ngw) {
                        for (int oc = 0; oc < Cout; ++oc) {
                            const T gv =
                                g[((static_cast<size_t>(b) * Cout + oc) * Ho + oy) * Wo + ox];
                            if (gv == T(0)) continue;
                            T* gwrow = gw + static_cast<size_t>(oc) * Cin * K;
                            for (size_t i = 0; i < static_cast<size_t>(Cin) * K; ++i)
                                gwrow[i] += gv * col[i];
                        }
                    }
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// batch norm

template <typename T>
struct BatchNormState {
    Tensor<T> gamma;         // [C]
    Tensor<T> beta;          // [C]
    Tensor<T> running_mean;  // [C], buffer
    Tensor<T> running_var;   // [C], buffer (biased convention)
    T momentum = T(0.1);
    T eps = T(1e-5);
};

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& s, bool training) {
    if (x.ndim() != 4)
        throw std::invalid_argument("batch_norm: input must be [B,C,H,W], got " +
                                    shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (s.gamma.dim(0) != C)
        throw std::invalid_argument("batch_norm: state for " + std::to_string(s.gamma.dim(0)) +
                                    " channels applied to " + shape_str(x.shape()));
    const size_t plane = static_cast<size_t>(H) * W;
    const size_t per_c = static_cast<size_t>(B) * plane;

    Tensor<T> out(x.shape());
    const T* px = x.data();
    const T* pg = s.gamma.data();
    const T* pbta = s.beta.data();
    T* po = out.data();

    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>(C);

    for (int c = 0; c < C; ++c) {
        T mu, var;
        if (training) {
            T acc = 0;
            for (int b = 0; b < B; ++b) {
                const T* pl = px + (static_cast<size_t>(b) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) acc += pl[i];
            }
            mu = acc / static_cast<T>(per_c);
            T vacc = 0;
            for (int b = 0; b < B; ++b) {
                const T* pl = px + (static_cast<size_t>(b) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    const T d = pl[i] - mu;
                    vacc += d * d;
                }
            }
            var = vacc / static_cast<T>(per_c);
            s.running_mean.data()[c] = (T(1) - s.momentum) * s.running_mean.data()[c] +
                                       s.momentum * mu;
            s.running_var.data()[c] = (T(1) - s.momentum) * s.running_var.data()[c] +
                                      s.momentum * var;
        } else {
            mu = s.running_mean.data()[c];
            var = s.running_var.data()[c];
        }
        const T inv = T(1) / std::sqrt(var + s.eps);
        (*inv_std)[c] = inv;
        const T gc = pg[c], bc = pbta[c];
        for (int b = 0; b < B; ++b) {
            const size_t base = (static_cast<size_t>(b) * C + c) * plane;
            const T* pl = px + base;
            T* hl = xhat->data() + base;
            T* ol = po + base;
            for (size_t i = 0; i < plane; ++i) {
                hl[i] = (pl[i] - mu) * inv;
                ol[i] = gc * hl[i] + bc;
            }
        }
    }

    const bool need =
        x.requires_grad() || s.gamma.requires_grad() || s.beta.requires_grad();
    Tensor<T> xw = x, gw = s.gamma, bw = s.beta;
    record_if_needed(need, out, [xw, gw, bw, out, xhat, inv_std, B, C, plane, per_c,
                                 training]() mutable {
        const T* g = out.grad();
        const T* pg2 = gw.data();
        for (int c = 0; c < C; ++c) {
            T sum_g = 0, sum_gh = 0;
            for (int b = 0; b < B; ++b) {
                const size_t base = (static_cast<size_t>(b) * C + c) * plane;
                const T* gl = g + base;
                const T* hl = xhat->data() + base;
                for (size_t i = 0; i < plane; ++i) {
                    sum_g += gl[i];
                    sum_gh += gl[i] * hl[i];
                }
            }
            if (gw.requires_grad()) gw.grad()[c] += sum_gh;
            if (bw.requires_grad()) bw.grad()[c] += sum_g;
            if (xw.requires_grad()) {
                const T inv = (*inv_std)[c];
                const T gc = pg2[c];
                T* gx = xw.grad();
                if (training) {
                    const T n = static_cast<T>(per_c);
                    for (int b = 0; b < B; ++b) {
                        const size_t base = (static_cast<size_t>(b) * C + c) * plane;
                        const T* gl = g + base;
                        const T* hl = xhat->data() + base;
                        T* gxl = gx + base;
                        for (size_t i = 0; i < plane; ++i)
                            gxl[i] += gc * inv / n *
                                      (n * gl[i] - sum_g - hl[i] * sum_gh);
                    }
                } else {
                    // Running stats are constants at eval: plain affine.
                    for (int b = 0; b < B; ++b) {
                        const size_t base = (static_cast<size_t>(b) * C + c) * plane;
                        const T* gl = g + base;
                        T* gxl = gx + base;
                        for (size_t i = 0; i < plane; ++i) gxl[i] += gc * inv * gl[i];
                    }
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// activations

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const size_t n = x.numel();
    const T inv_sqrt2 = T(0.7071067811865475);
    for (size_t i = 0; i < n; ++i)
        po[i] = T(0.5) * px[i] * (T(1) + std::erf(px[i] * inv_sqrt2));
    record_if_needed(x.requires_grad(), out, [x, out]() mutable {
        const T* g = out.grad();
        const T* px2 = x.data();
        T* gx = Tensor<T>(x).grad();
        const size_t m = out.numel();
        const T inv_sqrt2 = T(0.7071067811865475);
        const T inv_sqrt2pi = T(0.3989422804014327);
        for (size_t i = 0; i < m; ++i) {
            const T v = px2[i];
            const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
            gx[i] += g[i] * (cdf + v * pdf);
        }
    });
    return out;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.01)) {
    Tensor<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) po[i] = px[i] >= 0 ? px[i] : slope * px[i];
    record_if_needed(x.requires_grad(), out, [x, out, slope]() mutable {
        const T* g = out.grad();
        const T* px2 = x.data();
        T* gx = Tensor<T>(x).grad();
        const size_t m = out.numel();
        for (size_t i = 0; i < m; ++i) gx[i] += px2[i] >= 0 ? g[i] : slope * g[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// resampling

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    if (x.ndim() != 4)
        throw std::invalid_argument("upsample_nearest2x: input must be [B,C,H,W], got " +
                                    shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> out({B, C, 2 * H, 2 * W});
    const T* px = x.data();
    T* po = out.data();
    for (size_t pc = 0; pc < static_cast<size_t>(B) * C; ++pc) {
        const T* ip = px + pc * H * W;
        T* op = po + pc * 4 * H * W;
        for (int y = 0; y < H; ++y)
            for (int x2 = 0; x2 < W; ++x2) {
                const T v = ip[static_cast<size_t>(y) * W + x2];
                T* o0 = op + (static_cast<size_t>(2 * y)) * 2 * W + 2 * x2;
                o0[0] = v;
                o0[1] = v;
                o0[2 * W] = v;
                o0[2 * W + 1] = v;
            }
    }
    record_if_needed(x.requires_grad(), out, [x, out, B, C, H, W]() mutable {
        const T* g = out.grad();
        T* gx = Tensor<T>(x).grad();
        for (size_t pc = 0; pc < static_cast<size_t>(B) * C; ++pc) {
            const T* gp = g + pc * 4 * H * W;
            T* gxp = gx + pc * H * W;
            for (int y = 0; y < H; ++y)
                for (int x2 = 0; x2 < W; ++x2) {
                    const T* g0 = gp + (static_cast<size_t>(2 * y)) * 2 * W + 2 * x2;
                    gxp[static_cast<size_t>(y) * W + x2] +=
                        g0[0] + g0[1] + g0[2 * W] + g0[2 * W + 1];
                }
        }
    });
    return out;
}

// Bilinear resize, align-corners-false. Source coordinates are clamped to the
// map so edge pixels replicate rather than fade to zero.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int Ho, int Wo) {
    if (x.ndim() != 4)
        throw std::invalid_argument("bilinear_resize: input must be [B,C,H,W], got " +
                                    shape_str(x.shape()));
    if (Ho < 1 || Wo < 1)
        throw std::invalid_argument("bilinear_resize: target size " + std::to_string(Ho) + "x" +
                                    std::to_string(Wo) + " must be positive");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);

    auto make_axis = [](int in, int outn) {
        struct AxisTap {
            int i0, i1;
            double f;
        };
        std::vector<AxisTap> taps(outn);
        const double scale = static_cast<double>(in) / outn;
        for (int o = 0; o < outn; ++o) {
            double src = (o + 0.5) * scale - 0.5;
            if (src < 0) src = 0;
            if (src > in - 1) src = in - 1;
            const int i0 = static_cast<int>(src);
            taps[o] = {i0, std::min(i0 + 1, in - 1), src - i0};
        }
        return taps;
    };
    const auto ys = make_axis(H, Ho);
    const auto xs = make_axis(W, Wo);

    Tensor<T> out({B, C, Ho, Wo});
    const T* px = x.data();
    T* po = out.data();
    for (size_t pc = 0; pc < static_cast<size_t>(B) * C; ++pc) {
        const T* ip = px + pc * H * W;
        T* op = po + pc * static_cast<size_t>(Ho) * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
            const auto& ty = ys[oy];
            const T fy = static_cast<T>(ty.f);
            const T* r0 = ip + static_cast<size_t>(ty.i0) * W;
            const T* r1 = ip + static_cast<size_t>(ty.i1) * W;
            T* orow = op + static_cast<size_t>(oy) * Wo;
            for (int ox = 0; ox < Wo; ++ox) {
                const auto& tx = xs[ox];
                const T fx = static_cast<T>(tx.f);
                const T top = r0[tx.i0] + fx * (r0[tx.i1] - r0[tx.i0]);
                const T bot = r1[tx.i0] + fx * (r1[tx.i1] - r1[tx.i0]);
                orow[ox] = top + fy * (bot - top);
            }
        }
    }
    record_if_needed(x.requires_grad(), out, [x, out, ys, xs, B, C, H, W, Ho, Wo]() mutable {
        const T* g = out.grad();
        T* gx = Tensor<T>(x).grad();
        for (size_t pc = 0; pc < static_cast<size_t>(B) * C; ++pc) {
            const T* gp = g + pc * static_cast<size_t>(Ho) * Wo;
            T* gxp = gx + pc * H * W;
            for (int oy = 0; oy < Ho; ++oy) {
                const auto& ty = ys[oy];
                const T fy = static_cast<T>(ty.f);
                for (int ox = 0; ox < Wo; ++ox) {
                    const auto& tx = xs[ox];
                    const T fx = static_cast<T>(tx.f);
                    const T gv = gp[static_cast<size_t>(oy) * Wo + ox];
                    gxp[static_cast<size_t>(ty.i0) * W + tx.i0] +=
                        gv * (T(1) - fy) * (T(1) - fx);
                    gxp[static_cast<size_t>(ty.i0) * W + tx.i1] += gv * (T(1) - fy) * fx;
                    gxp[static_cast<size_t>(ty.i1) * W + tx.i0] += gv * fy * (T(1) - fx);
                    gxp[static_cast<size_t>(ty.i1) * W + tx.i1] += gv * fy * fx;
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// pooling and the two gated products of the decoder attention modules

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.ndim() != 4)
        throw std::invalid_argument("global_avg_pool: input must be [B,C,H,W], got " +
                                    shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1);
    const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
    Tensor<T> out({B, C, 1, 1});
    const T* px = x.data();
    T* po = out.data();
    for (size_t pc = 0; pc < static_cast<size_t>(B) * C; ++pc) {
        T acc = 0;
        const T* ip = px + pc * plane;
        for (size_t i = 0; i < plane; ++i) acc += ip[i];
        po[pc] = acc / static_cast<T>(plane);
    }
    record_if_needed(x.requires_grad(), out, [x, out, B, C, plane]() mutable {
        const T* g = out.grad();
        T* gx = Tensor<T>(x).grad();
        for (size_t pc = 0; pc < static_cast<size_t>(B) * C; ++pc) {
            const T gv = g[pc] / static_cast<T>(plane);
            T* gp = gx + pc * plane;
            for (size_t i = 0; i < plane; ++i) gp[i] += gv;
        }
    });
    return out;
}

// x [B,C,H,W] * gate [B,C,1,1], broadcast over space.
template <typename T>
Tensor<T> mul_channel_gate(const Tensor<T>& x, const Tensor<T>& gate) {
    if (x.ndim() != 4 || gate.ndim() != 4 || gate.dim(0) != x.dim(0) ||
        gate.dim(1) != x.dim(1) || gate.dim(2) != 1 || gate.dim(3) != 1)
        throw std::invalid_argument("mul_channel_gate: gate " + shape_str(gate.shape()) +
                                    " must be [B,C,1,1] for input " + shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1);
    const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
    Tensor<T> out(x.shape());
    const T* px = x.data();
    const T* pg = gate.data();
    T* po = out.data();
    for (size_t pc = 0; pc < static_cast<size_t>(B) * C; ++pc) {
        const T gv = pg[pc];
        const T* ip = px + pc * plane;
        T* op = po + pc * plane;
        for (size_t i = 0; i < plane; ++i) op[i] = ip[i] * gv;
    }
    record_if_needed(x.requires_grad() || gate.requires_grad(), out,
                     [x, gate, out, B, C, plane]() mutable {
                         const T* g = out.grad();
                         const T* px2 = x.data();
                         const T* pg2 = gate.data();
                         for (size_t pc = 0; pc < static_cast<size_t>(B) * C; ++pc) {
                             if (x.requires_grad()) {
                                 T* gx = Tensor<T>(x).grad() + pc * plane;
                                 const T* gp = g + pc * plane;
                                 const T gv = pg2[pc];
                                 for (size_t i = 0; i < plane; ++i) gx[i] += gp[i] * gv;
                             }
                             if (gate.requires_grad()) {
                                 const T* gp = g + pc * plane;
                                 const T* ip = px2 + pc * plane;
                                 T acc = 0;
                                 for (size_t i = 0; i < plane; ++i) acc += gp[i] * ip[i];
                                 Tensor<T>(gate).grad()[pc] += acc;
                             }
                         }
                     });
    return out;
}

// x [B,C,H,W] * map [B,1,H,W], broadcast over channels.
template <typename T>
Tensor<T> mul_spatial_gate(const Tensor<T>& x, const Tensor<T>& map) {
    if (x.ndim() != 4 || map.ndim() != 4 || map.dim(0) != x.dim(0) || map.dim(1) != 1 ||
        map.dim(2) != x.dim(2) || map.dim(3) != x.dim(3))
        throw std::invalid_argument("mul_spatial_gate: map " + shape_str(map.shape()) +
                                    " must be [B,1,H,W] for input " + shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1);
    const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
    Tensor<T> out(x.shape());
    const T* px = x.data();
    const T* pm = map.data();
    T* po = out.data();
    for (int b = 0; b < B; ++b) {
        const T* mp = pm + static_cast<size_t>(b) * plane;
        for (int c = 0; c < C; ++c) {
            const size_t base = (static_cast<size_t>(b) * C + c) * plane;
            const T* ip = px + base;
            T* op = po + base;
            for (size_t i = 0; i < plane; ++i) op[i] = ip[i] * mp[i];
        }
    }
    record_if_needed(x.requires_grad() || map.requires_grad(), out,
                     [x, map, out, B, C, plane]() mutable {
                         const T* g = out.grad();
                         const T* px2 = x.data();
                         const T* pm2 = map.data();
                         for (int b = 0; b < B; ++b) {
                             const T* mp = pm2 + static_cast<size_t>(b) * plane;
                             T* gm = map.requires_grad()
                                         ? Tensor<T>(map).grad() + static_cast<size_t>(b) * plane
                                         : nullptr;
                             for (int c = 0; c < C; ++c) {
                                 const size_t base = (static_cast<size_t>(b) * C + c) * plane;
                                 const T* gp = g + base;
                                 if (x.requires_grad()) {
                                     T* gx = Tensor<T>(x).grad() + base;
                                     for (size_t i = 0; i < plane; ++i) gx[i] += gp[i] * mp[i];
                                 }
                                 if (gm) {
                                     const T* ip = px2 + base;
                                     for (size_t i = 0; i < plane; ++i) gm[i] += gp[i] * ip[i];
                                 }
                             }
                         }
                     });
    return out;
}

}  // namespace hbf
