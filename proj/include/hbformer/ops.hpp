#pragma once

// Differentiable tensor operations: the elementwise suite, batched matmul,
// softmax, layer norm and the scalar reductions the losses are built from.

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hbformer/tensor.hpp"

namespace hbf {

namespace detail {

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

inline void check_axis(const char* op, int axis, int ndim) {
    if (axis < 0 || axis >= ndim)
        throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                    " invalid for rank " + std::to_string(ndim));
}

// outer * len * inner decomposition around `axis`.
inline void axis_split(const Shape& s, int axis, size_t& outer, size_t& len, size_t& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(s[i]);
    len = static_cast<size_t>(s[axis]);
    for (size_t i = axis + 1; i < s.size(); ++i) inner *= static_cast<size_t>(s[i]);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise suite

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("add", a, b);
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    record_if_needed(a.requires_grad() || b.requires_grad(), out, [a, b, out]() mutable {
        const T* g = out.grad();
        const size_t m = out.numel();
        if (a.requires_grad()) {
            T* ga = Tensor<T>(a).grad();
            for (size_t i = 0; i < m; ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            T* gb = Tensor<T>(b).grad();
            for (size_t i = 0; i < m; ++i) gb[i] += g[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("sub", a, b);
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    record_if_needed(a.requires_grad() || b.requires_grad(), out, [a, b, out]() mutable {
        const T* g = out.grad();
        const size_t m = out.numel();
        if (a.requires_grad()) {
            T* ga = Tensor<T>(a).grad();
            for (size_t i = 0; i < m; ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            T* gb = Tensor<T>(b).grad();
            for (size_t i = 0; i < m; ++i) gb[i] -= g[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("mul", a, b);
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    record_if_needed(a.requires_grad() || b.requires_grad(), out, [a, b, out]() mutable {
        const T* g = out.grad();
        const size_t m = out.numel();
        if (a.requires_grad()) {
            T* ga = Tensor<T>(a).grad();
            const T* pb2 = b.data();
            for (size_t i = 0; i < m; ++i) ga[i] += g[i] * pb2[i];
        }
        if (b.requires_grad()) {
            T* gb = Tensor<T>(b).grad();
            const T* pa2 = a.data();
            for (size_t i = 0; i < m; ++i) gb[i] += g[i] * pa2[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("div", a, b);
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
    record_if_needed(a.requires_grad() || b.requires_grad(), out, [a, b, out]() mutable {
        const T* g = out.grad();
        const T* pa2 = a.data();
        const T* pb2 = b.data();
        const size_t m = out.numel();
        if (a.requires_grad()) {
            T* ga = Tensor<T>(a).grad();
            for (size_t i = 0; i < m; ++i) ga[i] += g[i] / pb2[i];
        }
        if (b.requires_grad()) {
            T* gb = Tensor<T>(b).grad();
            for (size_t i = 0; i < m; ++i) gb[i] -= g[i] * pa2[i] / (pb2[i] * pb2[i]);
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    Tensor<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) po[i] = px[i] * c;
    record_if_needed(x.requires_grad(), out, [x, out, c]() mutable {
        const T* g = out.grad();
        T* gx = Tensor<T>(x).grad();
        const size_t m = out.numel();
        for (size_t i = 0; i < m; ++i) gx[i] += g[i] * c;
    });
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    Tensor<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) po[i] = px[i] + c;
    record_if_needed(x.requires_grad(), out, [x, out]() mutable {
        const T* g = out.grad();
        T* gx = Tensor<T>(x).grad();
        const size_t m = out.numel();
        for (size_t i = 0; i < m; ++i) gx[i] += g[i];
    });
    return out;
}

// Bias over the last dimension; the only implicit broadcast the stack needs
// besides the dedicated attention/gate ops. Anything else is a shape error.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
    const int last = x.dim(x.ndim() - 1);
    if (b.ndim() != 1 || b.dim(0) != last)
        throw std::invalid_argument("add_bias: bias " + shape_str(b.shape()) +
                                    " does not match last dim of " + shape_str(x.shape()));
    Tensor<T> out(x.shape());
    const size_t rows = x.numel() / static_cast<size_t>(last);
    const T* px = x.data();
    const T* pb = b.data();
    T* po = out.data();
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = px + r * last;
        T* orow = po + r * last;
        for (int j = 0; j < last; ++j) orow[j] = xr[j] + pb[j];
    }
    record_if_needed(x.requires_grad() || b.requires_grad(), out, [x, b, out, rows, last]() mutable {
        const T* g = out.grad();
        if (x.requires_grad()) {
            T* gx = Tensor<T>(x).grad();
            const size_t m = out.numel();
            for (size_t i = 0; i < m; ++i) gx[i] += g[i];
        }
        if (b.requires_grad()) {
            T* gb = Tensor<T>(b).grad();
            for (size_t r = 0; r < rows; ++r) {
                const T* gr = g + r * last;
                for (int j = 0; j < last; ++j) gb[j] += gr[j];
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape target) {
    if (shape_numel(target) != x.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                    shape_str(target) + " (element count differs)");
    Tensor<T> out(std::move(target), std::vector<T>(x.values()));
    record_if_needed(x.requires_grad(), out, [x, out]() mutable {
        const T* g = out.grad();
        T* gx = Tensor<T>(x).grad();
        const size_t m = out.numel();
        for (size_t i = 0; i < m; ++i) gx[i] += g[i];
    });
    return out;
}

namespace detail {

inline std::vector<size_t> row_major_strides(const Shape& s) {
    std::vector<size_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * static_cast<size_t>(s[i + 1]);
    return st;
}

// dst enumerated in row-major order over dst_shape; the matching source
// offset advances by src_stride_for_dst_dim like an odometer.
template <typename T, bool Accumulate>
void strided_transfer(const T* src, T* dst, const Shape& dst_shape,
                      const std::vector<size_t>& src_strides) {
    const int nd = static_cast<int>(dst_shape.size());
    std::vector<int> idx(nd, 0);
    size_t src_off = 0;
    const size_t total = shape_numel(dst_shape);
    const size_t inner = static_cast<size_t>(dst_shape[nd - 1]);
    const size_t inner_stride = src_strides[nd - 1];
    for (size_t base = 0; base < total; base += inner) {
        if (inner_stride == 1) {
            if constexpr (Accumulate) {
                for (size_t j = 0; j < inner; ++j) dst[base + j] += src[src_off + j];
            } else {
                std::memcpy(dst + base, src + src_off, inner * sizeof(T));
            }
        } else {
            for (size_t j = 0; j < inner; ++j) {
                if constexpr (Accumulate)
                    dst[base + j] += src[src_off + j * inner_stride];
                else
                    dst[base + j] = src[src_off + j * inner_stride];
            }
        }
        // odometer over dims [0, nd-2]
        for (int d = nd - 2; d >= 0; --d) {
            ++idx[d];
            src_off += src_strides[d];
            if (idx[d] < dst_shape[d]) break;
            src_off -= src_strides[d] * static_cast<size_t>(dst_shape[d]);
            idx[d] = 0;
        }
    }
}

// Scatter dst-major enumeration back into src layout (used by permute grad).
template <typename T>
void strided_accumulate_to_src(const T* dst_vals, T* src, const Shape& dst_shape,
                               const std::vector<size_t>& src_strides) {
    const int nd = static_cast<int>(dst_shape.size());
    std::vector<int> idx(nd, 0);
    size_t src_off = 0;
    const size_t total = shape_numel(dst_shape);
    const size_t inner = static_cast<size_t>(dst_shape[nd - 1]);
    const size_t inner_stride = src_strides[nd - 1];
    for (size_t base = 0; base < total; base += inner) {
        for (size_t j = 0; j < inner; ++j) src[src_off + j * inner_stride] += dst_vals[base + j];
        for (int d = nd - 2; d >= 0; --d) {
            ++idx[d];
            src_off += src_strides[d];
            if (idx[d] < dst_shape[d]) break;
            src_off -= src_strides[d] * static_cast<size_t>(dst_shape[d]);
            idx[d] = 0;
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
    const int nd = x.ndim();
    if (static_cast<int>(perm.size()) != nd)
        throw std::invalid_argument("permute: permutation size " + std::to_string(perm.size()) +
                                    " does not match rank " + std::to_string(nd));
    std::vector<bool> seen(nd, false);
    Shape out_shape(nd);
    for (int i = 0; i < nd; ++i) {
        if (perm[i] < 0 || perm[i] >= nd || seen[perm[i]])
            throw std::invalid_argument("permute: invalid permutation");
        seen[perm[i]] = true;
        out_shape[i] = x.dim(perm[i]);
    }
    const auto src_strides_full = detail::row_major_strides(x.shape());
    std::vector<size_t> src_strides(nd);
    for (int i = 0; i < nd; ++i) src_strides[i] = src_strides_full[perm[i]];

    Tensor<T> out(out_shape);
    detail::strided_transfer<T, false>(x.data(), out.data(), out_shape, src_strides);
    record_if_needed(x.requires_grad(), out, [x, out, out_shape, src_strides]() mutable {
        detail::strided_accumulate_to_src(out.grad(), Tensor<T>(x).grad(), out_shape, src_strides);
    });
    return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int len) {
    detail::check_axis("slice", axis, x.ndim());
    if (start < 0 || len < 1 || start + len > x.dim(axis))
        throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + len) + ") out of bounds for dim " +
                                    std::to_string(x.dim(axis)) + " of " + shape_str(x.shape()));
    size_t outer, alen, inner;
    detail::axis_split(x.shape(), axis, outer, alen, inner);
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    Tensor<T> out(out_shape);
    const T* px = x.data();
    T* po = out.data();
    const size_t copy = static_cast<size_t>(len) * inner;
    for (size_t o = 0; o < outer; ++o)
        std::memcpy(po + o * copy, px + (o * alen + start) * inner, copy * sizeof(T));
    record_if_needed(x.requires_grad(), out,
                     [x, out, outer, alen, inner, start, copy]() mutable {
                         const T* g = out.grad();
                         T* gx = Tensor<T>(x).grad();
                         for (size_t o = 0; o < outer; ++o) {
                             T* dst = gx + (o * alen + start) * inner;
                             const T* src = g + o * copy;
                             for (size_t i = 0; i < copy; ++i) dst[i] += src[i];
                         }
                     });
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: no inputs");
    const int nd = xs[0].ndim();
    detail::check_axis("concat", axis, nd);
    Shape out_shape = xs[0].shape();
    int total_axis = 0;
    for (const auto& t : xs) {
        if (t.ndim() != nd)
            throw std::invalid_argument("concat: rank mismatch " + shape_str(t.shape()) + " vs " +
                                        shape_str(xs[0].shape()));
        for (int d = 0; d < nd; ++d)
            if (d != axis && t.dim(d) != out_shape[d])
                throw std::invalid_argument("concat: shape mismatch on non-concat dim: " +
                                            shape_str(t.shape()) + " vs " +
                                            shape_str(xs[0].shape()));
        total_axis += t.dim(axis);
    }
    out_shape[axis] = total_axis;
    Tensor<T> out(out_shape);
    size_t outer, olen, inner;
    detail::axis_split(out_shape, axis, outer, olen, inner);
    T* po = out.data();
    bool any_grad = false;
    size_t axis_off = 0;
    for (const auto& t : xs) {
        any_grad = any_grad || t.requires_grad();
        const size_t tlen = static_cast<size_t>(t.dim(axis));
        const T* pt = t.data();
        for (size_t o = 0; o < outer; ++o)
            std::memcpy(po + (o * olen + axis_off) * inner, pt + o * tlen * inner,
                        tlen * inner * sizeof(T));
        axis_off += tlen;
    }
    std::vector<Tensor<T>> inputs = xs;
    record_if_needed(any_grad, out, [inputs, out, outer, olen, inner, axis]() mutable {
        const T* g = out.grad();
        size_t axis_off = 0;
        for (auto& t : inputs) {
            const size_t tlen = static_cast<size_t>(t.dim(axis));
            if (t.requires_grad()) {
                T* gt = t.grad();
                for (size_t o = 0; o < outer; ++o) {
                    const T* src = g + (o * olen + axis_off) * inner;
                    T* dst = gt + o * tlen * inner;
                    for (size_t i = 0; i < tlen * inner; ++i) dst[i] += src[i];
                }
            }
            axis_off += tlen;
        }
    });
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    const T* px = x.data();
    const size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) acc += px[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    record_if_needed(x.requires_grad(), out, [x, out]() mutable {
        const T g = out.grad()[0];
        T* gx = Tensor<T>(x).grad();
        const size_t m = x.numel();
        for (size_t i = 0; i < m; ++i) gx[i] += g;
    });
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    T acc = 0;
    const T* px = x.data();
    const size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) acc += px[i];
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
    record_if_needed(x.requires_grad(), out, [x, out]() mutable {
        const T g = out.grad()[0] / static_cast<T>(x.numel());
        T* gx = Tensor<T>(x).grad();
        const size_t m = x.numel();
        for (size_t i = 0; i < m; ++i) gx[i] += g;
    });
    return out;
}

// ---------------------------------------------------------------------------
// matmul

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() < 2 || b.ndim() < 2 || a.ndim() != b.ndim())
        throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    const int nd = a.ndim();
    for (int i = 0; i < nd - 2; ++i)
        if (a.dim(i) != b.dim(i))
            throw std::invalid_argument("matmul: batch dims differ: " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
    const int m = a.dim(nd - 2), k = a.dim(nd - 1);
    const int kb = b.dim(nd - 2), n = b.dim(nd - 1);
    if (k != kb)
        throw std::invalid_argument("matmul: inner dims differ: " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Shape out_shape(a.shape());
    out_shape[nd - 2] = m;
    out_shape[nd - 1] = n;
    size_t batch = 1;
    for (int i = 0; i < nd - 2; ++i) batch *= static_cast<size_t>(a.dim(i));

    Tensor<T> out(out_shape);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (size_t bt = 0; bt < batch; ++bt) {
        const T* A = pa + bt * static_cast<size_t>(m) * k;
        const T* B = pb + bt * static_cast<size_t>(k) * n;
        T* C = po + bt * static_cast<size_t>(m) * n;
        for (int i = 0; i < m; ++i) {
            T* crow = C + static_cast<size_t>(i) * n;
            for (int p = 0; p < k; ++p) {
                const T aip = A[static_cast<size_t>(i) * k + p];
                const T* brow = B + static_cast<size_t>(p) * n;
                for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    }
    record_if_needed(a.requires_grad() || b.requires_grad(), out,
                     [a, b, out, batch, m, k, n]() mutable {
                         const T* g = out.grad();
                         const T* pa2 = a.data();
                         const T* pb2 = b.data();
                         for (size_t bt = 0; bt < batch; ++bt) {
                             const T* A = pa2 + bt * static_cast<size_t>(m) * k;
                             const T* B = pb2 + bt * static_cast<size_t>(k) * n;
                             const T* G = g + bt * static_cast<size_t>(m) * n;
                             if (a.requires_grad()) {
                                 T* ga = Tensor<T>(a).grad() + bt * static_cast<size_t>(m) * k;
                                 for (int i = 0; i < m; ++i)
                                     for (int p = 0; p < k; ++p) {
                                         const T* grow = G + static_cast<size_t>(i) * n;
                                         const T* brow = B + static_cast<size_t>(p) * n;
                                         T acc = 0;
                                         for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                                         ga[static_cast<size_t>(i) * k + p] += acc;
                                     }
                             }
                             if (b.requires_grad()) {
                                 T* gb = Tensor<T>(b).grad() + bt * static_cast<size_t>(k) * n;
                                 for (int i = 0; i < m; ++i) {
                                     const T* grow = G + static_cast<size_t>(i) * n;
                                     for (int p = 0; p < k; ++p) {
                                         const T aip = A[static_cast<size_t>(i) * k + p];
                                         T* gbrow = gb + static_cast<size_t>(p) * n;
                                         for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                                     }
                                 }
                             }
                         }
                     });
    return out;
}

// ---------------------------------------------------------------------------
// softmax / layer norm

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    detail::check_axis("softmax", axis, x.ndim());
    size_t outer, len, inner;
    detail::axis_split(x.shape(), axis, outer, len, inner);
    Tensor<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            const size_t base = o * len * inner + in;
            T mx = px[base];
            for (size_t t = 1; t < len; ++t) mx = std::max(mx, px[base + t * inner]);
            T denom = 0;
            for (size_t t = 0; t < len; ++t) {
                const T e = std::exp(px[base + t * inner] - mx);
                po[base + t * inner] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (size_t t = 0; t < len; ++t) po[base + t * inner] *= inv;
        }
    }
    record_if_needed(x.requires_grad(), out, [x, out, outer, len, inner]() mutable {
        const T* g = out.grad();
        const T* y = out.data();
        T* gx = Tensor<T>(x).grad();
        for (size_t o = 0; o < outer; ++o) {
            for (size_t in = 0; in < inner; ++in) {
                const size_t base = o * len * inner + in;
                T dot = 0;
                for (size_t t = 0; t < len; ++t) dot += g[base + t * inner] * y[base + t * inner];
                for (size_t t = 0; t < len; ++t) {
                    const size_t idx = base + t * inner;
                    gx[idx] += y[idx] * (g[idx] - dot);
                }
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const int d = x.dim(x.ndim() - 1);
    if (gamma.ndim() != 1 || gamma.dim(0) != d || beta.ndim() != 1 || beta.dim(0) != d)
        throw std::invalid_argument("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                                    shape_str(beta.shape()) + " do not match last dim of " +
                                    shape_str(x.shape()));
    const size_t rows = x.numel() / static_cast<size_t>(d);
    Tensor<T> out(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    const T* px = x.data();
    const T* pg = gamma.data();
    const T* pb = beta.data();
    T* po = out.data();
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = px + r * d;
        T mu = 0;
        for (int j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (int j = 0; j < d; ++j) {
            const T c = xr[j] - mu;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = inv;
        T* hr = xhat->data() + r * d;
        T* orow = po + r * d;
        for (int j = 0; j < d; ++j) {
            hr[j] = (xr[j] - mu) * inv;
            orow[j] = pg[j] * hr[j] + pb[j];
        }
    }
    record_if_needed(x.requires_grad() || gamma.requires_grad() || beta.requires_grad(), out,
                     [x, gamma, beta, out, xhat, inv_std, rows, d]() mutable {
                         const T* g = out.grad();
                         const T* pg2 = gamma.data();
                         for (size_t r = 0; r < rows; ++r) {
                             const T* gr = g + r * d;
                             const T* hr = xhat->data() + r * d;
                             if (gamma.requires_grad()) {
                                 T* gg = Tensor<T>(gamma).grad();
                                 for (int j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
                             }
                             if (beta.requires_grad()) {
                                 T* gb = Tensor<T>(beta).grad();
                                 for (int j = 0; j < d; ++j) gb[j] += gr[j];
                             }
                             if (x.requires_grad()) {
                                 T* gx = Tensor<T>(x).grad() + r * d;
                                 T mean_dh = 0, mean_dh_h = 0;
                                 for (int j = 0; j < d; ++j) {
                                     const T dh = gr[j] * pg2[j];
                                     mean_dh += dh;
                                     mean_dh_h += dh * hr[j];
                                 }
                                 mean_dh /= static_cast<T>(d);
                                 mean_dh_h /= static_cast<T>(d);
                                 const T inv = (*inv_std)[r];
                                 for (int j = 0; j < d; ++j) {
                                     const T dh = gr[j] * pg2[j];
                                     gx[j] += inv * (dh - mean_dh - hr[j] * mean_dh_h);
                                 }
                             }
                         }
                     });
    return out;
}

// ---------------------------------------------------------------------------
// pointwise nonlinearities used by the losses

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) {
        const T v = px[i];
        po[i] = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    }
    record_if_needed(x.requires_grad(), out, [x, out]() mutable {
        const T* g = out.grad();
        const T* y = out.data();
        T* gx = Tensor<T>(x).grad();
        const size_t m = out.numel();
        for (size_t i = 0; i < m; ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
    });
    return out;
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) {
        const T v = px[i];
        po[i] = v >= 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    }
    record_if_needed(x.requires_grad(), out, [x, out]() mutable {
        const T* g = out.grad();
        const T* px2 = x.data();
        T* gx = Tensor<T>(x).grad();
        const size_t m = out.numel();
        for (size_t i = 0; i < m; ++i) {
            const T v = px2[i];
            const T s = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
            gx[i] += g[i] * s;
        }
    });
    return out;
}

}  // namespace hbf
