#pragma once

// Windowed multi-head self-attention: partition/reverse plumbing, cyclic
// shift, relative position bias, the shifted-window attention mask, and the
// W-MSA/SW-MSA + (E)FFN block pair.

#include <cmath>
#include <memory>
#include <vector>

#include "hbformer/layers.hpp"
#include "hbformer/nn.hpp"
#include "hbformer/ops.hpp"

namespace hbf {

struct WindowLayout {
    int h = 0, w = 0;   // token-grid size
    int m = 0;          // window side
    int shift = 0;      // 0 or m/2

    WindowLayout() = default;
    WindowLayout(int h_, int w_, int m_, int shift_) : h(h_), w(w_), m(m_), shift(shift_) {
        if (h < 1 || w < 1 || m < 1)
            throw std::invalid_argument("window layout: non-positive dims");
        if (shift != 0 && shift != m / 2)
            throw std::invalid_argument("window layout: shift " + std::to_string(shift) +
                                        " must be 0 or " + std::to_string(m / 2));
    }

    int pad_h() const { return (m - h % m) % m; }
    int pad_w() const { return (m - w % m) % m; }
    int grid_h() const { return (h + pad_h()) / m; }
    int grid_w() const { return (w + pad_w()) / m; }
    int num_windows() const { return grid_h() * grid_w(); }
};

// [B, H, W, C] -> [B*nW, M*M, C]; zero-pads bottom/right to multiples of M.
// Window order is row-major over the window grid, batch-major overall.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowLayout& lay) {
    if (x.ndim() != 4 || x.dim(1) != lay.h || x.dim(2) != lay.w)
        throw std::invalid_argument("window_partition: input " + shape_str(x.shape()) +
                                    " does not match layout " + std::to_string(lay.h) + "x" +
                                    std::to_string(lay.w));
    const int B = x.dim(0), H = lay.h, W = lay.w, C = x.dim(3), M = lay.m;
    const int gh = lay.grid_h(), gw = lay.grid_w();
    Tensor<T> out({B * gh * gw, M * M, C});
    const T* px = x.data();
    T* po = out.data();
    const size_t row_c = static_cast<size_t>(C);
    for (int b = 0; b < B; ++b) {
        for (int wy = 0; wy < gh; ++wy) {
            for (int wx = 0; wx < gw; ++wx) {
                T* wbase = po + ((static_cast<size_t>(b) * gh + wy) * gw + wx) *
                                    (static_cast<size_t>(M) * M * C);
                for (int i = 0; i < M; ++i) {
                    const int y = wy * M + i;
                    T* dst = wbase + static_cast<size_t>(i) * M * C;
                    if (y >= H) continue;  // zero pad row (buffer starts zeroed)
                    const int x0 = wx * M;
                    const int cols = std::min(M, W - x0);
                    if (cols <= 0) continue;
                    const T* src = px + ((static_cast<size_t>(b) * H + y) * W + x0) * row_c;
                    std::memcpy(dst, src, static_cast<size_t>(cols) * C * sizeof(T));
                }
            }
        }
    }
    record_if_needed(x.requires_grad(), out, [x, out, B, H, W, C, M, gh, gw]() mutable {
        const T* g = out.grad();
        T* gx = Tensor<T>(x).grad();
        for (int b = 0; b < B; ++b)
            for (int wy = 0; wy < gh; ++wy)
                for (int wx = 0; wx < gw; ++wx) {
                    const T* wbase = g + ((static_cast<size_t>(b) * gh + wy) * gw + wx) *
                                             (static_cast<size_t>(M) * M * C);
                    for (int i = 0; i < M; ++i) {
                        const int y = wy * M + i;
                        if (y >= H) continue;
                        const int x0 = wx * M;
                        const int cols = std::min(M, W - x0);
                        if (cols <= 0) continue;
                        const T* src = wbase + static_cast<size_t>(i) * M * C;
                        T* dst = gx + ((static_cast<size_t>(b) * H + y) * W + x0) *
                                          static_cast<size_t>(C);
                        for (int k = 0; k < cols * C; ++k) dst[k] += src[k];
                    }
                }
    });
    return out;
}

// Exact inverse of window_partition, cropping the padding.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& wins, const WindowLayout& lay) {
    const int M = lay.m, gh = lay.grid_h(), gw = lay.grid_w();
    const int nw = gh * gw;
    if (wins.ndim() != 3 || wins.dim(1) != M * M || wins.dim(0) % nw != 0)
        throw std::invalid_argument("window_reverse: windows " + shape_str(wins.shape()) +
                                    " inconsistent with layout (" + std::to_string(nw) +
                                    " windows of " + std::to_string(M * M) + " tokens)");
    const int B = wins.dim(0) / nw, C = wins.dim(2), H = lay.h, W = lay.w;
    Tensor<T> out({B, H, W, C});
    const T* pw = wins.data();
    T* po = out.data();
    for (int b = 0; b < B; ++b)
        for (int wy = 0; wy < gh; ++wy)
            for (int wx = 0; wx < gw; ++wx) {
                const T* wbase = pw + ((static_cast<size_t>(b) * gh + wy) * gw + wx) *
                                          (static_cast<size_t>(M) * M * C);
                for (int i = 0; i < M; ++i) {
                    const int y = wy * M + i;
                    if (y >= H) continue;
                    const int x0 = wx * M;
                    const int cols = std::min(M, W - x0);
                    if (cols <= 0) continue;
                    std::memcpy(po + ((static_cast<size_t>(b) * H + y) * W + x0) *
                                         static_cast<size_t>(C),
                                wbase + static_cast<size_t>(i) * M * C,
                                static_cast<size_t>(cols) * C * sizeof(T));
                }
            }
    record_if_needed(wins.requires_grad(), out, [wins, out, B, H, W, C, M, gh, gw]() mutable {
        const T* g = out.grad();
        T* gw_ = Tensor<T>(wins).grad();
        for (int b = 0; b < B; ++b)
            for (int wy = 0; wy < gh; ++wy)
                for (int wx = 0; wx < gw; ++wx) {
                    T* wbase = gw_ + ((static_cast<size_t>(b) * gh + wy) * gw + wx) *
                                         (static_cast<size_t>(M) * M * C);
                    for (int i = 0; i < M; ++i) {
                        const int y = wy * M + i;
                        if (y >= H) continue;
                        const int x0 = wx * M;
                        const int cols = std::min(M, W - x0);
                        if (cols <= 0) continue;
                        const T* src = g + ((static_cast<size_t>(b) * H + y) * W + x0) *
                                               static_cast<size_t>(C);
                        T* dst = wbase + static_cast<size_t>(i) * M * C;
                        for (int k = 0; k < cols * C; ++k) dst[k] += src[k];
                    }
                }
    });
    return out;
}

// Rolls [B, H, W, C] so out[y][x] = in[(y - dy) mod H][(x - dx) mod W];
// dy = dx = -shift displaces content up-left as SW-MSA requires.
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, int dy, int dx) {
    if (x.ndim() != 4)
        throw std::invalid_argument("cyclic_shift: input must be [B,H,W,C], got " +
                                    shape_str(x.shape()));
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    auto wrap = [](int v, int n) { return ((v % n) + n) % n; };
    Tensor<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y) {
            const int sy = wrap(y - dy, H);
            for (int xcol = 0; xcol < W; ++xcol) {
                const int sx = wrap(xcol - dx, W);
                std::memcpy(po + ((static_cast<size_t>(b) * H + y) * W + xcol) *
                                     static_cast<size_t>(C),
                            px + ((static_cast<size_t>(b) * H + sy) * W + sx) *
                                     static_cast<size_t>(C),
                            static_cast<size_t>(C) * sizeof(T));
            }
        }
    record_if_needed(x.requires_grad(), out, [x, out, B, H, W, C, dy, dx, wrap]() mutable {
        const T* g = out.grad();
        T* gx = Tensor<T>(x).grad();
        for (int b = 0; b < B; ++b)
            for (int y = 0; y < H; ++y) {
                const int sy = wrap(y - dy, H);
                for (int xcol = 0; xcol < W; ++xcol) {
                    const int sx = wrap(xcol - dx, W);
                    const T* src = g + ((static_cast<size_t>(b) * H + y) * W + xcol) *
                                           static_cast<size_t>(C);
                    T* dst = gx + ((static_cast<size_t>(b) * H + sy) * W + sx) *
                                      static_cast<size_t>(C);
                    for (int c = 0; c < C; ++c) dst[c] += src[c];
                }
            }
    });
    return out;
}

// index[i*M*M + j] = row of the (2M-1)^2 bias table for token pair (i, j),
// a pure function of the in-window displacement (dy, dx).
inline std::vector<int> relative_position_index(int m) {
    const int L = m * m;
    std::vector<int> idx(static_cast<size_t>(L) * L);
    for (int i = 0; i < L; ++i) {
        const int yi = i / m, xi = i % m;
        for (int j = 0; j < L; ++j) {
            const int dy = yi - j / m + m - 1;
            const int dx = xi - j % m + m - 1;
            idx[static_cast<size_t>(i) * L + j] = dy * (2 * m - 1) + dx;
        }
    }
    return idx;
}

// scores [nWt, heads, L, L] + table[index[i*L+j]][h]; gradient reaches the
// table through the same gather.
template <typename T>
Tensor<T> add_rel_pos_bias(const Tensor<T>& scores, const Tensor<T>& table,
                           const std::vector<int>& index) {
    if (scores.ndim() != 4)
        throw std::invalid_argument("add_rel_pos_bias: scores must be rank 4, got " +
                                    shape_str(scores.shape()));
    const int nw = scores.dim(0), h = scores.dim(1), L = scores.dim(2);
    if (scores.dim(3) != L || index.size() != static_cast<size_t>(L) * L)
        throw std::invalid_argument("add_rel_pos_bias: index size " +
                                    std::to_string(index.size()) + " does not match scores " +
                                    shape_str(scores.shape()));
    if (table.ndim() != 2 || table.dim(1) != h)
        throw std::invalid_argument("add_rel_pos_bias: table " + shape_str(table.shape()) +
                                    " does not match " + std::to_string(h) + " heads");
    Tensor<T> out(scores.shape());
    const T* ps = scores.data();
    const T* pt = table.data();
    T* po = out.data();
    const size_t ll = static_cast<size_t>(L) * L;
    for (int w = 0; w < nw; ++w)
        for (int hd = 0; hd < h; ++hd) {
            const size_t base = (static_cast<size_t>(w) * h + hd) * ll;
            for (size_t p = 0; p < ll; ++p)
                po[base + p] = ps[base + p] + pt[static_cast<size_t>(index[p]) * h + hd];
        }
    record_if_needed(scores.requires_grad() || table.requires_grad(), out,
                     [scores, table, out, index, nw, h, ll]() mutable {
                         const T* g = out.grad();
                         if (scores.requires_grad()) {
                             T* gs = Tensor<T>(scores).grad();
                             const size_t n = out.numel();
                             for (size_t i = 0; i < n; ++i) gs[i] += g[i];
                         }
                         if (table.requires_grad()) {
                             T* gt = Tensor<T>(table).grad();
                             for (int w = 0; w < nw; ++w)
                                 for (int hd = 0; hd < h; ++hd) {
                                     const size_t base = (static_cast<size_t>(w) * h + hd) * ll;
                                     for (size_t p = 0; p < ll; ++p)
                                         gt[static_cast<size_t>(index[p]) * h + hd] +=
                                             g[base + p];
                                 }
                         }
                     });
    return out;
}

// SW-MSA mask: 0 for token pairs drawn from the same contiguous pre-shift
// region, -1e9 otherwise. Built with the band construction: region boundaries
// at (padded) H-M and H-shift per axis align with window boundaries after the
// roll, so equal band label within a post-roll window is exactly "no wrap
// between the pair". All-zero when shift == 0.
template <typename T>
Tensor<T> build_attention_mask(const WindowLayout& lay) {
    const int M = lay.m, s = lay.shift;
    const int Hp = lay.h + lay.pad_h(), Wp = lay.w + lay.pad_w();
    const int gh = lay.grid_h(), gw = lay.grid_w();
    const int L = M * M;
    Tensor<T> mask({gh * gw, L, L});
    if (s == 0) return mask;

    auto band = [M, s](int v, int n) { return v < n - M ? 0 : (v < n - s ? 1 : 2); };
    std::vector<int> label(static_cast<size_t>(Hp) * Wp);
    for (int y = 0; y < Hp; ++y)
        for (int x = 0; x < Wp; ++x)
            label[static_cast<size_t>(y) * Wp + x] = band(y, Hp) * 3 + band(x, Wp);

    T* pm = mask.data();
    for (int wy = 0; wy < gh; ++wy)
        for (int wx = 0; wx < gw; ++wx) {
            T* wbase = pm + (static_cast<size_t>(wy) * gw + wx) * L * L;
            for (int i = 0; i < L; ++i) {
                const int li =
                    label[static_cast<size_t>(wy * M + i / M) * Wp + (wx * M + i % M)];
                for (int j = 0; j < L; ++j) {
                    const int lj =
                        label[static_cast<size_t>(wy * M + j / M) * Wp + (wx * M + j % M)];
                    wbase[static_cast<size_t>(i) * L + j] = li == lj ? T(0) : T(-1e9);
                }
            }
        }
    return mask;
}

// scores [B*nW, heads, L, L] + mask [nW, L, L] broadcast over batch and
// heads. The mask is a constant: no gradient path.
template <typename T>
Tensor<T> add_window_mask(const Tensor<T>& scores, const Tensor<T>& mask) {
    if (scores.ndim() != 4 || mask.ndim() != 3)
        throw std::invalid_argument("add_window_mask: want scores rank 4 and mask rank 3, got " +
                                    shape_str(scores.shape()) + " and " +
                                    shape_str(mask.shape()));
    const int nwt = scores.dim(0), h = scores.dim(1), L = scores.dim(2);
    const int nw = mask.dim(0);
    if (scores.dim(3) != L || mask.dim(1) != L || mask.dim(2) != L || nwt % nw != 0)
        throw std::invalid_argument("add_window_mask: mask " + shape_str(mask.shape()) +
                                    " incompatible with scores " + shape_str(scores.shape()));
    Tensor<T> out(scores.shape());
    const T* ps = scores.data();
    const T* pm = mask.data();
    T* po = out.data();
    const size_t ll = static_cast<size_t>(L) * L;
    for (int w = 0; w < nwt; ++w) {
        const T* mw = pm + static_cast<size_t>(w % nw) * ll;
        for (int hd = 0; hd < h; ++hd) {
            const size_t base = (static_cast<size_t>(w) * h + hd) * ll;
            for (size_t p = 0; p < ll; ++p) po[base + p] = ps[base + p] + mw[p];
        }
    }
    record_if_needed(scores.requires_grad(), out, [scores, out]() mutable {
        const T* g = out.grad();
        T* gs = Tensor<T>(scores).grad();
        const size_t n = out.numel();
        for (size_t i = 0; i < n; ++i) gs[i] += g[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// attention module

template <typename T>
class WindowAttention {
  public:
    WindowAttention() = default;
    WindowAttention(int dim, int window, int heads, Rng& rng)
        : dim_(dim), m_(window), heads_(heads) {
        if (dim % heads != 0)
            throw std::invalid_argument("window attention: dim " + std::to_string(dim) +
                                        " not divisible by " + std::to_string(heads) + " heads");
        qkv_ = Linear<T>(dim, 3 * dim, rng);
        proj_ = Linear<T>(dim, dim, rng);
        const int side = 2 * window - 1;
        bias_table_ = Tensor<T>({side * side, heads});
        trunc_normal_(bias_table_, rng, T(0.02));
        bias_table_.set_requires_grad(true);
        index_ = relative_position_index(window);
    }

    // tokens [nWt, M*M, C]; mask [nW, M*M, M*M] or undefined for W-MSA.
    Tensor<T> forward(const Tensor<T>& tokens, const Tensor<T>& mask) const {
        const int nwt = tokens.dim(0), L = tokens.dim(1);
        if (L != m_ * m_ || tokens.dim(2) != dim_)
            throw std::invalid_argument("window attention: tokens " + shape_str(tokens.shape()) +
                                        " do not match window " + std::to_string(m_) + ", dim " +
                                        std::to_string(dim_));
        const int d = dim_ / heads_;
        Tensor<T> qkv = qkv_.forward(tokens);  // [nWt, L, 3C]
        Tensor<T> q = slice(qkv, 2, 0, dim_);
        Tensor<T> k = slice(qkv, 2, dim_, dim_);
        Tensor<T> v = slice(qkv, 2, 2 * dim_, dim_);
        // [nWt, L, C] -> [nWt, heads, L, d]
        auto split_heads = [&](const Tensor<T>& t) {
            return permute(reshape(t, {nwt, L, heads_, d}), {0, 2, 1, 3});
        };
        q = scale(split_heads(q), T(1) / static_cast<T>(std::sqrt(static_cast<double>(d))));
        k = split_heads(k);
        v = split_heads(v);
        Tensor<T> scores = matmul(q, permute(k, {0, 1, 3, 2}));  // [nWt, heads, L, L]
        scores = add_rel_pos_bias(scores, bias_table_, index_);
        if (mask.defined()) scores = add_window_mask(scores, mask);
        Tensor<T> attn = softmax(scores, 3);
        Tensor<T> ctx = matmul(attn, v);  // [nWt, heads, L, d]
        Tensor<T> merged = reshape(permute(ctx, {0, 2, 1, 3}), {nwt, L, dim_});
        return proj_.forward(merged);
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        qkv_.collect(prefix + ".qkv", nt);
        proj_.collect(prefix + ".proj", nt);
        nt.add_param(prefix + ".rel_bias", bias_table_);
    }

    Linear<T>& proj() { return proj_; }
    Tensor<T>& bias_table() { return bias_table_; }
    const std::vector<int>& index() const { return index_; }

  private:
    int dim_ = 0, m_ = 0, heads_ = 0;
    Linear<T> qkv_;
    Linear<T> proj_;
    Tensor<T> bias_table_;
    std::vector<int> index_;
};

// ---------------------------------------------------------------------------
// feed-forward variants

// Enhanced FFN: expand -> depth-wise 3x3 on the 2D map -> GELU -> point-wise
// 1x1 -> contract.
template <typename T>
class Effn {
  public:
    Effn() = default;
    Effn(int dim, int ratio, Rng& rng) : dim_(dim), hidden_(dim * ratio) {
        expand_ = Linear<T>(dim_, hidden_, rng);
        dw_ = Conv2dLayer<T>(hidden_, hidden_, 3, rng, 1, 1, 1, hidden_);
        pw_ = Conv2dLayer<T>(hidden_, hidden_, 1, rng);
        contract_ = Linear<T>(hidden_, dim_, rng);
    }

    Tensor<T> forward(const Tensor<T>& x, int h, int w) const {
        const int B = x.dim(0), L = x.dim(1);
        if (L != h * w)
            throw std::invalid_argument("effn: " + std::to_string(L) + " tokens but spatial " +
                                        std::to_string(h) + "x" + std::to_string(w));
        Tensor<T> y = expand_.forward(x);  // [B, L, hidden]
        y = permute(reshape(y, {B, h, w, hidden_}), {0, 3, 1, 2});
        y = depthwise_conv2d(y, dw_.params());
        y = gelu(y);
        y = pw_.forward(y);
        y = reshape(permute(y, {0, 2, 3, 1}), {B, L, hidden_});
        return contract_.forward(y);
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        expand_.collect(prefix + ".expand", nt);
        dw_.collect(prefix + ".dw", nt);
        pw_.collect(prefix + ".pw", nt);
        contract_.collect(prefix + ".contract", nt);
    }

    Linear<T>& contract() { return contract_; }
    Conv2dLayer<T>& dw() { return dw_; }
    Conv2dLayer<T>& pw() { return pw_; }
    Linear<T>& expand() { return expand_; }

  private:
    int dim_ = 0, hidden_ = 0;
    Linear<T> expand_;
    Conv2dLayer<T> dw_;
    Conv2dLayer<T> pw_;
    Linear<T> contract_;
};

// Plain two-linear FFN, the ablation fallback.
template <typename T>
class Ffn {
  public:
    Ffn() = default;
    Ffn(int dim, int ratio, Rng& rng) {
        fc1_ = Linear<T>(dim, dim * ratio, rng);
        fc2_ = Linear<T>(dim * ratio, dim, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return fc2_.forward(gelu(fc1_.forward(x))); }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        fc1_.collect(prefix + ".fc1", nt);
        fc2_.collect(prefix + ".fc2", nt);
    }

    Linear<T>& fc2() { return fc2_; }

  private:
    Linear<T> fc1_;
    Linear<T> fc2_;
};

// ---------------------------------------------------------------------------
// transformer blocks

// One attention sublayer + one feed-forward sublayer, both pre-norm with
// residuals. `shifted` selects the SW-MSA variant.
template <typename T>
class MwaBlock {
  public:
    MwaBlock() = default;
    MwaBlock(int dim, int grid_h, int grid_w, int window, int heads, int ratio, bool shifted,
             bool use_effn, Rng& rng)
        : dim_(dim), h_(grid_h), w_(grid_w), use_effn_(use_effn) {
        // Shrink the window to the grid when the grid is smaller; a single
        // window leaves nothing to shift.
        const int m = std::min(window, std::min(grid_h, grid_w));
        const int shift = (shifted && m < std::min(grid_h, grid_w)) ? m / 2 : 0;
        lay_ = WindowLayout(grid_h, grid_w, m, shift);
        norm1_ = LayerNormLayer<T>(dim);
        attn_ = WindowAttention<T>(dim, m, heads, rng);
        norm2_ = LayerNormLayer<T>(dim);
        if (use_effn)
            effn_ = Effn<T>(dim, ratio, rng);
        else
            ffn_ = Ffn<T>(dim, ratio, rng);
        if (shift > 0) mask_ = build_attention_mask<T>(lay_);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.ndim() != 3 || x.dim(1) != h_ * w_ || x.dim(2) != dim_)
            throw std::invalid_argument("mwa block: input " + shape_str(x.shape()) +
                                        " does not match grid " + std::to_string(h_) + "x" +
                                        std::to_string(w_) + ", dim " + std::to_string(dim_));
        const int B = x.dim(0);
        Tensor<T> y = norm1_.forward(x);
        y = reshape(y, {B, h_, w_, dim_});
        if (lay_.shift > 0) y = cyclic_shift(y, -lay_.shift, -lay_.shift);
        y = window_partition(y, lay_);
        y = attn_.forward(y, mask_);
        y = window_reverse(y, lay_);
        if (lay_.shift > 0) y = cyclic_shift(y, lay_.shift, lay_.shift);
        y = reshape(y, {B, h_ * w_, dim_});
        Tensor<T> res = add(x, y);

        Tensor<T> z = norm2_.forward(res);
        z = use_effn_ ? effn_.forward(z, h_, w_) : ffn_.forward(z);
        return add(res, z);
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        norm1_.collect(prefix + ".norm1", nt);
        attn_.collect(prefix + ".attn", nt);
        norm2_.collect(prefix + ".norm2", nt);
        if (use_effn_)
            effn_.collect(prefix + ".effn", nt);
        else
            ffn_.collect(prefix + ".ffn", nt);
    }

    WindowAttention<T>& attn() { return attn_; }
    Effn<T>& effn() { return effn_; }
    Ffn<T>& ffn() { return ffn_; }
    const WindowLayout& layout() const { return lay_; }

  private:
    int dim_ = 0, h_ = 0, w_ = 0;
    bool use_effn_ = true;
    WindowLayout lay_;
    LayerNormLayer<T> norm1_;
    WindowAttention<T> attn_;
    LayerNormLayer<T> norm2_;
    Effn<T> effn_;
    Ffn<T> ffn_;
    Tensor<T> mask_;
};

// The four-line block pair: W-MSA sublayers then SW-MSA sublayers.
template <typename T>
class MwaBlockPair {
  public:
    MwaBlockPair() = default;
    MwaBlockPair(int dim, int grid_h, int grid_w, int window, int heads, int ratio, bool use_effn,
                 Rng& rng)
        : wblock_(dim, grid_h, grid_w, window, heads, ratio, false, use_effn, rng),
          swblock_(dim, grid_h, grid_w, window, heads, ratio, true, use_effn, rng) {}

    Tensor<T> forward(const Tensor<T>& x) const { return swblock_.forward(wblock_.forward(x)); }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        wblock_.collect(prefix + ".w", nt);
        swblock_.collect(prefix + ".sw", nt);
    }

    MwaBlock<T>& w() { return wblock_; }
    MwaBlock<T>& sw() { return swblock_; }

  private:
    MwaBlock<T> wblock_;
    MwaBlock<T> swblock_;
};

}  // namespace hbf
