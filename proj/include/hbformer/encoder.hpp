#pragma once

// Hierarchical windowed-attention encoder: patch embedding, four stages of
// MWA block pairs at doubling widths, patch-merging downsamplers, one skip
// tensor per stage (taken before merging).

#include <array>
#include <numeric>
#include <vector>

#include "hbformer/attention.hpp"

namespace hbf {

struct ModelConfig {
    int img_size = 64;
    int patch_size = 4;
    int in_channels = 3;
    std::array<int, 4> stage_widths{96, 192, 384, 768};
    std::array<int, 4> stage_depths{2, 2, 6, 2};
    std::array<int, 4> heads_per_stage{3, 6, 12, 24};
    int window_size = 4;
    int effn_ratio = 4;
    int num_classes = 2;
    bool use_effn = true;
    bool use_mff_decoder = true;
    std::vector<int> dspp_rates{1, 6, 12, 18};

    void validate() const {
        if (img_size < 1 || patch_size < 1 || img_size % (patch_size * 8) != 0)
            throw std::invalid_argument("config: img_size " + std::to_string(img_size) +
                                        " must be divisible by patch_size*8 = " +
                                        std::to_string(patch_size * 8));
        for (int i = 0; i < 3; ++i)
            if (stage_widths[i + 1] != 2 * stage_widths[i])
                throw std::invalid_argument("config: stage widths must double, got " +
                                            std::to_string(stage_widths[i]) + " -> " +
                                            std::to_string(stage_widths[i + 1]));
        for (int i = 0; i < 4; ++i) {
            if (stage_depths[i] < 2 || stage_depths[i] % 2 != 0)
                throw std::invalid_argument("config: stage depth " +
                                            std::to_string(stage_depths[i]) +
                                            " must be a positive even block count");
            if (heads_per_stage[i] < 1 || stage_widths[i] % heads_per_stage[i] != 0)
                throw std::invalid_argument("config: width " + std::to_string(stage_widths[i]) +
                                            " not divisible by heads " +
                                            std::to_string(heads_per_stage[i]));
        }
        if (window_size < 2)
            throw std::invalid_argument("config: window_size must be at least 2");
        if (effn_ratio < 1) throw std::invalid_argument("config: effn_ratio must be positive");
        if (num_classes < 2) throw std::invalid_argument("config: need at least 2 classes");
        if (in_channels < 1) throw std::invalid_argument("config: in_channels must be positive");
        if (dspp_rates.size() != 4)
            throw std::invalid_argument("config: dspp_rates must list exactly 4 dilations");
        for (int r : dspp_rates)
            if (r < 1) throw std::invalid_argument("config: dilation rates must be >= 1");
    }

    int token_grid() const { return img_size / patch_size; }
};

// Gathers each 2x2 token neighborhood into quadruple-width tokens, order
// (even,even), (odd,even), (even,odd), (odd,odd) along channels.
template <typename T>
Tensor<T> merge_2x2(const Tensor<T>& x, int h, int w) {
    if (x.ndim() != 3 || x.dim(1) != h * w)
        throw std::invalid_argument("merge_2x2: input " + shape_str(x.shape()) +
                                    " does not match grid " + std::to_string(h) + "x" +
                                    std::to_string(w));
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("merge_2x2: odd grid " + std::to_string(h) + "x" +
                                    std::to_string(w));
    const int B = x.dim(0), C = x.dim(2);
    const int h2 = h / 2, w2 = w / 2;
    Tensor<T> out({B, h2 * w2, 4 * C});
    const T* px = x.data();
    T* po = out.data();
    static constexpr int quad[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    for (int b = 0; b < B; ++b)
        for (int ty = 0; ty < h2; ++ty)
            for (int tx = 0; tx < w2; ++tx) {
                T* dst = po + ((static_cast<size_t>(b) * h2 + ty) * w2 + tx) *
                                  (static_cast<size_t>(4) * C);
                for (int q = 0; q < 4; ++q) {
                    const int y = 2 * ty + quad[q][0], xc = 2 * tx + quad[q][1];
                    const T* src =
                        px + ((static_cast<size_t>(b) * h + y) * w + xc) * static_cast<size_t>(C);
                    std::memcpy(dst + static_cast<size_t>(q) * C, src, sizeof(T) * C);
                }
            }
    record_if_needed(x.requires_grad(), out, [x, out, B, C, h, w, h2, w2]() mutable {
        const T* g = out.grad();
        T* gx = Tensor<T>(x).grad();
        static constexpr int quad[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
        for (int b = 0; b < B; ++b)
            for (int ty = 0; ty < h2; ++ty)
                for (int tx = 0; tx < w2; ++tx) {
                    const T* src = g + ((static_cast<size_t>(b) * h2 + ty) * w2 + tx) *
                                           (static_cast<size_t>(4) * C);
                    for (int q = 0; q < 4; ++q) {
                        const int y = 2 * ty + quad[q][0], xc = 2 * tx + quad[q][1];
                        T* dst = gx + ((static_cast<size_t>(b) * h + y) * w + xc) *
                                          static_cast<size_t>(C);
                        for (int c = 0; c < C; ++c) dst[c] += src[static_cast<size_t>(q) * C + c];
                    }
                }
    });
    return out;
}

// 2x2 concat -> LN -> linear 4C -> 2C (no bias).
template <typename T>
class PatchMerging {
  public:
    PatchMerging() = default;
    PatchMerging(int dim, Rng& rng) : dim_(dim) {
        norm_ = LayerNormLayer<T>(4 * dim);
        reduce_ = Linear<T>(4 * dim, 2 * dim, rng, /*with_bias=*/false);
    }

    Tensor<T> forward(const Tensor<T>& x, int h, int w) const {
        return reduce_.forward(norm_.forward(merge_2x2(x, h, w)));
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        norm_.collect(prefix + ".norm", nt);
        reduce_.collect(prefix + ".reduce", nt);
    }

  private:
    int dim_ = 0;
    LayerNormLayer<T> norm_;
    Linear<T> reduce_;
};

// Non-overlapping p*p patches -> C1 tokens (stride-p conv), then LN.
template <typename T>
class PatchEmbed {
  public:
    PatchEmbed() = default;
    PatchEmbed(int in_ch, int dim, int patch, Rng& rng) : patch_(patch), dim_(dim) {
        proj_ = Conv2dLayer<T>(in_ch, dim, patch, rng, /*stride=*/patch);
        norm_ = LayerNormLayer<T>(dim);
    }

    Tensor<T> forward(const Tensor<T>& img) const {
        if (img.ndim() != 4 || img.dim(2) % patch_ != 0 || img.dim(3) % patch_ != 0)
            throw std::invalid_argument("patch_embed: image " + shape_str(img.shape()) +
                                        " not divisible into " + std::to_string(patch_) + "x" +
                                        std::to_string(patch_) + " patches");
        Tensor<T> y = proj_.forward(img);  // [B, C, S, S]
        const int B = y.dim(0), s_h = y.dim(2), s_w = y.dim(3);
        y = permute(y, {0, 2, 3, 1});
        y = reshape(y, {B, s_h * s_w, dim_});
        return norm_.forward(y);
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        proj_.collect(prefix + ".proj", nt);
        norm_.collect(prefix + ".norm", nt);
    }

  private:
    int patch_ = 0, dim_ = 0;
    Conv2dLayer<T> proj_;
    LayerNormLayer<T> norm_;
};

template <typename T>
struct EncoderOutput {
    std::array<Tensor<T>, 4> skips;  // token tensors [B, L_i, C_i], pre-merge
    std::array<int, 4> grids;        // square grid side per skip
    Tensor<T>& bottleneck() { return skips[3]; }
};

template <typename T>
class Encoder {
  public:
    Encoder() = default;
    Encoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        embed_ = PatchEmbed<T>(cfg.in_channels, cfg.stage_widths[0], cfg.patch_size, rng);
        int grid = cfg.token_grid();
        for (int st = 0; st < 4; ++st) {
            grids_[st] = grid;
            const int pairs = cfg.stage_depths[st] / 2;
            for (int p = 0; p < pairs; ++p)
                stages_[st].emplace_back(cfg.stage_widths[st], grid, grid, cfg.window_size,
                                         cfg.heads_per_stage[st], cfg.effn_ratio, cfg.use_effn,
                                         rng);
            if (st < 3) {
                merges_[st] = PatchMerging<T>(cfg.stage_widths[st], rng);
                grid /= 2;
            }
        }
    }

    EncoderOutput<T> forward(const Tensor<T>& img) const {
        EncoderOutput<T> out;
        Tensor<T> x = embed_.forward(img);
        for (int st = 0; st < 4; ++st) {
            for (const auto& pair : stages_[st]) x = pair.forward(x);
            out.skips[st] = x;
            out.grids[st] = grids_[st];
            if (st < 3) x = merges_[st].forward(x, grids_[st], grids_[st]);
        }
        return out;
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        embed_.collect(prefix + ".patch_embed", nt);
        for (int st = 0; st < 4; ++st) {
            for (size_t p = 0; p < stages_[st].size(); ++p)
                stages_[st][p].collect(prefix + ".stage" + std::to_string(st) + ".pair" +
                                           std::to_string(p),
                                       nt);
            if (st < 3) merges_[st].collect(prefix + ".merge" + std::to_string(st), nt);
        }
    }

    const ModelConfig& config() const { return cfg_; }
    std::vector<MwaBlockPair<T>>& stage(int i) { return stages_[i]; }

  private:
    ModelConfig cfg_;
    PatchEmbed<T> embed_;
    std::array<std::vector<MwaBlockPair<T>>, 4> stages_;
    std::array<PatchMerging<T>, 3> merges_;
    std::array<int, 4> grids_{};
};

}  // namespace hbf
