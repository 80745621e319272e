#pragma once

// Decoders. The MFF bridge: per stage, upsample + skip concat + depth-wise
// convs + Med-DSPP + channel/spatial attention gates. The plain variant:
// patch-expand upsampling with windowed-attention blocks, for ablations.

#include "hbformer/encoder.hpp"

namespace hbf {

// ---------------------------------------------------------------------------
// Med-DSPP

// Four parallel branches (offset conv -> deformable 3x3 -> dilated 3x3 at
// rate r -> BN -> LeakyReLU), concatenated, fused 1x1, residual.
template <typename T>
class MedDspp {
  public:
    MedDspp() = default;
    MedDspp(int ch, const std::vector<int>& rates, Rng& rng) : ch_(ch) {
        branches_.reserve(rates.size());
        for (int r : rates) {
            Branch b;
            b.rate = r;
            b.offset = Conv2dLayer<T>(ch, 18, 3, rng, 1, 1, 1, 1, true, ConvInit::Zero);
            b.deform = Conv2dLayer<T>(ch, ch, 3, rng, 1, 1);
            b.dilated = Conv2dLayer<T>(ch, ch, 3, rng, 1, r, r);
            b.bn = BatchNorm2d<T>(ch);
            branches_.push_back(std::move(b));
        }
        fuse_ = Conv2dLayer<T>(static_cast<int>(rates.size()) * ch, ch, 1, rng);
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        std::vector<Tensor<T>> ys;
        ys.reserve(branches_.size());
        for (auto& b : branches_) {
            Tensor<T> off = b.offset.forward(x);
            Tensor<T> y = deformable_conv2d(x, b.deform.params(), off);
            y = b.dilated.forward(y);
            y = leaky_relu(b.bn.forward(y, training));
            ys.push_back(std::move(y));
        }
        return add(x, fuse_.forward(concat(ys, 1)));
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        for (size_t i = 0; i < branches_.size(); ++i) {
            const std::string bp = prefix + ".branch" + std::to_string(i);
            branches_[i].offset.collect(bp + ".offset", nt);
            branches_[i].deform.collect(bp + ".deform", nt);
            branches_[i].dilated.collect(bp + ".dilated", nt);
            branches_[i].bn.collect(bp + ".bn", nt);
        }
        fuse_.collect(prefix + ".fuse", nt);
    }

    Conv2dLayer<T>& fuse() { return fuse_; }
    Conv2dLayer<T>& branch_offset(int i) { return branches_[i].offset; }
    Conv2dLayer<T>& branch_deform(int i) { return branches_[i].deform; }
    Conv2dLayer<T>& branch_dilated(int i) { return branches_[i].dilated; }
    BatchNorm2d<T>& branch_bn(int i) { return branches_[i].bn; }
    int num_branches() const { return static_cast<int>(branches_.size()); }

  private:
    struct Branch {
        int rate = 1;
        Conv2dLayer<T> offset;
        Conv2dLayer<T> deform;
        Conv2dLayer<T> dilated;
        BatchNorm2d<T> bn;
    };
    int ch_ = 0;
    std::vector<Branch> branches_;
    Conv2dLayer<T> fuse_;
};

// ---------------------------------------------------------------------------
// attention gates

// Squeeze-excite style: GAP -> 1x1 reduce (ratio 4) -> LeakyReLU -> 1x1
// expand -> sigmoid, gating channels.
template <typename T>
class ChannelAttention {
  public:
    ChannelAttention() = default;
    ChannelAttention(int ch, Rng& rng) {
        const int hidden = std::max(1, ch / 4);
        fc1_ = Conv2dLayer<T>(ch, hidden, 1, rng);
        fc2_ = Conv2dLayer<T>(hidden, ch, 1, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> g = global_avg_pool(x);
        g = sigmoid(fc2_.forward(leaky_relu(fc1_.forward(g))));
        return mul_channel_gate(x, g);
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        fc1_.collect(prefix + ".fc1", nt);
        fc2_.collect(prefix + ".fc2", nt);
    }

  private:
    Conv2dLayer<T> fc1_;
    Conv2dLayer<T> fc2_;
};

// Depth-wise dilated 3x3 (rate 2) -> 1x1 to one channel -> sigmoid map.
template <typename T>
class SpatialAttention {
  public:
    SpatialAttention() = default;
    SpatialAttention(int ch, Rng& rng) {
        dw_ = Conv2dLayer<T>(ch, ch, 3, rng, 1, 2, 2, ch);
        pw_ = Conv2dLayer<T>(ch, 1, 1, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> m = sigmoid(pw_.forward(depthwise_conv2d(x, dw_.params())));
        return mul_spatial_gate(x, m);
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        dw_.collect(prefix + ".dw", nt);
        pw_.collect(prefix + ".pw", nt);
    }

  private:
    Conv2dLayer<T> dw_;
    Conv2dLayer<T> pw_;
};

// ---------------------------------------------------------------------------
// token/map plumbing

template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& x, int h, int w) {
    const int B = x.dim(0), C = x.dim(2);
    return permute(reshape(x, {B, h, w, C}), {0, 3, 1, 2});
}

template <typename T>
Tensor<T> map_to_tokens(const Tensor<T>& x) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    return reshape(permute(x, {0, 2, 3, 1}), {B, H * W, C});
}

// ---------------------------------------------------------------------------
// MFF stage and decoder

template <typename T>
class MffStage {
  public:
    MffStage() = default;
    MffStage(int c_below, int c_skip, int c_out, const std::vector<int>& rates, Rng& rng)
        : c_out_(c_out) {
        reduce_ = Conv2dLayer<T>(c_below + c_skip, c_out, 1, rng);
        dw1_ = Conv2dLayer<T>(c_out, c_out, 3, rng, 1, 1, 1, c_out);
        bn1_ = BatchNorm2d<T>(c_out);
        dw2_ = Conv2dLayer<T>(c_out, c_out, 3, rng, 1, 1, 1, c_out);
        bn2_ = BatchNorm2d<T>(c_out);
        dspp_ = MedDspp<T>(c_out, rates, rng);
        ca_ = ChannelAttention<T>(c_out, rng);
        sa_ = SpatialAttention<T>(c_out, rng);
    }

    // below [B, C_below, h, w] rises to the skip's resolution.
    Tensor<T> forward(const Tensor<T>& below, const Tensor<T>& skip, bool training) {
        const int sh = skip.dim(2), sw = skip.dim(3);
        if (sh != 2 * below.dim(2) || sw != 2 * below.dim(3))
            throw std::invalid_argument("mff_stage: skip " + shape_str(skip.shape()) +
                                        " is not 2x the decoder input " +
                                        shape_str(below.shape()));
        Tensor<T> up = bilinear_resize(below, sh, sw);
        Tensor<T> x = reduce_.forward(concat<T>({up, skip}, 1));
        x = leaky_relu(bn1_.forward(depthwise_conv2d(x, dw1_.params()), training));
        x = leaky_relu(bn2_.forward(depthwise_conv2d(x, dw2_.params()), training));
        x = dspp_.forward(x, training);
        x = ca_.forward(x);
        return sa_.forward(x);
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        reduce_.collect(prefix + ".reduce", nt);
        dw1_.collect(prefix + ".dw1", nt);
        bn1_.collect(prefix + ".bn1", nt);
        dw2_.collect(prefix + ".dw2", nt);
        bn2_.collect(prefix + ".bn2", nt);
        dspp_.collect(prefix + ".dspp", nt);
        ca_.collect(prefix + ".ca", nt);
        sa_.collect(prefix + ".sa", nt);
    }

    MedDspp<T>& dspp() { return dspp_; }

  private:
    int c_out_ = 0;
    Conv2dLayer<T> reduce_;
    Conv2dLayer<T> dw1_;
    BatchNorm2d<T> bn1_;
    Conv2dLayer<T> dw2_;
    BatchNorm2d<T> bn2_;
    MedDspp<T> dspp_;
    ChannelAttention<T> ca_;
    SpatialAttention<T> sa_;
};

// Bilinear x4 back to input resolution, then 1x1 conv to class logits.
template <typename T>
class SegHead {
  public:
    SegHead() = default;
    SegHead(int ch, int num_classes, int out_size, Rng& rng) : out_size_(out_size) {
        head_ = Conv2dLayer<T>(ch, num_classes, 1, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return head_.forward(bilinear_resize(x, out_size_, out_size_));
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        head_.collect(prefix + ".conv", nt);
    }

  private:
    int out_size_ = 0;
    Conv2dLayer<T> head_;
};

template <typename T>
class MffDecoder {
  public:
    MffDecoder() = default;
    MffDecoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        const auto& cw = cfg.stage_widths;
        stages_[0] = MffStage<T>(cw[3], cw[2], cw[2], cfg.dspp_rates, rng);
        stages_[1] = MffStage<T>(cw[2], cw[1], cw[1], cfg.dspp_rates, rng);
        stages_[2] = MffStage<T>(cw[1], cw[0], cw[0], cfg.dspp_rates, rng);
        head_ = SegHead<T>(cw[0], cfg.num_classes, cfg.img_size, rng);
    }

    Tensor<T> forward(EncoderOutput<T>& enc, bool training) {
        Tensor<T> x = tokens_to_map(enc.skips[3], enc.grids[3], enc.grids[3]);
        for (int i = 0; i < 3; ++i) {
            const int si = 2 - i;  // skip index: 2, 1, 0
            Tensor<T> skip = tokens_to_map(enc.skips[si], enc.grids[si], enc.grids[si]);
            x = stages_[i].forward(x, skip, training);
        }
        return head_.forward(x);
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        for (int i = 0; i < 3; ++i)
            stages_[i].collect(prefix + ".stage" + std::to_string(i), nt);
        head_.collect(prefix + ".head", nt);
    }

    MffStage<T>& stage(int i) { return stages_[i]; }

  private:
    ModelConfig cfg_;
    std::array<MffStage<T>, 3> stages_;
    SegHead<T> head_;
};

// ---------------------------------------------------------------------------
// plain (Swin-UNet style) decoder for the ablation rows

// [B, h*w, r*r*C] -> [B, (r*h)*(r*w), C]: each token unfolds into an r*r
// spatial block whose (p1, p2) cell reads channels [(p1*r+p2)*C, +C).
template <typename T>
Tensor<T> pixel_shuffle_tokens(const Tensor<T>& x, int h, int w, int r) {
    if (x.ndim() != 3 || x.dim(1) != h * w || x.dim(2) % (r * r) != 0)
        throw std::invalid_argument("pixel_shuffle_tokens: input " + shape_str(x.shape()) +
                                    " does not match grid " + std::to_string(h) + "x" +
                                    std::to_string(w) + " with factor " + std::to_string(r));
    const int B = x.dim(0), C = x.dim(2) / (r * r);
    const int ho = h * r, wo = w * r;
    Tensor<T> out({B, ho * wo, C});
    const T* px = x.data();
    T* po = out.data();
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < ho; ++y)
            for (int xc = 0; xc < wo; ++xc) {
                const int ty = y / r, tx = xc / r;
                const int cell = (y % r) * r + (xc % r);
                const T* src = px + ((static_cast<size_t>(b) * h + ty) * w + tx) *
                                        (static_cast<size_t>(r) * r * C) +
                                static_cast<size_t>(cell) * C;
                std::memcpy(po + ((static_cast<size_t>(b) * ho + y) * wo + xc) *
                                     static_cast<size_t>(C),
                            src, sizeof(T) * C);
            }
    record_if_needed(x.requires_grad(), out, [x, out, B, C, h, w, r, ho, wo]() mutable {
        const T* g = out.grad();
        T* gx = Tensor<T>(x).grad();
        for (int b = 0; b < B; ++b)
            for (int y = 0; y < ho; ++y)
                for (int xc = 0; xc < wo; ++xc) {
                    const int ty = y / r, tx = xc / r;
                    const int cell = (y % r) * r + (xc % r);
                    T* dst = gx + ((static_cast<size_t>(b) * h + ty) * w + tx) *
                                      (static_cast<size_t>(r) * r * C) +
                             static_cast<size_t>(cell) * C;
                    const T* src = g + ((static_cast<size_t>(b) * ho + y) * wo + xc) *
                                           static_cast<size_t>(C);
                    for (int c = 0; c < C; ++c) dst[c] += src[c];
                }
    });
    return out;
}

// Linear C -> 2C then shuffle to C/2 tokens at 2x resolution, then LN.
template <typename T>
class PatchExpand {
  public:
    PatchExpand() = default;
    PatchExpand(int dim, Rng& rng) : dim_(dim) {
        expand_ = Linear<T>(dim, 2 * dim, rng, /*with_bias=*/false);
        norm_ = LayerNormLayer<T>(dim / 2);
    }

    Tensor<T> forward(const Tensor<T>& x, int h, int w) const {
        Tensor<T> y = expand_.forward(x);
        y = pixel_shuffle_tokens(y, h, w, 2);  // 2C over 4 cells -> C/2
        return norm_.forward(y);
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        expand_.collect(prefix + ".expand", nt);
        norm_.collect(prefix + ".norm", nt);
    }

  private:
    int dim_ = 0;
    Linear<T> expand_;
    LayerNormLayer<T> norm_;
};

// Expand from below, concat skip, reduce, then windowed-attention pairs with
// the plain FFN (the cited decoder design keeps the standard sublayer).
template <typename T>
class PlainStage {
  public:
    PlainStage() = default;
    PlainStage(int c_below, int c_out, int grid, int window, int heads, int ratio, int pairs,
               Rng& rng)
        : grid_(grid) {
        expand_ = PatchExpand<T>(c_below, rng);
        reduce_ = Linear<T>(c_below / 2 + c_out, c_out, rng);
        for (int p = 0; p < pairs; ++p)
            blocks_.emplace_back(c_out, grid, grid, window, heads, ratio, /*use_effn=*/false,
                                 rng);
    }

    Tensor<T> forward(const Tensor<T>& below, const Tensor<T>& skip) const {
        Tensor<T> x = expand_.forward(below, grid_ / 2, grid_ / 2);
        x = reduce_.forward(concat<T>({x, skip}, 2));
        for (const auto& b : blocks_) x = b.forward(x);
        return x;
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        expand_.collect(prefix + ".expand", nt);
        reduce_.collect(prefix + ".reduce", nt);
        for (size_t p = 0; p < blocks_.size(); ++p)
            blocks_[p].collect(prefix + ".pair" + std::to_string(p), nt);
    }

  private:
    int grid_ = 0;
    PatchExpand<T> expand_;
    Linear<T> reduce_;
    std::vector<MwaBlockPair<T>> blocks_;
};

template <typename T>
class PlainDecoder {
  public:
    PlainDecoder() = default;
    PlainDecoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        const auto& cw = cfg.stage_widths;
        const int grid = cfg.token_grid();
        stages_[0] = PlainStage<T>(cw[3], cw[2], grid / 4, cfg.window_size,
                                   cfg.heads_per_stage[2], cfg.effn_ratio, 1, rng);
        stages_[1] = PlainStage<T>(cw[2], cw[1], grid / 2, cfg.window_size,
                                   cfg.heads_per_stage[1], cfg.effn_ratio, 1, rng);
        stages_[2] = PlainStage<T>(cw[1], cw[0], grid, cfg.window_size, cfg.heads_per_stage[0],
                                   cfg.effn_ratio, 1, rng);
        final_expand_ = Linear<T>(cw[0], cfg.patch_size * cfg.patch_size * cw[0], rng,
                                  /*with_bias=*/false);
        final_norm_ = LayerNormLayer<T>(cw[0]);
        head_ = Linear<T>(cw[0], cfg.num_classes, rng);
    }

    Tensor<T> forward(EncoderOutput<T>& enc, bool /*training*/) {
        Tensor<T> x = enc.skips[3];
        for (int i = 0; i < 3; ++i) x = stages_[i].forward(x, enc.skips[2 - i]);
        // 4x patch expansion back to pixel resolution, then the class head.
        const int grid = cfg_.token_grid(), p = cfg_.patch_size;
        Tensor<T> y = final_expand_.forward(x);
        y = pixel_shuffle_tokens(y, grid, grid, p);
        y = final_norm_.forward(y);
        y = head_.forward(y);  // [B, img*img, K]
        return tokens_to_map(y, cfg_.img_size, cfg_.img_size);
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        for (int i = 0; i < 3; ++i)
            stages_[i].collect(prefix + ".stage" + std::to_string(i), nt);
        final_expand_.collect(prefix + ".final_expand", nt);
        final_norm_.collect(prefix + ".final_norm", nt);
        head_.collect(prefix + ".head", nt);
    }

  private:
    ModelConfig cfg_;
    std::array<PlainStage<T>, 3> stages_;
    Linear<T> final_expand_;
    LayerNormLayer<T> final_norm_;
    Linear<T> head_;
};

}  // namespace hbf
