#pragma once

// The full segmentation model: encoder plus one of the two decoders, with a
// cached name->tensor registry for the optimizer and checkpoint code.

#include <memory>

#include "hbformer/decoder.hpp"

namespace hbf {

template <typename T>
class HBFormer {
  public:
    HBFormer(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        Rng rng(seed);
        enc_ = std::make_unique<Encoder<T>>(cfg, rng);
        if (cfg.use_mff_decoder)
            mff_ = std::make_unique<MffDecoder<T>>(cfg, rng);
        else
            plain_ = std::make_unique<PlainDecoder<T>>(cfg, rng);
        enc_->collect("enc", named_);
        if (mff_)
            mff_->collect("dec", named_);
        else
            plain_->collect("dec", named_);
    }

    Tensor<T> forward(const Tensor<T>& img, bool training) {
        EncoderOutput<T> enc = enc_->forward(img);
        return mff_ ? mff_->forward(enc, training) : plain_->forward(enc, training);
    }

    const ModelConfig& config() const { return cfg_; }
    NamedTensors<T>& named() { return named_; }

    void zero_grad() {
        for (auto& [name, t] : named_.params) t.zero_grad();
    }

    size_t param_count() const {
        size_t n = 0;
        for (const auto& [name, t] : named_.params) n += t.numel();
        return n;
    }

    Encoder<T>& encoder() { return *enc_; }
    MffDecoder<T>& mff_decoder() { return *mff_; }
    PlainDecoder<T>& plain_decoder() { return *plain_; }

  private:
    ModelConfig cfg_;
    std::unique_ptr<Encoder<T>> enc_;
    std::unique_ptr<MffDecoder<T>> mff_;
    std::unique_ptr<PlainDecoder<T>> plain_;
    NamedTensors<T> named_;
};

}  // namespace hbf
