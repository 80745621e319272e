#pragma once

// Parameter-owning layer wrappers with dotted-name collection for the
// optimizer and checkpoint writer. Construction seeds weights from the given
// RNG; collection order is construction order and therefore deterministic.

#include <string>
#include <utility>
#include <vector>

#include "hbformer/nn.hpp"
#include "hbformer/ops.hpp"

namespace hbf {

template <typename T>
struct NamedTensors {
    std::vector<std::pair<std::string, Tensor<T>>> params;
    std::vector<std::pair<std::string, Tensor<T>>> buffers;  // BN running stats

    void add_param(const std::string& name, const Tensor<T>& t) { params.emplace_back(name, t); }
    void add_buffer(const std::string& name, const Tensor<T>& t) { buffers.emplace_back(name, t); }
};

template <typename T>
class Linear {
  public:
    Linear() = default;
    Linear(int in_dim, int out_dim, Rng& rng, bool with_bias = true) : in_(in_dim), out_(out_dim) {
        weight_ = Tensor<T>({in_dim, out_dim});
        trunc_normal_(weight_, rng, T(0.02));
        weight_.set_requires_grad(true);
        if (with_bias) {
            bias_ = Tensor<T>({out_dim});
            bias_.set_requires_grad(true);
        }
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.dim(x.ndim() - 1) != in_)
            throw std::invalid_argument("linear: input " + shape_str(x.shape()) +
                                        " does not end in " + std::to_string(in_));
        Shape out_shape = x.shape();
        out_shape.back() = out_;
        const int rows = static_cast<int>(x.numel()) / in_;
        Tensor<T> flat = reshape(x, {rows, in_});
        Tensor<T> y = matmul(flat, weight_);
        if (bias_.defined()) y = add_bias(y, bias_);
        return reshape(y, std::move(out_shape));
    }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        nt.add_param(prefix + ".weight", weight_);
        if (bias_.defined()) nt.add_param(prefix + ".bias", bias_);
    }

    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }
    int in_dim() const { return in_; }
    int out_dim() const { return out_; }

  private:
    int in_ = 0, out_ = 0;
    Tensor<T> weight_;
    Tensor<T> bias_;
};

enum class ConvInit { TruncNormal, Zero };

template <typename T>
class Conv2dLayer {
  public:
    Conv2dLayer() = default;
    Conv2dLayer(int in_ch, int out_ch, int k, Rng& rng, int stride = 1, int pad = 0, int dil = 1,
                int groups = 1, bool with_bias = true, ConvInit init = ConvInit::TruncNormal) {
        p_.weight = Tensor<T>({out_ch, in_ch / groups, k, k});
        if (init == ConvInit::TruncNormal) trunc_normal_(p_.weight, rng, T(0.02));
        p_.weight.set_requires_grad(true);
        if (with_bias) {
            p_.bias = Tensor<T>({out_ch});
            p_.bias.set_requires_grad(true);
        }
        p_.stride = stride;
        p_.padding = pad;
        p_.dilation = dil;
        p_.groups = groups;
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, p_); }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        nt.add_param(prefix + ".weight", p_.weight);
        if (p_.bias.defined()) nt.add_param(prefix + ".bias", p_.bias);
    }

    const Conv2dParams<T>& params() const { return p_; }
    Conv2dParams<T>& params() { return p_; }

  private:
    Conv2dParams<T> p_;
};

template <typename T>
class BatchNorm2d {
  public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(int ch) {
        s_.gamma = Tensor<T>::ones({ch});
        s_.beta = Tensor<T>({ch});
        s_.running_mean = Tensor<T>({ch});
        s_.running_var = Tensor<T>::ones({ch});
        s_.gamma.set_requires_grad(true);
        s_.beta.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) { return batch_norm(x, s_, training); }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        nt.add_param(prefix + ".gamma", s_.gamma);
        nt.add_param(prefix + ".beta", s_.beta);
        nt.add_buffer(prefix + ".running_mean", s_.running_mean);
        nt.add_buffer(prefix + ".running_var", s_.running_var);
    }

    BatchNormState<T>& state() { return s_; }

  private:
    BatchNormState<T> s_;
};

template <typename T>
class LayerNormLayer {
  public:
    LayerNormLayer() = default;
    explicit LayerNormLayer(int dim, T eps = T(1e-5)) : eps_(eps) {
        gamma_ = Tensor<T>::ones({dim});
        beta_ = Tensor<T>({dim});
        gamma_.set_requires_grad(true);
        beta_.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma_, beta_, eps_); }

    void collect(const std::string& prefix, NamedTensors<T>& nt) const {
        nt.add_param(prefix + ".gamma", gamma_);
        nt.add_param(prefix + ".beta", beta_);
    }

    Tensor<T>& gamma() { return gamma_; }
    Tensor<T>& beta() { return beta_; }

  private:
    Tensor<T> gamma_;
    Tensor<T> beta_;
    T eps_ = T(1e-5);
};

}  // namespace hbf
