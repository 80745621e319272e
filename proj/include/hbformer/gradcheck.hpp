#pragma once

// Finite-difference verification of every backward rule, in double precision.
// Each registered check builds a small instance, computes analytic gradients
// through the tape, then probes sampled elements with central differences and
// reports the worst relative error  |a - n| / max(|a|, |n|, 1).
//
// Kink handling: checks keep inputs away from non-smooth points (LeakyReLU at
// zero, bilinear sampling at integer offsets), since a central difference
// straddling a kink measures the average slope, not the one-sided derivative
// the backward rule legitimately returns. Deformable offset convs are given a
// fractional constant bias for the same reason.

#include <algorithm>
#include <functional>
#include <set>

#include "hbformer/model.hpp"
#include "hbformer/training.hpp"

namespace hbf {

struct GradcheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool pass = false;
};

namespace gc {

using Td = Tensor<double>;

inline Td rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Td t(std::move(s));
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

// Magnitudes in [lo, hi], random sign: keeps values away from zero kinks.
inline Td rand_signed(Shape s, Rng& rng, double lo = 0.1, double hi = 1.0) {
    Td t(std::move(s));
    for (auto& v : t.values()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(lo, hi);
    return t;
}

inline std::vector<size_t> pick(size_t n, int want, Rng& rng) {
    if (n <= static_cast<size_t>(want)) {
        std::vector<size_t> all(n);
        for (size_t i = 0; i < n; ++i) all[i] = i;
        return all;
    }
    std::set<size_t> seen;
    while (seen.size() < static_cast<size_t>(want))
        seen.insert(static_cast<size_t>(rng.uniform_int(0, static_cast<int>(n) - 1)));
    return {seen.begin(), seen.end()};
}

// Fixed-weight scalar readout; keeps gradients non-uniform.
inline Td readout(const Td& y, const Td& w) { return sum(mul(y, w)); }

template <typename F>
double fd(const std::vector<Td*>& leaves, F&& f, Rng& rng, int samples = 4, double h = 1e-4) {
    for (Td* t : leaves) {
        t->set_requires_grad(true);
        t->zero_grad();
    }
    {
        GradTape<double> tape;
        Td loss = f();
        backward(loss);
    }
    double worst = 0.0;
    for (Td* t : leaves) {
        for (size_t i : pick(t->numel(), samples, rng)) {
            const double x0 = t->data()[i];
            t->data()[i] = x0 + h;
            const double fp = f().item();
            t->data()[i] = x0 - h;
            const double fm = f().item();
            t->data()[i] = x0;
            const double num = (fp - fm) / (2.0 * h);
            const double ana = t->grad()[i];
            const double rel =
                std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1.0});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

inline std::vector<Td*> param_ptrs(NamedTensors<double>& nt) {
    std::vector<Td*> out;
    out.reserve(nt.params.size());
    for (auto& [name, t] : nt.params) out.push_back(&t);
    return out;
}

// Re-draw module parameters at generic magnitudes; the 0.02-std init leaves
// gradients too faint to distinguish a wrong backward from a right one.
inline void scramble(NamedTensors<double>& nt, Rng& rng) {
    for (auto& [name, t] : nt.params) {
        const bool is_gamma =
            name.size() >= 6 && name.compare(name.size() - 6, 6, ".gamma") == 0;
        for (auto& v : t.values())
            v = is_gamma ? rng.uniform(0.7, 1.3) : rng.uniform(-0.4, 0.4);
    }
}

// Constant fractional offsets: weight zero, bias 0.3. Keeps every deformable
// sampling point strictly inside a bilinear cell.
inline void fix_offsets(MedDspp<double>& dspp) {
    for (int b = 0; b < dspp.num_branches(); ++b) {
        auto& p = dspp.branch_offset(b).params();
        std::fill(p.weight.values().begin(), p.weight.values().end(), 0.0);
        std::fill(p.bias.values().begin(), p.bias.values().end(), 0.3);
    }
}

inline std::vector<Td*> select_params(NamedTensors<double>& nt,
                                      const std::vector<std::string>& patterns) {
    std::vector<Td*> out;
    for (const auto& pat : patterns) {
        bool found = false;
        for (auto& [name, t] : nt.params) {
            if (name.find(pat) != std::string::npos) {
                out.push_back(&t);
                found = true;
                break;
            }
        }
        if (!found) throw std::logic_error("gradcheck: no parameter matches " + pat);
    }
    return out;
}

// Deliberately wrong backward (2% off); exists so the harness can prove the
// suite detects a broken rule.
inline Td faulty_double(const Td& x) {
    Td out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out.data()[i] = 2.0 * x.data()[i];
    Td xw = x, ow = out;
    record_if_needed(x.requires_grad(), out, [xw, ow]() mutable {
        if (!xw.requires_grad()) return;
        for (size_t i = 0; i < xw.numel(); ++i) xw.grad()[i] += 2.04 * ow.grad()[i];
    });
    return out;
}

}  // namespace gc

class GradcheckSuite {
  public:
    explicit GradcheckSuite(std::uint64_t seed = 1296269) : seed_(seed) { register_all(); }

    void add(const std::string& name, double tol, std::function<double(Rng&)> fn) {
        checks_.push_back({name, tol, std::move(fn)});
    }

    size_t size() const { return checks_.size(); }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(checks_.size());
        for (const auto& c : checks_) out.push_back(c.name);
        return out;
    }

    // Appends a check whose backward rule is wrong on purpose; it must FAIL.
    void inject_fault() {
        add("fault_injection", 1e-4, [](Rng& rng) {
            gc::Td x = gc::rand_tensor({2, 3}, rng);
            gc::Td w = gc::rand_tensor({2, 3}, rng);
            return gc::fd({&x}, [&] { return gc::readout(gc::faulty_double(x), w); }, rng, 6);
        });
    }

    std::vector<GradcheckResult> run() const {
        std::vector<GradcheckResult> out;
        out.reserve(checks_.size());
        for (size_t i = 0; i < checks_.size(); ++i) {
            Rng rng(seed_ + 7919 * (i + 1));
            GradcheckResult r;
            r.name = checks_[i].name;
            r.tol = checks_[i].tol;
            r.max_rel_err = checks_[i].fn(rng);
            r.pass = r.max_rel_err <= r.tol;
            out.push_back(std::move(r));
        }
        return out;
    }

  private:
    struct Check {
        std::string name;
        double tol;
        std::function<double(Rng&)> fn;
    };

    void register_all() {
        using gc::Td;
        using gc::fd;
        using gc::rand_signed;
        using gc::rand_tensor;
        using gc::readout;
        const double kOp = 1e-4;   // single smooth op
        const double kMod = 2e-4;  // composite module
        const double kE2E = 1e-3;  // full network

        // --- elementwise and shape plumbing ---
        auto binop = [this, kOp](const std::string& name, auto op) {
            add(name, kOp, [op](Rng& rng) {
                Td a = gc::rand_tensor({2, 3, 4}, rng);
                Td b = gc::rand_signed({2, 3, 4}, rng, 0.5, 1.5);
                Td w = gc::rand_tensor({2, 3, 4}, rng);
                return gc::fd({&a, &b}, [&] { return gc::readout(op(a, b), w); }, rng);
            });
        };
        binop("add", [](const Td& a, const Td& b) { return hbf::add(a, b); });
        binop("sub", [](const Td& a, const Td& b) { return hbf::sub(a, b); });
        binop("mul", [](const Td& a, const Td& b) { return hbf::mul(a, b); });
        binop("div", [](const Td& a, const Td& b) { return hbf::div(a, b); });
        add("scale", kOp, [](Rng& rng) {
            Td x = rand_tensor({3, 4}, rng);
            Td w = rand_tensor({3, 4}, rng);
            return fd({&x}, [&] { return readout(scale(x, 1.37), w); }, rng);
        });
        add("add_scalar", kOp, [](Rng& rng) {
            Td x = rand_tensor({3, 4}, rng);
            Td w = rand_tensor({3, 4}, rng);
            return fd({&x}, [&] { return readout(add_scalar(x, 0.7), w); }, rng);
        });
        add("add_bias", kOp, [](Rng& rng) {
            Td x = rand_tensor({2, 5, 3}, rng);
            Td b = rand_tensor({3}, rng);
            Td w = rand_tensor({2, 5, 3}, rng);
            return fd({&x, &b}, [&] { return readout(add_bias(x, b), w); }, rng);
        });
        add("reshape", kOp, [](Rng& rng) {
            Td x = rand_tensor({2, 3, 4}, rng);
            Td w = rand_tensor({4, 6}, rng);
            return fd({&x}, [&] { return readout(reshape(x, {4, 6}), w); }, rng);
        });
        add("permute", kOp, [](Rng& rng) {
            Td x = rand_tensor({2, 3, 4}, rng);
            Td w = rand_tensor({4, 2, 3}, rng);
            return fd({&x}, [&] { return readout(permute(x, {2, 0, 1}), w); }, rng);
        });
        add("slice", kOp, [](Rng& rng) {
            Td x = rand_tensor({2, 6, 3}, rng);
            Td w = rand_tensor({2, 3, 3}, rng);
            return fd({&x}, [&] { return readout(slice(x, 1, 2, 3), w); }, rng);
        });
        add("concat", kOp, [](Rng& rng) {
            Td a = rand_tensor({2, 2, 3}, rng);
            Td b = rand_tensor({2, 4, 3}, rng);
            Td w = rand_tensor({2, 6, 3}, rng);
            return fd({&a, &b},
                      [&] { return readout(concat<double>({a, b}, 1), w); }, rng);
        });
        add("matmul", kOp, [](Rng& rng) {
            Td a = rand_tensor({2, 3, 4}, rng);
            Td b = rand_tensor({2, 4, 5}, rng);
            Td w = rand_tensor({2, 3, 5}, rng);
            return fd({&a, &b}, [&] { return readout(matmul(a, b), w); }, rng);
        });
        add("sum", kOp, [](Rng& rng) {
            Td x = rand_tensor({3, 5}, rng);
            return fd({&x}, [&] { return sum(x); }, rng);
        });
        add("mean", kOp, [](Rng& rng) {
            Td x = rand_tensor({3, 5}, rng);
            return fd({&x}, [&] { return mean(x); }, rng);
        });

        // --- normalizations and activations ---
        add("softmax", kOp, [](Rng& rng) {
            Td x = rand_tensor({2, 3, 5}, rng, -2.0, 2.0);
            Td w = rand_tensor({2, 3, 5}, rng);
            return fd({&x}, [&] { return readout(softmax(x, 2), w); }, rng);
        });
        add("softmax_axis1", kOp, [](Rng& rng) {
            Td x = rand_tensor({2, 3, 5}, rng, -2.0, 2.0);
            Td w = rand_tensor({2, 3, 5}, rng);
            return fd({&x}, [&] { return readout(softmax(x, 1), w); }, rng);
        });
        add("layer_norm", kOp, [](Rng& rng) {
            Td x = rand_tensor({2, 4, 6}, rng);
            Td g = rand_tensor({6}, rng, 0.7, 1.3);
            Td b = rand_tensor({6}, rng, -0.3, 0.3);
            Td w = rand_tensor({2, 4, 6}, rng);
            return fd({&x, &g, &b},
                      [&] { return readout(layer_norm(x, g, b, 1e-5), w); }, rng);
        });
        add("sigmoid", kOp, [](Rng& rng) {
            Td x = rand_tensor({3, 4}, rng, -3.0, 3.0);
            Td w = rand_tensor({3, 4}, rng);
            return fd({&x}, [&] { return readout(sigmoid(x), w); }, rng);
        });
        add("softplus", kOp, [](Rng& rng) {
            Td x = rand_tensor({3, 4}, rng, -3.0, 3.0);
            Td w = rand_tensor({3, 4}, rng);
            return fd({&x}, [&] { return readout(softplus(x), w); }, rng);
        });
        add("gelu", kOp, [](Rng& rng) {
            Td x = rand_tensor({3, 4}, rng, -2.0, 2.0);
            Td w = rand_tensor({3, 4}, rng);
            return fd({&x}, [&] { return readout(gelu(x), w); }, rng);
        });
        add("leaky_relu", kOp, [](Rng& rng) {
            Td x = rand_signed({3, 4}, rng, 0.1, 1.0);
            Td w = rand_tensor({3, 4}, rng);
            return fd({&x}, [&] { return readout(leaky_relu(x), w); }, rng);
        });

        // --- convolutions ---
        auto conv_check = [this, kOp](const std::string& name, Shape xs, Shape ws, int stride,
                                      int pad, int dil, int groups, Shape os) {
            add(name, kOp, [=](Rng& rng) {
                Td x = gc::rand_tensor(xs, rng);
                Conv2dParams<double> p;
                p.weight = gc::rand_tensor(ws, rng, -0.5, 0.5);
                p.bias = gc::rand_tensor({ws[0]}, rng, -0.2, 0.2);
                p.stride = stride;
                p.padding = pad;
                p.dilation = dil;
                p.groups = groups;
                Td w = gc::rand_tensor(os, rng);
                return gc::fd({&x, &p.weight, &p.bias},
                              [&] { return gc::readout(conv2d(x, p), w); }, rng);
            });
        };
        conv_check("conv2d", {2, 3, 5, 5}, {4, 3, 3, 3}, 1, 1, 1, 1, {2, 4, 5, 5});
        conv_check("conv2d_strided", {2, 3, 7, 7}, {4, 3, 3, 3}, 2, 1, 1, 1, {2, 4, 4, 4});
        conv_check("conv2d_dilated", {1, 2, 8, 8}, {3, 2, 3, 3}, 1, 2, 2, 1, {1, 3, 8, 8});
        conv_check("conv2d_grouped", {2, 4, 5, 5}, {6, 2, 3, 3}, 1, 1, 1, 2, {2, 6, 5, 5});
        add("depthwise_conv2d", kOp, [](Rng& rng) {
            Td x = rand_tensor({2, 3, 5, 5}, rng);
            Conv2dParams<double> p;
            p.weight = rand_tensor({3, 1, 3, 3}, rng, -0.5, 0.5);
            p.bias = rand_tensor({3}, rng, -0.2, 0.2);
            p.padding = 1;
            p.groups = 3;
            Td w = rand_tensor({2, 3, 5, 5}, rng);
            return fd({&x, &p.weight, &p.bias},
                      [&] { return readout(depthwise_conv2d(x, p), w); }, rng);
        });
        add("deformable_conv2d", kOp, [](Rng& rng) {
            Td x = rand_tensor({1, 2, 5, 5}, rng);
            Conv2dParams<double> p;
            p.weight = rand_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
            p.bias = rand_tensor({3}, rng, -0.2, 0.2);
            p.padding = 1;
            Td off = rand_tensor({1, 18, 5, 5}, rng, 0.1, 0.4);
            Td w = rand_tensor({1, 3, 5, 5}, rng);
            return fd({&x, &p.weight, &p.bias, &off},
                      [&] { return readout(deformable_conv2d(x, p, off), w); }, rng, 5);
        });

        // --- batch norm ---
        add("batch_norm_train", kOp, [](Rng& rng) {
            BatchNorm2d<double> bn(3);
            Td x = rand_tensor({2, 3, 4, 4}, rng);
            Td w = rand_tensor({2, 3, 4, 4}, rng);
            auto& s = bn.state();
            for (auto& v : s.gamma.values()) v = rng.uniform(0.7, 1.3);
            for (auto& v : s.beta.values()) v = rng.uniform(-0.3, 0.3);
            return fd({&x, &s.gamma, &s.beta},
                      [&] { return readout(bn.forward(x, true), w); }, rng);
        });
        add("batch_norm_eval", kOp, [](Rng& rng) {
            BatchNorm2d<double> bn(3);
            auto& s = bn.state();
            for (auto& v : s.gamma.values()) v = rng.uniform(0.7, 1.3);
            for (auto& v : s.beta.values()) v = rng.uniform(-0.3, 0.3);
            for (auto& v : s.running_mean.values()) v = rng.uniform(-0.5, 0.5);
            for (auto& v : s.running_var.values()) v = rng.uniform(0.5, 1.5);
            Td x = rand_tensor({2, 3, 4, 4}, rng);
            Td w = rand_tensor({2, 3, 4, 4}, rng);
            return fd({&x, &s.gamma, &s.beta},
                      [&] { return readout(bn.forward(x, false), w); }, rng);
        });

        // --- resampling and gates ---
        add("upsample_nearest2x", kOp, [](Rng& rng) {
            Td x = rand_tensor({1, 2, 3, 4}, rng);
            Td w = rand_tensor({1, 2, 6, 8}, rng);
            return fd({&x}, [&] { return readout(upsample_nearest2x(x), w); }, rng);
        });
        add("bilinear_resize", kOp, [](Rng& rng) {
            Td x = rand_tensor({1, 2, 3, 4}, rng);
            Td w = rand_tensor({1, 2, 5, 7}, rng);
            return fd({&x}, [&] { return readout(bilinear_resize(x, 5, 7), w); }, rng);
        });
        add("global_avg_pool", kOp, [](Rng& rng) {
            Td x = rand_tensor({2, 3, 4, 4}, rng);
            Td w = rand_tensor({2, 3, 1, 1}, rng);
            return fd({&x}, [&] { return readout(global_avg_pool(x), w); }, rng);
        });
        add("mul_channel_gate", kOp, [](Rng& rng) {
            Td x = rand_tensor({2, 3, 4, 4}, rng);
            Td g = rand_tensor({2, 3, 1, 1}, rng, 0.1, 0.9);
            Td w = rand_tensor({2, 3, 4, 4}, rng);
            return fd({&x, &g}, [&] { return readout(mul_channel_gate(x, g), w); }, rng);
        });
        add("mul_spatial_gate", kOp, [](Rng& rng) {
            Td x = rand_tensor({2, 3, 4, 4}, rng);
            Td m = rand_tensor({2, 1, 4, 4}, rng, 0.1, 0.9);
            Td w = rand_tensor({2, 3, 4, 4}, rng);
            return fd({&x, &m}, [&] { return readout(mul_spatial_gate(x, m), w); }, rng);
        });

        // --- window machinery ---
        add("cyclic_shift", kOp, [](Rng& rng) {
            Td x = rand_tensor({1, 5, 4, 2}, rng);
            Td w = rand_tensor({1, 5, 4, 2}, rng);
            return fd({&x}, [&] { return readout(cyclic_shift(x, 2, -1), w); }, rng);
        });
        add("window_roundtrip", kOp, [](Rng& rng) {
            WindowLayout lay(6, 5, 4, 2);
            Td x = rand_tensor({2, 6, 5, 3}, rng);
            Td wim = rand_tensor({2 * lay.num_windows(), 16, 3}, rng);
            Td w = rand_tensor({2, 6, 5, 3}, rng);
            return fd({&x},
                      [&] {
                          Td s = cyclic_shift(x, -2, -2);
                          Td win = window_partition(s, lay);
                          win = mul(win, wim);  // break symmetry inside windows
                          Td back = window_reverse(win, lay);
                          return readout(cyclic_shift(back, 2, 2), w);
                      },
                      rng, 6);
        });
        add("add_rel_pos_bias", kOp, [](Rng& rng) {
            const int m = 3, L = 9, heads = 2;
            auto index = relative_position_index(m);
            Td scores = rand_tensor({4, heads, L, L}, rng);
            Td table = rand_tensor({25, heads}, rng);
            Td w = rand_tensor({4, heads, L, L}, rng);
            return fd({&scores, &table},
                      [&] { return readout(add_rel_pos_bias(scores, table, index), w); }, rng);
        });
        add("add_window_mask", kOp, [](Rng& rng) {
            // Probe through softmax, which cancels the -1e9 mask constant; a
            // raw sum would swamp the finite difference with rounding error.
            WindowLayout lay(4, 4, 2, 1);
            Td mask = build_attention_mask<double>(lay);
            Td scores = rand_tensor({2 * lay.num_windows(), 2, 4, 4}, rng);
            Td w = rand_tensor({2 * lay.num_windows(), 2, 4, 4}, rng);
            return fd({&scores},
                      [&] { return readout(softmax(add_window_mask(scores, mask), 3), w); },
                      rng);
        });
        add("window_attention", kMod, [](Rng& rng) {
            WindowAttention<double> wa(6, 2, 2, rng);
            NamedTensors<double> nt;
            wa.collect("wa", nt);
            gc::scramble(nt, rng);
            Td tokens = rand_tensor({6, 4, 6}, rng);
            Td w = rand_tensor({6, 4, 6}, rng);
            auto leaves = gc::param_ptrs(nt);
            leaves.push_back(&tokens);
            Td no_mask;
            return fd(leaves, [&] { return readout(wa.forward(tokens, no_mask), w); }, rng, 3);
        });
        add("window_attention_masked", kMod, [](Rng& rng) {
            WindowLayout lay(4, 4, 2, 1);
            WindowAttention<double> wa(6, 2, 2, rng);
            NamedTensors<double> nt;
            wa.collect("wa", nt);
            gc::scramble(nt, rng);
            Td mask = build_attention_mask<double>(lay);
            Td tokens = rand_tensor({2 * lay.num_windows(), 4, 6}, rng);
            Td w = rand_tensor({2 * lay.num_windows(), 4, 6}, rng);
            auto leaves = gc::param_ptrs(nt);
            leaves.push_back(&tokens);
            return fd(leaves, [&] { return readout(wa.forward(tokens, mask), w); }, rng, 3);
        });

        // --- transformer blocks ---
        add("effn", kMod, [](Rng& rng) {
            Effn<double> effn(6, 2, rng);
            NamedTensors<double> nt;
            effn.collect("effn", nt);
            gc::scramble(nt, rng);
            Td x = rand_tensor({2, 12, 6}, rng, -0.5, 0.5);
            Td w = rand_tensor({2, 12, 6}, rng);
            auto leaves = gc::param_ptrs(nt);
            leaves.push_back(&x);
            return fd(leaves, [&] { return readout(effn.forward(x, 3, 4), w); }, rng, 3);
        });
        add("ffn", kMod, [](Rng& rng) {
            Ffn<double> ffn(5, 2, rng);
            NamedTensors<double> nt;
            ffn.collect("ffn", nt);
            gc::scramble(nt, rng);
            Td x = rand_tensor({2, 7, 5}, rng, -0.5, 0.5);
            Td w = rand_tensor({2, 7, 5}, rng);
            auto leaves = gc::param_ptrs(nt);
            leaves.push_back(&x);
            return fd(leaves, [&] { return readout(ffn.forward(x), w); }, rng, 3);
        });
        add("mwa_block_pair", kMod, [](Rng& rng) {
            MwaBlockPair<double> pair(6, 4, 4, 2, 2, 2, /*use_effn=*/true, rng);
            NamedTensors<double> nt;
            pair.collect("pair", nt);
            gc::scramble(nt, rng);
            Td x = rand_tensor({1, 16, 6}, rng, -0.5, 0.5);
            Td w = rand_tensor({1, 16, 6}, rng);
            auto leaves = gc::param_ptrs(nt);
            leaves.push_back(&x);
            return fd(leaves, [&] { return readout(pair.forward(x), w); }, rng, 3);
        });

        // --- encoder pieces ---
        add("patch_embed", kMod, [](Rng& rng) {
            PatchEmbed<double> pe(3, 6, 4, rng);
            NamedTensors<double> nt;
            pe.collect("pe", nt);
            gc::scramble(nt, rng);
            Td img = rand_tensor({1, 3, 8, 8}, rng);
            Td w = rand_tensor({1, 4, 6}, rng);
            auto leaves = gc::param_ptrs(nt);
            leaves.push_back(&img);
            return fd(leaves, [&] { return readout(pe.forward(img), w); }, rng, 3);
        });
        add("patch_merging", kMod, [](Rng& rng) {
            PatchMerging<double> pm(6, rng);
            NamedTensors<double> nt;
            pm.collect("pm", nt);
            gc::scramble(nt, rng);
            Td x = rand_tensor({1, 16, 6}, rng);
            Td w = rand_tensor({1, 4, 12}, rng);
            auto leaves = gc::param_ptrs(nt);
            leaves.push_back(&x);
            return fd(leaves, [&] { return readout(pm.forward(x, 4, 4), w); }, rng, 3);
        });

        // --- decoder pieces ---
        add("med_dspp", kMod, [](Rng& rng) {
            MedDspp<double> dspp(4, {1, 3}, rng);
            NamedTensors<double> nt;
            dspp.collect("dspp", nt);
            gc::scramble(nt, rng);
            gc::fix_offsets(dspp);
            Td x = rand_tensor({1, 4, 6, 6}, rng);
            Td w = rand_tensor({1, 4, 6, 6}, rng);
            auto leaves = gc::param_ptrs(nt);
            leaves.push_back(&x);
            return fd(leaves, [&] { return readout(dspp.forward(x, true), w); }, rng, 3);
        });
        add("channel_attention", kMod, [](Rng& rng) {
            ChannelAttention<double> ca(8, rng);
            NamedTensors<double> nt;
            ca.collect("ca", nt);
            gc::scramble(nt, rng);
            Td x = rand_tensor({2, 8, 3, 3}, rng);
            Td w = rand_tensor({2, 8, 3, 3}, rng);
            auto leaves = gc::param_ptrs(nt);
            leaves.push_back(&x);
            return fd(leaves, [&] { return readout(ca.forward(x), w); }, rng, 3);
        });
        add("spatial_attention", kMod, [](Rng& rng) {
            SpatialAttention<double> sa(4, rng);
            NamedTensors<double> nt;
            sa.collect("sa", nt);
            gc::scramble(nt, rng);
            Td x = rand_tensor({1, 4, 6, 6}, rng);
            Td w = rand_tensor({1, 4, 6, 6}, rng);
            auto leaves = gc::param_ptrs(nt);
            leaves.push_back(&x);
            return fd(leaves, [&] { return readout(sa.forward(x), w); }, rng, 3);
        });
        add("mff_stage", kMod, [](Rng& rng) {
            MffStage<double> stage(8, 4, 4, {1, 2}, rng);
            NamedTensors<double> nt;
            stage.collect("stage", nt);
            gc::scramble(nt, rng);
            gc::fix_offsets(stage.dspp());
            Td below = rand_tensor({1, 8, 3, 3}, rng);
            Td skip = rand_tensor({1, 4, 6, 6}, rng);
            Td w = rand_tensor({1, 4, 6, 6}, rng);
            auto leaves = gc::param_ptrs(nt);
            leaves.push_back(&below);
            leaves.push_back(&skip);
            return fd(leaves,
                      [&] { return readout(stage.forward(below, skip, true), w); }, rng, 2);
        });
        add("patch_expand", kMod, [](Rng& rng) {
            PatchExpand<double> px(8, rng);
            NamedTensors<double> nt;
            px.collect("px", nt);
            gc::scramble(nt, rng);
            Td x = rand_tensor({1, 4, 8}, rng);
            Td w = rand_tensor({1, 16, 4}, rng);
            auto leaves = gc::param_ptrs(nt);
            leaves.push_back(&x);
            return fd(leaves, [&] { return readout(px.forward(x, 2, 2), w); }, rng, 3);
        });
        add("plain_stage", kMod, [](Rng& rng) {
            PlainStage<double> ps(8, 4, 4, 2, 2, 2, 1, rng);
            NamedTensors<double> nt;
            ps.collect("ps", nt);
            gc::scramble(nt, rng);
            Td below = rand_tensor({1, 4, 8}, rng);
            Td skip = rand_tensor({1, 16, 4}, rng);
            Td w = rand_tensor({1, 16, 4}, rng);
            auto leaves = gc::param_ptrs(nt);
            leaves.push_back(&below);
            leaves.push_back(&skip);
            return fd(leaves, [&] { return readout(ps.forward(below, skip), w); }, rng, 3);
        });

        // --- losses ---
        auto loss_check = [this, kOp](const std::string& name, auto lossfn) {
            add(name, kOp, [lossfn](Rng& rng) {
                Td logits = gc::rand_tensor({1, 2, 4, 4}, rng, -1.5, 1.5);
                std::vector<int> labels(16);
                for (auto& l : labels) l = rng.uniform_int(0, 1);
                Td target = reshape(to_one_hot<double>(labels, 2, 4, 4), {1, 2, 4, 4});
                return gc::fd({&logits}, [&] { return lossfn(logits, target); }, rng, 8);
            });
        };
        loss_check("bce_loss",
                   [](const Td& z, const Td& t) { return bce_loss(z, t); });
        loss_check("dice_loss",
                   [](const Td& z, const Td& t) { return dice_loss(z, t); });
        loss_check("bce_dice_loss",
                   [](const Td& z, const Td& t) { return bce_dice_loss(z, t); });

        // --- whole network, micro scale ---
        add("end_to_end_micro", kE2E, [](Rng& rng) {
            ModelConfig mc;
            mc.img_size = 32;
            mc.patch_size = 4;
            mc.stage_widths = {8, 16, 32, 64};
            mc.stage_depths = {2, 2, 2, 2};
            mc.heads_per_stage = {1, 2, 4, 8};
            mc.window_size = 4;
            mc.effn_ratio = 2;
            mc.num_classes = 2;
            HBFormer<double> model(mc, 42);
            gc::scramble(model.named(), rng);
            for (int s = 0; s < 3; ++s)
                gc::fix_offsets(model.mff_decoder().stage(s).dspp());
            Td img = rand_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
            std::vector<int> labels(32 * 32);
            for (auto& l : labels) l = rng.uniform_int(0, 1);
            Td target = reshape(to_one_hot<double>(labels, 2, 32, 32), {1, 2, 32, 32});
            auto leaves = gc::select_params(
                model.named(),
                {"enc.patch_embed.proj.weight", "enc.stage0.pair0.w.attn.qkv.weight",
                 "enc.stage0.pair0.sw.attn.rel_bias", "enc.stage0.pair0.w.effn.dw.weight",
                 "enc.merge0.reduce.weight", "enc.stage3.pair0.w.norm1.gamma",
                 "dec.stage0.reduce.weight", "dec.stage0.dspp.branch1.offset.bias",
                 "dec.stage0.dspp.branch0.deform.weight", "dec.stage1.bn1.gamma",
                 "dec.stage2.dspp.fuse.weight", "dec.head.conv.weight"});
            leaves.push_back(&img);
            return fd(leaves,
                      [&] { return bce_dice_loss(model.forward(img, true), target); }, rng, 2);
        });
    }

    std::uint64_t seed_;
    std::vector<Check> checks_;
};

}  // namespace hbf
