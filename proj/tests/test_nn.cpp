// Convolution variants, batch norm, activations, resizing, and gates
// against brute-force oracles.
#include <gtest/gtest.h>

#include <cmath>

#include "hbformer/nn.hpp"

namespace {

using hbf::BatchNormState;
using hbf::Conv2dParams;
using hbf::Rng;
using hbf::Tensor;

// Direct six-loop convolution, the reference for every conv variant.
Tensor<double> conv_oracle(const Tensor<double>& x, const Conv2dParams<double>& p) {
    const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = p.weight.dim(0), cpg = p.weight.dim(1);
    const int kh = p.weight.dim(2), kw = p.weight.dim(3);
    const int Ho = (H + 2 * p.padding - ((kh - 1) * p.dilation + 1)) / p.stride + 1;
    const int Wo = (W + 2 * p.padding - ((kw - 1) * p.dilation + 1)) / p.stride + 1;
    const int ocg = Cout / p.groups;
    Tensor<double> out({B, Cout, Ho, Wo});
    for (int b = 0; b < B; ++b)
        for (int oc = 0; oc < Cout; ++oc) {
            const int g = oc / ocg;
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    double acc = p.bias.defined() ? p.bias.data()[oc] : 0.0;
                    for (int ic = 0; ic < cpg; ++ic)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * p.stride - p.padding + ky * p.dilation;
                                const int ix = ox * p.stride - p.padding + kx * p.dilation;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.data()[((static_cast<size_t>(b) * Cin + g * cpg + ic) *
                                                     H +
                                                 iy) *
                                                    W +
                                                ix] *
                                       p.weight.data()[((static_cast<size_t>(oc) * cpg + ic) *
                                                            kh +
                                                        ky) *
                                                           kw +
                                                       kx];
                            }
                    out.data()[((static_cast<size_t>(b) * Cout + oc) * Ho + oy) * Wo + ox] = acc;
                }
        }
    return out;
}

void expect_close(const Tensor<double>& a, const Tensor<double>& b, double tol) {
    ASSERT_EQ(a.shape(), b.shape());
    for (size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], tol);
}

Conv2dParams<double> rand_conv(int cin, int cout, int k, int stride, int pad, int dil,
                               int groups, Rng& rng) {
    Conv2dParams<double> p;
    p.weight = Tensor<double>({cout, cin / groups, k, k});
    p.bias = Tensor<double>({cout});
    hbf::fill_uniform_(p.weight, rng, -1, 1);
    hbf::fill_uniform_(p.bias, rng, -1, 1);
    p.stride = stride;
    p.padding = pad;
    p.dilation = dil;
    p.groups = groups;
    return p;
}

TEST(Conv2d, OneByOneIdentity) {
    Rng rng(1);
    Tensor<double> x({1, 2, 3, 3});
    hbf::fill_uniform_(x, rng, -1, 1);
    Conv2dParams<double> p;
    p.weight = Tensor<double>({2, 2, 1, 1}, {1, 0, 0, 1});  // identity channel mix
    Tensor<double> y = hbf::conv2d(x, p);
    expect_close(y, x, 0.0);
}

TEST(Conv2d, OnesKernelCountsNeighbors) {
    // 3x3 ones kernel, pad 1, on a 4x4 ones image: interior 9, edge 6, corner 4
    Tensor<double> x = Tensor<double>::ones({1, 1, 4, 4});
    Conv2dParams<double> p;
    p.weight = Tensor<double>::ones({1, 1, 3, 3});
    p.padding = 1;
    Tensor<double> y = hbf::conv2d(x, p);
    auto at = [&](int r, int c) { return y.data()[r * 4 + c]; };
    EXPECT_EQ(at(1, 1), 9.0);
    EXPECT_EQ(at(1, 2), 9.0);
    EXPECT_EQ(at(0, 1), 6.0);
    EXPECT_EQ(at(2, 0), 6.0);
    EXPECT_EQ(at(0, 0), 4.0);
    EXPECT_EQ(at(3, 3), 4.0);
}

TEST(Conv2d, DilationSweepMatchesOracle) {
    Rng rng(2);
    Tensor<double> x({2, 3, 40, 40});
    hbf::fill_uniform_(x, rng, -1, 1);
    for (int k : {1, 3})
        for (int dil : {1, 6, 12, 18}) {
            if (k == 1 && dil > 1) continue;  // dilation is a no-op for 1x1
            const int pad = (k - 1) / 2 * dil;
            Conv2dParams<double> p = rand_conv(3, 4, k, 1, pad, dil, 1, rng);
            expect_close(hbf::conv2d(x, p), conv_oracle(x, p), 1e-10);
        }
}

TEST(Conv2d, StrideMatchesOracle) {
    Rng rng(3);
    Tensor<double> x({1, 2, 9, 9});
    hbf::fill_uniform_(x, rng, -1, 1);
    Conv2dParams<double> p2 = rand_conv(2, 3, 3, 2, 1, 1, 1, rng);  // (9+2-3)/2+1 = 5
    expect_close(hbf::conv2d(x, p2), conv_oracle(x, p2), 1e-10);
    Conv2dParams<double> p3 = rand_conv(2, 3, 3, 3, 0, 1, 1, rng);  // (9-3)/3+1 = 3
    expect_close(hbf::conv2d(x, p3), conv_oracle(x, p3), 1e-10);

    Tensor<double> x8({1, 2, 8, 8});
    hbf::fill_uniform_(x8, rng, -1, 1);
    Conv2dParams<double> p4 = rand_conv(2, 5, 4, 4, 0, 1, 1, rng);  // patch-embed shape
    expect_close(hbf::conv2d(x8, p4), conv_oracle(x8, p4), 1e-10);
}

TEST(Conv2d, GroupedEqualsBlockDiagonal) {
    Rng rng(4);
    Tensor<double> x({1, 4, 6, 6});
    hbf::fill_uniform_(x, rng, -1, 1);
    Conv2dParams<double> pg = rand_conv(4, 6, 3, 1, 1, 1, 2, rng);
    // embed the grouped weight into a dense kernel with zero cross-group taps
    Conv2dParams<double> pd;
    pd.weight = Tensor<double>({6, 4, 3, 3});
    pd.bias = pg.bias;
    pd.padding = 1;
    for (int oc = 0; oc < 6; ++oc) {
        const int g = oc / 3;
        for (int ic = 0; ic < 2; ++ic)
            for (int t = 0; t < 9; ++t)
                pd.weight.data()[((oc * 4) + g * 2 + ic) * 9 + t] =
                    pg.weight.data()[((oc * 2) + ic) * 9 + t];
    }
    expect_close(hbf::conv2d(x, pg), hbf::conv2d(x, pd), 1e-12);
    expect_close(hbf::conv2d(x, pg), conv_oracle(x, pg), 1e-12);
}

TEST(DepthwiseConv2d, PerChannelIdentityKernels) {
    Rng rng(5);
    Tensor<double> x({2, 3, 5, 5});
    hbf::fill_uniform_(x, rng, -1, 1);
    Conv2dParams<double> p;
    p.weight = Tensor<double>({3, 1, 3, 3});
    for (int c = 0; c < 3; ++c) p.weight.data()[c * 9 + 4] = 1.0;  // center tap only
    p.padding = 1;
    p.groups = 3;
    expect_close(hbf::depthwise_conv2d(x, p), x, 0.0);
}

TEST(DepthwiseConv2d, EqualsGroupedOracle) {
    Rng rng(6);
    Tensor<double> x({1, 4, 7, 7});
    hbf::fill_uniform_(x, rng, -1, 1);
    Conv2dParams<double> p = rand_conv(4, 4, 3, 1, 1, 1, 4, rng);
    expect_close(hbf::depthwise_conv2d(x, p), conv_oracle(x, p), 1e-12);
}

TEST(DepthwisePlusPointwise, FewerParamsThanDense) {
    // the EFFN trade: dw 3x3 + pw 1x1 vs a dense 3x3 at C=384
    const long c = 384;
    const long dw_pw = c * 9 + c * c;      // weights only
    const long dense = c * c * 9;
    EXPECT_LT(dw_pw, dense);
}

TEST(DeformableConv2d, ZeroOffsetsEqualConv) {
    Rng rng(7);
    Tensor<double> x({2, 3, 8, 8});
    hbf::fill_uniform_(x, rng, -1, 1);
    for (int dil : {1, 2}) {
        Conv2dParams<double> p = rand_conv(3, 4, 3, 1, dil, dil, 1, rng);
        Tensor<double> off({2, 18, 8, 8});
        expect_close(hbf::deformable_conv2d(x, p, off), hbf::conv2d(x, p), 1e-12);
    }
}

TEST(DeformableConv2d, IntegerOffsetShiftsImage) {
    // identity kernel + offset (dy=0, dx=+1) reads the right neighbor:
    // output row shifts left, the last column samples out of bounds to zero
    Tensor<double> x({1, 1, 3, 4});
    for (size_t i = 0; i < x.numel(); ++i) x.data()[i] = static_cast<double>(i + 1);
    Conv2dParams<double> p;
    p.weight = Tensor<double>({1, 1, 3, 3});
    p.weight.data()[4] = 1.0;
    p.padding = 1;
    Tensor<double> off({1, 18, 3, 4});
    // offsets interleave (dy, dx) per tap; tap 4 is the center
    for (int y = 0; y < 3; ++y)
        for (int xo = 0; xo < 4; ++xo) off.data()[(2 * 4 + 1) * 12 + y * 4 + xo] = 1.0;
    Tensor<double> y = hbf::deformable_conv2d(x, p, off);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c)
            EXPECT_DOUBLE_EQ(y.data()[r * 4 + c], x.data()[r * 4 + c + 1]);
        EXPECT_DOUBLE_EQ(y.data()[r * 4 + 3], 0.0);
    }
}

TEST(DeformableConv2d, HalfOffsetAveragesNeighbors) {
    Rng rng(8);
    Tensor<double> x({1, 1, 3, 5});
    hbf::fill_uniform_(x, rng, -1, 1);
    Conv2dParams<double> p;
    p.weight = Tensor<double>({1, 1, 3, 3});
    p.weight.data()[4] = 1.0;
    p.padding = 1;
    Tensor<double> off({1, 18, 3, 5});
    for (int i = 0; i < 15; ++i) off.data()[(2 * 4 + 1) * 15 + i] = 0.5;
    Tensor<double> y = hbf::deformable_conv2d(x, p, off);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c + 1 < 5; ++c)
            EXPECT_NEAR(y.data()[r * 5 + c], 0.5 * (x.data()[r * 5 + c] + x.data()[r * 5 + c + 1]),
                        1e-12);
}

TEST(BatchNorm, TrainingNormalizesBatch) {
    Rng rng(9);
    Tensor<double> x({4, 2, 5, 5});
    hbf::fill_uniform_(x, rng, -3, 3);
    BatchNormState<double> s;
    s.gamma = Tensor<double>::ones({2});
    s.beta = Tensor<double>({2});
    s.running_mean = Tensor<double>({2});
    s.running_var = Tensor<double>::ones({2});
    Tensor<double> y = hbf::batch_norm(x, s, /*training=*/true);
    const size_t per_c = 4 * 25;
    for (int c = 0; c < 2; ++c) {
        double m = 0, v = 0;
        for (int b = 0; b < 4; ++b)
            for (int i = 0; i < 25; ++i) m += y.data()[(b * 2 + c) * 25 + i];
        m /= per_c;
        for (int b = 0; b < 4; ++b)
            for (int i = 0; i < 25; ++i) {
                const double d = y.data()[(b * 2 + c) * 25 + i] - m;
                v += d * d;
            }
        v /= per_c;
        EXPECT_NEAR(m, 0.0, 1e-5);
        EXPECT_NEAR(v, 1.0, 1e-3);
    }
}

TEST(BatchNorm, EvalIsAffineInRunningStats) {
    Rng rng(10);
    Tensor<double> x({1, 1, 2, 2});
    hbf::fill_uniform_(x, rng, -1, 1);
    BatchNormState<double> s;
    s.gamma = Tensor<double>::full({1}, 2.0);
    s.beta = Tensor<double>::full({1}, 0.5);
    s.running_mean = Tensor<double>({1});           // 0
    s.running_var = Tensor<double>::ones({1});      // 1
    Tensor<double> y = hbf::batch_norm(x, s, /*training=*/false);
    const double inv = 1.0 / std::sqrt(1.0 + s.eps);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(y.data()[i], 2.0 * x.data()[i] * inv + 0.5, 1e-12);
}

TEST(BatchNorm, RunningStatsFollowEmaOracle) {
    Rng rng(11);
    BatchNormState<double> s;
    s.gamma = Tensor<double>::ones({1});
    s.beta = Tensor<double>({1});
    s.running_mean = Tensor<double>({1});
    s.running_var = Tensor<double>::ones({1});
    double rm = 0.0, rv = 1.0;
    for (int step = 0; step < 3; ++step) {
        Tensor<double> x({2, 1, 3, 3});
        hbf::fill_uniform_(x, rng, -2, 2);
        double mu = 0, var = 0;
        for (size_t i = 0; i < x.numel(); ++i) mu += x.data()[i];
        mu /= x.numel();
        for (size_t i = 0; i < x.numel(); ++i) {
            const double d = x.data()[i] - mu;
            var += d * d;
        }
        var /= x.numel();  // biased convention
        rm = (1.0 - s.momentum) * rm + s.momentum * mu;
        rv = (1.0 - s.momentum) * rv + s.momentum * var;
        hbf::batch_norm(x, s, /*training=*/true);
        EXPECT_NEAR(s.running_mean.data()[0], rm, 1e-12);
        EXPECT_NEAR(s.running_var.data()[0], rv, 1e-12);
    }
}

TEST(Activations, Anchors) {
    Tensor<double> x({4}, {0.0, -1.0, 1.0, 3.0});
    Tensor<double> l = hbf::leaky_relu(x, 0.01);
    EXPECT_DOUBLE_EQ(l.data()[0], 0.0);
    EXPECT_DOUBLE_EQ(l.data()[1], -0.01);
    EXPECT_DOUBLE_EQ(l.data()[2], 1.0);
    EXPECT_DOUBLE_EQ(l.data()[3], 3.0);
    Tensor<double> g = hbf::gelu(x);
    EXPECT_DOUBLE_EQ(g.data()[0], 0.0);
    // x * Phi(x) with the exact erf form
    EXPECT_NEAR(g.data()[2], 0.8413447460685429, 1e-12);
    EXPECT_NEAR(g.data()[1], -1.0 + 0.8413447460685429, 1e-12);
}

TEST(Resize, NearestDoubling) {
    Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor<double> y = hbf::upsample_nearest2x(x);
    EXPECT_EQ(y.values(), (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(Resize, BilinearIdentityAtSameSize) {
    Rng rng(12);
    Tensor<double> x({1, 2, 5, 7});
    hbf::fill_uniform_(x, rng, -1, 1);
    expect_close(hbf::bilinear_resize(x, 5, 7), x, 1e-12);
}

TEST(Resize, BilinearPreservesLinearRamps) {
    // a plane linear in x stays linear after 2x upsampling (interior pixels)
    const int H = 8, W = 8;
    Tensor<double> x({1, 1, H, W});
    for (int y = 0; y < H; ++y)
        for (int c = 0; c < W; ++c) x.data()[y * W + c] = 0.25 * c + 0.5 * y;
    Tensor<double> up = hbf::bilinear_resize(x, 2 * H, 2 * W);
    // interior second differences along each axis vanish for a linear map
    for (int y = 2; y < 2 * H - 2; ++y)
        for (int c = 2; c < 2 * W - 2; ++c) {
            const double d2x = up.data()[y * 2 * W + c + 1] - 2 * up.data()[y * 2 * W + c] +
                               up.data()[y * 2 * W + c - 1];
            const double d2y = up.data()[(y + 1) * 2 * W + c] - 2 * up.data()[y * 2 * W + c] +
                               up.data()[(y - 1) * 2 * W + c];
            EXPECT_NEAR(d2x, 0.0, 1e-6);
            EXPECT_NEAR(d2y, 0.0, 1e-6);
        }
}

TEST(Pooling, GlobalAvgPoolIsSpatialMean) {
    Rng rng(13);
    Tensor<double> x({2, 3, 4, 4});
    hbf::fill_uniform_(x, rng, -1, 1);
    Tensor<double> y = hbf::global_avg_pool(x);
    ASSERT_EQ(y.shape(), (hbf::Shape{2, 3, 1, 1}));
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 3; ++c) {
            double m = 0;
            for (int i = 0; i < 16; ++i) m += x.data()[(b * 3 + c) * 16 + i];
            EXPECT_NEAR(y.data()[b * 3 + c], m / 16.0, 1e-12);
        }
}

TEST(Gates, ChannelAndSpatialBroadcasts) {
    Tensor<double> x = Tensor<double>::ones({1, 2, 2, 2});
    Tensor<double> cg({1, 2, 1, 1}, {0.25, 0.5});
    Tensor<double> yc = hbf::mul_channel_gate(x, cg);
    EXPECT_EQ(yc.values(), (std::vector<double>{0.25, 0.25, 0.25, 0.25, 0.5, 0.5, 0.5, 0.5}));
    Tensor<double> sg({1, 1, 2, 2}, {0.1, 0.2, 0.3, 0.4});
    Tensor<double> ys = hbf::mul_spatial_gate(x, sg);
    EXPECT_EQ(ys.values(), (std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.1, 0.2, 0.3, 0.4}));
}

}  // namespace
