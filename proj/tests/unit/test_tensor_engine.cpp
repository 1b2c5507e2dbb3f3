// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "op_catalog.hpp"
#include "oracles.hpp"
#include "wbfuse/kernels.hpp"
#include "wbfuse/optim.hpp"
#include "wbfuse/tape.hpp"

namespace k = wbf::kernels;
using wbf::Rng;
using wbf::Shape;
using wbf::Tape;
using wbf::Tensor;
using wbf::Var;
using wbf::testing::as_double;
using wbf::testing::gradient_check;
using wbf::testing::random_tensor;

// ---- conv2d -----------------------------------------------------------------

TEST(Conv2d, IdentityKernelIsExact) {
    Rng rng(1);
    const auto x = random_tensor<float>({4, 5, 3}, rng);
    Tensor<float> kern({1, 1, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) kern[c * 3 + c] = 1.0f;
    const auto y = k::conv2d(x, kern, Tensor<float>({3}));
    EXPECT_EQ(y, x);

    Tensor<float> k3({3, 3, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) k3[((1 * 3 + 1) * 3 + c) * 3 + c] = 1.0f;
    EXPECT_EQ(k::conv2d(x, k3, Tensor<float>({3})), x);
}

TEST(Conv2d, SinglePixelIdentity) {
    const Tensor<float> x({1, 1, 1}, std::vector<float>{0.75f});
    const Tensor<float> kern({1, 1, 1, 1}, std::vector<float>{1.0f});
    EXPECT_EQ(k::conv2d(x, kern, Tensor<float>({1}))[0], 0.75f);
}

TEST(Conv2d, ZeroInputGivesBias) {
    Rng rng(2);
    const auto kern = random_tensor<float>({3, 3, 2, 4}, rng);
    const Tensor<float> b({4}, std::vector<float>{0.5f, -1.0f, 2.0f, 0.0f});
    const auto y = k::conv2d(Tensor<float>({3, 3, 2}), kern, b);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], b[i % 4]);
}

TEST(Conv2d, MatchesLoopOracle) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        for (std::size_t ks : {1u, 3u}) {
            const auto x = random_tensor<double>({5, 5, 2}, rng);
            const auto kern = random_tensor<double>({ks, ks, 2, 3}, rng);
            const auto b = random_tensor<double>({3}, rng);
            const auto y = k::conv2d(x, kern, b);
            const auto ref = wbf::testing::loop_conv2d(as_double(x), 5, 5, 2, as_double(kern), ks, 3, as_double(b));
            for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-6);

            const auto xf = x.cast<float>();
            const auto yf = k::conv2d(xf, kern.cast<float>(), b.cast<float>());
            for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(yf[i], ref[i], 1e-5);
        }
    }
}

TEST(Conv2d, ShapeErrorsNameTheDimension) {
    const Tensor<float> x({4, 4, 2});
    try {
        k::conv2d(x, Tensor<float>({3, 3, 3, 1}), Tensor<float>({1}));
        FAIL() << "expected invalid_argument";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("input channels"), std::string::npos) << e.what();
    }
    EXPECT_THROW(k::conv2d(x, Tensor<float>({2, 2, 2, 1}), Tensor<float>({1})), std::invalid_argument);
    EXPECT_THROW(k::conv2d(x, Tensor<float>({3, 3, 2, 2}), Tensor<float>({3})), std::invalid_argument);
}

// ---- depthwise ----------------------------------------------------------------

TEST(DepthwiseConv, CenterKernelIsIdentity) {
    Rng rng(3);
    const auto x = random_tensor<float>({4, 6, 5}, rng);
    Tensor<float> kern({3, 3, 5});
    for (std::size_t c = 0; c < 5; ++c) kern[(1 * 3 + 1) * 5 + c] = 1.0f;
    EXPECT_EQ(k::depthwise_conv3x3(x, kern, Tensor<float>({5})), x);
}

TEST(DepthwiseConv, BoxFilterKeepsInteriorConstant) {
    const Tensor<double> x({5, 5, 2}, 0.4);
    const Tensor<double> kern({3, 3, 2}, 1.0 / 9.0);
    const auto y = k::depthwise_conv3x3(x, kern, Tensor<double>({2}));
    // Zero padding darkens the border; the interior keeps the constant.
    for (std::size_t h = 1; h < 4; ++h)
        for (std::size_t w = 1; w < 4; ++w)
            for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(y[(h * 5 + w) * 2 + c], 0.4, 1e-12);
}

TEST(DepthwiseConv, MatchesLoopOracle) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed + 10);
        const auto x = random_tensor<double>({6, 4, 3}, rng);
        const auto kern = random_tensor<double>({3, 3, 3}, rng);
        const auto b = random_tensor<double>({3}, rng);
        const auto y = k::depthwise_conv3x3(x, kern, b);
        const auto ref = wbf::testing::loop_depthwise(as_double(x), 6, 4, 3, as_double(kern), as_double(b));
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-6);
    }
}

TEST(DepthwiseConv, RejectsChannelMismatch) {
    EXPECT_THROW(k::depthwise_conv3x3(Tensor<float>({3, 3, 2}), Tensor<float>({3, 3, 3}), Tensor<float>({2})),
                 std::invalid_argument);
}

// ---- softmax ----------------------------------------------------------------

TEST(Softmax, UniformInput) {
    const auto y = k::softmax(Tensor<double>({1, 3}), 1);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
    const auto y = k::softmax(Tensor<float>({1, 2}, std::vector<float>{1000.0f, 0.0f}), 1);
    EXPECT_EQ(y[0], 1.0f);
    EXPECT_EQ(y[1], 0.0f);
    EXPECT_TRUE(std::isfinite(y[0]));
}

TEST(Softmax, SlicesSumToOne) {
    Rng rng(4);
    for (std::size_t axis : {0u, 1u}) {
        const auto x = random_tensor<float>({5, 7}, rng, -8.0, 8.0);
        const auto y = k::softmax(x, axis);
        const std::size_t outer = axis == 0 ? 7 : 5, inner = axis == 0 ? 5 : 7;
        for (std::size_t o = 0; o < outer; ++o) {
            double s = 0.0;
            for (std::size_t i = 0; i < inner; ++i) {
                const float v = axis == 0 ? y[i * 7 + o] : y[o * 7 + i];
                EXPECT_GT(v, 0.0f);
                EXPECT_LT(v, 1.0f);
                s += v;
            }
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(Softmax, ShiftInvariance) {
    Rng rng(5);
    // Dyadic inputs and shifts keep the max-subtracted logits exact.
    Tensor<float> x({3, 4});
    for (auto& v : x.values()) v = static_cast<float>(static_cast<int>(rng.index(64)) - 32) / 8.0f;
    const auto base = k::softmax(x, 1);
    for (float shift : {1.0f, -3.5f, 100.0f}) {
        Tensor<float> xs = x;
        for (auto& v : xs.values()) v += shift;
        EXPECT_EQ(k::softmax(xs, 1), base);
    }
    // General shifts agree to rounding.
    const auto xr = random_tensor<double>({3, 4}, rng);
    Tensor<double> shifted = xr;
    for (auto& v : shifted.values()) v += 0.3183;
    const auto a = k::softmax(xr, 1), b = k::softmax(shifted, 1);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Softmax, RejectsBadAxis) { EXPECT_THROW(k::softmax(Tensor<float>({2, 2}), 2), std::invalid_argument); }

// ---- layer norm ---------------------------------------------------------------

TEST(LayerNorm, ConstantPixelGivesBeta) {
    const Tensor<double> x({1, 1, 4}, 2.5);
    const Tensor<double> gamma({4}, 3.0);
    const Tensor<double> beta({4}, std::vector<double>{0.1, 0.2, 0.3, 0.4});
    const auto y = k::layer_norm(x, gamma, beta);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y[c], beta[c], 1e-12);
}

TEST(LayerNorm, TwoChannelExample) {
    const Tensor<double> x({1, 1, 2}, std::vector<double>{1.0, 3.0});
    const auto y = k::layer_norm(x, Tensor<double>({2}, 1.0), Tensor<double>({2}));
    EXPECT_NEAR(y[0], -1.0, 1e-6);
    EXPECT_NEAR(y[1], 1.0, 1e-6);
}

TEST(LayerNorm, MatchesDefinition) {
    Rng rng(6);
    const std::size_t C = 5;
    const auto x = random_tensor<double>({3, 4, C}, rng, -2.0, 2.0);
    const auto g = random_tensor<double>({C}, rng);
    const auto b = random_tensor<double>({C}, rng);
    const auto y = k::layer_norm(x, g, b);
    for (std::size_t p = 0; p < 12; ++p) {
        double mean = 0.0, var = 0.0;
        for (std::size_t c = 0; c < C; ++c) mean += x[p * C + c];
        mean /= C;
        for (std::size_t c = 0; c < C; ++c) var += (x[p * C + c] - mean) * (x[p * C + c] - mean);
        var /= C;
        for (std::size_t c = 0; c < C; ++c) {
            const double ref = (x[p * C + c] - mean) / std::sqrt(var + 1e-6) * g[c] + b[c];
            EXPECT_NEAR(y[p * C + c], ref, 1e-6);
        }
    }
}

// ---- attention helpers ------------------------------------------------------

TEST(Attention, NormalizeSpatialGivesUnitColumns) {
    Rng rng(7);
    const auto x = random_tensor<double>({3, 3, 4}, rng);
    const auto y = k::normalize_spatial(x);
    for (std::size_t c = 0; c < 4; ++c) {
        double s = 0.0;
        for (std::size_t p = 0; p < 9; ++p) s += y[p * 4 + c] * y[p * 4 + c];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Attention, GramAndMixMatchLoops) {
    Rng rng(8);
    const auto kk = random_tensor<double>({2, 3, 4}, rng);
    const auto q = random_tensor<double>({2, 3, 4}, rng);
    const auto s = k::channel_gram(kk, q);
    ASSERT_EQ(s.shape(), (Shape{4, 4}));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double ref = 0.0;
            for (std::size_t p = 0; p < 6; ++p) ref += kk[p * 4 + i] * q[p * 4 + j];
            EXPECT_NEAR(s[i * 4 + j], ref, 1e-12);
        }
    const auto y = k::mix_channels(q, s);
    for (std::size_t p = 0; p < 6; ++p)
        for (std::size_t i = 0; i < 4; ++i) {
            double ref = 0.0;
            for (std::size_t j = 0; j < 4; ++j) ref += s[i * 4 + j] * q[p * 4 + j];
            EXPECT_NEAR(y[p * 4 + i], ref, 1e-12);
        }
}

TEST(Attention, SliceConcatRoundTrip) {
    Rng rng(9);
    const auto x = random_tensor<float>({3, 2, 6}, rng);
    const auto a = k::slice_channels(x, 0, 2), b = k::slice_channels(x, 2, 4);
    const Tensor<float>* parts[] = {&a, &b};
    EXPECT_EQ(k::concat_channels<float>(parts), x);
    EXPECT_THROW(k::slice_channels(x, 5, 2), std::invalid_argument);
}

// ---- tape -------------------------------------------------------------------

TEST(Tape, SumGradientIsOnes) {
    Tape<double> tape;
    Rng rng(10);
    const Var x = tape.leaf(random_tensor<double>({2, 3}, rng), true);
    tape.backward(tape.sum(x));
    for (double g : tape.grad(x).values()) EXPECT_EQ(g, 1.0);
}

TEST(Tape, SquareGradientIsTwoX) {
    Tape<double> tape;
    Rng rng(11);
    const Var x = tape.leaf(random_tensor<double>({4}, rng), true);
    tape.backward(tape.sum(tape.mul(x, x)));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(tape.grad(x)[i], 2.0 * tape.value(x)[i]);
}

TEST(Tape, FanOutAccumulates) {
    Tape<double> tape;
    const Var x = tape.leaf(Tensor<double>({1}, std::vector<double>{3.0}), true);
    const Var y = tape.add(tape.mul(x, x), x);  // x^2 + x
    tape.backward(tape.sum(y));
    EXPECT_DOUBLE_EQ(tape.grad(x)[0], 7.0);
}

TEST(Tape, NonScalarLossRejected) {
    Tape<float> tape;
    const Var x = tape.leaf(Tensor<float>({2}), true);
    EXPECT_THROW(tape.backward(x), std::invalid_argument);
}

TEST(Tape, ConstantsHaveNoGradient) {
    Tape<float> tape;
    const Var c = tape.leaf(Tensor<float>({2}, 1.0f), false);
    const Var x = tape.leaf(Tensor<float>({2}, 2.0f), true);
    tape.backward(tape.sum(tape.mul(c, x)));
    EXPECT_FALSE(tape.requires_grad(c));
    EXPECT_THROW(tape.grad(c), std::logic_error);
}

TEST(Tape, ReplayIsBitIdentical) {
    Rng rng(12);
    const auto x0 = random_tensor<float>({4, 4, 3}, rng);
    const auto kern = random_tensor<float>({3, 3, 3, 3}, rng);
    auto run = [&] {
        Tape<float> tape;
        const Var x = tape.leaf(x0, true);
        const Var kv = tape.leaf(kern, true);
        const Var y = tape.gelu(tape.conv2d(x, kv, tape.leaf(Tensor<float>({3}))));
        tape.backward(tape.mean(tape.mul(y, y)));
        return std::make_pair(tape.grad(x), tape.grad(kv));
    };
    EXPECT_EQ(run(), run());
}

// ---- gradient checks, one per op, both precisions -------------------------

namespace {

template <class T>
struct Precision;
template <>
struct Precision<float> {
    static constexpr double h = 1e-3, tol = 1e-3;
};
template <>
struct Precision<double> {
    static constexpr double h = 1e-5, tol = 1e-5;
};

template <class T>
void expect_gradients(const std::vector<Tensor<T>>& in, const wbf::testing::GraphBuilder<T>& build, std::uint64_t seed,
                      const std::vector<bool>& diff = {}) {
    const auto r = gradient_check<T>(in, build, Precision<T>::h, seed, diff);
    EXPECT_GT(r.inputs_checked, 0u);
    EXPECT_LT(r.max_rel_error, Precision<T>::tol) << "seed " << seed;
}

}  // namespace

template <class T>
class GradCheck : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(GradCheck, Precisions);

TYPED_TEST(GradCheck, Conv2d) {
    using T = TypeParam;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Rng rng(seed);
        const std::size_t ks = seed % 2 ? 1 : 3;
        expect_gradients<T>({random_tensor<T>({4, 5, 3}, rng), random_tensor<T>({ks, ks, 3, 2}, rng),
                             random_tensor<T>({2}, rng)},
                            [](Tape<T>& t, const std::vector<Var>& v) { return t.conv2d(v[0], v[1], v[2]); }, seed);
    }
}

TYPED_TEST(GradCheck, DepthwiseConv) {
    using T = TypeParam;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Rng rng(seed + 100);
        expect_gradients<T>({random_tensor<T>({5, 4, 3}, rng), random_tensor<T>({3, 3, 3}, rng), random_tensor<T>({3}, rng)},
                            [](Tape<T>& t, const std::vector<Var>& v) { return t.depthwise_conv3x3(v[0], v[1], v[2]); },
                            seed);
    }
}

TYPED_TEST(GradCheck, LayerNorm) {
    using T = TypeParam;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Rng rng(seed + 200);
        expect_gradients<T>({random_tensor<T>({3, 3, 4}, rng), random_tensor<T>({4}, rng), random_tensor<T>({4}, rng)},
                            [](Tape<T>& t, const std::vector<Var>& v) { return t.layer_norm(v[0], v[1], v[2]); }, seed);
    }
}

TYPED_TEST(GradCheck, GeluSoftmaxNormalize) {
    using T = TypeParam;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Rng rng(seed + 300);
        expect_gradients<T>({random_tensor<T>({3, 3, 2}, rng, -3.0, 3.0)},
                            [](Tape<T>& t, const std::vector<Var>& v) { return t.gelu(v[0]); }, seed);
        expect_gradients<T>({random_tensor<T>({4, 5}, rng, -2.0, 2.0)},
                            [&](Tape<T>& t, const std::vector<Var>& v) { return t.softmax(v[0], seed % 2); }, seed);
        expect_gradients<T>({random_tensor<T>({3, 2, 4}, rng)},
                            [](Tape<T>& t, const std::vector<Var>& v) { return t.normalize_spatial(v[0]); }, seed);
    }
}

TYPED_TEST(GradCheck, GramMixSliceConcat) {
    using T = TypeParam;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Rng rng(seed + 400);
        expect_gradients<T>({random_tensor<T>({3, 2, 3}, rng), random_tensor<T>({3, 2, 3}, rng)},
                            [](Tape<T>& t, const std::vector<Var>& v) { return t.channel_gram(v[0], v[1]); }, seed);
        expect_gradients<T>({random_tensor<T>({3, 2, 3}, rng), random_tensor<T>({3, 3}, rng)},
                            [](Tape<T>& t, const std::vector<Var>& v) { return t.mix_channels(v[0], v[1]); }, seed);
        expect_gradients<T>({random_tensor<T>({2, 2, 5}, rng), random_tensor<T>({2, 2, 2}, rng)},
                            [](Tape<T>& t, const std::vector<Var>& v) {
                                const Var parts[] = {t.slice_channels(v[0], 1, 3), v[1]};
                                return t.concat_channels(parts);
                            },
                            seed);
    }
}

TYPED_TEST(GradCheck, ElementwiseAndReductions) {
    using T = TypeParam;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Rng rng(seed + 500);
        const auto a = random_tensor<T>({2, 3, 2}, rng), b = random_tensor<T>({2, 3, 2}, rng);
        expect_gradients<T>({a, b}, [](Tape<T>& t, const std::vector<Var>& v) { return t.add(v[0], v[1]); }, seed);
        expect_gradients<T>({a, b}, [](Tape<T>& t, const std::vector<Var>& v) { return t.sub(v[0], v[1]); }, seed);
        expect_gradients<T>({a, b}, [](Tape<T>& t, const std::vector<Var>& v) { return t.mul(v[0], v[1]); }, seed);
        expect_gradients<T>({a, random_tensor<T>({1}, rng)},
                            [](Tape<T>& t, const std::vector<Var>& v) { return t.scale(v[0], v[1]); }, seed);
        expect_gradients<T>({a}, [](Tape<T>& t, const std::vector<Var>& v) { return t.pick(v[0], 5); }, seed);
        expect_gradients<T>({a}, [](Tape<T>& t, const std::vector<Var>& v) { return t.sum(v[0]); }, seed);
        expect_gradients<T>({a}, [](Tape<T>& t, const std::vector<Var>& v) { return t.mean(v[0]); }, seed);
    }
}

// ---- optimizer ----------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParams) {
    std::vector<double> p = {0.5, -1.0, 2.0};
    const std::vector<double> g(3, 0.0);
    wbf::AdamState<double> s(3);
    for (int i = 0; i < 5; ++i) wbf::adam_step<double>(p, g, s, 1e-2);
    EXPECT_EQ(p, (std::vector<double>{0.5, -1.0, 2.0}));
    EXPECT_EQ(s.step, 5u);
}

TEST(Adam, FirstStepMovesByLr) {
    std::vector<double> p = {1.0};
    const std::vector<double> g = {1.0};
    wbf::AdamState<double> s(1);
    wbf::adam_step<double>(p, g, s, 1e-3);
    EXPECT_NEAR(p[0], 1.0 - 1e-3 / (1.0 + 1e-8), 1e-12);
}

TEST(Adam, MinimizesQuadratic) {
    std::vector<double> x = {1.0};
    wbf::AdamState<double> s(1);
    for (int i = 0; i < 100; ++i) {
        const std::vector<double> g = {2.0 * x[0]};
        wbf::adam_step<double>(x, g, s, 0.1);
    }
    EXPECT_LT(std::abs(x[0]), 0.1);
}

TEST(Adam, RejectsLengthMismatch) {
    std::vector<float> p(3);
    const std::vector<float> g(2);
    wbf::AdamState<float> s;
    EXPECT_THROW(wbf::adam_step<float>(p, g, s, 1e-3), std::invalid_argument);
}

TEST(Cosine, Endpoints) {
    const wbf::CosineSchedule s{1e-3, 1e-5, 1000};
    EXPECT_DOUBLE_EQ(s.lr(0), 1e-3);
    EXPECT_NEAR(s.lr(1000), 1e-5, 1e-18);
    EXPECT_NEAR(s.lr(500), 5.05e-4, 1e-15);
    for (std::size_t i = 1; i <= 1000; ++i) EXPECT_LE(s.lr(i), s.lr(i - 1));
    EXPECT_NEAR(s.lr(5000), 1e-5, 1e-18);
}

// ---- every op over 20 seeded random shapes ----------------------------------

TYPED_TEST(GradCheck, CatalogueOverTwentySeeds) {
    using T = TypeParam;
    for (std::uint64_t seed = 0; seed < 20; ++seed)
        for (const auto& op : wbf::testing::op_cases<T>(seed)) {
            const auto r = gradient_check<T>(op.inputs, op.build, Precision<T>::h, seed);
            EXPECT_LT(r.max_rel_error, Precision<T>::tol) << op.name << " seed " << seed;
        }
}
