#include "ddcls/error.hpp"
#include "ddcls/ops.hpp"

#include "support/oracles.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <numeric>

using namespace ddcls;

namespace {

struct ConvCase {
    Tensor x;
    ConvParams p;
};

ConvCase random_case(Rng& rng)
{
    const std::size_t k = std::array<std::size_t, 3>{1, 3, 5}[bounded(rng, 3)];
    ConvCase c;
    c.p.stride = 1 + bounded(rng, 2);
    c.p.padding = bounded(rng, k / 2 + 1);
    const std::size_t h = k + bounded(rng, 10);
    const std::size_t w = k + bounded(rng, 10);
    c.x = oracle::random_tensor({1 + bounded(rng, 2), 1 + bounded(rng, 8), h, w}, rng);
    c.p.weight = oracle::random_tensor({1 + bounded(rng, 8), c.x.c(), k, k}, rng);
    if (bounded(rng, 2))
        c.p.bias = oracle::random_vector(c.p.weight.n(), rng);
    return c;
}

BnParams random_bn(std::size_t c, Rng& rng)
{
    return {oracle::random_vector(c, rng, 0.5, 1.5), oracle::random_vector(c, rng), oracle::random_vector(c, rng),
            oracle::random_vector(c, rng, 0.1, 2.0), 1e-3f};
}

} // namespace

TEST_CASE("conv2d matches the brute-force oracle on random shapes")
{
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const ConvCase c = random_case(rng);
        const auto want = oracle::conv2d(c.x, c.p.weight, c.p.bias ? &*c.p.bias : nullptr,
                                         static_cast<int>(c.p.stride), static_cast<int>(c.p.padding));
        const Tensor direct = ops::conv2d(c.x, c.p);
        const Tensor lowered = ops::conv2d_lowered(c.x, c.p);
        REQUIRE(direct.size() == want.size());
        CHECK(oracle::max_rel_err(direct, want) <= 1e-4);
        CHECK(oracle::max_rel_err(lowered, want) <= 1e-4);
        CHECK(oracle::max_rel_err(lowered, direct) <= 1e-5);
    }
}

TEST_CASE("conv2d output shape")
{
    Rng rng(1);
    ConvParams p{oracle::random_tensor({16, 3, 3, 3}, rng), std::nullopt, 2, 1};
    CHECK(ops::conv2d(Tensor(1, 3, 224, 224), p).shape() == Shape{1, 16, 112, 112});
    CHECK(ops::conv2d_lowered(Tensor(2, 3, 7, 7), p).shape() == Shape{2, 16, 4, 4});
}

TEST_CASE("lowered conv does not depend on the thread count")
{
    Rng rng(3);
    ConvParams p{oracle::random_tensor({37, 12, 3, 3}, rng), oracle::random_vector(37, rng), 1, 1};
    const Tensor x = oracle::random_tensor({1, 12, 19, 23}, rng);
    const Tensor one = ops::conv2d_lowered(x, p, 1);
    CHECK(ops::conv2d_lowered(x, p, 4) == one);
    CHECK(ops::conv2d_lowered(x, p, 64) == one);
}

TEST_CASE("conv2d rejects inconsistent shapes")
{
    Rng rng(2);
    ConvParams p{oracle::random_tensor({4, 3, 3, 3}, rng), std::nullopt, 1, 0};
    CHECK_THROWS_AS(ops::conv2d(Tensor(1, 2, 8, 8), p), ShapeError);
    CHECK_THROWS_AS(ops::conv2d(Tensor(1, 3, 2, 2), p), ShapeError);
    p.bias = std::vector<float>(3);
    CHECK_THROWS_AS(ops::conv2d_lowered(Tensor(1, 3, 8, 8), p), ShapeError);
    CHECK_THROWS_AS(conv_out_dim(2, 5, 1, 1), ShapeError);
    CHECK(conv_out_dim(224, 3, 2, 1) == 112);
    CHECK(conv_out_dim(7, 1, 1, 0) == 7);
}

TEST_CASE("folded batch norm composes to conv then batch norm")
{
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        ConvCase c = random_case(rng);
        const BnParams bn = random_bn(c.p.out_channels(), rng);
        const int stride = static_cast<int>(c.p.stride), pad = static_cast<int>(c.p.padding);
        Shape s;
        const auto two_step = oracle::batchnorm(oracle::conv2d(c.x, c.p.weight, c.p.bias ? &*c.p.bias : nullptr,
                                                               stride, pad, &s),
                                                s, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn.eps);
        const ConvParams folded = ops::fold_bn(c.p, bn);
        REQUIRE(folded.bias.has_value());
        CHECK(oracle::max_rel_err(oracle::conv2d(c.x, folded.weight, &*folded.bias, stride, pad), two_step) <= 1e-5);
        CHECK(oracle::max_rel_err(ops::conv2d(c.x, folded), two_step) <= 1e-4);
        CHECK(oracle::max_rel_err(ops::batchnorm_infer(ops::conv2d(c.x, c.p), bn), two_step) <= 1e-4);
    }
}

TEST_CASE("batchnorm_infer follows the affine definition")
{
    Tensor x(1, 2, 1, 2, 0.0f);
    x.at(0, 0, 0, 1) = 3.0f;
    x.at(0, 1, 0, 0) = -1.0f;
    BnParams bn{{2.0f, 1.0f}, {0.5f, 0.0f}, {1.0f, -1.0f}, {4.0f, 1.0f}, 0.0f};
    const Tensor y = ops::batchnorm_infer(x, bn);
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(2.0 * (0 - 1) / 2 + 0.5));
    CHECK(y.at(0, 0, 0, 1) == doctest::Approx(2.0 * (3 - 1) / 2 + 0.5));
    CHECK(y.at(0, 1, 0, 0) == doctest::Approx(0.0));
    CHECK(y.at(0, 1, 0, 1) == doctest::Approx(1.0));
}

TEST_CASE("silu")
{
    Tensor x(Shape{1, 1, 1, 5}, std::vector<float>{-20.0f, -1.0f, 0.0f, 1.0f, 20.0f});
    const Tensor y = ops::silu(x);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(y.data()[i] == doctest::Approx(oracle::silu(x.data()[i])).epsilon(1e-6));
    CHECK(y.data()[3] == doctest::Approx(0.731059).epsilon(1e-6));
    ops::silu_inplace(x);
    CHECK(x == y);
}

TEST_CASE("softmax values, normalization, shift invariance, argmax")
{
    const std::vector<float> z{3.0f, 2.0f, 1.0f};
    const auto p = ops::softmax(z);
    CHECK(p[0] == doctest::Approx(0.665241).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(0.244728).epsilon(1e-6));
    CHECK(p[2] == doctest::Approx(0.090031).epsilon(1e-5));

    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        auto logits = oracle::random_vector(1 + bounded(rng, 20), rng, -30, 30);
        const auto q = ops::softmax(logits);
        CHECK(std::accumulate(q.begin(), q.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(std::max_element(q.begin(), q.end()) - q.begin() ==
              std::max_element(logits.begin(), logits.end()) - logits.begin());
        auto shifted = logits;
        for (float& v : shifted)
            v += 500.0f;
        const auto qs = ops::softmax(shifted);
        for (std::size_t j = 0; j < q.size(); ++j)
            CHECK(qs[j] == doctest::Approx(q[j]).epsilon(1e-4));
    }
    const std::vector<float> huge{1000.0f, 999.0f};
    const auto ph = ops::softmax(huge);
    CHECK(std::isfinite(ph[0]));
    CHECK(ph[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK_THROWS_AS(ops::softmax(std::vector<float>{}), ShapeError);
}

TEST_CASE("global average pool and linear")
{
    Tensor x(Shape{1, 2, 2, 2}, std::vector<float>{1, 2, 3, 4, -1, -1, -1, 5});
    const Tensor g = ops::global_avg_pool(x);
    CHECK(g.shape() == Shape{1, 2, 1, 1});
    CHECK(g.data()[0] == doctest::Approx(2.5));
    CHECK(g.data()[1] == doctest::Approx(0.5));

    const Tensor w(Shape{2, 3, 1, 1}, std::vector<float>{1, 0, -1, 2, 2, 2});
    const std::vector<float> b{0.5f, -1.0f};
    const auto y = ops::linear(std::vector<float>{1, 2, 3}, w, b);
    CHECK(y[0] == doctest::Approx(-1.5));
    CHECK(y[1] == doctest::Approx(11.0));
    CHECK_THROWS_AS(ops::linear(std::vector<float>{1, 2}, w, b), ShapeError);
}

TEST_CASE("concat and split are inverse along channels")
{
    Rng rng(9);
    const Tensor x = oracle::random_tensor({2, 7, 3, 4}, rng);
    const std::array<std::size_t, 3> parts{2, 4, 1};
    const auto pieces = ops::split_channels(x, parts);
    REQUIRE(pieces.size() == 3);
    CHECK(pieces[1].shape() == Shape{2, 4, 3, 4});
    CHECK(pieces[1].at(1, 0, 2, 3) == x.at(1, 2, 2, 3));
    CHECK(ops::concat_channels(pieces) == x);
    const std::array<std::size_t, 2> bad{3, 3};
    CHECK_THROWS_AS(ops::split_channels(x, bad), ShapeError);
}

TEST_CASE("add is elementwise and shape checked")
{
    const Tensor a(Shape{1, 1, 1, 3}, std::vector<float>{1, 2, 3});
    const Tensor b(Shape{1, 1, 1, 3}, std::vector<float>{10, 20, 30});
    CHECK(ops::add(a, b).values() == std::vector<float>{11, 22, 33});
    CHECK_THROWS_AS(ops::add(a, Tensor(1, 1, 3, 1)), ShapeError);
}
