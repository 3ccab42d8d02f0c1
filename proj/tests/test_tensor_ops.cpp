#include <doctest.h>

#include "lshg/ops.hpp"
#include "lshg/rng.hpp"
#include "oracles.hpp"

using namespace lshg;

namespace {

template <typename T>
Tensor4<T> random_tensor(Shape4 s, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Tensor4<T> t(s);
    Rng rng(seed);
    oracle::fill_uniform(t, rng, lo, hi);
    return t;
}

ConvSpec make_spec(int cin, int cout, int k, int stride = 1, int pad = 0, int dil = 1,
                   int groups = 1, bool bias = false) {
    ConvSpec s;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel = k;
    s.stride = stride;
    s.padding = pad;
    s.dilation = dil;
    s.groups = groups;
    s.has_bias = bias;
    return s;
}

}  // namespace

TEST_CASE("conv2d 1x1 identity mapping passes input through") {
    auto in = random_tensor<float>({1, 2, 4, 4}, 1);
    Tensor4<float> w({2, 2, 1, 1});
    w.at(0, 0, 0, 0) = 1;
    w.at(1, 1, 0, 0) = 1;
    auto out = conv2d_forward(in, make_spec(2, 2, 1), w, nullptr);
    REQUIRE(out.shape == in.shape);
    for (int64_t i = 0; i < in.numel(); i++) CHECK(out.data[i] == in.data[i]);
}

TEST_CASE("conv2d all-ones 3x3 with padding sums the neighborhood") {
    Tensor4<float> in({1, 1, 3, 3});
    in.fill(1);
    Tensor4<float> w({1, 1, 3, 3});
    w.fill(1);
    auto out = conv2d_forward(in, make_spec(1, 1, 3, 1, 1), w, nullptr);
    REQUIRE(out.shape == Shape4{1, 1, 3, 3});
    CHECK(out.at(0, 0, 1, 1) == 9);
    CHECK(out.at(0, 0, 0, 1) == 6);
    CHECK(out.at(0, 0, 1, 0) == 6);
    CHECK(out.at(0, 0, 1, 2) == 6);
    CHECK(out.at(0, 0, 2, 1) == 6);
    CHECK(out.at(0, 0, 0, 0) == 4);
    CHECK(out.at(0, 0, 0, 2) == 4);
    CHECK(out.at(0, 0, 2, 0) == 4);
    CHECK(out.at(0, 0, 2, 2) == 4);
}

TEST_CASE("dilated conv on an impulse matches the naive oracle") {
    Tensor4<double> in({1, 1, 7, 7});
    in.at(0, 0, 3, 3) = 1.0;
    Tensor4<double> w({1, 1, 3, 3});
    w.fill(1.0);
    const auto spec = make_spec(1, 1, 3, 1, 0, 2);
    auto out = conv2d_forward(in, spec, w, nullptr);
    auto ref = oracle::naive_conv2d(in, spec, w, nullptr);
    REQUIRE(out.shape == Shape4{1, 1, 3, 3});
    for (int64_t y = 0; y < 3; y++)
        for (int64_t x = 0; x < 3; x++) {
            CHECK(out.at(0, 0, y, x) == doctest::Approx(ref.at(0, 0, y, x)).epsilon(1e-14));
            // a dilated tap lands on the impulse only at the center output
            CHECK(out.at(0, 0, y, x) == (y == 1 && x == 1 ? 1.0 : 0.0));
        }
}

TEST_CASE("conv2d matches the naive oracle across geometries") {
    struct Case {
        Shape4 in;
        ConvSpec spec;
    };
    const Case cases[] = {
        {{1, 3, 5, 5}, make_spec(3, 4, 3, 1, 1)},
        {{2, 4, 6, 6}, make_spec(4, 6, 3, 2, 1)},
        {{1, 4, 8, 8}, make_spec(4, 5, 1)},
        {{2, 6, 7, 7}, make_spec(6, 4, 3, 1, 2, 2, 2, true)},
        {{1, 8, 9, 9}, make_spec(8, 8, 3, 1, 1, 1, 8)},
        {{1, 3, 12, 12}, make_spec(3, 2, 7, 2, 3, 1, 1, true)},
    };
    int id = 0;
    for (const auto& c : cases) {
        CAPTURE(id);
        auto in = random_tensor<double>(c.in, 100 + id);
        auto w = random_tensor<double>(c.spec.weight_shape(), 200 + id);
        Tensor4<double> bias({1, c.spec.out_channels, 1, 1});
        if (c.spec.has_bias) {
            Rng r(300 + id);
            oracle::fill_uniform(bias, r);
        }
        const Tensor4<double>* bp = c.spec.has_bias ? &bias : nullptr;
        auto out = conv2d_forward(in, c.spec, w, bp);
        auto ref = oracle::naive_conv2d(in, c.spec, w, bp);
        REQUIRE(out.shape == ref.shape);
        for (int64_t i = 0; i < out.numel(); i++)
            CHECK(out.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));
        id++;
    }
}

TEST_CASE("depthwise conv equals per-channel independent convolution") {
    const int C = 5;
    auto in = random_tensor<double>({2, C, 8, 8}, 7);
    const auto spec = make_spec(C, C, 3, 1, 1, 1, C);
    auto w = random_tensor<double>(spec.weight_shape(), 8);
    auto out = conv2d_forward(in, spec, w, nullptr);
    auto ref = oracle::naive_conv2d(in, spec, w, nullptr);

    const auto single = make_spec(1, 1, 3, 1, 1);
    for (int c = 0; c < C; c++) {
        Tensor4<double> xc({2, 1, 8, 8});
        for (int64_t b = 0; b < 2; b++)
            for (int64_t y = 0; y < 8; y++)
                for (int64_t x = 0; x < 8; x++) xc.at(b, 0, y, x) = in.at(b, c, y, x);
        Tensor4<double> wc({1, 1, 3, 3});
        for (int64_t ky = 0; ky < 3; ky++)
            for (int64_t kx = 0; kx < 3; kx++) wc.at(0, 0, ky, kx) = w.at(c, 0, ky, kx);
        auto oc = conv2d_forward(xc, single, wc, nullptr);
        for (int64_t b = 0; b < 2; b++)
            for (int64_t y = 0; y < 8; y++)
                for (int64_t x = 0; x < 8; x++) {
                    CHECK(out.at(b, c, y, x) == doctest::Approx(oc.at(b, 0, y, x)).epsilon(1e-12));
                    CHECK(out.at(b, c, y, x) ==
                          doctest::Approx(ref.at(b, c, y, x)).epsilon(1e-12));
                }
    }
}

TEST_CASE("dilated conv equals conv with a zero-interleaved kernel") {
    auto in = random_tensor<double>({1, 2, 10, 10}, 11);
    const auto dil_spec = make_spec(2, 3, 3, 1, 2, 2);
    auto w = random_tensor<double>(dil_spec.weight_shape(), 12);
    // interleave: d*(k-1)+1 = 5
    const auto big_spec = make_spec(2, 3, 5, 1, 2, 1);
    Tensor4<double> wbig(big_spec.weight_shape());
    for (int64_t oc = 0; oc < 3; oc++)
        for (int64_t ic = 0; ic < 2; ic++)
            for (int64_t ky = 0; ky < 3; ky++)
                for (int64_t kx = 0; kx < 3; kx++)
                    wbig.at(oc, ic, ky * 2, kx * 2) = w.at(oc, ic, ky, kx);
    auto a = conv2d_forward(in, dil_spec, w, nullptr);
    auto b = conv2d_forward(in, big_spec, wbig, nullptr);
    REQUIRE(a.shape == b.shape);
    for (int64_t i = 0; i < a.numel(); i++)
        CHECK(std::fabs(a.data[i] - b.data[i]) <= 1e-12 * std::max(1.0, std::fabs(a.data[i])));
}

TEST_CASE("conv2d validates shapes and geometry") {
    auto in = random_tensor<float>({1, 3, 4, 4}, 1);
    auto w = random_tensor<float>({4, 3, 3, 3}, 2);
    CHECK_THROWS_AS(conv2d_forward(in, make_spec(4, 4, 3), w, nullptr), ShapeError);
    CHECK_THROWS_AS(conv2d_forward(in, make_spec(3, 4, 5), w, nullptr), ShapeError);
    auto w5 = random_tensor<float>({4, 3, 5, 5}, 3);
    CHECK_THROWS_AS(conv2d_forward(in, make_spec(3, 4, 5), w5, nullptr), GeometryError);
    CHECK_THROWS_AS(make_spec(3, 4, 3, 1, 0, 1, 2).validate(), ConfigError);
}

TEST_CASE("conv2d_backward zero grad_out gives zero gradients") {
    auto in = random_tensor<float>({1, 2, 5, 5}, 21);
    const auto spec = make_spec(2, 3, 3, 1, 1, 1, 1, true);
    auto w = random_tensor<float>(spec.weight_shape(), 22);
    Tensor4<float> gout({1, 3, 5, 5});
    auto g = conv2d_backward(in, spec, w, gout);
    for (float v : g.input.data) CHECK(v == 0.0f);
    for (float v : g.weights.data) CHECK(v == 0.0f);
    for (float v : g.bias.data) CHECK(v == 0.0f);
}

TEST_CASE("conv2d_backward 1x1 single channel reduces to the scalar chain rule") {
    auto in = random_tensor<double>({1, 1, 4, 4}, 31);
    const auto spec = make_spec(1, 1, 1);
    Tensor4<double> w({1, 1, 1, 1});
    w.data[0] = 0.7;
    auto gout = random_tensor<double>({1, 1, 4, 4}, 32);
    auto g = conv2d_backward(in, spec, w, gout);
    double dot = 0;
    for (int64_t i = 0; i < in.numel(); i++) dot += gout.data[i] * in.data[i];
    CHECK(g.weights.data[0] == doctest::Approx(dot).epsilon(1e-12));
    for (int64_t i = 0; i < in.numel(); i++)
        CHECK(g.input.data[i] == doctest::Approx(0.7 * gout.data[i]).epsilon(1e-12));
}

TEST_CASE("conv2d_backward matches finite differences") {
    struct Case {
        Shape4 in;
        ConvSpec spec;
    };
    const Case cases[] = {
        {{2, 3, 8, 8}, make_spec(3, 3, 3, 1, 1, 1, 3)},  // depthwise per the contract example
        {{1, 4, 6, 6}, make_spec(4, 6, 3, 2, 1, 1, 2, true)},
        {{1, 2, 9, 9}, make_spec(2, 3, 3, 1, 2, 2)},
    };
    int id = 0;
    for (const auto& c : cases) {
        CAPTURE(id);
        auto in = random_tensor<double>(c.in, 400 + id);
        auto w = random_tensor<double>(c.spec.weight_shape(), 500 + id);
        Tensor4<double> bias({1, c.spec.out_channels, 1, 1});
        if (c.spec.has_bias) {
            Rng r(600 + id);
            oracle::fill_uniform(bias, r);
        }
        const Tensor4<double>* bp = c.spec.has_bias ? &bias : nullptr;
        const Shape4 oshape{c.in.n, c.spec.out_channels, c.spec.out_dim(c.in.h),
                            c.spec.out_dim(c.in.w)};
        auto r_w = random_tensor<double>(oshape, 700 + id);

        auto loss = [&]() {
            return oracle::weighted_sum(conv2d_forward(in, c.spec, w, bp), r_w);
        };
        auto g = conv2d_backward(in, c.spec, w, r_w);
        CHECK(oracle::fd_check(in, loss, g.input) < 1e-4);
        CHECK(oracle::fd_check(w, loss, g.weights) < 1e-4);
        if (c.spec.has_bias) CHECK(oracle::fd_check(bias, loss, g.bias) < 1e-4);
        id++;
    }
}

TEST_CASE("maxpool picks window maxima and breaks ties to the first element") {
    Tensor4<float> in({1, 1, 2, 2}, {1, 2, 3, 4});
    auto r = maxpool2x2_forward(in);
    CHECK(r.output.shape == Shape4{1, 1, 1, 1});
    CHECK(r.output.data[0] == 4);
    CHECK(r.argmax[0] == 3);  // (1,1) in row-major

    Tensor4<float> c7({1, 1, 4, 4});
    c7.fill(7);
    auto r2 = maxpool2x2_forward(c7);
    CHECK(r2.output.shape == Shape4{1, 1, 2, 2});
    for (float v : r2.output.data) CHECK(v == 7);
    CHECK(r2.argmax[0] == 0);
    CHECK(r2.argmax[1] == 2);
    CHECK(r2.argmax[2] == 8);
    CHECK(r2.argmax[3] == 10);

    Tensor4<float> odd({1, 1, 3, 4});
    CHECK_THROWS_AS(maxpool2x2_forward(odd), GeometryError);
}

TEST_CASE("maxpool backward matches finite differences away from ties") {
    auto in = random_tensor<double>({1, 2, 8, 8}, 42);
    auto fwd = maxpool2x2_forward(in);
    auto r_w = random_tensor<double>(fwd.output.shape, 43);
    auto loss = [&]() {
        return oracle::weighted_sum(maxpool2x2_forward(in).output, r_w);
    };
    auto gin = maxpool2x2_backward(fwd.argmax, in.shape, r_w);
    CHECK(oracle::fd_check(in, loss, gin) < 1e-4);
}

TEST_CASE("upsample_nearest2x replicates pixels into 2x2 blocks") {
    Tensor4<float> in({1, 1, 2, 2}, {1, 2, 3, 4});
    auto out = upsample_nearest2x_forward(in);
    const float expect[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    REQUIRE(out.shape == Shape4{1, 1, 4, 4});
    for (int i = 0; i < 16; i++) CHECK(out.data[i] == expect[i]);

    // maxpool of the replication recovers the original exactly
    auto back = maxpool2x2_forward(out);
    for (int64_t i = 0; i < in.numel(); i++) CHECK(back.output.data[i] == in.data[i]);
}

TEST_CASE("upsample backward matches finite differences") {
    auto in = random_tensor<double>({2, 3, 4, 4}, 51);
    auto r_w = random_tensor<double>({2, 3, 8, 8}, 52);
    auto loss = [&]() { return oracle::weighted_sum(upsample_nearest2x_forward(in), r_w); };
    auto gin = upsample_nearest2x_backward(r_w);
    CHECK(oracle::fd_check(in, loss, gin) < 1e-4);
}

TEST_CASE("batchnorm train mode normalizes to zero mean and unit variance") {
    auto in = random_tensor<double>({4, 3, 6, 6}, 61, -2, 5);
    Tensor4<double> gamma({1, 3, 1, 1}), beta({1, 3, 1, 1});
    gamma.fill(1);
    Tensor4<double> rm({1, 3, 1, 1}), rv({1, 3, 1, 1});
    rv.fill(1);
    auto out = batchnorm_forward(in, gamma, beta, rm, rv, BnMode::train, 0.1, 1e-12, nullptr);
    const int64_t m = 4 * 6 * 6;
    for (int c = 0; c < 3; c++) {
        double mean = 0, var = 0;
        for (int64_t b = 0; b < 4; b++)
            for (int64_t y = 0; y < 6; y++)
                for (int64_t x = 0; x < 6; x++) mean += out.at(b, c, y, x);
        mean /= m;
        for (int64_t b = 0; b < 4; b++)
            for (int64_t y = 0; y < 6; y++)
                for (int64_t x = 0; x < 6; x++) {
                    const double d = out.at(b, c, y, x) - mean;
                    var += d * d;
                }
        var /= m;
        CHECK(std::fabs(mean) < 1e-5);
        CHECK(std::fabs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("batchnorm eval with identity statistics is the identity") {
    auto in = random_tensor<double>({2, 4, 5, 5}, 62);
    Tensor4<double> gamma({1, 4, 1, 1}), beta({1, 4, 1, 1});
    gamma.fill(1);
    Tensor4<double> rm({1, 4, 1, 1}), rv({1, 4, 1, 1});
    rv.fill(1);
    auto out = batchnorm_forward(in, gamma, beta, rm, rv, BnMode::eval, 0.1, 1e-14, nullptr);
    for (int64_t i = 0; i < in.numel(); i++)
        CHECK(std::fabs(out.data[i] - in.data[i]) < 1e-6);
}

TEST_CASE("batchnorm updates running stats with momentum and unbiased variance") {
    auto in = random_tensor<double>({2, 1, 3, 3}, 63);
    Tensor4<double> gamma({1, 1, 1, 1}), beta({1, 1, 1, 1});
    gamma.fill(1);
    Tensor4<double> rm({1, 1, 1, 1}), rv({1, 1, 1, 1});
    rm.data[0] = 0.5;
    rv.data[0] = 2.0;
    const double momentum = 0.1;
    batchnorm_forward(in, gamma, beta, rm, rv, BnMode::train, momentum, 1e-5, nullptr);
    const int64_t m = in.numel();
    double mu = 0;
    for (double v : in.data) mu += v;
    mu /= double(m);
    double var = 0;
    for (double v : in.data) var += (v - mu) * (v - mu);
    const double unbiased = var / double(m - 1);
    CHECK(rm.data[0] == doctest::Approx(0.9 * 0.5 + 0.1 * mu).epsilon(1e-12));
    CHECK(rv.data[0] == doctest::Approx(0.9 * 2.0 + 0.1 * unbiased).epsilon(1e-12));
}

TEST_CASE("batchnorm rejects degenerate train batches and bad epsilon") {
    Tensor4<double> in({1, 2, 1, 1});
    Tensor4<double> gamma({1, 2, 1, 1}), beta({1, 2, 1, 1});
    Tensor4<double> rm({1, 2, 1, 1}), rv({1, 2, 1, 1});
    CHECK_THROWS_AS(
        batchnorm_forward(in, gamma, beta, rm, rv, BnMode::train, 0.1, 1e-5, nullptr),
        StatsError);
    Tensor4<double> in2({2, 2, 2, 2});
    CHECK_THROWS_AS(
        batchnorm_forward(in2, gamma, beta, rm, rv, BnMode::train, 0.1, 0.0, nullptr),
        ConfigError);
}

TEST_CASE("batchnorm train backward matches finite differences") {
    auto in = random_tensor<double>({2, 3, 4, 4}, 64);
    auto gamma = random_tensor<double>({1, 3, 1, 1}, 65, 0.5, 1.5);
    auto beta = random_tensor<double>({1, 3, 1, 1}, 66, -0.5, 0.5);
    auto r_w = random_tensor<double>({2, 3, 4, 4}, 67);

    auto loss = [&]() {
        Tensor4<double> rm({1, 3, 1, 1}), rv({1, 3, 1, 1});
        rv.fill(1);
        return oracle::weighted_sum(
            batchnorm_forward(in, gamma, beta, rm, rv, BnMode::train, 0.1, 1e-5, nullptr), r_w);
    };
    Tensor4<double> rm({1, 3, 1, 1}), rv({1, 3, 1, 1});
    rv.fill(1);
    BnCache<double> cache;
    batchnorm_forward(in, gamma, beta, rm, rv, BnMode::train, 0.1, 1e-5, &cache);
    auto g = batchnorm_backward(in, gamma, cache, r_w);
    CHECK(oracle::fd_check(in, loss, g.input) < 1e-4);
    CHECK(oracle::fd_check(gamma, loss, g.gamma) < 1e-4);
    CHECK(oracle::fd_check(beta, loss, g.beta) < 1e-4);
}

TEST_CASE("relu, add and concat behave per definition") {
    Tensor4<float> x({1, 1, 1, 3}, {-1, 0, 2});
    auto y = relu_forward(x);
    CHECK(y.data[0] == 0);
    CHECK(y.data[1] == 0);
    CHECK(y.data[2] == 2);

    auto a = random_tensor<float>({1, 2, 3, 3}, 71);
    Tensor4<float> zeros(a.shape);
    auto sum = add_forward(a, zeros);
    for (int64_t i = 0; i < a.numel(); i++) CHECK(sum.data[i] == a.data[i]);
    Tensor4<float> wrong({1, 3, 3, 3});
    CHECK_THROWS_AS(add_forward(a, wrong), ShapeError);

    auto p1 = random_tensor<float>({1, 3, 4, 4}, 72);
    auto p2 = random_tensor<float>({1, 5, 4, 4}, 73);
    auto cat = concat_channels_forward<float>({&p1, &p2});
    REQUIRE(cat.shape == Shape4{1, 8, 4, 4});
    for (int64_t c = 0; c < 3; c++)
        for (int64_t y2 = 0; y2 < 4; y2++)
            for (int64_t x2 = 0; x2 < 4; x2++)
                CHECK(cat.at(0, c, y2, x2) == p1.at(0, c, y2, x2));
    for (int64_t c = 0; c < 5; c++)
        for (int64_t y2 = 0; y2 < 4; y2++)
            for (int64_t x2 = 0; x2 < 4; x2++)
                CHECK(cat.at(0, 3 + c, y2, x2) == p2.at(0, c, y2, x2));
    Tensor4<float> bad({1, 2, 5, 4});
    CHECK_THROWS_AS(concat_channels_forward<float>({&p1, &bad}), ShapeError);

    auto grads = concat_channels_backward<float>({3, 5}, cat);
    REQUIRE(grads.size() == 2);
    for (int64_t i = 0; i < p1.numel(); i++) CHECK(grads[0].data[i] == p1.data[i]);
    for (int64_t i = 0; i < p2.numel(); i++) CHECK(grads[1].data[i] == p2.data[i]);
}

TEST_CASE("relu backward passes gradient only where output is positive") {
    Tensor4<double> x({1, 1, 1, 4}, {-1, 0, 0.5, 3});
    auto y = relu_forward(x);
    Tensor4<double> g({1, 1, 1, 4}, {10, 10, 10, 10});
    auto gin = relu_backward(y, g);
    CHECK(gin.data[0] == 0);
    CHECK(gin.data[1] == 0);  // subgradient at 0 is 0
    CHECK(gin.data[2] == 10);
    CHECK(gin.data[3] == 10);
}

TEST_CASE("conv2d forward is bit-deterministic across runs") {
    auto in = random_tensor<float>({2, 8, 16, 16}, 81);
    const auto spec = make_spec(8, 12, 3, 1, 1);
    auto w = random_tensor<float>(spec.weight_shape(), 82);
    auto a = conv2d_forward(in, spec, w, nullptr);
    auto b = conv2d_forward(in, spec, w, nullptr);
    for (int64_t i = 0; i < a.numel(); i++) CHECK(a.data[i] == b.data[i]);
}
