#include <gtest/gtest.h>

#include <dcnn/layers.hpp>
#include <dcnn/train.hpp>

#include "testutil.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

// Central finite differences (64-bit, h = 1e-5) against every analytic
// gradient the layers expose. Losses are fixed random linear probes of the
// op output, so dL/d(out) is the probe weight vector.

using dcnn::ConvParams;
using dcnn::DenseParams;
using dcnn::Rng;
using dcnn::Tensor;

namespace {

constexpr double kTol = 1e-4;

Tensor<double> probe_tensor(const testutil::LinearProbe& probe, dcnn::Shape shape) {
    return Tensor<double>(std::move(shape), probe.weights);
}

void check_conv_instance(std::size_t h, std::size_t w, std::size_t c_in, std::size_t k,
                         std::size_t c_out, std::uint64_t seed) {
    Rng rng(seed);
    auto input = testutil::random_tensor<double>({h, w, c_in}, rng);
    auto params = testutil::random_conv_params<double>(k, c_in, c_out, rng);
    const testutil::LinearProbe probe(h * w * c_out, rng);

    const auto loss = [&] { return probe(conv2d_forward(input, params)); };
    const auto grad_out = probe_tensor(probe, {h, w, c_out});
    const auto analytic = conv2d_backward(input, params, grad_out);

    const auto fd_kernels = testutil::fd_gradient(params.kernels.data(), loss);
    EXPECT_LE(testutil::max_rel_error(analytic.kernels.data(), fd_kernels), kTol)
        << "conv kernels, seed " << seed;

    const auto fd_bias = testutil::fd_gradient(params.bias.data(), loss);
    EXPECT_LE(testutil::max_rel_error(analytic.bias.data(), fd_bias), kTol)
        << "conv bias, seed " << seed;

    const auto fd_input = testutil::fd_gradient(input.data(), loss);
    EXPECT_LE(testutil::max_rel_error(analytic.input.data(), fd_input), kTol)
        << "conv input, seed " << seed;
}

void check_dense_instance(std::size_t n_in, std::size_t n_out, std::uint64_t seed) {
    Rng rng(seed);
    auto x = testutil::random_tensor<double>({n_in}, rng);
    auto params = testutil::random_dense_params<double>(n_in, n_out, rng);
    const testutil::LinearProbe probe(n_out, rng);

    const auto loss = [&] { return probe(dense_forward(x, params)); };
    const auto grad_out = probe_tensor(probe, {n_out});
    const auto analytic = dense_backward(x, params, grad_out);

    const auto fd_weights = testutil::fd_gradient(params.weights.data(), loss);
    EXPECT_LE(testutil::max_rel_error(analytic.weights.data(), fd_weights), kTol)
        << "dense weights, seed " << seed;

    const auto fd_bias = testutil::fd_gradient(params.bias.data(), loss);
    EXPECT_LE(testutil::max_rel_error(analytic.bias.data(), fd_bias), kTol)
        << "dense bias, seed " << seed;

    const auto fd_input = testutil::fd_gradient(x.data(), loss);
    EXPECT_LE(testutil::max_rel_error(analytic.input.data(), fd_input), kTol)
        << "dense input, seed " << seed;
}

} // namespace

TEST(GradCheck, ConvSmallSquare) {
    for (std::uint64_t seed = 100; seed < 105; ++seed) {
        check_conv_instance(5, 5, 2, 3, 3, seed);
    }
}

TEST(GradCheck, ConvRectangular) {
    for (std::uint64_t seed = 200; seed < 205; ++seed) {
        check_conv_instance(6, 4, 3, 3, 2, seed);
    }
}

TEST(GradCheck, ConvWideKernel) {
    for (std::uint64_t seed = 300; seed < 305; ++seed) {
        check_conv_instance(7, 7, 1, 5, 4, seed);
    }
}

TEST(GradCheck, DenseTall) {
    for (std::uint64_t seed = 400; seed < 405; ++seed) {
        check_dense_instance(10, 7, seed);
    }
}

TEST(GradCheck, DenseWide) {
    for (std::uint64_t seed = 500; seed < 505; ++seed) {
        check_dense_instance(20, 5, seed);
    }
}

TEST(GradCheck, ReluAwayFromKink) {
    for (std::uint64_t seed = 600; seed < 605; ++seed) {
        Rng rng(seed);
        // |x| in [0.05, 1]: finite differences are valid away from 0.
        auto x = Tensor<double>::zeros({60});
        for (double& v : x.data()) {
            const double mag = rng.uniform(0.05, 1.0);
            v = rng.uniform01() < 0.5 ? -mag : mag;
        }
        const testutil::LinearProbe probe(60, rng);
        const auto loss = [&] { return probe(relu_forward(x)); };
        const auto analytic = relu_backward(x, probe_tensor(probe, {60}));
        const auto fd = testutil::fd_gradient(x.data(), loss);
        EXPECT_LE(testutil::max_rel_error(analytic.data(), fd), kTol) << "seed " << seed;
    }
}

TEST(GradCheck, MaxPoolAwayFromTies) {
    for (std::uint64_t seed = 700; seed < 705; ++seed) {
        Rng rng(seed);
        auto x = testutil::random_tensor<double>({6, 6, 2}, rng);
        const testutil::LinearProbe probe(3 * 3 * 2, rng);
        const auto loss = [&] { return probe(maxpool_forward(x).first); };
        const auto argmax = maxpool_forward(x).second;
        const auto analytic = maxpool_backward(argmax, probe_tensor(probe, {3, 3, 2}));
        const auto fd = testutil::fd_gradient(x.data(), loss);
        EXPECT_LE(testutil::max_rel_error(analytic.data(), fd), kTol) << "seed " << seed;
    }
}

TEST(GradCheck, DropoutWithFixedMask) {
    for (std::uint64_t seed = 800; seed < 805; ++seed) {
        Rng rng(seed);
        auto x = testutil::random_tensor<double>({80}, rng);
        const double rate = 0.3;
        const testutil::LinearProbe probe(80, rng);

        // The mask is a deterministic function of the per-instance seed, so
        // every finite-difference evaluation sees the same mask.
        const auto loss = [&] {
            Rng mask_rng(seed * 31 + 7);
            return probe(dropout_forward(x, rate, true, mask_rng).first);
        };
        Rng mask_rng(seed * 31 + 7);
        const auto mask = dropout_forward(x, rate, true, mask_rng).second;
        const auto analytic = dropout_backward(mask, rate, probe_tensor(probe, {80}));
        const auto fd = testutil::fd_gradient(x.data(), loss);
        EXPECT_LE(testutil::max_rel_error(analytic.data(), fd), kTol) << "seed " << seed;
    }
}

// Gradient of cross_entropy(softmax(z), t) wrt z: must equal probs - target
// exactly and match finite differences of the composed map.
TEST(GradCheck, FusedSoftmaxCrossEntropy) {
    for (std::uint64_t seed = 900; seed < 905; ++seed) {
        Rng rng(seed);
        // Logits in [-2, 2] keep every probability well above the
        // finite-difference noise floor.
        auto logits = testutil::random_tensor<double>({10}, rng, -2.0, 2.0);
        const auto target = dcnn::one_hot_encode<double>(static_cast<int>(rng.below(10)));

        const auto probs = softmax(logits);
        const auto analytic = dcnn::output_gradient(probs, target);

        double worst = 0;
        for (std::size_t i = 0; i < 10; ++i) {
            worst = std::max(worst, std::abs(analytic[i] - (probs[i] - target[i])));
        }
        EXPECT_LE(worst, 1e-12);

        const auto loss = [&] { return static_cast<double>(cross_entropy(softmax(logits), target)); };
        const auto fd = testutil::fd_gradient(logits.data(), loss);
        EXPECT_LE(testutil::max_rel_error(analytic.data(), fd, 1e-6), 1e-6) << "seed " << seed;
    }
}
