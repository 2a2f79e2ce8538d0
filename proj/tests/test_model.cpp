#include <gtest/gtest.h>

#include <dcnn/model.hpp>
#include <dcnn/serialize.hpp>

#include "testutil.hpp"

#include <cstdint>
#include <fstream>
#include <vector>

using dcnn::build_digit_model;
using dcnn::NetworkModel;
using dcnn::Rng;
using dcnn::Shape;
using dcnn::Tensor;

namespace {

Tensor<float> random_batch(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    return testutil::random_tensor<float>({n, 28, 28, 1}, rng, 0.0, 1.0);
}

} // namespace

// --------------------------------------------------------------------------
// construction

TEST(BuildModel, ParameterShapesAndCount) {
    const auto m = build_digit_model<float>(1);
    EXPECT_EQ(m.conv1.kernels.shape(), (Shape{3, 3, 1, 32}));
    EXPECT_EQ(m.conv2.kernels.shape(), (Shape{3, 3, 32, 64}));
    EXPECT_EQ(m.conv3.kernels.shape(), (Shape{3, 3, 64, 64}));
    EXPECT_EQ(m.dense1.weights.shape(), (Shape{3136, 64}));
    EXPECT_EQ(m.dense2.weights.shape(), (Shape{64, 10}));

    // per-layer trainable counts
    EXPECT_EQ(m.conv1.kernels.size() + m.conv1.bias.size(), 320u);
    EXPECT_EQ(m.conv2.kernels.size() + m.conv2.bias.size(), 18496u);
    EXPECT_EQ(m.conv3.kernels.size() + m.conv3.bias.size(), 36928u);
    EXPECT_EQ(m.dense1.weights.size() + m.dense1.bias.size(), 200768u);
    EXPECT_EQ(m.dense2.weights.size() + m.dense2.bias.size(), 650u);
    EXPECT_EQ(m.parameter_count(), 257162u);
}

TEST(BuildModel, SameSeedBitwiseIdenticalWeights) {
    const auto a = build_digit_model<float>(77);
    const auto b = build_digit_model<float>(77);
    EXPECT_EQ(a.conv1.kernels, b.conv1.kernels);
    EXPECT_EQ(a.conv2.kernels, b.conv2.kernels);
    EXPECT_EQ(a.conv3.kernels, b.conv3.kernels);
    EXPECT_EQ(a.dense1.weights, b.dense1.weights);
    EXPECT_EQ(a.dense2.weights, b.dense2.weights);

    const auto c = build_digit_model<float>(78);
    EXPECT_NE(a.conv1.kernels, c.conv1.kernels);
}

TEST(BuildModel, BiasesStartAtZero) {
    const auto m = build_digit_model<float>(2);
    for (float v : m.conv1.bias.data()) EXPECT_EQ(v, 0.0f);
    for (float v : m.dense1.bias.data()) EXPECT_EQ(v, 0.0f);
}

TEST(BuildModel, EvenKernelRejected) {
    EXPECT_THROW(build_digit_model<float>(1, 4), dcnn::InvalidConfig);
    EXPECT_THROW(build_digit_model<float>(1, 0), dcnn::InvalidConfig);
    EXPECT_THROW(build_digit_model<float>(1, 3, 1.0), dcnn::InvalidRate);
}

TEST(BuildModel, LayerSummaryMatchesArchitectureTable) {
    const auto m = build_digit_model<float>(3);
    const auto rows = dcnn::layer_summary(m);
    ASSERT_EQ(rows.size(), 12u);

    const std::vector<std::pair<std::string, Shape>> expect = {
        {"Input", {28, 28, 1}},   {"Conv2D", {28, 28, 32}}, {"MaxPooling2D", {14, 14, 32}},
        {"Dropout", {14, 14, 32}},{"Conv2D", {14, 14, 64}}, {"MaxPooling2D", {7, 7, 64}},
        {"Dropout", {7, 7, 64}},  {"Conv2D", {7, 7, 64}},   {"Flatten", {3136}},
        {"Dense", {64}},          {"Dropout", {64}},        {"Dense", {10}},
    };
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i].name, expect[i].first) << "row " << i;
        EXPECT_EQ(rows[i].output_shape, expect[i].second) << "row " << i;
    }

    // layer-kind counts
    int convs = 0, pools = 0, dropouts = 0, flattens = 0, denses = 0;
    for (const auto& row : rows) {
        convs += row.name == "Conv2D";
        pools += row.name == "MaxPooling2D";
        dropouts += row.name == "Dropout";
        flattens += row.name == "Flatten";
        denses += row.name == "Dense";
    }
    EXPECT_EQ(convs, 3);
    EXPECT_EQ(pools, 2);
    EXPECT_EQ(dropouts, 3);
    EXPECT_EQ(flattens, 1);
    EXPECT_EQ(denses, 2);
}

// --------------------------------------------------------------------------
// forward / predict

TEST(Forward, RowsSumToOne) {
    const auto m = build_digit_model<float>(4);
    const auto batch = random_batch(4, 10);
    const auto probs = forward(m, batch, /*training=*/false);
    ASSERT_EQ(probs.shape(), (Shape{4, 10}));
    for (std::size_t i = 0; i < 4; ++i) {
        float sum = 0;
        for (std::size_t j = 0; j < 10; ++j) sum += probs.at(i, j);
        EXPECT_NEAR(sum, 1.0f, 1e-6);
    }
}

TEST(Forward, InferenceIsDeterministic) {
    const auto m = build_digit_model<float>(5);
    const auto batch = random_batch(3, 11);
    EXPECT_EQ(forward(m, batch, false), forward(m, batch, false));
}

TEST(Forward, PerSampleIndependence) {
    const auto m = build_digit_model<float>(6);
    const auto batch = random_batch(32, 12);
    const auto all = forward(m, batch, false);

    auto single = Tensor<float>::zeros({1, 28, 28, 1});
    const std::size_t stride = 28 * 28;
    const std::size_t pick = 17;
    std::copy(batch.data().data() + pick * stride, batch.data().data() + (pick + 1) * stride,
              single.data().data());
    const auto one = forward(m, single, false);
    for (std::size_t j = 0; j < 10; ++j) {
        EXPECT_EQ(one.at(0, j), all.at(pick, j));
    }
}

TEST(Forward, TrainingModeIsSeedDeterministic) {
    const auto m = build_digit_model<float>(7);
    const auto batch = random_batch(2, 13);
    EXPECT_EQ(forward(m, batch, true, 42), forward(m, batch, true, 42));
    EXPECT_NE(forward(m, batch, true, 42), forward(m, batch, true, 43));
}

TEST(Forward, ThreadCountDoesNotChangeInference) {
    const auto m = build_digit_model<float>(8);
    const auto batch = random_batch(8, 14);
    EXPECT_EQ(forward(m, batch, false, 0, 1), forward(m, batch, false, 0, 2));
}

TEST(Forward, WrongShapeRejected) {
    const auto m = build_digit_model<float>(9);
    EXPECT_THROW(forward(m, Tensor<float>::zeros({2, 27, 28, 1}), false), dcnn::ShapeMismatch);
    EXPECT_THROW(forward(m, Tensor<float>::zeros({2, 28, 28, 3}), false), dcnn::ShapeMismatch);
}

TEST(ForwardCacheShapes, MatchArchitectureTable) {
    const auto m = build_digit_model<float>(10);
    Rng rng(15);
    const auto img = testutil::random_tensor<float>({28, 28, 1}, rng, 0.0, 1.0);
    Rng drop(dcnn::derive_seed(1, "dropout", 0, 0));
    dcnn::ForwardCache<float> cache;
    forward_sample(m, img, true, drop, &cache);

    EXPECT_EQ(cache.conv1_pre.shape(), (Shape{28, 28, 32}));
    EXPECT_EQ(cache.pool1_out.shape(), (Shape{14, 14, 32}));
    EXPECT_EQ(cache.drop1_out.shape(), (Shape{14, 14, 32}));
    EXPECT_EQ(cache.conv2_pre.shape(), (Shape{14, 14, 64}));
    EXPECT_EQ(cache.pool2_out.shape(), (Shape{7, 7, 64}));
    EXPECT_EQ(cache.drop2_out.shape(), (Shape{7, 7, 64}));
    EXPECT_EQ(cache.conv3_pre.shape(), (Shape{7, 7, 64}));
    EXPECT_EQ(cache.flat.shape(), (Shape{3136}));
    EXPECT_EQ(cache.dense1_pre.shape(), (Shape{64}));
    EXPECT_EQ(cache.drop3_out.shape(), (Shape{64}));
    EXPECT_EQ(cache.logits.shape(), (Shape{10}));
    EXPECT_EQ(cache.probs.shape(), (Shape{10}));
}

TEST(ArgmaxLabel, PicksLargestAndBreaksTiesLow) {
    const float clear[10] = {0.05f, 0.05f, 0.05f, 0.05f, 0.05f,
                             0.05f, 0.05f, 0.55f, 0.05f, 0.05f};
    EXPECT_EQ(dcnn::argmax_label(clear, 10), 7);

    float tied[10] = {0.0f};
    tied[2] = 0.4f;
    tied[5] = 0.4f;
    EXPECT_EQ(dcnn::argmax_label(tied, 10), 2);
}

TEST(ArgmaxLabel, InvariantUnderIncreasingTransforms) {
    Rng rng(16);
    for (int trial = 0; trial < 30; ++trial) {
        float row[10];
        for (float& v : row) v = static_cast<float>(rng.uniform(-4, 4));
        float scaled[10];
        for (int j = 0; j < 10; ++j) scaled[j] = 3.0f * row[j] + 11.0f; // strictly increasing
        EXPECT_EQ(dcnn::argmax_label(row, 10), dcnn::argmax_label(scaled, 10));
    }
}

TEST(Predict, AgreesWithForwardArgmax) {
    const auto m = build_digit_model<float>(11);
    const auto batch = random_batch(6, 17);
    const auto probs = forward(m, batch, false);
    const auto labels = predict(m, batch);
    ASSERT_EQ(labels.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(labels[i], dcnn::argmax_label(probs.data().data() + i * 10, 10));
    }
}

// --------------------------------------------------------------------------
// serialization

TEST(Serialize, RoundTripIsBitwise) {
    testutil::TempDir tmp;
    const auto path = tmp.file("model.dcnn");

    auto m = build_digit_model<float>(1234, 3, 0.3);
    save_model(m, path);
    const auto loaded = dcnn::load_model(path);

    EXPECT_EQ(loaded.kernel_size, m.kernel_size);
    EXPECT_EQ(loaded.dropout_rate, m.dropout_rate);
    EXPECT_EQ(loaded.seed, m.seed);

    std::vector<const Tensor<float>*> orig, back;
    m.for_each_parameter([&orig](const Tensor<float>& p) { orig.push_back(&p); });
    loaded.for_each_parameter([&back](const Tensor<float>& p) { back.push_back(&p); });
    for (std::size_t i = 0; i < orig.size(); ++i) {
        EXPECT_EQ(*orig[i], *back[i]) << "parameter tensor " << i;
    }
}

TEST(Serialize, RoundTripPreservesPredictions) {
    testutil::TempDir tmp;
    const auto path = tmp.file("model.dcnn");

    const auto m = build_digit_model<float>(55);
    const auto batch = random_batch(100, 18);
    const auto before_probs = forward(m, batch, false);
    const auto before_labels = predict(m, batch);

    save_model(m, path);
    const auto loaded = dcnn::load_model(path);
    EXPECT_EQ(forward(loaded, batch, false), before_probs);
    EXPECT_EQ(predict(loaded, batch), before_labels);
}

TEST(Serialize, WrongMagicRejected) {
    testutil::TempDir tmp;
    const auto path = tmp.file("bad.dcnn");
    std::ofstream(path, std::ios::binary) << "NOPE this is not a model";
    EXPECT_THROW(dcnn::load_model(path), dcnn::FormatError);
}

TEST(Serialize, TruncationReportsByteOffset) {
    testutil::TempDir tmp;
    const auto path = tmp.file("model.dcnn");
    save_model(build_digit_model<float>(66), path);

    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    bytes.resize(bytes.size() / 2);
    std::ofstream(path, std::ios::binary | std::ios::trunc)
        .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

    try {
        dcnn::load_model(path);
        FAIL() << "expected FormatError";
    } catch (const dcnn::FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
    }
}

TEST(Serialize, CorruptedWeightFailsChecksum) {
    testutil::TempDir tmp;
    const auto path = tmp.file("model.dcnn");
    save_model(build_digit_model<float>(67), path);

    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(5000);
    char byte = 0;
    f.read(&byte, 1);
    f.seekp(5000);
    byte = static_cast<char>(byte ^ 0x40);
    f.write(&byte, 1);
    f.close();

    EXPECT_THROW(dcnn::load_model(path), dcnn::ChecksumError);
}

TEST(Serialize, UnsupportedVersionRejected) {
    testutil::TempDir tmp;
    const auto path = tmp.file("model.dcnn");
    save_model(build_digit_model<float>(68), path);

    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    const char v2 = 2;
    f.write(&v2, 1);
    f.close();
    EXPECT_THROW(dcnn::load_model(path), dcnn::FormatError);
}

TEST(Serialize, TrailingGarbageRejected) {
    testutil::TempDir tmp;
    const auto path = tmp.file("model.dcnn");
    save_model(build_digit_model<float>(69), path);
    std::ofstream(path, std::ios::binary | std::ios::app) << "extra";
    EXPECT_THROW(dcnn::load_model(path), dcnn::FormatError);
}

TEST(Serialize, MissingFileIsIoError) {
    EXPECT_THROW(dcnn::load_model("/nonexistent/model.dcnn"), dcnn::IoError);
}
