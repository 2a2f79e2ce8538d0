#pragma once

#include <cstdint>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "layers.hpp"
#include "rng.hpp"
#include "train.hpp"

namespace dcnn {

inline constexpr std::size_t kInputHeight = 28;
inline constexpr std::size_t kInputWidth = 28;
inline constexpr std::size_t kInputChannels = 1;
inline constexpr std::size_t kNumClasses = 10;

namespace detail {

// Runs fn(chunk_index, begin, end) over [0, n) split into contiguous chunks,
// one per worker. threads == 1 runs inline with no spawning.
template <typename F>
void parallel_chunks(std::size_t n, int threads, F&& fn) {
    const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), n == 0 ? 1 : n);
    if (workers <= 1) {
        fn(std::size_t{0}, std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t c = 0; c < workers; ++c) {
        const std::size_t begin = n * c / workers;
        const std::size_t end = n * (c + 1) / workers;
        pool.emplace_back([&fn, c, begin, end] { fn(c, begin, end); });
    }
    for (auto& t : pool) t.join();
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
    T* d = dst.data().data();
    const T* s = src.data().data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

} // namespace detail

// The fixed digit-recognition stack:
//   Input(28,28,1) -> Conv2D(32)+ReLU -> MaxPool -> Dropout
//                  -> Conv2D(64)+ReLU -> MaxPool -> Dropout
//                  -> Conv2D(64)+ReLU -> Flatten
//                  -> Dense(64)+ReLU -> Dropout -> Dense(10)+Softmax
// Parameterized only by kernel size, dropout rate and seed.
template <typename T>
struct NetworkModel {
    int kernel_size = 3;
    T dropout_rate = T(0.3);
    std::uint64_t seed = 0;

    ConvParams<T> conv1, conv2, conv3;
    DenseParams<T> dense1, dense2;

    // One slot per parameter tensor, in for_each_parameter order. Sized by
    // the trainer on first use; not serialized.
    std::vector<AdamState<T>> adam_state;

    static constexpr std::size_t kParameterTensors = 10;

    template <typename F>
    void for_each_parameter(F&& f) {
        f(conv1.kernels); f(conv1.bias);
        f(conv2.kernels); f(conv2.bias);
        f(conv3.kernels); f(conv3.bias);
        f(dense1.weights); f(dense1.bias);
        f(dense2.weights); f(dense2.bias);
    }

    template <typename F>
    void for_each_parameter(F&& f) const {
        f(conv1.kernels); f(conv1.bias);
        f(conv2.kernels); f(conv2.bias);
        f(conv3.kernels); f(conv3.bias);
        f(dense1.weights); f(dense1.bias);
        f(dense2.weights); f(dense2.bias);
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_parameter([&n](const Tensor<T>& p) { n += p.size(); });
        return n;
    }
};

// Gradients for every parameter tensor, mirroring NetworkModel's layout.
template <typename T>
struct ModelGrads {
    Tensor<T> conv1_kernels, conv1_bias;
    Tensor<T> conv2_kernels, conv2_bias;
    Tensor<T> conv3_kernels, conv3_bias;
    Tensor<T> dense1_weights, dense1_bias;
    Tensor<T> dense2_weights, dense2_bias;

    static ModelGrads zeros_like(const NetworkModel<T>& m) {
        ModelGrads g;
        g.conv1_kernels = Tensor<T>::zeros(m.conv1.kernels.shape());
        g.conv1_bias = Tensor<T>::zeros(m.conv1.bias.shape());
        g.conv2_kernels = Tensor<T>::zeros(m.conv2.kernels.shape());
        g.conv2_bias = Tensor<T>::zeros(m.conv2.bias.shape());
        g.conv3_kernels = Tensor<T>::zeros(m.conv3.kernels.shape());
        g.conv3_bias = Tensor<T>::zeros(m.conv3.bias.shape());
        g.dense1_weights = Tensor<T>::zeros(m.dense1.weights.shape());
        g.dense1_bias = Tensor<T>::zeros(m.dense1.bias.shape());
        g.dense2_weights = Tensor<T>::zeros(m.dense2.weights.shape());
        g.dense2_bias = Tensor<T>::zeros(m.dense2.bias.shape());
        return g;
    }

    template <typename F>
    void for_each(F&& f) {
        f(conv1_kernels); f(conv1_bias);
        f(conv2_kernels); f(conv2_bias);
        f(conv3_kernels); f(conv3_bias);
        f(dense1_weights); f(dense1_bias);
        f(dense2_weights); f(dense2_bias);
    }

    void set_zero() {
        for_each([](Tensor<T>& t) {
            for (T& v : t.data()) v = T(0);
        });
    }

    void add(ModelGrads& other) {
        detail::add_into(conv1_kernels, other.conv1_kernels);
        detail::add_into(conv1_bias, other.conv1_bias);
        detail::add_into(conv2_kernels, other.conv2_kernels);
        detail::add_into(conv2_bias, other.conv2_bias);
        detail::add_into(conv3_kernels, other.conv3_kernels);
        detail::add_into(conv3_bias, other.conv3_bias);
        detail::add_into(dense1_weights, other.dense1_weights);
        detail::add_into(dense1_bias, other.dense1_bias);
        detail::add_into(dense2_weights, other.dense2_weights);
        detail::add_into(dense2_bias, other.dense2_bias);
    }
};

namespace detail {

// He-uniform initialization: uniform in [-b, b] with b = sqrt(6 / fan_in).
template <typename T>
void he_uniform_fill(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (T& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

} // namespace detail

// Builds the stack above with seeded He-uniform weights and zero biases.
template <typename T = float>
NetworkModel<T> build_digit_model(std::uint64_t seed, int kernel_size = 3,
                                  double dropout_rate = 0.3) {
    if (kernel_size < 1 || kernel_size % 2 == 0) {
        throw InvalidConfig("kernel size must be odd and positive, got " +
                            std::to_string(kernel_size));
    }
    if (!(dropout_rate >= 0 && dropout_rate < 1)) {
        throw InvalidRate("dropout rate must be in [0, 1)");
    }

    NetworkModel<T> m;
    m.kernel_size = kernel_size;
    m.dropout_rate = static_cast<T>(dropout_rate);
    m.seed = seed;

    const std::size_t k = static_cast<std::size_t>(kernel_size);
    const std::size_t flat = (kInputHeight / 4) * (kInputWidth / 4) * 64; // after two 2x2 pools

    m.conv1.kernels = Tensor<T>::zeros({k, k, kInputChannels, 32});
    m.conv1.bias = Tensor<T>::zeros({32});
    m.conv2.kernels = Tensor<T>::zeros({k, k, 32, 64});
    m.conv2.bias = Tensor<T>::zeros({64});
    m.conv3.kernels = Tensor<T>::zeros({k, k, 64, 64});
    m.conv3.bias = Tensor<T>::zeros({64});
    m.dense1.weights = Tensor<T>::zeros({flat, 64});
    m.dense1.bias = Tensor<T>::zeros({64});
    m.dense2.weights = Tensor<T>::zeros({64, kNumClasses});
    m.dense2.bias = Tensor<T>::zeros({kNumClasses});

    std::uint64_t index = 0;
    m.for_each_parameter([&](Tensor<T>& p) {
        if (p.rank() > 1) { // weights; biases stay zero
            const std::size_t fan_in = p.rank() == 4 ? p.dim(0) * p.dim(1) * p.dim(2) : p.dim(0);
            Rng rng(derive_seed(seed, "init", index));
            detail::he_uniform_fill(p, fan_in, rng);
        }
        ++index;
    });
    return m;
}

struct LayerInfo {
    std::string name;
    Shape output_shape;
};

// The layer/shape table of the architecture, one row per layer plus the
// input row. Spatial shapes are forced by same padding and 2x2 pooling.
template <typename T>
std::vector<LayerInfo> layer_summary(const NetworkModel<T>& m) {
    const std::size_t h = kInputHeight;
    const std::size_t w = kInputWidth;
    const std::size_t flat = m.dense1.weights.dim(0);
    return {
        {"Input", {h, w, kInputChannels}},
        {"Conv2D", {h, w, m.conv1.kernels.dim(3)}},
        {"MaxPooling2D", {h / 2, w / 2, m.conv1.kernels.dim(3)}},
        {"Dropout", {h / 2, w / 2, m.conv1.kernels.dim(3)}},
        {"Conv2D", {h / 2, w / 2, m.conv2.kernels.dim(3)}},
        {"MaxPooling2D", {h / 4, w / 4, m.conv2.kernels.dim(3)}},
        {"Dropout", {h / 4, w / 4, m.conv2.kernels.dim(3)}},
        {"Conv2D", {h / 4, w / 4, m.conv3.kernels.dim(3)}},
        {"Flatten", {flat}},
        {"Dense", {m.dense1.weights.dim(1)}},
        {"Dropout", {m.dense1.weights.dim(1)}},
        {"Dense", {m.dense2.weights.dim(1)}},
    };
}

// Intermediate activations of one sample's training-mode forward pass,
// retained so the backward pass can consume them.
template <typename T>
struct ForwardCache {
    Tensor<T> input;
    Tensor<T> conv1_pre, relu1_out;
    PoolArgmax pool1;
    Tensor<T> pool1_out;
    DropoutMask<T> drop1;
    Tensor<T> drop1_out;
    Tensor<T> conv2_pre, relu2_out;
    PoolArgmax pool2;
    Tensor<T> pool2_out;
    DropoutMask<T> drop2;
    Tensor<T> drop2_out;
    Tensor<T> conv3_pre, relu3_out;
    Tensor<T> flat;
    Tensor<T> dense1_pre, relu4_out;
    DropoutMask<T> drop3;
    Tensor<T> drop3_out;
    Tensor<T> logits;
    Tensor<T> probs;
};

// Forward pass for a single (28,28,1) image. Returns class probabilities.
// In training mode dropout draws from `rng`; pass a cache to retain
// activations for backward.
template <typename T>
Tensor<T> forward_sample(const NetworkModel<T>& model, const Tensor<T>& image,
                         bool training, Rng& rng, ForwardCache<T>* cache = nullptr) {
    if (image.rank() != 3 || image.dim(0) != kInputHeight || image.dim(1) != kInputWidth ||
        image.dim(2) != kInputChannels) {
        throw ShapeMismatch("model input must be (28, 28, 1), got " +
                            detail::shape_str(image.shape()));
    }
    const T rate = model.dropout_rate;

    Tensor<T> conv1_pre = conv2d_forward(image, model.conv1);
    Tensor<T> relu1_out = relu_forward(conv1_pre);
    auto [pool1_out, pool1_idx] = maxpool_forward(relu1_out);
    auto [drop1_out, drop1_mask] = dropout_forward(pool1_out, rate, training, rng);

    Tensor<T> conv2_pre = conv2d_forward(drop1_out, model.conv2);
    Tensor<T> relu2_out = relu_forward(conv2_pre);
    auto [pool2_out, pool2_idx] = maxpool_forward(relu2_out);
    auto [drop2_out, drop2_mask] = dropout_forward(pool2_out, rate, training, rng);

    Tensor<T> conv3_pre = conv2d_forward(drop2_out, model.conv3);
    Tensor<T> relu3_out = relu_forward(conv3_pre);
    Tensor<T> flat = flatten_forward(relu3_out);

    Tensor<T> dense1_pre = dense_forward(flat, model.dense1);
    Tensor<T> relu4_out = relu_forward(dense1_pre);
    auto [drop3_out, drop3_mask] = dropout_forward(relu4_out, rate, training, rng);

    Tensor<T> logits = dense_forward(drop3_out, model.dense2);
    Tensor<T> probs = softmax(logits);

    if (cache != nullptr) {
        cache->input = image;
        cache->conv1_pre = std::move(conv1_pre);
        cache->relu1_out = std::move(relu1_out);
        cache->pool1 = std::move(pool1_idx);
        cache->pool1_out = std::move(pool1_out);
        cache->drop1 = std::move(drop1_mask);
        cache->drop1_out = std::move(drop1_out);
        cache->conv2_pre = std::move(conv2_pre);
        cache->relu2_out = std::move(relu2_out);
        cache->pool2 = std::move(pool2_idx);
        cache->pool2_out = std::move(pool2_out);
        cache->drop2 = std::move(drop2_mask);
        cache->drop2_out = std::move(drop2_out);
        cache->conv3_pre = std::move(conv3_pre);
        cache->relu3_out = std::move(relu3_out);
        cache->flat = std::move(flat);
        cache->dense1_pre = std::move(dense1_pre);
        cache->relu4_out = std::move(relu4_out);
        cache->drop3 = std::move(drop3_mask);
        cache->drop3_out = std::move(drop3_out);
        cache->logits = std::move(logits);
        cache->probs = probs;
    }
    return probs;
}

// Backpropagates grad wrt the logits through the whole stack, accumulating
// parameter gradients into `grads`.
template <typename T>
void backward_sample(const NetworkModel<T>& model, const ForwardCache<T>& cache,
                     const Tensor<T>& grad_logits, ModelGrads<T>& grads) {
    const T rate = model.dropout_rate;

    DenseGrads<T> d2 = dense_backward(cache.drop3_out, model.dense2, grad_logits);
    detail::add_into(grads.dense2_weights, d2.weights);
    detail::add_into(grads.dense2_bias, d2.bias);

    Tensor<T> g = dropout_backward(cache.drop3, rate, d2.input);
    g = relu_backward(cache.dense1_pre, g);

    DenseGrads<T> d1 = dense_backward(cache.flat, model.dense1, g);
    detail::add_into(grads.dense1_weights, d1.weights);
    detail::add_into(grads.dense1_bias, d1.bias);

    g = std::move(d1.input).reshape(cache.relu3_out.shape());
    g = relu_backward(cache.conv3_pre, g);

    ConvGrads<T> c3 = conv2d_backward(cache.drop2_out, model.conv3, g);
    detail::add_into(grads.conv3_kernels, c3.kernels);
    detail::add_into(grads.conv3_bias, c3.bias);

    g = dropout_backward(cache.drop2, rate, c3.input);
    g = maxpool_backward(cache.pool2, g);
    g = relu_backward(cache.conv2_pre, g);

    ConvGrads<T> c2 = conv2d_backward(cache.drop1_out, model.conv2, g);
    detail::add_into(grads.conv2_kernels, c2.kernels);
    detail::add_into(grads.conv2_bias, c2.bias);

    g = dropout_backward(cache.drop1, rate, c2.input);
    g = maxpool_backward(cache.pool1, g);
    g = relu_backward(cache.conv1_pre, g);

    ConvGrads<T> c1 = conv2d_backward(cache.input, model.conv1, g);
    detail::add_into(grads.conv1_kernels, c1.kernels);
    detail::add_into(grads.conv1_bias, c1.bias);
}

// Copies sample i of a (B,28,28,1) batch into its own (28,28,1) tensor.
template <typename T>
Tensor<T> batch_image(const Tensor<T>& batch, std::size_t i) {
    Tensor<T> img = Tensor<T>::zeros({batch.dim(1), batch.dim(2), batch.dim(3)});
    const std::size_t stride = img.size();
    const T* src = batch.data().data() + i * stride;
    std::copy(src, src + stride, img.data().data());
    return img;
}

// Batched forward pass; one probability row per sample. Dropout (training
// mode only) seeds a fresh generator per sample from `dropout_seed_base`, so
// results do not depend on thread count.
template <typename T>
Tensor<T> forward(const NetworkModel<T>& model, const Tensor<T>& batch, bool training,
                  std::uint64_t dropout_seed_base = 0, int threads = 1) {
    if (batch.rank() != 4 || batch.dim(1) != kInputHeight || batch.dim(2) != kInputWidth ||
        batch.dim(3) != kInputChannels) {
        throw ShapeMismatch("model batch must be (B, 28, 28, 1), got " +
                            detail::shape_str(batch.shape()));
    }
    const std::size_t n = batch.dim(0);
    Tensor<T> out = Tensor<T>::zeros({n, kNumClasses});
    detail::parallel_chunks(n, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            Rng rng(derive_seed(dropout_seed_base, "dropout-sample", i));
            Tensor<T> probs = forward_sample(model, batch_image(batch, i), training, rng);
            std::copy(probs.data().begin(), probs.data().end(),
                      out.data().data() + i * kNumClasses);
        }
    });
    return out;
}

// Index of the largest probability; exact ties go to the lowest digit.
template <typename T>
int argmax_label(const T* row, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j) {
        if (row[j] > row[best]) best = j;
    }
    return static_cast<int>(best);
}

// Predicted digit per sample of a normalized (B,28,28,1) batch.
template <typename T>
std::vector<int> predict(const NetworkModel<T>& model, const Tensor<T>& images,
                         int threads = 1) {
    Tensor<T> probs = forward(model, images, /*training=*/false, 0, threads);
    std::vector<int> labels(probs.dim(0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        labels[i] = argmax_label(probs.data().data() + i * kNumClasses, kNumClasses);
    }
    return labels;
}

} // namespace dcnn
