#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "tensor.hpp"

namespace dcnn {

// Everything the fit loop needs to know. Defaults follow the reference
// training setup: 15 epochs, batch 64, Adam at its canonical settings,
// dropout 0.3, 33600/8400 train/validation split.
struct TrainConfig {
    int epochs = 15;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // Consumed when the network is constructed; forward passes use the rate
    // stored in the model.
    double dropout_rate = 0.3;
    std::uint64_t seed = 42;
    std::size_t train_count = 33600;
    std::size_t val_count = 8400;
    // Intra-op parallelism over the samples of a batch. 1 is the bitwise
    // reproducible reference mode.
    int threads = 1;

    void validate() const {
        if (epochs < 0) throw InvalidConfig("epochs must be >= 0");
        if (batch_size == 0) throw InvalidConfig("batch_size must be >= 1");
        if (!(learning_rate >= 0)) throw InvalidConfig("learning_rate must be >= 0");
        if (!(beta1 > 0 && beta1 < 1)) throw InvalidConfig("beta1 must be in (0, 1)");
        if (!(beta2 > 0 && beta2 < 1)) throw InvalidConfig("beta2 must be in (0, 1)");
        if (!(epsilon > 0)) throw InvalidConfig("epsilon must be positive");
        if (!(dropout_rate >= 0 && dropout_rate < 1)) {
            throw InvalidRate("dropout_rate must be in [0, 1)");
        }
        if (train_count == 0 || val_count == 0) {
            throw InvalidConfig("train_count and val_count must be positive");
        }
        if (threads < 1) throw InvalidConfig("threads must be >= 1");
    }
};

// Per-epoch summary. Train-side numbers are running means over the epoch's
// training forwards (dropout active), validation numbers come from a full
// inference pass afterwards.
struct EpochMetrics {
    int epoch = 0; // 1-based
    double train_loss = 0;
    double train_accuracy = 0;
    double val_loss = 0;
    double val_accuracy = 0;
};

// First/second moment estimates for one parameter tensor.
template <typename T>
struct AdamState {
    Tensor<T> m;
    Tensor<T> v;
    std::int64_t t = 0;

    static AdamState zeros_like(const Tensor<T>& param) {
        AdamState s;
        s.m = Tensor<T>::zeros(param.shape());
        s.v = Tensor<T>::zeros(param.shape());
        return s;
    }
};

// Basis vector with 1 at position `label`.
template <typename T>
Tensor<T> one_hot_encode(int label) {
    if (label < 0 || label > 9) {
        throw InvalidLabel("label must be in 0..9, got " + std::to_string(label));
    }
    Tensor<T> t = Tensor<T>::zeros({10});
    t[static_cast<std::size_t>(label)] = T(1);
    return t;
}

// Categorical cross-entropy -sum(target_i * log(p_i)) with probabilities
// clipped to [1e-12, 1] so an exact zero never produces -inf.
template <typename T>
T cross_entropy(const Tensor<T>& probs, const Tensor<T>& target) {
    if (!probs.same_shape(target)) {
        throw ShapeMismatch("cross_entropy probs and target shapes differ");
    }
    T loss = T(0);
    const T* pv = probs.data().data();
    const T* tv = target.data().data();
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (tv[i] != T(0)) {
            loss -= tv[i] * std::log(std::clamp(pv[i], T(1e-12), T(1)));
        }
    }
    return loss;
}

// Gradient of cross_entropy(softmax(z), target) with respect to the logits z:
// probs - target. Per sample; the batch reduction divides by the batch size.
template <typename T>
Tensor<T> output_gradient(const Tensor<T>& probs, const Tensor<T>& target) {
    if (!probs.same_shape(target)) {
        throw ShapeMismatch("output_gradient probs and target shapes differ");
    }
    Tensor<T> g = probs;
    const T* tv = target.data().data();
    T* gv = g.data().data();
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] -= tv[i];
    return g;
}

// One Adam update:
//   t += 1
//   m <- beta1*m + (1-beta1)*g        v <- beta2*v + (1-beta2)*g^2
//   param -= lr * (m / (1-beta1^t)) / (sqrt(v / (1-beta2^t)) + eps)
template <typename T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state,
               const TrainConfig& cfg) {
    if (!param.same_shape(grad) || !param.same_shape(state.m) || !param.same_shape(state.v)) {
        throw ShapeMismatch("adam_step parameter, gradient and state shapes must agree");
    }
    state.t += 1;
    const T lr = static_cast<T>(cfg.learning_rate);
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    const T eps = static_cast<T>(cfg.epsilon);
    const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.t)));
    const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.t)));

    T* p = param.data().data();
    T* m = state.m.data().data();
    T* v = state.v.data().data();
    const T* g = grad.data().data();
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

} // namespace dcnn
