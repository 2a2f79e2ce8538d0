#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <utility>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "train.hpp"

namespace dcnn {

// The train/validation split a config describes, derived from the run's root
// seed. fit() and the eval command both come through here so they cannot
// disagree about which samples form the validation slice.
inline SplitDataset split_for_config(const LabeledDataset& ds, const TrainConfig& cfg) {
    return split(ds, cfg.train_count, cfg.val_count, derive_seed(cfg.seed, "split"));
}

// Mean per-sample loss and accuracy of an inference pass over the dataset.
// Per-sample results are reduced in index order, so the numbers do not
// depend on the thread count.
template <typename T>
std::pair<double, double> evaluate(const NetworkModel<T>& model, const LabeledDataset& ds,
                                   int threads = 1) {
    const std::size_t n = ds.size();
    if (n == 0) throw EmptyInput("cannot evaluate an empty dataset");
    if (!ds.labeled()) throw InvalidConfig("evaluate needs a labeled dataset");

    std::vector<double> losses(n);
    std::vector<unsigned char> correct(n);
    detail::parallel_chunks(n, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        Rng unused(0);
        for (std::size_t i = begin; i < end; ++i) {
            const Tensor<T> probs =
                forward_sample(model, image_at<T>(ds, i), /*training=*/false, unused);
            const Tensor<T> target = one_hot_encode<T>(ds.labels[i]);
            losses[i] = static_cast<double>(cross_entropy(probs, target));
            correct[i] = argmax_label(probs.data().data(), kNumClasses) == ds.labels[i];
        }
    });
    double loss_sum = 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        loss_sum += losses[i];
        hits += correct[i];
    }
    return {loss_sum / static_cast<double>(n), static_cast<double>(hits) / static_cast<double>(n)};
}

// One full pass over the shuffled training set (forward in training mode,
// backward, one Adam step per batch and parameter tensor), then a full
// inference pass over the validation set. `epoch` is 1-based and indexes the
// shuffle and dropout sub-streams.
template <typename T>
EpochMetrics train_epoch(NetworkModel<T>& model, const LabeledDataset& train,
                         const LabeledDataset& val, const TrainConfig& cfg, int epoch) {
    cfg.validate();
    if (!train.labeled()) throw InvalidConfig("training dataset must be labeled");
    const std::size_t n = train.size();
    if (n == 0) throw EmptyInput("training dataset is empty");

    if (model.adam_state.empty()) {
        model.for_each_parameter([&model](Tensor<T>& p) {
            model.adam_state.push_back(AdamState<T>::zeros_like(p));
        });
    }

    const auto index_batches =
        batches(n, cfg.batch_size, /*shuffle=*/true,
                derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));

    const int threads = cfg.threads;
    std::vector<ModelGrads<T>> worker_grads;
    for (int w = 0; w < threads; ++w) worker_grads.push_back(ModelGrads<T>::zeros_like(model));

    std::vector<double> sample_loss(n);
    std::vector<unsigned char> sample_correct(n);

    std::size_t ordinal_base = 0;
    for (const auto& batch : index_batches) {
        const std::size_t bsize = batch.size();
        const T inv_batch = T(1) / static_cast<T>(bsize);
        for (auto& g : worker_grads) g.set_zero();

        detail::parallel_chunks(bsize, threads, [&](std::size_t worker, std::size_t begin,
                                                    std::size_t end) {
            for (std::size_t s = begin; s < end; ++s) {
                const std::size_t ordinal = ordinal_base + s;
                const std::size_t sample = batch[s];
                Rng drop_rng(derive_seed(cfg.seed, "dropout",
                                         static_cast<std::uint64_t>(epoch), ordinal));
                ForwardCache<T> cache;
                const Tensor<T> probs = forward_sample(model, image_at<T>(train, sample),
                                                       /*training=*/true, drop_rng, &cache);
                const Tensor<T> target = one_hot_encode<T>(train.labels[sample]);
                sample_loss[ordinal] = static_cast<double>(cross_entropy(probs, target));
                sample_correct[ordinal] =
                    argmax_label(probs.data().data(), kNumClasses) == train.labels[sample];

                Tensor<T> grad_logits = output_gradient(probs, target);
                for (T& v : grad_logits.data()) v *= inv_batch;
                backward_sample(model, cache, grad_logits, worker_grads[worker]);
            }
        });

        // Merge worker accumulators in worker order (workers own contiguous
        // sample ranges, so this is sample-index-ordered at chunk level).
        for (int w = 1; w < threads; ++w) worker_grads[0].add(worker_grads[w]);

        std::vector<Tensor<T>*> params;
        std::vector<Tensor<T>*> grads;
        model.for_each_parameter([&params](Tensor<T>& p) { params.push_back(&p); });
        worker_grads[0].for_each([&grads](Tensor<T>& g) { grads.push_back(&g); });
        for (std::size_t k = 0; k < params.size(); ++k) {
            adam_step(*params[k], *grads[k], model.adam_state[k], cfg);
        }

        ordinal_base += bsize;
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    double loss_sum = 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        loss_sum += sample_loss[i];
        hits += sample_correct[i];
    }
    metrics.train_loss = loss_sum / static_cast<double>(n);
    metrics.train_accuracy = static_cast<double>(hits) / static_cast<double>(n);

    const auto [val_loss, val_acc] = evaluate(model, val, threads);
    metrics.val_loss = val_loss;
    metrics.val_accuracy = val_acc;
    return metrics;
}

// Splits the dataset per the config and trains for cfg.epochs epochs.
// Returns one metrics row per epoch, in order; on_epoch (if given) fires
// after each epoch, e.g. for progress output.
template <typename T>
std::vector<EpochMetrics> fit(NetworkModel<T>& model, const LabeledDataset& data,
                              const TrainConfig& cfg,
                              const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    cfg.validate();
    if (!data.normalized) {
        throw InvalidConfig("dataset must be normalized before training");
    }
    std::vector<EpochMetrics> metrics;
    if (cfg.epochs == 0) return metrics;

    const SplitDataset parts = split_for_config(data, cfg);
    metrics.reserve(static_cast<std::size_t>(cfg.epochs));
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        metrics.push_back(train_epoch(model, parts.train, parts.val, cfg, epoch));
        if (on_epoch) on_epoch(metrics.back());
    }
    return metrics;
}

} // namespace dcnn
