#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

#include "errors.hpp"

namespace dcnn {

// 10x10 count table. Rows are indexed by the predicted digit, columns by the
// true digit; the diagonal counts correct classifications.
struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, 10>, 10> counts{};

    std::uint64_t trace() const {
        std::uint64_t t = 0;
        for (std::size_t i = 0; i < 10; ++i) t += counts[i][i];
        return t;
    }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (const auto& row : counts) {
            for (std::uint64_t c : row) t += c;
        }
        return t;
    }
};

// Fraction of positions where the two label lists agree.
inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
    if (predicted.size() != truth.size()) {
        throw LengthMismatch("accuracy needs equal-length lists, got " +
                             std::to_string(predicted.size()) + " and " +
                             std::to_string(truth.size()));
    }
    if (predicted.empty()) {
        throw EmptyInput("accuracy of empty lists is undefined");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        hits += predicted[i] == truth[i];
    }
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

// counts[p][t] = number of samples predicted p whose true label is t.
inline ConfusionMatrix confusion_matrix(std::span<const int> predicted,
                                        std::span<const int> truth) {
    if (predicted.size() != truth.size()) {
        throw LengthMismatch("confusion_matrix needs equal-length lists");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const int p = predicted[i];
        const int t = truth[i];
        if (p < 0 || p > 9 || t < 0 || t > 9) {
            throw InvalidLabel("labels must be in 0..9, got predicted " + std::to_string(p) +
                               ", true " + std::to_string(t));
        }
        ++cm.counts[static_cast<std::size_t>(p)][static_cast<std::size_t>(t)];
    }
    return cm;
}

} // namespace dcnn
