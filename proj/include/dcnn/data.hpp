#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace dcnn {

inline constexpr std::size_t kImageHeight = 28;
inline constexpr std::size_t kImageWidth = 28;
inline constexpr std::size_t kImagePixels = kImageHeight * kImageWidth;

// Images as a (N,28,28,1) tensor plus optional integer labels. Pixels hold
// the raw 0..255 values until normalize() divides them by 255.
struct LabeledDataset {
    Tensor<float> images;
    std::vector<int> labels; // empty for unlabeled (test) files
    bool normalized = false;

    std::size_t size() const { return images.rank() == 4 ? images.dim(0) : 0; }
    bool labeled() const { return !labels.empty(); }
};

struct SplitDataset {
    LabeledDataset train;
    LabeledDataset val;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

inline long parse_int_field(std::string_view field, std::size_t line_no, const char* what) {
    long value = 0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || field.empty()) {
        throw ValueError("line " + std::to_string(line_no) + ": " + what + " '" +
                         std::string(field) + "' is not an integer");
    }
    return value;
}

} // namespace detail

// Reads a comma-separated pixel file. Labeled files carry the header
// `label,pixel0,...,pixel783`; unlabeled ones `pixel0,...,pixel783`. Pixel
// column x maps to image position (x / 28, x % 28). LF and CRLF both accepted.
inline LabeledDataset load_csv(const std::string& path, bool labeled) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("cannot open '" + path + "'");
    }

    std::string line;
    if (!std::getline(file, line)) {
        throw HeaderError("'" + path + "' is empty");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const std::size_t expected_cols = kImagePixels + (labeled ? 1 : 0);
    const auto header = detail::split_fields(line);
    if (header.size() != expected_cols) {
        throw HeaderError("expected " + std::to_string(expected_cols) + " header columns, got " +
                          std::to_string(header.size()));
    }
    std::size_t pixel_start = 0;
    if (labeled) {
        if (header[0] != "label") {
            throw HeaderError("first column must be 'label', got '" + std::string(header[0]) + "'");
        }
        pixel_start = 1;
    }
    for (std::size_t x = 0; x < kImagePixels; ++x) {
        const std::string want = "pixel" + std::to_string(x);
        if (header[pixel_start + x] != want) {
            throw HeaderError("column " + std::to_string(pixel_start + x) + " must be '" + want +
                              "', got '" + std::string(header[pixel_start + x]) + "'");
        }
    }

    std::vector<float> pixels;
    std::vector<int> labels;
    std::size_t rows = 0;
    std::size_t line_no = 1;
    while (std::getline(file, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue; // trailing newline
        const auto fields = detail::split_fields(line);
        if (fields.size() != expected_cols) {
            throw ValueError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(expected_cols) + " fields, got " +
                             std::to_string(fields.size()));
        }
        if (labeled) {
            const long label = detail::parse_int_field(fields[0], line_no, "label");
            if (label < 0 || label > 9) {
                throw LabelError("line " + std::to_string(line_no) + ": label " +
                                 std::to_string(label) + " outside 0..9");
            }
            labels.push_back(static_cast<int>(label));
        }
        for (std::size_t x = 0; x < kImagePixels; ++x) {
            const long v = detail::parse_int_field(fields[pixel_start + x], line_no, "pixel");
            if (v < 0 || v > 255) {
                throw ValueError("line " + std::to_string(line_no) + ": pixel value " +
                                 std::to_string(v) + " outside 0..255");
            }
            pixels.push_back(static_cast<float>(v));
        }
        ++rows;
    }
    if (rows == 0) {
        throw ValueError("'" + path + "' has no data rows");
    }

    LabeledDataset ds;
    ds.images = Tensor<float>({rows, kImageHeight, kImageWidth, 1}, std::move(pixels));
    ds.labels = std::move(labels);
    return ds;
}

// Divides every pixel by 255 (the format's fixed maximum) and marks the
// dataset normalized.
inline LabeledDataset normalize(const LabeledDataset& ds) {
    if (ds.normalized) {
        throw AlreadyNormalized("dataset is already normalized");
    }
    LabeledDataset out;
    out.images = ds.images;
    for (float& v : out.images.data()) v /= 255.0f;
    out.labels = ds.labels;
    out.normalized = true;
    return out;
}

namespace detail {

inline LabeledDataset gather(const LabeledDataset& ds, const std::vector<std::size_t>& idx) {
    LabeledDataset out;
    std::vector<float> pixels(idx.size() * kImagePixels);
    const float* src = ds.images.data().data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const float* row = src + idx[i] * kImagePixels;
        std::copy(row, row + kImagePixels, pixels.data() + i * kImagePixels);
    }
    out.images = Tensor<float>({idx.size(), kImageHeight, kImageWidth, 1}, std::move(pixels));
    if (ds.labeled()) {
        out.labels.reserve(idx.size());
        for (std::size_t i : idx) out.labels.push_back(ds.labels[i]);
    }
    out.normalized = ds.normalized;
    return out;
}

} // namespace detail

// Seeded shuffle of all indices, first train_count to train, next val_count
// to val. `sequential` skips the shuffle and splits in file order.
inline SplitDataset split(const LabeledDataset& ds, std::size_t train_count,
                          std::size_t val_count, std::uint64_t seed, bool sequential = false) {
    if (train_count == 0 || val_count == 0) {
        throw InvalidSplit("train and validation counts must be positive");
    }
    if (train_count + val_count > ds.size()) {
        throw InvalidSplit("split wants " + std::to_string(train_count + val_count) +
                           " samples but dataset has " + std::to_string(ds.size()));
    }
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (!sequential) {
        Rng rng(seed);
        rng.shuffle(order);
    }
    SplitDataset out;
    out.train = detail::gather(ds, {order.begin(), order.begin() + train_count});
    out.val = detail::gather(ds, {order.begin() + train_count,
                                  order.begin() + train_count + val_count});
    return out;
}

// Index batches: ceil(n / batch_size) of them, the last possibly short.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                                     bool shuffle, std::uint64_t seed) {
    if (batch_size == 0) {
        throw InvalidConfig("batch_size must be >= 1");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        Rng rng(seed);
        rng.shuffle(order);
    }
    std::vector<std::vector<std::size_t>> out;
    out.reserve((n + batch_size - 1) / batch_size);
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(start + batch_size, n);
        out.emplace_back(order.begin() + start, order.begin() + end);
    }
    return out;
}

inline std::vector<std::vector<std::size_t>> batches(const LabeledDataset& ds,
                                                     std::size_t batch_size, bool shuffle,
                                                     std::uint64_t seed) {
    return batches(ds.size(), batch_size, shuffle, seed);
}

// Copies sample i into a (28,28,1) tensor of the requested scalar type.
template <typename T = float>
Tensor<T> image_at(const LabeledDataset& ds, std::size_t i) {
    Tensor<T> img = Tensor<T>::zeros({kImageHeight, kImageWidth, 1});
    const float* src = ds.images.data().data() + i * kImagePixels;
    T* dst = img.data().data();
    for (std::size_t p = 0; p < kImagePixels; ++p) dst[p] = static_cast<T>(src[p]);
    return img;
}

// Stacks the given samples into a (B,28,28,1) batch tensor.
template <typename T = float>
Tensor<T> gather_images(const LabeledDataset& ds, const std::vector<std::size_t>& idx) {
    Tensor<T> batch = Tensor<T>::zeros({idx.size(), kImageHeight, kImageWidth, 1});
    const float* src = ds.images.data().data();
    T* dst = batch.data().data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const float* row = src + idx[i] * kImagePixels;
        for (std::size_t p = 0; p < kImagePixels; ++p) {
            dst[i * kImagePixels + p] = static_cast<T>(row[p]);
        }
    }
    return batch;
}

} // namespace dcnn
