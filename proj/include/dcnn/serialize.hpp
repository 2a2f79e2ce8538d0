#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "model.hpp"

namespace dcnn {

namespace detail {

inline constexpr char kModelMagic[4] = {'D', 'C', 'N', 'N'};
inline constexpr std::uint8_t kModelVersion = 1;

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) {
                c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            }
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xffffffffu;
    for (std::size_t i = 0; i < len; ++i) {
        crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    }
    return crc ^ 0xffffffffu;
}

inline void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

inline void append_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t read_u32le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::uint64_t read_u64le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = v << 8 | p[i];
    return v;
}

inline std::string float_to_string(float v) {
    char buf[48];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

template <typename T>
std::string layers_line(const NetworkModel<T>& m) {
    std::string out;
    for (const LayerInfo& info : layer_summary(m)) {
        if (!out.empty()) out += '|';
        out += info.name + ' ' + shape_str(info.output_shape);
    }
    return out;
}

} // namespace detail

// Model file layout:
//   "DCNN" magic, one version byte,
//   u32 LE header length + textual architecture header (key=value lines),
//   per parameter tensor: u64 LE element count + raw little-endian float32,
//   u32 LE CRC32 over the whole weight region.
inline void save_model(const NetworkModel<float>& model, const std::string& path) {
    static_assert(std::endian::native == std::endian::little,
                  "model serialization assumes a little-endian host");

    std::string header;
    header += "kernel_size=" + std::to_string(model.kernel_size) + "\n";
    header += "dropout_rate=" + detail::float_to_string(model.dropout_rate) + "\n";
    header += "seed=" + std::to_string(model.seed) + "\n";
    header += "layers=" + detail::layers_line(model) + "\n";

    std::vector<std::uint8_t> out;
    out.insert(out.end(), std::begin(detail::kModelMagic), std::end(detail::kModelMagic));
    out.push_back(detail::kModelVersion);
    detail::append_u32le(out, static_cast<std::uint32_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());

    const std::size_t weights_begin = out.size();
    model.for_each_parameter([&out](const Tensor<float>& p) {
        detail::append_u64le(out, p.size());
        const std::size_t at = out.size();
        out.resize(at + p.size() * sizeof(float));
        std::memcpy(out.data() + at, p.data().data(), p.size() * sizeof(float));
    });
    detail::append_u32le(out, detail::crc32(out.data() + weights_begin,
                                            out.size() - weights_begin));

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    file.write(reinterpret_cast<const char*>(out.data()),
               static_cast<std::streamsize>(out.size()));
    if (!file) {
        throw IoError("failed writing '" + path + "'");
    }
}

inline NetworkModel<float> load_model(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("cannot open '" + path + "'");
    }
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(file)),
                                  std::istreambuf_iterator<char>());

    auto need = [&buf](std::size_t at, std::size_t count, const char* what) {
        if (at + count > buf.size()) {
            throw FormatError(std::string("truncated model file: ") + what + " at byte " +
                              std::to_string(at) + " needs " + std::to_string(count) +
                              " bytes, file has " + std::to_string(buf.size()));
        }
    };

    need(0, 5, "magic/version");
    if (std::memcmp(buf.data(), detail::kModelMagic, 4) != 0) {
        throw FormatError("bad magic bytes: not a DCNN model file");
    }
    if (buf[4] != detail::kModelVersion) {
        throw FormatError("unsupported model format version " + std::to_string(buf[4]));
    }

    need(5, 4, "header length");
    const std::uint32_t header_len = detail::read_u32le(buf.data() + 5);
    need(9, header_len, "header");
    const std::string_view header(reinterpret_cast<const char*>(buf.data() + 9), header_len);

    int kernel_size = 0;
    float dropout_rate = -1.0f;
    std::uint64_t seed = 0;
    std::string layers;
    bool have_kernel = false, have_rate = false, have_seed = false;
    std::size_t pos = 0;
    while (pos < header.size()) {
        std::size_t eol = header.find('\n', pos);
        if (eol == std::string_view::npos) eol = header.size();
        const std::string_view line = header.substr(pos, eol - pos);
        pos = eol + 1;
        const std::size_t eq = line.find('=');
        if (line.empty()) continue;
        if (eq == std::string_view::npos) {
            throw FormatError("malformed header line '" + std::string(line) + "'");
        }
        const std::string_view key = line.substr(0, eq);
        const std::string_view value = line.substr(eq + 1);
        if (key == "kernel_size") {
            const auto [p, ec] = std::from_chars(value.begin(), value.end(), kernel_size);
            if (ec != std::errc() || p != value.end()) {
                throw FormatError("bad kernel_size value");
            }
            have_kernel = true;
        } else if (key == "dropout_rate") {
            const auto [p, ec] = std::from_chars(value.begin(), value.end(), dropout_rate);
            if (ec != std::errc() || p != value.end()) {
                throw FormatError("bad dropout_rate value");
            }
            have_rate = true;
        } else if (key == "seed") {
            const auto [p, ec] = std::from_chars(value.begin(), value.end(), seed);
            if (ec != std::errc() || p != value.end()) {
                throw FormatError("bad seed value");
            }
            have_seed = true;
        } else if (key == "layers") {
            layers = std::string(value);
        } else {
            throw FormatError("unknown header key '" + std::string(key) + "'");
        }
    }
    if (!have_kernel || !have_rate || !have_seed || layers.empty()) {
        throw FormatError("model header is missing required keys");
    }

    NetworkModel<float> model;
    try {
        model = build_digit_model<float>(seed, kernel_size, dropout_rate);
    } catch (const Error& e) {
        throw FormatError(std::string("invalid architecture metadata: ") + e.what());
    }
    model.adam_state.clear();
    if (detail::layers_line(model) != layers) {
        throw FormatError("layer table in header does not match the DCNN architecture");
    }

    const std::size_t weights_begin = 9 + header_len;
    std::size_t at = weights_begin;
    model.for_each_parameter([&](Tensor<float>& p) {
        need(at, 8, "weight blob size");
        const std::uint64_t count = detail::read_u64le(buf.data() + at);
        if (count != p.size()) {
            throw FormatError("weight blob at byte " + std::to_string(at) + " holds " +
                              std::to_string(count) + " values, architecture expects " +
                              std::to_string(p.size()));
        }
        at += 8;
        need(at, count * sizeof(float), "weight blob");
        std::memcpy(p.data().data(), buf.data() + at, count * sizeof(float));
        at += count * sizeof(float);
    });

    need(at, 4, "checksum");
    const std::uint32_t stored = detail::read_u32le(buf.data() + at);
    const std::uint32_t actual = detail::crc32(buf.data() + weights_begin, at - weights_begin);
    if (stored != actual) {
        throw ChecksumError("weight region CRC mismatch");
    }
    if (at + 4 != buf.size()) {
        throw FormatError("trailing data after checksum at byte " + std::to_string(at + 4));
    }

    bool finite = true;
    model.for_each_parameter([&finite](const Tensor<float>& p) {
        for (float v : p.data()) {
            if (!std::isfinite(v)) finite = false;
        }
    });
    if (!finite) {
        throw FormatError("model file contains non-finite weights");
    }
    return model;
}

} // namespace dcnn
