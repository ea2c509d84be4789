#pragma once

// Binary checkpoint format:
//   magic "STLM" | u32 version=1 | u32 tensor_count
//   per tensor: u32 name_len | name bytes | u32 rank | u32 dims[rank]
//               | f32 payload (row-major, little-endian)
//   trailer: u32 CRC32 (polynomial 0xEDB88320) over every payload byte
//            in file order.
// Format problems (magic, version, truncation, checksum) and shape
// problems (tensor set or dims not matching the model) raise distinct
// exception types.

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "../nn/tensor.hpp"

namespace auscult::model {

using nn::Shape;
using nn::Tensor;

struct checkpoint_format_error : std::runtime_error {
    explicit checkpoint_format_error(const std::string& m)
        : std::runtime_error("checkpoint format: " + m) {}
};

struct checkpoint_shape_error : std::runtime_error {
    explicit checkpoint_shape_error(const std::string& m)
        : std::runtime_error("checkpoint shape: " + m) {}
};

namespace detail {

inline const std::array<std::uint32_t, 256>& crc32_table() {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int b = 0; b < 8; ++b)
                c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}

inline std::uint32_t crc32_update(std::uint32_t crc, const void* data,
                                  std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i)
        crc = crc32_table()[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

template <typename T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!f) throw checkpoint_format_error("truncated file");
    return v;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

inline void save_checkpoint(
    const std::vector<std::pair<std::string, Tensor>>& params,
    const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write("STLM", 4);
    detail::write_pod<std::uint32_t>(f, kCheckpointVersion);
    detail::write_pod<std::uint32_t>(
        f, static_cast<std::uint32_t>(params.size()));
    std::uint32_t crc = 0;
    for (const auto& [name, t] : params) {
        detail::write_pod<std::uint32_t>(
            f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint32_t>(
            f, static_cast<std::uint32_t>(t.rank()));
        for (std::int64_t d : t.shape())
            detail::write_pod<std::uint32_t>(f,
                                             static_cast<std::uint32_t>(d));
        const auto bytes =
            static_cast<std::size_t>(t.numel()) * sizeof(float);
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(bytes));
        crc = detail::crc32_update(crc, t.data(), bytes);
    }
    detail::write_pod<std::uint32_t>(f, crc);
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4] = {};
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "STLM", 4) != 0)
        throw checkpoint_format_error("bad magic");
    const auto version = detail::read_pod<std::uint32_t>(f);
    if (version != kCheckpointVersion)
        throw checkpoint_format_error("unsupported version " +
                                      std::to_string(version));
    const auto count = detail::read_pod<std::uint32_t>(f);
    std::vector<NamedTensor> out;
    out.reserve(count);
    std::uint32_t crc = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor nt;
        const auto name_len = detail::read_pod<std::uint32_t>(f);
        if (name_len > 4096)
            throw checkpoint_format_error("implausible name length");
        nt.name.resize(name_len);
        f.read(nt.name.data(), name_len);
        if (!f) throw checkpoint_format_error("truncated file");
        const auto rank = detail::read_pod<std::uint32_t>(f);
        if (rank > 8) throw checkpoint_format_error("implausible rank");
        std::int64_t numel = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = detail::read_pod<std::uint32_t>(f);
            nt.shape.push_back(static_cast<std::int64_t>(d));
            numel *= static_cast<std::int64_t>(d);
        }
        nt.data.resize(static_cast<std::size_t>(numel));
        f.read(reinterpret_cast<char*>(nt.data.data()),
               static_cast<std::streamsize>(nt.data.size() * sizeof(float)));
        if (!f) throw checkpoint_format_error("truncated file");
        crc = detail::crc32_update(crc, nt.data.data(),
                                   nt.data.size() * sizeof(float));
        out.push_back(std::move(nt));
    }
    const auto stored_crc = detail::read_pod<std::uint32_t>(f);
    if (stored_crc != crc)
        throw checkpoint_format_error("checksum mismatch");
    return out;
}

// Copies a loaded checkpoint into an existing parameter registry,
// requiring an exact name/shape match.
inline void load_into(
    const std::vector<NamedTensor>& loaded,
    std::vector<std::pair<std::string, Tensor>>& params) {
    if (loaded.size() != params.size())
        throw checkpoint_shape_error(
            "tensor count mismatch: file has " +
            std::to_string(loaded.size()) + ", model has " +
            std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const NamedTensor& nt = loaded[i];
        auto& [name, t] = params[i];
        if (nt.name != name)
            throw checkpoint_shape_error("tensor name mismatch at index " +
                                         std::to_string(i) + ": '" +
                                         nt.name + "' vs '" + name + "'");
        if (nt.shape != t.shape())
            throw checkpoint_shape_error(
                "shape mismatch for '" + name + "': " +
                nn::shape_str(nt.shape) + " vs " + nn::shape_str(t.shape()));
        std::copy(nt.data.begin(), nt.data.end(), t.data());
    }
}

}  // namespace auscult::model
