#pragma once

// Minimal RIFF/WAV I/O: writes PCM 16-bit LE mono; reads PCM 16-bit or
// IEEE float 32-bit mono, skipping unknown chunks.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace auscult::audio {

struct WavData {
    std::vector<float> samples;  // mono, [-1, 1]
    std::uint32_t sample_rate = 0;
};

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 24) & 0xff));
}
inline void put_u16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] |
                                      (static_cast<std::uint16_t>(p[1]) << 8));
}

}  // namespace detail

inline void write_wav(const std::string& path, const std::vector<float>& x,
                      std::uint32_t sample_rate) {
    const std::uint32_t n = static_cast<std::uint32_t>(x.size());
    const std::uint32_t data_bytes = n * 2;
    std::string out;
    out.reserve(44 + data_bytes);
    out += "RIFF";
    detail::put_u32(out, 36 + data_bytes);
    out += "WAVEfmt ";
    detail::put_u32(out, 16);
    detail::put_u16(out, 1);  // PCM
    detail::put_u16(out, 1);  // mono
    detail::put_u32(out, sample_rate);
    detail::put_u32(out, sample_rate * 2);  // byte rate
    detail::put_u16(out, 2);                // block align
    detail::put_u16(out, 16);               // bits per sample
    out += "data";
    detail::put_u32(out, data_bytes);
    for (std::uint32_t i = 0; i < n; ++i) {
        const float c = std::clamp(x[i], -1.0f, 1.0f);
        const std::int16_t q = static_cast<std::int16_t>(
            std::lround(c * 32767.0f));
        out.push_back(static_cast<char>(q & 0xff));
        out.push_back(static_cast<char>((q >> 8) & 0xff));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_wav: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write_wav: short write to " + path);
}

inline WavData read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_wav: cannot open " + path);
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    if (raw.size() < 44 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
        std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
        throw std::runtime_error("read_wav: not a RIFF/WAVE file: " + path);

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t sample_rate = 0;
    const unsigned char* data = nullptr;
    std::uint32_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= raw.size()) {
        const char* id = reinterpret_cast<const char*>(raw.data() + pos);
        const std::uint32_t len = detail::get_u32(raw.data() + pos + 4);
        const std::size_t body = pos + 8;
        if (body + len > raw.size())
            throw std::runtime_error("read_wav: truncated chunk in " + path);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (len < 16)
                throw std::runtime_error("read_wav: short fmt chunk in " + path);
            format = detail::get_u16(raw.data() + body);
            channels = detail::get_u16(raw.data() + body + 2);
            sample_rate = detail::get_u32(raw.data() + body + 4);
            bits = detail::get_u16(raw.data() + body + 14);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = raw.data() + body;
            data_len = len;
        }
        pos = body + len + (len & 1);  // chunks are word-aligned
    }
    if (!data || sample_rate == 0)
        throw std::runtime_error("read_wav: missing fmt/data chunk in " + path);
    if (channels != 1)
        throw std::runtime_error("read_wav: expected mono, got " +
                                 std::to_string(channels) + " channels in " +
                                 path);

    WavData out;
    out.sample_rate = sample_rate;
    if (format == 1 && bits == 16) {
        const std::uint32_t n = data_len / 2;
        out.samples.resize(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::int16_t q = static_cast<std::int16_t>(
                detail::get_u16(data + 2 * i));
            out.samples[i] = static_cast<float>(q) / 32767.0f;
        }
    } else if (format == 3 && bits == 32) {
        const std::uint32_t n = data_len / 4;
        out.samples.resize(n);
        std::memcpy(out.samples.data(), data, n * 4);
    } else {
        throw std::runtime_error(
            "read_wav: unsupported encoding (need PCM16 or float32) in " +
            path);
    }
    return out;
}

}  // namespace auscult::audio
