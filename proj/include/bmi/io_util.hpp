#pragma once

// Little-endian binary IO helpers shared by the checkpoint/blob/trial codecs.
// All on-disk formats in this project are explicitly little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bmi/common.hpp"

namespace bmi::io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_i32(std::ostream& os, std::int32_t v) { write_u32(os, static_cast<std::uint32_t>(v)); }

inline void write_u64(std::ostream& os, std::uint64_t v) {
    write_u32(os, static_cast<std::uint32_t>(v));
    write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw LoadError("unexpected end of file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::int32_t read_i32(std::istream& is) { return static_cast<std::int32_t>(read_u32(is)); }

inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t lo = read_u32(is);
    std::uint64_t hi = read_u32(is);
    return lo | (hi << 32);
}

inline float read_f32(std::istream& is) {
    std::uint32_t u = read_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

inline void write_f32_array(std::ostream& os, const std::vector<float>& v) {
    write_u64(os, v.size());
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
    } else {
        for (float f : v) write_f32(os, f);
    }
}

inline std::vector<float> read_f32_array(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    std::vector<float> v(n);
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 4));
        if (!is) throw LoadError("unexpected end of file in float array");
    } else {
        for (auto& f : v) f = read_f32(is);
    }
    return v;
}

inline void write_i8_array(std::ostream& os, const std::vector<std::int8_t>& v) {
    write_u64(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size()));
}

inline std::vector<std::int8_t> read_i8_array(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    std::vector<std::int8_t> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n));
    if (!is) throw LoadError("unexpected end of file in int8 array");
    return v;
}

inline void write_i32_array(std::ostream& os, const std::vector<std::int32_t>& v) {
    write_u64(os, v.size());
    for (std::int32_t x : v) write_i32(os, x);
}

inline std::vector<std::int32_t> read_i32_array(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    std::vector<std::int32_t> v(n);
    for (auto& x : v) x = read_i32(is);
    return v;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw LoadError("cannot open for writing: " + path);
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot open for reading: " + path);
    return is;
}

}  // namespace bmi::io
