// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fmx {

// Little-endian binary primitives, byte-composed for portability.

inline void write_u16(std::ostream& os, uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    os.write(b, 2);
}
inline void write_u32(std::ostream& os, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}
inline void write_u64(std::ostream& os, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}
inline void write_f64(std::ostream& os, double v) {
    write_u64(os, std::bit_cast<uint64_t>(v));
}
inline void write_f64_vec(std::ostream& os, const std::vector<double>& v) {
    write_u64(os, v.size());
    for (double x : v) write_f64(os, x);
}
inline void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& is, char* buf, size_t n, const char* what) {
    is.read(buf, static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw std::runtime_error(std::string("truncated input while reading ") + what +
                                 ": expected " + std::to_string(n) + " bytes, got " +
                                 std::to_string(is.gcount()));
}
inline uint16_t read_u16(std::istream& is, const char* what = "u16") {
    char b[2];
    read_exact(is, b, 2, what);
    return static_cast<uint16_t>(static_cast<uint8_t>(b[0])) |
           static_cast<uint16_t>(static_cast<uint8_t>(b[1])) << 8;
}
inline uint32_t read_u32(std::istream& is, const char* what = "u32") {
    char b[4];
    read_exact(is, b, 4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(b[i])) << (8 * i);
    return v;
}
inline uint64_t read_u64(std::istream& is, const char* what = "u64") {
    char b[8];
    read_exact(is, b, 8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(b[i])) << (8 * i);
    return v;
}
inline double read_f64(std::istream& is, const char* what = "f64") {
    return std::bit_cast<double>(read_u64(is, what));
}
inline std::vector<double> read_f64_vec(std::istream& is, const char* what = "f64 vector") {
    const uint64_t n = read_u64(is, what);
    if (n > (1ull << 32)) throw std::runtime_error(std::string(what) + ": implausible length");
    std::vector<double> v(n);
    for (uint64_t i = 0; i < n; ++i) v[i] = read_f64(is, what);
    return v;
}
inline std::string read_string(std::istream& is, const char* what = "string") {
    const uint64_t n = read_u64(is, what);
    if (n > (1ull << 32)) throw std::runtime_error(std::string(what) + ": implausible length");
    std::string s(n, '\0');
    if (n) read_exact(is, s.data(), n, what);
    return s;
}

}  // namespace fmx
