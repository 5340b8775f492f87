#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "geodiff/errors.hpp"

// Little-endian primitives shared by the on-disk container formats.

namespace geodiff::io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    write_u32(os, std::uint32_t(v));
    write_u32(os, std::uint32_t(v >> 32));
}

inline void write_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    write_u64(os, u);
}

// Readers track the running byte offset so format errors can name the
// position of the first offending byte.

struct Reader {
    std::istream& is;
    std::uint64_t offset = 0;
    std::string name;

    void fail(const std::string& what) const {
        throw FormatError(name + ": " + what + " at byte " + std::to_string(offset));
    }

    void raw(void* dst, std::size_t n, const char* what) {
        is.read(reinterpret_cast<char*>(dst), std::streamsize(n));
        if (std::size_t(is.gcount()) != n) fail(std::string("truncated ") + what);
        offset += n;
    }

    std::uint16_t u16(const char* what) {
        unsigned char b[2];
        raw(b, 2, what);
        return std::uint16_t(b[0] | (std::uint16_t(b[1]) << 8));
    }

    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        raw(b, 4, what);
        return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
               (std::uint32_t(b[3]) << 24);
    }

    std::uint64_t u64(const char* what) {
        const std::uint64_t lo = u32(what);
        return lo | (std::uint64_t(u32(what)) << 32);
    }

    float f32(const char* what) {
        const std::uint32_t u = u32(what);
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }

    double f64(const char* what) {
        const std::uint64_t u = u64(what);
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }

    void expect_magic(const char* magic) {
        char got[4];
        raw(got, 4, "magic");
        if (std::memcmp(got, magic, 4) != 0)
            throw FormatError(name + ": bad magic at byte 0 (expected '" + std::string(magic, 4) + "')");
    }

    void expect_eof() {
        char probe;
        is.read(&probe, 1);
        if (is.gcount() != 0) fail("trailing bytes");
    }
};

}  // namespace geodiff::io
