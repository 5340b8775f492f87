#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "geodiff/io_binary.hpp"
#include "geodiff/tensor.hpp"

namespace geodiff::io {

// Named tensor record, shared by weight files and checkpoints:
//   name length u32 | name bytes (UTF-8) | rank u32 | extents u32 each |
//   float32 payload (little-endian)

template <typename T>
void write_named_tensor(std::ostream& os, const std::string& name, const Tensor<T>& t) {
    write_u32(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_u32(os, std::uint32_t(t.rank()));
    for (std::size_t e : t.shape) write_u32(os, std::uint32_t(e));
    for (T v : t.data) write_f32(os, float(v));
}

template <typename T>
std::pair<std::string, Tensor<T>> read_named_tensor(Reader& r) {
    const std::uint32_t nlen = r.u32("tensor name length");
    if (nlen > 4096) r.fail("unreasonable tensor name length");
    std::string name(nlen, '\0');
    r.raw(name.data(), nlen, "tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank > 8) r.fail("unreasonable tensor rank");
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (auto& e : shape) {
        e = r.u32("tensor extent");
        count *= e;
    }
    Tensor<T> t(std::move(shape));
    for (std::size_t i = 0; i < count; ++i) t.data[i] = T(r.f32("tensor payload"));
    return {std::move(name), std::move(t)};
}

// FNV-1a over a byte range, used for parameter checksums and config hashes.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a_str(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}

}  // namespace geodiff::io
