#pragma once

// Checkpoint format: "HBF1", version u32, entry count u32, then per tensor
// (name_len u32, name, rank u32, dims u32[rank], float32 LE payload), and a
// trailing CRC32 (poly 0xEDB88320) of every preceding byte. All integers
// little-endian. Entries are the model's parameters then buffers, in
// collection order, so save -> load -> save is byte-identical.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "hbformer/errors.hpp"
#include "hbformer/layers.hpp"

namespace hbf {

inline std::uint32_t crc32(const unsigned char* data, size_t n) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

inline void put_f32(std::vector<unsigned char>& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

struct ByteReader {
    const unsigned char* p;
    size_t n;
    size_t off = 0;

    bool need(size_t k) const { return off + k <= n; }
    std::uint32_t u32() {
        if (!need(4)) throw CrcError("checkpoint truncated");
        const std::uint32_t v = static_cast<std::uint32_t>(p[off]) |
                                (static_cast<std::uint32_t>(p[off + 1]) << 8) |
                                (static_cast<std::uint32_t>(p[off + 2]) << 16) |
                                (static_cast<std::uint32_t>(p[off + 3]) << 24);
        off += 4;
        return v;
    }
    float f32() {
        const std::uint32_t v = u32();
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
    std::string str(size_t k) {
        if (!need(k)) throw CrcError("checkpoint truncated");
        std::string s(reinterpret_cast<const char*>(p + off), k);
        off += k;
        return s;
    }
};

}  // namespace detail

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
std::vector<unsigned char> serialize_checkpoint(const NamedTensors<T>& nt) {
    std::vector<unsigned char> out;
    out.insert(out.end(), {'H', 'B', 'F', '1'});
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(nt.params.size() + nt.buffers.size()));
    auto emit = [&](const std::string& name, const Tensor<T>& t) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_u32(out, static_cast<std::uint32_t>(t.ndim()));
        for (int d = 0; d < t.ndim(); ++d)
            detail::put_u32(out, static_cast<std::uint32_t>(t.dim(d)));
        const T* p = t.data();
        for (size_t i = 0; i < t.numel(); ++i)
            detail::put_f32(out, static_cast<float>(p[i]));
    };
    for (const auto& [name, t] : nt.params) emit(name, t);
    for (const auto& [name, t] : nt.buffers) emit(name, t);
    detail::put_u32(out, crc32(out.data(), out.size()));
    return out;
}

template <typename T>
void save_checkpoint(const std::string& path, const NamedTensors<T>& nt) {
    const auto bytes = serialize_checkpoint(nt);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing checkpoint: " + path);
}

// Loads into the model's tensors in place. CRC or structural corruption
// throws CrcError; any mismatch against the model (unknown name, missing
// name, wrong dims) throws ShapeError naming the first offender.
template <typename T>
void deserialize_checkpoint(const std::vector<unsigned char>& bytes, NamedTensors<T>& nt) {
    if (bytes.size() < 16) throw CrcError("checkpoint truncated");
    const std::uint32_t stored = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                                 (static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8) |
                                 (static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16) |
                                 (static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24);
    if (crc32(bytes.data(), bytes.size() - 4) != stored)
        throw CrcError("checkpoint CRC mismatch");

    detail::ByteReader r{bytes.data(), bytes.size() - 4};
    if (r.str(4) != "HBF1") throw CrcError("checkpoint magic is not HBF1");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw CrcError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = r.u32();

    std::unordered_map<std::string, Tensor<T>*> lookup;
    for (auto& [name, t] : nt.params) lookup[name] = &t;
    for (auto& [name, t] : nt.buffers) lookup[name] = &t;
    if (count != lookup.size())
        throw ShapeError("checkpoint holds " + std::to_string(count) + " tensors but model has " +
                         std::to_string(lookup.size()));

    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        Shape dims(rank);
        size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            dims[d] = static_cast<int>(r.u32());
            numel *= static_cast<size_t>(dims[d]);
        }
        auto it = lookup.find(name);
        if (it == lookup.end()) throw ShapeError("checkpoint tensor not in model: " + name);
        Tensor<T>& t = *it->second;
        if (t.shape() != dims)
            throw ShapeError("shape mismatch for " + name + ": checkpoint " + shape_str(dims) +
                             " vs model " + shape_str(t.shape()));
        T* p = t.data();
        for (size_t i = 0; i < numel; ++i) p[i] = static_cast<T>(r.f32());
    }
    if (r.off != r.n) throw CrcError("checkpoint has trailing bytes");
}

template <typename T>
void load_checkpoint(const std::string& path, NamedTensors<T>& nt) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    deserialize_checkpoint(bytes, nt);
}

}  // namespace hbf
