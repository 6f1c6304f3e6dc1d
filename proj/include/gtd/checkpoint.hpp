#pragma once

// GTCK container:
//   "GTCK" | u32 format version | record* | u32 CRC32 of all preceding bytes
// record:
//   u32 name length | UTF-8 name | u32 rank | u32 dims[rank] | f32 payload[prod(dims)]
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <zlib.h>

#include "gtd/error.hpp"
#include "gtd/slideio/pnm.hpp"

namespace gtd::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr char kMagic[4] = {'G', 'T', 'C', 'K'};

struct Record {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> payload;

    bool operator==(const Record&) const = default;
};

using Bytes = std::vector<std::uint8_t>;

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = crc32(c, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

namespace detail {
inline void put_u32(Bytes& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint32_t get_u32(const Bytes& b, std::size_t& pos, std::size_t end) {
    if (pos + 4 > end) throw CheckpointError(CheckpointError::Kind::Corrupt, "gtck: truncated at byte " + std::to_string(pos));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
}
} // namespace detail

inline Bytes encode(const std::vector<Record>& records, std::uint32_t version = kFormatVersion) {
    Bytes b(kMagic, kMagic + 4);
    detail::put_u32(b, version);
    for (const auto& r : records) {
        std::size_t count = 1;
        for (auto d : r.dims) count *= d;
        if (count != r.payload.size())
            throw ContractError("gtck: record '" + r.name + "' payload does not match dims");
        detail::put_u32(b, static_cast<std::uint32_t>(r.name.size()));
        b.insert(b.end(), r.name.begin(), r.name.end());
        detail::put_u32(b, static_cast<std::uint32_t>(r.dims.size()));
        for (auto d : r.dims) detail::put_u32(b, d);
        for (float f : r.payload) detail::put_u32(b, std::bit_cast<std::uint32_t>(f));
    }
    detail::put_u32(b, crc32_of(b.data(), b.size()));
    return b;
}

inline std::vector<Record> decode(const Bytes& b, std::uint32_t expected_version = kFormatVersion) {
    using K = CheckpointError::Kind;
    if (b.size() < 12 || std::memcmp(b.data(), kMagic, 4) != 0) throw CheckpointError(K::Corrupt, "gtck: bad magic");
    const std::size_t end = b.size() - 4;
    std::size_t crc_pos = end;
    const auto stored = detail::get_u32(b, crc_pos, b.size());
    if (stored != crc32_of(b.data(), end)) throw CheckpointError(K::Corrupt, "gtck: CRC mismatch");
    std::size_t pos = 4;
    const auto version = detail::get_u32(b, pos, end);
    if (version != expected_version)
        throw CheckpointError(K::Version, "gtck: format version " + std::to_string(version) + ", expected " +
                                              std::to_string(expected_version));
    std::vector<Record> out;
    while (pos < end) {
        Record r;
        const auto len = detail::get_u32(b, pos, end);
        if (pos + len > end) throw CheckpointError(K::Corrupt, "gtck: truncated name at byte " + std::to_string(pos));
        r.name.assign(reinterpret_cast<const char*>(&b[pos]), len);
        pos += len;
        const auto rank = detail::get_u32(b, pos, end);
        std::size_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            r.dims.push_back(detail::get_u32(b, pos, end));
            count *= r.dims.back();
        }
        if (pos + 4 * count > end)
            throw CheckpointError(K::Corrupt, "gtck: truncated payload of '" + r.name + "'");
        r.payload.resize(count);
        for (std::size_t i = 0; i < count; ++i) r.payload[i] = std::bit_cast<float>(detail::get_u32(b, pos, end));
        out.push_back(std::move(r));
    }
    return out;
}

inline void save(const std::filesystem::path& path, const std::vector<Record>& records) {
    slideio::write_file_bytes(path, encode(records));
}

inline std::vector<Record> load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw CheckpointError(CheckpointError::Kind::Io, "checkpoint not found: " + path.string());
    return decode(slideio::read_file_bytes(path));
}

/// Exact float64 storage in f32 payloads: each value becomes four 16-bit
/// chunks, every one exactly representable as a float.
inline std::vector<float> pack_f64(const std::vector<double>& v) {
    std::vector<float> out;
    out.reserve(4 * v.size());
    for (double d : v) {
        const auto bits = std::bit_cast<std::uint64_t>(d);
        for (int k = 0; k < 4; ++k) out.push_back(static_cast<float>((bits >> (16 * k)) & 0xFFFFu));
    }
    return out;
}

inline std::vector<double> unpack_f64(const std::vector<float>& v) {
    if (v.size() % 4) throw CheckpointError(CheckpointError::Kind::Corrupt, "gtck: packed f64 payload not a multiple of 4");
    std::vector<double> out(v.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t bits = 0;
        for (int k = 0; k < 4; ++k) {
            const float f = v[4 * i + static_cast<std::size_t>(k)];
            if (!(f >= 0.0f && f <= 65535.0f) || f != static_cast<float>(static_cast<std::uint32_t>(f)))
                throw CheckpointError(CheckpointError::Kind::Corrupt, "gtck: bad packed f64 chunk");
            bits |= static_cast<std::uint64_t>(f) << (16 * k);
        }
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

inline const Record& find(const std::vector<Record>& recs, const std::string& name) {
    for (const auto& r : recs)
        if (r.name == name) return r;
    throw CheckpointError(CheckpointError::Kind::Corrupt, "gtck: missing record '" + name + "'");
}

} // namespace gtd::ckpt
