#pragma once

// Binary Netpbm rasters: P6 (RGB, maxval 255) and P5 (gray, maxval 255 or 65535,
// 16-bit samples big-endian as Netpbm requires). Probability maps are stored
// as round(p * 65535).

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "gtd/slideio/raster.hpp"

namespace gtd::slideio {

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const std::filesystem::path& path, const Bytes& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

struct PnmHeader {
    char kind = 0;  // '5' or '6'
    int width = 0;
    int height = 0;
    int maxval = 0;
    std::size_t payload_offset = 0;
};

namespace detail {

inline int read_header_int(const Bytes& b, std::size_t& pos) {
    for (;;) {
        while (pos < b.size() && std::isspace(b[pos])) ++pos;
        if (pos < b.size() && b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    if (pos >= b.size()) throw ParseError("pnm: header truncated", pos);
    if (!std::isdigit(b[pos])) throw ParseError("pnm: expected decimal integer in header", pos);
    long long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
        v = v * 10 + (b[pos] - '0');
        if (v > (1LL << 30)) throw ParseError("pnm: header integer too large", pos);
        ++pos;
    }
    return static_cast<int>(v);
}

inline Bytes header_bytes(const char* magic, int w, int h, int maxval) {
    const std::string s = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n" +
                          std::to_string(maxval) + "\n";
    return Bytes(s.begin(), s.end());
}

} // namespace detail

inline PnmHeader parse_pnm_header(const Bytes& b) {
    if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6'))
        throw ParseError("pnm: bad magic (expected P5 or P6)", 0);
    PnmHeader h;
    h.kind = static_cast<char>(b[1]);
    std::size_t pos = 2;
    h.width = detail::read_header_int(b, pos);
    h.height = detail::read_header_int(b, pos);
    const std::size_t maxval_pos = pos;
    h.maxval = detail::read_header_int(b, pos);
    if (h.width <= 0 || h.height <= 0) throw ParseError("pnm: non-positive dimensions", maxval_pos);
    if (h.maxval != 255 && h.maxval != 65535)
        throw ParseError("pnm: unsupported maxval " + std::to_string(h.maxval), maxval_pos);
    if (pos >= b.size() || !std::isspace(b[pos])) throw ParseError("pnm: missing whitespace after maxval", pos);
    h.payload_offset = pos + 1;
    const std::size_t channels = h.kind == '6' ? 3 : 1;
    const std::size_t bps = h.maxval > 255 ? 2 : 1;
    const std::size_t need = static_cast<std::size_t>(h.width) * h.height * channels * bps;
    if (b.size() - h.payload_offset < need)
        throw ParseError("pnm: truncated payload, need " + std::to_string(need) + " bytes", b.size());
    return h;
}

inline Bytes encode_ppm(const SlideImage& img) {
    Bytes out = detail::header_bytes("P6", img.width, img.height, 255);
    out.insert(out.end(), img.rgb.begin(), img.rgb.end());
    return out;
}

inline SlideImage decode_ppm(const Bytes& b) {
    const auto h = parse_pnm_header(b);
    if (h.kind != '6' || h.maxval != 255) throw ParseError("ppm: expected P6 with maxval 255", 0);
    SlideImage img(h.width, h.height);
    std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(h.payload_offset), img.rgb.size(), img.rgb.begin());
    return img;
}

inline Bytes encode_pgm8(const Plane<std::uint8_t>& p) {
    Bytes out = detail::header_bytes("P5", p.width, p.height, 255);
    out.insert(out.end(), p.data.begin(), p.data.end());
    return out;
}

inline Plane<std::uint8_t> decode_pgm8(const Bytes& b) {
    const auto h = parse_pnm_header(b);
    if (h.kind != '5' || h.maxval != 255) throw ParseError("pgm: expected P5 with maxval 255", 0);
    Plane<std::uint8_t> p(h.width, h.height);
    std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(h.payload_offset), p.size(), p.data.begin());
    return p;
}

inline std::uint16_t quantize_prob(float p) {
    const double c = std::min(1.0, std::max(0.0, static_cast<double>(p)));
    return static_cast<std::uint16_t>(std::lround(c * 65535.0));
}

inline Bytes encode_pgm16(const ProbMap& p) {
    Bytes out = detail::header_bytes("P5", p.width, p.height, 65535);
    out.reserve(out.size() + p.size() * 2);
    for (float v : p.data) {
        const auto q = quantize_prob(v);
        out.push_back(static_cast<std::uint8_t>(q >> 8));
        out.push_back(static_cast<std::uint8_t>(q & 0xff));
    }
    return out;
}

inline ProbMap decode_pgm16(const Bytes& b) {
    const auto h = parse_pnm_header(b);
    if (h.kind != '5' || h.maxval != 65535) throw ParseError("pgm: expected P5 with maxval 65535", 0);
    ProbMap p(h.width, h.height);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const std::size_t o = h.payload_offset + 2 * i;
        const unsigned q = (static_cast<unsigned>(b[o]) << 8) | b[o + 1];
        p.data[i] = static_cast<float>(q / 65535.0);
    }
    return p;
}

inline void write_ppm(const std::filesystem::path& path, const SlideImage& img) {
    write_file_bytes(path, encode_ppm(img));
}
inline SlideImage read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file_bytes(path)); }

inline void write_pgm(const std::filesystem::path& path, const Plane<std::uint8_t>& p) {
    write_file_bytes(path, encode_pgm8(p));
}
inline Plane<std::uint8_t> read_pgm(const std::filesystem::path& path) { return decode_pgm8(read_file_bytes(path)); }

inline void write_pgm16(const std::filesystem::path& path, const ProbMap& p) {
    write_file_bytes(path, encode_pgm16(p));
}
inline ProbMap read_pgm16(const std::filesystem::path& path) { return decode_pgm16(read_file_bytes(path)); }

} // namespace gtd::slideio
