#pragma once

#include <complex>
#include <numbers>
#include <vector>

#include "gtd/error.hpp"

namespace gtd::num {

using Complex = std::complex<double>;

/// Row-major complex raster.
struct ComplexField {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Complex> data;

    ComplexField() = default;
    ComplexField(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c) {}

    Complex& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const Complex& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

constexpr bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

constexpr std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

namespace detail {

/// In-place iterative radix-2 Cooley-Tukey over `n` elements spaced by `stride`.
inline void fft1d(Complex* x, std::size_t n, std::size_t stride, bool inverse, std::vector<Complex>& buf) {
    buf.resize(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = x[i * stride];

    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(buf[i], buf[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        const Complex wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            Complex w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const Complex u = buf[i + k];
                const Complex v = buf[i + k + len / 2] * w;
                buf[i + k] = u + v;
                buf[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) x[i * stride] = buf[i];
}

inline ComplexField transform2(ComplexField f, bool inverse) {
    if (!is_pow2(f.rows) || !is_pow2(f.cols))
        throw ContractError("fft2: dims must be powers of two, got " + std::to_string(f.rows) + "x" +
                            std::to_string(f.cols) + " (use pad_pow2)");
    std::vector<Complex> buf;
    for (std::size_t r = 0; r < f.rows; ++r) fft1d(&f.data[r * f.cols], f.cols, 1, inverse, buf);
    for (std::size_t c = 0; c < f.cols; ++c) fft1d(&f.data[c], f.rows, f.cols, inverse, buf);
    if (inverse) {
        const double s = 1.0 / static_cast<double>(f.rows * f.cols);
        for (auto& v : f.data) v *= s;
    }
    return f;
}

} // namespace detail

/// Forward 2-D DFT (unnormalised).
inline ComplexField fft2(ComplexField f) { return detail::transform2(std::move(f), false); }

/// Inverse 2-D DFT, normalised by 1/(rows*cols).
inline ComplexField ifft2(ComplexField f) { return detail::transform2(std::move(f), true); }

/// Zero-fills up to the next power of two in each dimension (or to the given minimums).
inline ComplexField pad_pow2(const ComplexField& f, std::size_t min_rows = 0, std::size_t min_cols = 0) {
    ComplexField out(next_pow2(std::max(f.rows, min_rows)), next_pow2(std::max(f.cols, min_cols)));
    for (std::size_t r = 0; r < f.rows; ++r)
        for (std::size_t c = 0; c < f.cols; ++c) out(r, c) = f(r, c);
    return out;
}

} // namespace gtd::num
