#pragma once

#include "vickam/error.hpp"

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace vickam::fft {

using cplx = std::complex<double>;

constexpr bool is_pow2(std::size_t n) noexcept { return n && !(n & (n - 1)); }

constexpr std::size_t next_pow2(std::size_t n) noexcept {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

/// Plain complex product. std::complex operator* carries NaN/Inf recovery
/// that blocks vectorization; inputs here are always finite.
inline cplx cmul(cplx a, cplx b) noexcept {
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

namespace detail {

inline std::vector<cplx> twiddles(std::size_t n, bool inverse) {
    std::vector<cplx> w(n / 2);
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        w[k] = {std::cos(ang), std::sin(ang)};
    }
    return w;
}

inline std::size_t bit_reverse(std::size_t i, std::size_t n) {
    std::size_t r = 0;
    for (std::size_t bit = 1; bit < n; bit <<= 1) {
        r = (r << 1) | (i & 1);
        i >>= 1;
    }
    return r;
}

// Iterative radix-2 on `n` elements of width `stride`: element i occupies
// a[i*stride .. i*stride+stride). stride 1 is an ordinary 1D transform; a
// larger stride transforms every column of a row-major block at once.
inline void radix2_strided(std::span<cplx> a, std::size_t n, std::size_t stride, std::span<const cplx> w) {
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = bit_reverse(i, n);
        if (i < j) {
            for (std::size_t c = 0; c < stride; ++c) std::swap(a[i * stride + c], a[j * stride + c]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t step = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < half; ++k) {
                const cplx tw = w[k * step];
                cplx* lo = &a[(i + k) * stride];
                cplx* hi = &a[(i + k + half) * stride];
                for (std::size_t c = 0; c < stride; ++c) {
                    const cplx t = cmul(hi[c], tw);
                    hi[c] = lo[c] - t;
                    lo[c] += t;
                }
            }
        }
    }
}

inline void radix2(std::span<cplx> a, std::span<const cplx> w) { radix2_strided(a, a.size(), 1, w); }

// Bluestein chirp-z for arbitrary lengths, via a power-of-two convolution.
inline void bluestein(std::span<cplx> a, bool inverse) {
    const std::size_t n = a.size();
    const std::size_t m = next_pow2(2 * n - 1);
    const double sign = inverse ? 1.0 : -1.0;
    std::vector<cplx> chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle argument small for large k.
        const auto k2 = static_cast<double>((k * k) % (2 * n));
        const double ang = sign * std::numbers::pi * k2 / static_cast<double>(n);
        chirp[k] = {std::cos(ang), std::sin(ang)};
    }
    std::vector<cplx> x(m), y(m);
    for (std::size_t k = 0; k < n; ++k) x[k] = cmul(a[k], chirp[k]);
    y[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) y[k] = y[m - k] = std::conj(chirp[k]);
    const auto wf = twiddles(m, false);
    const auto wi = twiddles(m, true);
    radix2(x, wf);
    radix2(y, wf);
    for (std::size_t k = 0; k < m; ++k) x[k] = cmul(x[k], y[k]);
    radix2(x, wi);
    const double scale = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n; ++k) a[k] = cmul(x[k], chirp[k]) * scale;
}

class Transform1d {
public:
    Transform1d(std::size_t n, bool inverse) : n_(n), inverse_(inverse), pow2_(is_pow2(n)) {
        if (pow2_) w_ = twiddles(n, inverse);
    }
    void operator()(std::span<cplx> a) const {
        if (n_ <= 1) return;
        if (pow2_) radix2(a, w_); else bluestein(a, inverse_);
    }
    bool pow2() const { return pow2_; }
    std::span<const cplx> twiddle() const { return w_; }

private:
    std::size_t n_;
    bool inverse_, pow2_;
    std::vector<cplx> w_;
};

inline void column_pass(std::span<cplx> a, std::size_t rows, std::size_t cols, bool inverse) {
    if (rows <= 1) return;
    if (is_pow2(rows)) {
        radix2_strided(a, rows, cols, twiddles(rows, inverse));
        return;
    }
    std::vector<cplx> col(rows);
    for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t r = 0; r < rows; ++r) col[r] = a[r * cols + c];
        bluestein(col, inverse);
        for (std::size_t r = 0; r < rows; ++r) a[r * cols + c] = col[r];
    }
}

} // namespace detail

/// Unnormalized 1D DFT in place. `inverse` flips the exponent sign only.
inline void fft1d(std::span<cplx> a, bool inverse = false) { detail::Transform1d(a.size(), inverse)(a); }

/// Unnormalized 2D DFT of a row-major rows x cols buffer, in place.
///
/// Forward: rows at index >= `nonzero_rows` must be zero on input; their row
/// transforms are skipped. Inverse: only the rows listed in `wanted_rows`
/// (all rows when empty) hold valid output afterwards.
inline void fft2d_inplace(std::span<cplx> a, std::size_t rows, std::size_t cols, bool inverse = false,
                          std::size_t nonzero_rows = static_cast<std::size_t>(-1),
                          std::span<const std::size_t> wanted_rows = {}) {
    if (a.size() != rows * cols) fail(ErrorCode::shape, "fft2d buffer size does not match rows*cols");
    const detail::Transform1d row_fft(cols, inverse);
    if (!inverse) {
        const std::size_t active = std::min(nonzero_rows, rows);
        for (std::size_t r = 0; r < active; ++r) row_fft(a.subspan(r * cols, cols));
        detail::column_pass(a, rows, cols, inverse);
    } else {
        detail::column_pass(a, rows, cols, inverse);
        if (wanted_rows.empty()) {
            for (std::size_t r = 0; r < rows; ++r) row_fft(a.subspan(r * cols, cols));
        } else {
            for (auto r : wanted_rows) row_fft(a.subspan(r * cols, cols));
        }
    }
}

/// Forward unnormalized 2D DFT of a real grid.
inline std::vector<cplx> fft2d(std::span<const double> grid, std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) fail(ErrorCode::shape, "fft2d needs positive extents");
    if (grid.size() != rows * cols) fail(ErrorCode::shape, "fft2d grid size does not match rows*cols");
    std::vector<cplx> out(grid.begin(), grid.end());
    fft2d_inplace(out, rows, cols, false);
    return out;
}

/// Inverse 2D DFT including the 1/(rows*cols) factor.
inline std::vector<cplx> ifft2d(std::span<const cplx> spectrum, std::size_t rows, std::size_t cols) {
    std::vector<cplx> out(spectrum.begin(), spectrum.end());
    fft2d_inplace(out, rows, cols, true);
    const double scale = 1.0 / static_cast<double>(rows * cols);
    for (auto& v : out) v *= scale;
    return out;
}

} // namespace vickam::fft
