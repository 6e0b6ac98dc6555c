#pragma once

#include "vickam/error.hpp"
#include "vickam/fft.hpp"
#include "vickam/tensor.hpp"
#include "vickam/types.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

// Action maps: cross-correlation of a feature map with each action prototype,
// centre-aligned so a prototype matched at cell (u, v) peaks at (u, v). Cells
// outside the feature map contribute zero. The C per-channel correlations are
// averaged.
//
//   out[u,v] = 1/C * sum_{a,b,c} X[u + a - p/2, v + b - p/2, c] * P[a,b,c]

namespace vickam {

namespace detail {

inline void check_corr_shapes(std::size_t h, std::size_t w, std::size_t c, std::size_t p, std::size_t pc) {
    if (p == 0 || p > std::min(h, w) || c != pc) {
        fail(ErrorCode::shape, "cannot correlate feature map " + dims_to_string({h, w, c}) + " with prototype " +
                                   dims_to_string({p, p, pc}));
    }
}

} // namespace detail

/// Spatial-domain correlation in 64-bit; the reference the FFT path must match.
inline std::vector<double> correlate_naive64(std::span<const double> x, std::size_t h, std::size_t w,
                                             std::size_t channels, std::span<const double> patch,
                                             std::size_t p) {
    detail::check_corr_shapes(h, w, channels, p, patch.size() / std::max<std::size_t>(p * p, 1));
    const auto half = static_cast<std::ptrdiff_t>(p / 2);
    std::vector<double> out(h * w, 0.0);
    for (std::size_t u = 0; u < h; ++u) {
        for (std::size_t v = 0; v < w; ++v) {
            double acc = 0.0;
            for (std::size_t a = 0; a < p; ++a) {
                const auto i = static_cast<std::ptrdiff_t>(u + a) - half;
                if (i < 0 || i >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t b = 0; b < p; ++b) {
                    const auto j = static_cast<std::ptrdiff_t>(v + b) - half;
                    if (j < 0 || j >= static_cast<std::ptrdiff_t>(w)) continue;
                    const double* xs = &x[(static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)) * channels];
                    const double* ps = &patch[(a * p + b) * channels];
                    for (std::size_t c = 0; c < channels; ++c) acc += xs[c] * ps[c];
                }
            }
            out[u * w + v] = acc / static_cast<double>(channels);
        }
    }
    return out;
}

/// Padded transform size for an extent n correlated with a p-wide patch.
inline std::size_t padded_extent(std::size_t n, std::size_t p) { return fft::next_pow2(n + p - 1); }

/// Per-channel spectra of a zero-padded h x w x C grid (or p x p x C patch).
struct ChannelSpectra {
    std::size_t rows = 0, cols = 0;
    std::vector<std::vector<fft::cplx>> channels;
};

inline ChannelSpectra channel_spectra(std::span<const double> grid, std::size_t h, std::size_t w,
                                      std::size_t channels, std::size_t rows, std::size_t cols) {
    ChannelSpectra s{rows, cols, {}};
    s.channels.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        auto& buf = s.channels[c];
        buf.assign(rows * cols, {0.0, 0.0});
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) buf[i * cols + j] = grid[(i * w + j) * channels + c];
        }
        fft::fft2d_inplace(buf, rows, cols, false, h);
    }
    return s;
}

/// IFFT(sum_c FX_c * conj(FP_c)) / C, then the centre-aligned crop to h x w.
inline std::vector<double> correlate_spectra(const ChannelSpectra& xs, const ChannelSpectra& ps, std::size_t h,
                                             std::size_t w, std::size_t p) {
    const std::size_t rows = xs.rows, cols = xs.cols;
    const std::size_t channels = xs.channels.size();
    std::vector<fft::cplx> acc(rows * cols, {0.0, 0.0});
    for (std::size_t c = 0; c < channels; ++c) {
        const auto& fx = xs.channels[c];
        const auto& fp = ps.channels[c];
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += fft::cmul(fx[i], std::conj(fp[i]));
    }
    const std::size_t half = p / 2;
    std::vector<std::size_t> wanted(h);
    for (std::size_t u = 0; u < h; ++u) wanted[u] = (u + rows - half) % rows;
    fft::fft2d_inplace(acc, rows, cols, true, rows, wanted);
    const double scale = 1.0 / (static_cast<double>(rows * cols) * static_cast<double>(channels));
    std::vector<double> out(h * w);
    for (std::size_t u = 0; u < h; ++u) {
        const std::size_t r = (u + rows - half) % rows;
        for (std::size_t v = 0; v < w; ++v) {
            const std::size_t q = (v + cols - half) % cols;
            out[u * w + v] = acc[r * cols + q].real() * scale;
        }
    }
    return out;
}

/// Correlation via the correlation theorem in 64-bit.
inline std::vector<double> correlate_fft64(std::span<const double> x, std::size_t h, std::size_t w,
                                           std::size_t channels, std::span<const double> patch, std::size_t p) {
    detail::check_corr_shapes(h, w, channels, p, patch.size() / std::max<std::size_t>(p * p, 1));
    const std::size_t rows = padded_extent(h, p), cols = padded_extent(w, p);
    const auto xs = channel_spectra(x, h, w, channels, rows, cols);
    const auto ps = channel_spectra(patch, p, p, channels, rows, cols);
    return correlate_spectra(xs, ps, h, w, p);
}

inline void check_prototype(const FeatureMap& x, const Prototype& pk) {
    const auto& t = pk.patch;
    if (t.rank() != 3 || t.dim(0) != t.dim(1)) {
        fail(ErrorCode::shape, "prototype must be p x p x C, got " + t.shape_string());
    }
    if (t.dim(0) > std::min(x.height(), x.width()) || t.dim(2) != x.channels()) {
        fail(ErrorCode::shape, "cannot correlate feature map " + x.grid().shape_string() + " with prototype " +
                                   t.shape_string());
    }
}

/// Single-channel h x w action map by direct summation.
inline Tensor xcorr_naive(const FeatureMap& x, const Prototype& pk) {
    check_prototype(x, pk);
    const auto out = correlate_naive64(x.grid().to_doubles(), x.height(), x.width(), x.channels(),
                                       pk.patch.to_doubles(), pk.size());
    return Tensor::from_doubles({x.height(), x.width()}, out);
}

/// Single-channel h x w action map via zero-padded FFTs.
inline Tensor xcorr_fft(const FeatureMap& x, const Prototype& pk) {
    check_prototype(x, pk);
    const auto out = correlate_fft64(x.grid().to_doubles(), x.height(), x.width(), x.channels(),
                                     pk.patch.to_doubles(), pk.size());
    return Tensor::from_doubles({x.height(), x.width()}, out);
}

/// Caches the prototype spectra of a bank for a fixed feature-map size, so a
/// stream of samples pays only for its own transforms. Immutable after
/// construction and safe to share between threads.
class ActionMapGenerator {
public:
    ActionMapGenerator(const PrototypeBank& bank, std::size_t h, std::size_t w)
        : h_(h), w_(w), p_(bank.size()), channels_(bank.channels()) {
        if (bank.prototypes.rank() != 4 || bank.num_actions() == 0) {
            fail(ErrorCode::shape, "prototype bank is empty");
        }
        if (p_ > std::min(h, w)) {
            fail(ErrorCode::shape, "prototype size " + std::to_string(p_) + " exceeds feature map " +
                                       dims_to_string({h, w}));
        }
        rows_ = padded_extent(h, p_);
        cols_ = padded_extent(w, p_);
        const auto all = bank.prototypes.to_doubles();
        const std::size_t n = p_ * p_ * channels_;
        for (std::size_t k = 0; k < bank.num_actions(); ++k) {
            spectra_.push_back(channel_spectra(std::span<const double>(all).subspan(k * n, n), p_, p_, channels_,
                                               rows_, cols_));
        }
    }

    std::size_t num_actions() const noexcept { return spectra_.size(); }

    /// K_a x h x w maps in 64-bit, action-id order.
    std::vector<double> generate64(const FeatureMap& x) const {
        if (x.height() != h_ || x.width() != w_ || x.channels() != channels_) {
            fail(ErrorCode::shape, "feature map " + x.grid().shape_string() + " does not match bank expecting " +
                                       dims_to_string({h_, w_, channels_}));
        }
        const auto xs = channel_spectra(x.grid().to_doubles(), h_, w_, channels_, rows_, cols_);
        std::vector<double> out;
        out.reserve(spectra_.size() * h_ * w_);
        for (const auto& ps : spectra_) {
            const auto m = correlate_spectra(xs, ps, h_, w_, p_);
            out.insert(out.end(), m.begin(), m.end());
        }
        return out;
    }

    ActionMapStack generate(const FeatureMap& x) const {
        return {Tensor::from_doubles({spectra_.size(), h_, w_}, generate64(x))};
    }

private:
    std::size_t h_, w_, p_, channels_;
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<ChannelSpectra> spectra_;
};

/// maps[k] = xcorr_fft(x, bank[k]).
inline ActionMapStack gen_action_maps(const FeatureMap& x, const PrototypeBank& bank) {
    if (bank.prototypes.empty() || bank.prototypes.rank() != 4) fail(ErrorCode::shape, "prototype bank is empty");
    if (bank.size() > std::min(x.height(), x.width()) || bank.channels() != x.channels()) {
        fail(ErrorCode::shape, "cannot correlate feature map " + x.grid().shape_string() + " with bank " +
                                   bank.prototypes.shape_string());
    }
    return ActionMapGenerator(bank, x.height(), x.width()).generate(x);
}

/// Optional per-map standardization (zero mean, unit variance). Constant maps
/// become all-zero.
inline void zscore_maps(std::span<double> maps, std::size_t num_maps) {
    const std::size_t n = maps.size() / num_maps;
    for (std::size_t k = 0; k < num_maps; ++k) {
        auto m = maps.subspan(k * n, n);
        double mean = 0.0;
        for (double v : m) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : m) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
        for (double& v : m) v = (v - mean) * inv;
    }
}

// --- Benchmark ---------------------------------------------------------------

struct BenchConfig {
    std::size_t h = 32, w = 32, channels = 2, p = 5, num_actions = 1, repeats = 5;
    std::uint64_t seed = 7;
};

struct BenchRecord {
    std::string backend;
    std::size_t h, w, channels, p, num_actions;
    std::int64_t median_ns;
    bool agreement;
};

struct BenchReport {
    std::vector<BenchRecord> records;
    double max_rel_error = 0.0;
    bool agreement = false;
    /// naive median time over FFT median time.
    double speedup = 0.0;
};

inline nlohmann::json to_json(const BenchRecord& r) {
    return {{"backend", r.backend}, {"h", r.h}, {"w", r.w}, {"C", r.channels}, {"p", r.p},
            {"K_a", r.num_actions}, {"median_ns", r.median_ns}, {"agreement", r.agreement}};
}

/// Max |a - b| scaled by (1 + max |b|).
inline double scaled_max_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        ref = std::max(ref, std::abs(b[i]));
    }
    return diff / (1.0 + ref);
}

inline BenchReport bench_corr(const BenchConfig& cfg) {
    const Tensor xt = seeded_fill({cfg.h, cfg.w, cfg.channels}, derive_seed(cfg.seed, 1));
    const Tensor pt = seeded_fill({cfg.num_actions, cfg.p, cfg.p, cfg.channels}, derive_seed(cfg.seed, 2));
    const FeatureMap x(xt);
    const PrototypeBank bank{pt, std::vector<std::size_t>(cfg.num_actions, 1), {}};
    const auto xd = xt.to_doubles();
    const auto pd = pt.to_doubles();
    const std::size_t n = cfg.p * cfg.p * cfg.channels;

    auto run_naive = [&] {
        std::vector<double> out;
        for (std::size_t k = 0; k < cfg.num_actions; ++k) {
            auto m = correlate_naive64(xd, cfg.h, cfg.w, cfg.channels, std::span<const double>(pd).subspan(k * n, n),
                                       cfg.p);
            out.insert(out.end(), m.begin(), m.end());
        }
        return out;
    };
    auto run_fft = [&] { return ActionMapGenerator(bank, cfg.h, cfg.w).generate64(x); };

    BenchReport report;
    const auto naive_out = run_naive();
    const auto fft_out = run_fft();
    report.max_rel_error = scaled_max_error(fft_out, naive_out);
    report.agreement = report.max_rel_error <= 1e-6;

    auto time_median = [&](auto&& fn) {
        std::vector<std::int64_t> ns;
        for (std::size_t r = 0; r < std::max<std::size_t>(cfg.repeats, 1); ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            auto out = fn();
            const auto t1 = std::chrono::steady_clock::now();
            if (out.empty()) fail(ErrorCode::numeric, "benchmark produced no output");
            ns.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
        }
        std::sort(ns.begin(), ns.end());
        return ns[ns.size() / 2];
    };
    const auto naive_ns = time_median(run_naive);
    const auto fft_ns = time_median(run_fft);
    report.records.push_back({"naive", cfg.h, cfg.w, cfg.channels, cfg.p, cfg.num_actions, naive_ns, report.agreement});
    report.records.push_back({"fft", cfg.h, cfg.w, cfg.channels, cfg.p, cfg.num_actions, fft_ns, report.agreement});
    report.speedup = static_cast<double>(naive_ns) / static_cast<double>(std::max<std::int64_t>(fft_ns, 1));
    return report;
}

} // namespace vickam
