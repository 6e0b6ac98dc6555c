#pragma once

#include "vickam/error.hpp"
#include "vickam/io.hpp"
#include "vickam/tensor.hpp"
#include "vickam/types.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <span>
#include <string>
#include <vector>

namespace vickam {

inline void check_box(const BoxAnnotation& box, std::size_t h, std::size_t w) {
    if (!(box.x1 > box.x0) || !(box.y1 > box.y0)) {
        fail(ErrorCode::shape, "degenerate box (zero area)");
    }
    if (box.x0 < 0.0 || box.y0 < 0.0 || box.x1 > static_cast<double>(w) || box.y1 > static_cast<double>(h)) {
        fail(ErrorCode::shape, "box outside feature grid " + dims_to_string({h, w}));
    }
}

/// Bilinear sample of channel-last grid at continuous (x, y); cell centres sit
/// at half-integers. Coordinates beyond the outermost centres clamp to the border.
inline void bilinear_sample(std::span<const float> grid, std::size_t h, std::size_t w, std::size_t channels,
                            double x, double y, std::span<double> out) {
    const double gx = std::clamp(x - 0.5, 0.0, static_cast<double>(w - 1));
    const double gy = std::clamp(y - 0.5, 0.0, static_cast<double>(h - 1));
    const auto x_lo = static_cast<std::size_t>(std::floor(gx));
    const auto y_lo = static_cast<std::size_t>(std::floor(gy));
    const std::size_t x_hi = std::min(x_lo + 1, w - 1);
    const std::size_t y_hi = std::min(y_lo + 1, h - 1);
    const double fx = gx - static_cast<double>(x_lo);
    const double fy = gy - static_cast<double>(y_lo);
    const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx), w11 = fy * fx;
    for (std::size_t c = 0; c < channels; ++c) {
        out[c] = w00 * grid[(y_lo * w + x_lo) * channels + c] + w01 * grid[(y_lo * w + x_hi) * channels + c] +
                 w10 * grid[(y_hi * w + x_lo) * channels + c] + w11 * grid[(y_hi * w + x_hi) * channels + c];
    }
}

/// RoiAlign with one bilinear sample at each of the p x p bin centres.
inline std::vector<double> roi_pool64(const FeatureMap& x, const BoxAnnotation& box, std::size_t p) {
    if (p == 0) fail(ErrorCode::shape, "roi output resolution must be >= 1");
    check_box(box, x.height(), x.width());
    const std::size_t channels = x.channels();
    const double bin_w = (box.x1 - box.x0) / static_cast<double>(p);
    const double bin_h = (box.y1 - box.y0) / static_cast<double>(p);
    std::vector<double> out(p * p * channels);
    for (std::size_t a = 0; a < p; ++a) {
        const double cy = box.y0 + (static_cast<double>(a) + 0.5) * bin_h;
        for (std::size_t b = 0; b < p; ++b) {
            const double cx = box.x0 + (static_cast<double>(b) + 0.5) * bin_w;
            bilinear_sample(x.grid().data(), x.height(), x.width(), channels, cx, cy,
                            std::span<double>(out).subspan((a * p + b) * channels, channels));
        }
    }
    return out;
}

inline Tensor roi_pool(const FeatureMap& x, const BoxAnnotation& box, std::size_t p) {
    return Tensor::from_doubles({p, p, x.channels()}, roi_pool64(x, box, p));
}

/// Class-mean ROI features. Each class's features are sorted by their bit
/// patterns before a 64-bit ascending sum, so the bank does not depend on
/// sample order.
inline PrototypeBank build_prototypes(std::span<const AnnotatedSample> samples, std::size_t p, std::size_t num_actions,
                                      bool zero_fill = false, std::vector<std::string> action_names = {}) {
    if (num_actions == 0) fail(ErrorCode::usage, "number of action classes must be >= 1");
    if (samples.empty()) fail(ErrorCode::usage, "no samples to build prototypes from");
    const std::size_t channels = samples.front().grid.channels();
    const std::size_t n = p * p * channels;

    std::vector<std::vector<std::vector<float>>> per_class(num_actions);
    for (const auto& s : samples) {
        if (s.grid.channels() != channels) {
            fail(ErrorCode::shape, "channel count differs across samples: " + s.grid.grid().shape_string());
        }
        for (const auto& box : s.boxes) {
            if (box.action_id >= num_actions) {
                fail(ErrorCode::usage, "action id " + std::to_string(box.action_id) + " out of range for K_a=" +
                                           std::to_string(num_actions));
            }
            // Rounded to storage precision first, so the mean equals the mean
            // of the ROI tensors a caller would obtain from roi_pool().
            const auto feat = roi_pool(s.grid, box, p);
            per_class[box.action_id].emplace_back(feat.data().begin(), feat.data().end());
        }
    }

    std::vector<double> protos(num_actions * n, 0.0);
    std::vector<std::size_t> counts(num_actions, 0);
    for (std::size_t k = 0; k < num_actions; ++k) {
        auto& feats = per_class[k];
        counts[k] = feats.size();
        if (feats.empty()) {
            if (!zero_fill) fail(ErrorCode::usage, "action class " + std::to_string(k) + " has no samples");
            std::clog << "warning: action class " << k << " has no samples; prototype zero-filled\n";
            continue;
        }
        std::sort(feats.begin(), feats.end(), [](const auto& a, const auto& b) {
            return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(), [](float u, float v) {
                return std::bit_cast<std::uint32_t>(u) < std::bit_cast<std::uint32_t>(v);
            });
        });
        auto dst = std::span<double>(protos).subspan(k * n, n);
        for (const auto& f : feats) {
            for (std::size_t i = 0; i < n; ++i) dst[i] += f[i];
        }
        for (double& v : dst) v /= static_cast<double>(feats.size());
    }
    if (action_names.empty()) {
        for (std::size_t k = 0; k < num_actions; ++k) action_names.push_back("action" + std::to_string(k));
    }
    return {Tensor::from_doubles({num_actions, p, p, channels}, protos), counts, std::move(action_names)};
}

// On-disk: prototypes.vkt, counts.vkt and prototypes.json in one directory.

inline void save_prototype_bank(const PrototypeBank& bank, const std::filesystem::path& dir) {
    ensure_dir(dir);
    write_tensor(bank.prototypes, dir / "prototypes.vkt");
    std::vector<float> counts(bank.counts.begin(), bank.counts.end());
    write_tensor(Tensor({counts.size()}, counts), dir / "counts.vkt");
    write_json(dir / "prototypes.json", {{"K_a", bank.num_actions()},
                                         {"p", bank.size()},
                                         {"C", bank.channels()},
                                         {"action_names", bank.action_names}});
}

inline PrototypeBank load_prototype_bank(const std::filesystem::path& dir) {
    const auto meta_path = (dir / "prototypes.json").string();
    const auto meta = read_json(dir / "prototypes.json");
    PrototypeBank bank;
    bank.prototypes = read_tensor(dir / "prototypes.vkt");
    const auto counts = read_tensor(dir / "counts.vkt");
    const auto ka = json_get<std::size_t>(meta, "K_a", meta_path);
    const auto p = json_get<std::size_t>(meta, "p", meta_path);
    const auto c = json_get<std::size_t>(meta, "C", meta_path);
    if (bank.prototypes.dims() != Dims{ka, p, p, c} || counts.numel() != ka) {
        fail(ErrorCode::shape, "prototype files disagree with sidecar " + dims_to_string({ka, p, p, c}),
             dir.string());
    }
    for (float v : counts.data()) bank.counts.push_back(static_cast<std::size_t>(v));
    bank.action_names = json_get<std::vector<std::string>>(meta, "action_names", meta_path);
    return bank;
}

} // namespace vickam
