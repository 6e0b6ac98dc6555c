#pragma once

#include "vickam/error.hpp"
#include "vickam/io.hpp"
#include "vickam/tensor.hpp"
#include "vickam/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace vickam {

struct Point2 {
    double x = 0, y = 0;
    friend bool operator==(const Point2&, const Point2&) = default;
};

/// One annotated scene as the relation-map statistics see it.
struct PlacementRecord {
    std::size_t group = 0;
    AffineTransform affine;
    std::vector<BoxAnnotation> boxes;
};

/// Activity-action spatial statistics, K_g x K_a x h x w.
struct RelationMaps {
    std::size_t num_groups = 0, num_actions = 0, height = 0, width = 0;
    std::size_t region = 1;
    std::size_t skipped_points = 0;
    std::vector<double> maps;               // max-normalized to [0, 1]
    std::vector<std::uint32_t> raw_counts;  // stamp coverage counts

    std::size_t slice_size() const { return height * width; }
    std::span<const double> slice(std::size_t g, std::size_t k) const {
        return std::span<const double>(maps).subspan((g * num_actions + k) * slice_size(), slice_size());
    }
    Dims dims() const { return {num_groups, num_actions, height, width}; }
};

inline Point2 bottom_center(const BoxAnnotation& box) { return {(box.x0 + box.x1) / 2.0, box.y1}; }

inline Point2 apply_affine(const AffineTransform& t, Point2 pt) {
    return {t.a * pt.x + t.b * pt.y + t.tx, t.c * pt.x + t.d * pt.y + t.ty};
}

inline void check_affine(const AffineTransform& t) {
    for (double v : {t.a, t.b, t.tx, t.c, t.d, t.ty}) {
        if (!std::isfinite(v)) fail(ErrorCode::numeric, "affine transform has non-finite entries");
    }
    if (t.determinant() == 0.0) fail(ErrorCode::numeric, "affine transform is singular");
}

/// Nearest integer, ties toward +infinity.
inline double round_half_up(double v) { return std::floor(v + 0.5); }

/// Stamps an r x r square of +1 counts around each aligned bottom-centre point,
/// then normalizes each (activity, action) slice by its maximum.
inline RelationMaps stamp_relation_maps(std::span<const PlacementRecord> annotated, std::size_t num_groups,
                                        std::size_t num_actions, std::size_t h, std::size_t w, std::size_t r) {
    if (r == 0 || r % 2 == 0) fail(ErrorCode::usage, "marked region side must be odd and >= 1");
    if (num_groups == 0 || num_actions == 0 || h == 0 || w == 0) fail(ErrorCode::usage, "relation map sizes must be >= 1");
    RelationMaps rm{num_groups, num_actions, h, w, r, 0, {}, {}};
    const std::size_t plane = h * w;
    rm.raw_counts.assign(num_groups * num_actions * plane, 0);
    const auto half = static_cast<std::int64_t>(r / 2);
    const auto hi = static_cast<std::int64_t>(h), wi = static_cast<std::int64_t>(w);

    for (const auto& rec : annotated) {
        if (rec.group >= num_groups) {
            fail(ErrorCode::usage, "group label " + std::to_string(rec.group) + " out of range for K_g=" +
                                       std::to_string(num_groups));
        }
        check_affine(rec.affine);
        for (const auto& box : rec.boxes) {
            if (box.action_id >= num_actions) {
                fail(ErrorCode::usage, "action label " + std::to_string(box.action_id) + " out of range for K_a=" +
                                           std::to_string(num_actions));
            }
            const Point2 pt = apply_affine(rec.affine, bottom_center(box));
            const double col = round_half_up(pt.x), row = round_half_up(pt.y);
            // Anything this far out cannot reach the grid.
            if (!std::isfinite(col) || !std::isfinite(row) || std::abs(col) > 1e12 || std::abs(row) > 1e12) {
                ++rm.skipped_points;
                continue;
            }
            const auto u = static_cast<std::int64_t>(row), v = static_cast<std::int64_t>(col);
            const auto r0 = std::max<std::int64_t>(u - half, 0), r1 = std::min<std::int64_t>(u + half, hi - 1);
            const auto c0 = std::max<std::int64_t>(v - half, 0), c1 = std::min<std::int64_t>(v + half, wi - 1);
            if (r0 > r1 || c0 > c1) {
                ++rm.skipped_points;
                continue;
            }
            auto* counts = &rm.raw_counts[(rec.group * num_actions + box.action_id) * plane];
            for (auto i = r0; i <= r1; ++i) {
                for (auto j = c0; j <= c1; ++j) ++counts[static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)];
            }
        }
    }

    rm.maps.assign(rm.raw_counts.size(), 0.0);
    for (std::size_t s = 0; s < num_groups * num_actions; ++s) {
        const auto* counts = &rm.raw_counts[s * plane];
        const auto peak = *std::max_element(counts, counts + plane);
        if (peak == 0) continue;
        for (std::size_t i = 0; i < plane; ++i) {
            // Rounded to storage precision so in-memory and on-disk maps agree.
            rm.maps[s * plane + i] = static_cast<float>(static_cast<double>(counts[i]) / static_cast<double>(peak));
        }
    }
    return rm;
}

// On-disk: relmaps.vkt (normalized), raw_counts.vkt and relmaps.json.

inline void save_relation_maps(const RelationMaps& rm, const std::filesystem::path& dir) {
    ensure_dir(dir);
    write_tensor(Tensor::from_doubles(rm.dims(), rm.maps), dir / "relmaps.vkt");
    std::vector<float> counts(rm.raw_counts.begin(), rm.raw_counts.end());
    write_tensor(Tensor(rm.dims(), counts), dir / "raw_counts.vkt");
    write_json(dir / "relmaps.json", {{"K_g", rm.num_groups},
                                      {"K_a", rm.num_actions},
                                      {"h", rm.height},
                                      {"w", rm.width},
                                      {"r", rm.region},
                                      {"skipped_points", rm.skipped_points}});
}

inline RelationMaps load_relation_maps(const std::filesystem::path& dir) {
    const auto meta_path = (dir / "relmaps.json").string();
    const auto meta = read_json(dir / "relmaps.json");
    RelationMaps rm;
    rm.num_groups = json_get<std::size_t>(meta, "K_g", meta_path);
    rm.num_actions = json_get<std::size_t>(meta, "K_a", meta_path);
    rm.height = json_get<std::size_t>(meta, "h", meta_path);
    rm.width = json_get<std::size_t>(meta, "w", meta_path);
    rm.region = json_get<std::size_t>(meta, "r", meta_path);
    rm.skipped_points = json_get<std::size_t>(meta, "skipped_points", meta_path);
    const auto maps = read_tensor(dir / "relmaps.vkt");
    const auto counts = read_tensor(dir / "raw_counts.vkt");
    if (maps.dims() != rm.dims() || counts.dims() != rm.dims()) {
        fail(ErrorCode::shape, "relation map files disagree with sidecar " + dims_to_string(rm.dims()), dir.string());
    }
    rm.maps = maps.to_doubles();
    for (float v : counts.data()) rm.raw_counts.push_back(static_cast<std::uint32_t>(v));
    return rm;
}

} // namespace vickam
