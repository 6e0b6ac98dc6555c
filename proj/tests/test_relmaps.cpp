#include "test_support.hpp"

#include <vickam/relmaps.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace vickam;
using testkit::capture_error;

namespace {

// Box whose bottom-centre is exactly (col, row).
BoxAnnotation foot_at(double col, double row, std::size_t action) {
    return {col - 1.0, row - 3.0, col + 1.0, row, action};
}

long nearest_tie_up(double v) {
    const double f = std::floor(v);
    return static_cast<long>(v - f >= 0.5 ? f + 1.0 : f);
}

// Per-cell count: a cell is covered when it lies inside the r x r square.
std::vector<std::uint32_t> brute_force(std::span<const PlacementRecord> recs, std::size_t kg, std::size_t ka,
                                       std::size_t h, std::size_t w, std::size_t r) {
    std::vector<std::uint32_t> out(kg * ka * h * w, 0);
    const long half = long(r / 2);
    for (std::size_t g = 0; g < kg; ++g) {
        for (std::size_t k = 0; k < ka; ++k) {
            for (long i = 0; i < long(h); ++i) {
                for (long j = 0; j < long(w); ++j) {
                    std::uint32_t n = 0;
                    for (const auto& rec : recs) {
                        if (rec.group != g) continue;
                        for (const auto& b : rec.boxes) {
                            if (b.action_id != k) continue;
                            const double bx = 0.5 * (b.x0 + b.x1), by = b.y1;
                            const auto& t = rec.affine;
                            const long col = nearest_tie_up(t.a * bx + t.b * by + t.tx);
                            const long row = nearest_tie_up(t.c * bx + t.d * by + t.ty);
                            if (std::abs(i - row) <= half && std::abs(j - col) <= half) ++n;
                        }
                    }
                    out[((g * ka + k) * h + i) * w + j] = n;
                }
            }
        }
    }
    return out;
}

std::vector<PlacementRecord> random_records(std::size_t n, std::size_t kg, std::size_t ka, std::size_t h,
                                            std::size_t w, std::uint32_t seed) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> ux(-3.0, double(w) + 3.0), uy(-3.0, double(h) + 3.0), half(0.0, 2.0);
    std::vector<PlacementRecord> recs;
    for (std::size_t i = 0; i < n; ++i) {
        PlacementRecord rec{gen() % kg, AffineTransform::identity(), {}};
        if (i % 3 == 1) rec.affine = {1.0, 0.0, 0.5, 0.0, 1.0, -0.5};
        if (i % 3 == 2) rec.affine = {-1.0, 0.0, double(w - 1), 0.0, 1.0, 0.0};
        const double cx = ux(gen), by = uy(gen), hw = half(gen) + 0.25;
        rec.boxes.push_back({cx - hw, by - 2.0, cx + hw, by, gen() % ka});
        recs.push_back(std::move(rec));
    }
    return recs;
}

} // namespace

TEST(BottomCenter, Examples) {
    EXPECT_EQ(bottom_center({0, 0, 2, 4, 0}), (Point2{1.0, 4.0}));
    EXPECT_EQ(bottom_center({3, 1, 5, 3, 0}), (Point2{4.0, 3.0}));
    EXPECT_EQ(bottom_center({0, 0, 1, 1, 0}), (Point2{0.5, 1.0}));
}

TEST(ApplyAffine, Examples) {
    EXPECT_EQ(apply_affine(AffineTransform::identity(), {3, 7}), (Point2{3, 7}));
    EXPECT_EQ(apply_affine({1, 0, 2, 0, 1, -1}, {0, 0}), (Point2{2, -1}));
    EXPECT_EQ(apply_affine({2, 0, 0, 0, 2, 0}, {1, 1}), (Point2{2, 2}));
}

TEST(RoundHalfUp, TiesGoUp) {
    EXPECT_EQ(round_half_up(2.5), 3.0);
    EXPECT_EQ(round_half_up(-2.5), -2.0);
    EXPECT_EQ(round_half_up(2.49), 2.0);
    EXPECT_EQ(round_half_up(-0.51), -1.0);
}

TEST(StampRelationMaps, SingleInteriorStamp) {
    const std::vector<PlacementRecord> recs{{0, {}, {foot_at(4, 5, 0)}}};
    const auto rm = stamp_relation_maps(recs, 1, 1, 10, 10, 3);
    for (std::size_t i = 0; i < 10; ++i) {
        for (std::size_t j = 0; j < 10; ++j) {
            const bool in = i >= 4 && i <= 6 && j >= 3 && j <= 5;
            EXPECT_EQ(rm.maps[i * 10 + j], in ? 1.0 : 0.0) << i << "," << j;
        }
    }
}

TEST(StampRelationMaps, ThreeCellOverlap) {
    const std::vector<PlacementRecord> recs{{0, {}, {foot_at(5, 5, 0), foot_at(7, 5, 0)}}};
    const auto rm = stamp_relation_maps(recs, 1, 1, 12, 12, 3);
    std::size_t twos = 0, ones = 0;
    for (std::size_t i = 0; i < 144; ++i) {
        if (rm.raw_counts[i] == 2) {
            ++twos;
            EXPECT_EQ(rm.maps[i], 1.0);
        } else if (rm.raw_counts[i] == 1) {
            ++ones;
            EXPECT_EQ(rm.maps[i], 0.5);
        } else {
            EXPECT_EQ(rm.maps[i], 0.0);
        }
    }
    EXPECT_EQ(twos, 3u);
    EXPECT_EQ(ones, 12u);
}

TEST(StampRelationMaps, CornerStampIsClipped) {
    const std::vector<PlacementRecord> recs{{0, {}, {foot_at(0, 0, 0)}}};
    const auto rm = stamp_relation_maps(recs, 1, 1, 6, 6, 3);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < 36; ++i) covered += rm.raw_counts[i];
    EXPECT_EQ(covered, 4u);
    EXPECT_EQ(rm.raw_counts[0], 1u);
    EXPECT_EQ(rm.raw_counts[1], 1u);
    EXPECT_EQ(rm.raw_counts[6], 1u);
    EXPECT_EQ(rm.raw_counts[7], 1u);
    EXPECT_EQ(rm.skipped_points, 0u);
}

TEST(StampRelationMaps, FarOutsidePointsAreSkipped) {
    const std::vector<PlacementRecord> recs{{0, {}, {foot_at(-5, 2, 0), foot_at(2, 40, 0), foot_at(-2, 2, 0)}}};
    const auto rm = stamp_relation_maps(recs, 1, 1, 6, 6, 3);
    EXPECT_EQ(rm.skipped_points, 3u);
    for (auto v : rm.raw_counts) EXPECT_EQ(v, 0u);
}

TEST(StampRelationMaps, MatchesBruteForce) {
    const std::size_t kg = 3, ka = 2, h = 11, w = 14;
    for (std::size_t r : {1, 3, 5}) {
        const auto recs = random_records(300, kg, ka, h, w, 17 + r);
        const auto rm = stamp_relation_maps(recs, kg, ka, h, w, r);
        EXPECT_EQ(rm.raw_counts, brute_force(recs, kg, ka, h, w, r)) << "r=" << r;
    }
}

TEST(StampRelationMaps, NormalizationBounds) {
    const auto recs = random_records(200, 2, 2, 9, 9, 5);
    const auto rm = stamp_relation_maps(recs, 2, 2, 9, 9, 3);
    for (std::size_t g = 0; g < 2; ++g) {
        for (std::size_t k = 0; k < 2; ++k) {
            const auto s = rm.slice(g, k);
            const auto* raw = &rm.raw_counts[(g * 2 + k) * 81];
            const auto peak = *std::max_element(raw, raw + 81);
            for (std::size_t i = 0; i < 81; ++i) {
                EXPECT_GE(s[i], 0.0);
                EXPECT_LE(s[i], 1.0);
                if (peak > 0 && raw[i] == peak) EXPECT_EQ(s[i], 1.0);
            }
        }
    }
}

TEST(StampRelationMaps, OrderInvariant) {
    auto recs = random_records(150, 2, 3, 8, 10, 9);
    const auto ref = stamp_relation_maps(recs, 2, 3, 8, 10, 3);
    std::mt19937 gen(3);
    std::shuffle(recs.begin(), recs.end(), gen);
    const auto again = stamp_relation_maps(recs, 2, 3, 8, 10, 3);
    EXPECT_EQ(again.raw_counts, ref.raw_counts);
    EXPECT_EQ(again.maps, ref.maps);
}

TEST(StampRelationMaps, MirroredActivityGivesMirroredMaps) {
    const std::size_t h = 10, w = 13;
    std::mt19937 gen(21);
    std::vector<PlacementRecord> recs;
    const AffineTransform mirror{-1.0, 0.0, double(w - 1), 0.0, 1.0, 0.0};
    for (int i = 0; i < 40; ++i) {
        std::vector<BoxAnnotation> boxes;
        for (int n = 0; n < 3; ++n) boxes.push_back(foot_at(double(gen() % w), double(gen() % h), gen() % 2));
        recs.push_back({0, {}, boxes});
        recs.push_back({1, mirror, boxes});
    }
    const auto rm = stamp_relation_maps(recs, 2, 2, h, w, 3);
    for (std::size_t k = 0; k < 2; ++k) {
        const auto a = rm.slice(0, k), b = rm.slice(1, k);
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) EXPECT_EQ(b[i * w + j], a[i * w + (w - 1 - j)]);
        }
    }
}

TEST(StampRelationMaps, Errors) {
    const std::vector<PlacementRecord> bad_group{{2, {}, {foot_at(1, 1, 0)}}};
    EXPECT_TRUE(testkit::mentions(capture_error([&] { stamp_relation_maps(bad_group, 2, 1, 4, 4, 3); }), "group label"));
    const std::vector<PlacementRecord> bad_action{{0, {}, {foot_at(1, 1, 5)}}};
    EXPECT_TRUE(testkit::mentions(capture_error([&] { stamp_relation_maps(bad_action, 1, 2, 4, 4, 3); }), "action label"));
    EXPECT_THROW(stamp_relation_maps(bad_group, 3, 1, 4, 4, 2), Error);
    const std::vector<PlacementRecord> singular{{0, {0, 0, 0, 0, 1, 0}, {foot_at(1, 1, 0)}}};
    EXPECT_EQ(capture_error([&] { stamp_relation_maps(singular, 1, 1, 4, 4, 3); }).code(), ErrorCode::numeric);
}

TEST(RelationMaps, SaveLoadRoundTrip) {
    const auto dir = testkit::scratch_dir("relmaps");
    const auto recs = random_records(50, 2, 2, 6, 7, 2);
    const auto rm = stamp_relation_maps(recs, 2, 2, 6, 7, 3);
    save_relation_maps(rm, dir);
    const auto back = load_relation_maps(dir);
    EXPECT_EQ(back.maps, rm.maps);
    EXPECT_EQ(back.raw_counts, rm.raw_counts);
    EXPECT_EQ(back.skipped_points, rm.skipped_points);
    EXPECT_EQ(back.region, 3u);
}
