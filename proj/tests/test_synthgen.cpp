#include "test_support.hpp"

#include <vickam/fftcorr.hpp>
#include <vickam/synthgen.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace vickam;
using testkit::capture_error;

namespace {

double cosine(std::span<const float> a, std::span<const float> b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * b[i];
        na += double(a[i]) * a[i];
        nb += double(b[i]) * b[i];
    }
    return dot / std::sqrt(na * nb);
}

SynthConfig base_config() {
    SynthConfig c;
    c.num_groups = 4;
    c.num_actions = 3;
    c.height = 24;
    c.width = 32;
    c.channels = 4;
    c.patch = 5;
    c.n_train = 8;
    c.n_test = 4;
    c.seed = 5;
    return c;
}

// One activity, one instance of `action` centred on (row, col), no noise.
SynthConfig single_stamp(std::size_t action, std::size_t row, std::size_t col) {
    auto c = base_config();
    c.num_groups = 1;
    c.noise_sigma = 0.0;
    c.instance_sigma = 0.0;
    c.n_train = 1;
    c.n_test = 1;
    c.placements = {{{action, double(col), double(row), 0.0, 1}}};
    return c;
}

bool grids_equal(const FeatureMap& a, const FeatureMap& b) { return a.grid() == b.grid(); }

} // namespace

TEST(GenTemplates, SingleTemplateHasUnitRms) {
    const auto t = gen_templates(1, 5, 4, 3);
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t[0].dims(), (Dims{5, 5, 4}));
    double ss = 0;
    for (float v : t[0].data()) ss += double(v) * v;
    EXPECT_NEAR(std::sqrt(ss / 100.0), 1.0, 1e-6);
}

TEST(GenTemplates, NearOrthogonalFixture) {
    const auto t = gen_templates(3, 5, 4, 2024);
    ASSERT_EQ(t.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = i + 1; j < 3; ++j) EXPECT_LE(std::abs(cosine(t[i].data(), t[j].data())), 0.3);
    }
    EXPECT_EQ(t[0][0], -0x1.00889ep+0f);
    EXPECT_EQ(t[1][7], 0x1.ebf85p-2f);
    EXPECT_EQ(t[2][99], 0x1.a87434p-1f);
}

TEST(GenTemplates, Deterministic) {
    const auto a = gen_templates(4, 3, 2, 77), b = gen_templates(4, 3, 2, 77), c = gen_templates(4, 3, 2, 78);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_TRUE(a[k] == b[k]);
    EXPECT_FALSE(a[0] == c[0]);
}

TEST(GenTemplates, UnsatisfiableIsAnError) {
    // Twelve 1 x 1 x 2 vectors cannot be pairwise near-orthogonal.
    const auto e = capture_error([] { gen_templates(12, 1, 2, 1, 0.3, 5); });
    EXPECT_EQ(e.code(), ErrorCode::numeric);
}

TEST(GenDataset, NoiselessSingleStampIsTheTemplate) {
    const std::size_t row = 8, col = 10;
    const auto ds = gen_dataset(single_stamp(1, row, col));
    const auto& grid = ds.train[0].grid.grid();
    const auto& tmpl = ds.templates[1];
    for (std::size_t i = 0; i < 24; ++i) {
        for (std::size_t j = 0; j < 32; ++j) {
            const bool in = i + 2 >= row && i <= row + 2 && j + 2 >= col && j <= col + 2;
            for (std::size_t c = 0; c < 4; ++c) {
                EXPECT_EQ(grid.at(i, j, c), in ? tmpl.at(i + 2 - row, j + 2 - col, c) : 0.0f) << i << "," << j;
            }
        }
    }
    ASSERT_EQ(ds.train[0].boxes.size(), 1u);
    const auto& b = ds.train[0].boxes[0];
    EXPECT_EQ(b.x0, 8.0);
    EXPECT_EQ(b.y0, 6.0);
    EXPECT_EQ(b.x1, 13.0);
    EXPECT_EQ(b.y1, 11.0);
    EXPECT_EQ(b.action_id, 1u);
    EXPECT_EQ(ds.train_stamps[0][0].row, row);
    EXPECT_EQ(ds.train_stamps[0][0].col, col);
}

TEST(GenDataset, MatchedFilterPeaksAtStampCentre) {
    for (std::size_t k = 0; k < 3; ++k) {
        const std::size_t row = 5 + 4 * k, col = 7 + 6 * k;
        const auto ds = gen_dataset(single_stamp(k, row, col));
        const auto map = xcorr_naive(ds.test[0].grid, {ds.templates[k], k});
        std::size_t best = 0;
        for (std::size_t i = 1; i < map.numel(); ++i) {
            if (map[i] > map[best]) best = i;
        }
        EXPECT_EQ(best / 32, row) << k;
        EXPECT_EQ(best % 32, col) << k;
    }
}

TEST(GenDataset, Deterministic) {
    const auto a = gen_dataset(base_config()), b = gen_dataset(base_config());
    for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_TRUE(grids_equal(a.train[i].grid, b.train[i].grid));
    for (std::size_t i = 0; i < a.test.size(); ++i) EXPECT_TRUE(grids_equal(a.test[i].grid, b.test[i].grid));
    auto other = base_config();
    other.seed = 6;
    EXPECT_FALSE(grids_equal(gen_dataset(other).test[0].grid, a.test[0].grid));
}

TEST(GenDataset, LabelsCycleAndViewsAgree) {
    const auto ds = gen_dataset(base_config());
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        EXPECT_EQ(ds.train[i].group, i % 4);
        EXPECT_EQ(ds.train_groups[i].group, ds.train[i].group);
        EXPECT_TRUE(grids_equal(ds.train_groups[i].grid, ds.train[i].grid));
        EXPECT_EQ(ds.train[i].boxes.size(), ds.train_stamps[i].size());
    }
}

TEST(GenDataset, BoxesArePatchSizedAroundStamps) {
    const auto ds = gen_dataset(base_config());
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        for (std::size_t n = 0; n < ds.train[i].boxes.size(); ++n) {
            const auto& b = ds.train[i].boxes[n];
            const auto& s = ds.train_stamps[i][n];
            EXPECT_EQ(b.x1 - b.x0, 5.0);
            EXPECT_EQ(b.y1 - b.y0, 5.0);
            EXPECT_EQ(b.x0 + 2.0, double(s.col));
            EXPECT_EQ(b.y0 + 2.0, double(s.row));
            EXPECT_EQ(b.action_id, s.action);
        }
    }
}

TEST(GenDataset, HardVariantPooledMeansMatchAcrossActivities) {
    auto hard = base_config();
    hard.hard_variant = true;
    hard.n_train = 0;
    hard.n_test = 100;
    auto standard = hard;
    standard.hard_variant = false;

    auto spread = [](const SynthDataset& ds) {
        std::vector<std::vector<double>> mean(4, std::vector<double>(4, 0.0));
        std::vector<std::size_t> n(4, 0);
        for (const auto& s : ds.test) {
            const auto& g = s.grid.grid();
            for (std::size_t e = 0; e < g.numel(); ++e) mean[s.group][e % 4] += g[e];
            ++n[s.group];
        }
        double worst = 0;
        for (std::size_t c = 0; c < 4; ++c) {
            double lo = 1e300, hi = -1e300;
            for (std::size_t g = 0; g < 4; ++g) {
                const double m = mean[g][c] / double(n[g] * 24 * 32);
                lo = std::min(lo, m);
                hi = std::max(hi, m);
            }
            worst = std::max(worst, hi - lo);
        }
        return worst;
    };
    // Per-class mean of 25 * 768 noise draws at sigma 0.1 has std ~7e-4.
    const double tol = 0.005;
    EXPECT_LE(spread(gen_dataset(hard)), tol);
    EXPECT_GT(spread(gen_dataset(standard)), tol);
}

TEST(GenDataset, TrueClassMapsPeakNearStamps) {
    auto cfg = base_config();
    cfg.noise_sigma = 0.05;
    cfg.instance_sigma = 0.05;
    cfg.n_train = 0;
    cfg.n_test = 60;
    const auto ds = gen_dataset(cfg);
    const std::size_t h = 24, w = 32;
    std::size_t hits = 0, total = 0;
    for (std::size_t s = 0; s < ds.test.size(); ++s) {
        std::vector<Tensor> maps;
        for (std::size_t k = 0; k < 3; ++k) maps.push_back(xcorr_naive(ds.test[s].grid, {ds.templates[k], k}));
        for (const auto& st : ds.test_stamps[s]) {
            const auto& m = maps[st.action];
            auto local_max = [&](long i, long j) {
                for (long di = -1; di <= 1; ++di) {
                    for (long dj = -1; dj <= 1; ++dj) {
                        const long a = i + di, b = j + dj;
                        if (a < 0 || b < 0 || a >= long(h) || b >= long(w)) continue;
                        if (m.at(a, b) > m.at(i, j)) return false;
                    }
                }
                return true;
            };
            bool found = false;
            for (long di = -1; di <= 1 && !found; ++di) {
                for (long dj = -1; dj <= 1 && !found; ++dj) {
                    const long i = long(st.row) + di, j = long(st.col) + dj;
                    if (i >= 0 && j >= 0 && i < long(h) && j < long(w)) found = local_max(i, j);
                }
            }
            hits += found;
            ++total;
        }
    }
    ASSERT_GT(total, 100u);
    EXPECT_GE(double(hits) / double(total), 0.95) << hits << "/" << total;
}

TEST(GenDataset, ValidationErrors) {
    auto even = base_config();
    even.patch = 4;
    EXPECT_TRUE(testkit::mentions(capture_error([&] { gen_dataset(even); }), "odd"));

    auto outside = single_stamp(0, 1, 10);
    EXPECT_TRUE(testkit::mentions(capture_error([&] { gen_dataset(outside); }), "leaves the grid"));

    auto wide = single_stamp(0, 10, 10);
    wide.placements[0][0].std = 3.0;
    EXPECT_THROW(gen_dataset(wide), Error);

    auto uneven = base_config();
    uneven.hard_variant = true;
    uneven.num_groups = 2;
    uneven.placements = {{{0, 10, 10, 0.5, 1}}, {{1, 10, 10, 0.5, 1}}};
    EXPECT_TRUE(testkit::mentions(capture_error([&] { gen_dataset(uneven); }), "identical action counts"));

    auto names = base_config();
    names.action_names = {"only-one"};
    EXPECT_EQ(capture_error([&] { gen_dataset(names); }).code(), ErrorCode::usage);
}

TEST(Dataset, SaveLoadRoundTrip) {
    const auto dir = testkit::scratch_dir("dataset");
    const auto ds = gen_dataset(base_config());
    save_dataset(ds, dir);

    const auto train = load_annotated_split(dir);
    ASSERT_EQ(train.size(), ds.train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        EXPECT_TRUE(grids_equal(train[i].grid, ds.train[i].grid));
        EXPECT_EQ(train[i].group, ds.train[i].group);
        ASSERT_EQ(train[i].boxes.size(), ds.train[i].boxes.size());
        for (std::size_t n = 0; n < train[i].boxes.size(); ++n) {
            EXPECT_EQ(train[i].boxes[n].x0, ds.train[i].boxes[n].x0);
            EXPECT_EQ(train[i].boxes[n].y1, ds.train[i].boxes[n].y1);
            EXPECT_EQ(train[i].boxes[n].action_id, ds.train[i].boxes[n].action_id);
        }
    }
    const auto test = load_group_split(dir, "test");
    ASSERT_EQ(test.size(), ds.test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        EXPECT_TRUE(grids_equal(test[i].grid, ds.test[i].grid));
        EXPECT_EQ(test[i].group, ds.test[i].group);
    }

    const auto info = load_dataset_info(dir);
    EXPECT_EQ(info.num_groups, 4u);
    EXPECT_EQ(info.patch, 5u);
    EXPECT_EQ(info.action_names, ds.config.action_names);
    EXPECT_EQ(read_tensor(dir / "templates.vkt").dims(), (Dims{3, 5, 5, 4}));
}

TEST(Dataset, TestSplitCarriesNoAnnotations) {
    const auto dir = testkit::scratch_dir("dataset_firewall");
    save_dataset(gen_dataset(base_config()), dir);
    const auto m = read_json(dir / "manifest.json");
    for (const auto& e : m.at("test")) {
        EXPECT_FALSE(e.contains("boxes"));
        EXPECT_FALSE(e.contains("affine"));
    }
    for (const auto& e : m.at("train")) EXPECT_TRUE(e.contains("boxes"));
    EXPECT_THROW(load_group_split(dir, "validation"), Error);
}

TEST(Dataset, ConfigJsonRoundTrip) {
    auto cfg = base_config();
    validate_synth_config(cfg);
    const auto back = synth_config_from_json(to_json(cfg));
    EXPECT_EQ(to_json(back), to_json(cfg));
    EXPECT_EQ(back.placements.size(), 4u);
}
