#pragma once

#include "vickam/error.hpp"
#include "vickam/io.hpp"
#include "vickam/random.hpp"
#include "vickam/relmaps.hpp"
#include "vickam/tensor.hpp"
#include "vickam/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace vickam {

/// Instances of one action drawn around a mean stamp centre (column x, row y).
struct PlacementSpec {
    std::size_t action = 0;
    double mean_x = 0, mean_y = 0;
    double std = 1.0;
    std::size_t count = 1;
};

struct SynthConfig {
    std::size_t num_groups = 4, num_actions = 3;
    std::size_t height = 24, width = 32, channels = 4, patch = 5;
    double noise_sigma = 0.1;     // background noise on every cell
    double instance_sigma = 0.05; // extra noise on each stamped instance
    double placement_std = 1.0;   // used by the default layout
    std::size_t n_train = 200, n_test = 100;
    std::uint64_t seed = 1;
    bool hard_variant = false;
    std::vector<std::string> action_names, group_names;
    /// placements[g]: what activity g contains. Empty selects default_layout().
    std::vector<std::vector<PlacementSpec>> placements;
};

inline std::vector<std::string> default_names(const std::string& stem, std::size_t n) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back(stem + std::to_string(i));
    return names;
}

/// Seeded layout in which odd activities mirror the preceding even one left to
/// right. Standard task: activity pairs differ in their action counts.
/// Hard variant: every activity holds one instance of each action, so only
/// positions tell activities apart.
inline std::vector<std::vector<PlacementSpec>> default_layout(const SynthConfig& cfg) {
    const double half = static_cast<double>(cfg.patch / 2);
    const double margin = half + 3.0 * cfg.placement_std;
    const double x_lo = margin, x_hi = static_cast<double>(cfg.width) - 1.0 - margin;
    const double y_lo = margin, y_hi = static_cast<double>(cfg.height) - 1.0 - margin;
    if (x_lo > x_hi || y_lo > y_hi) fail(ErrorCode::usage, "grid too small for the default placement layout");
    CounterRng rng(derive_seed(cfg.seed, fnv1a64("layout")));
    std::vector<std::vector<PlacementSpec>> layout(cfg.num_groups);
    for (std::size_t g = 0; g < cfg.num_groups; ++g) {
        if (g % 2 == 1) {
            for (auto spec : layout[g - 1]) {
                spec.mean_x = static_cast<double>(cfg.width) - 1.0 - spec.mean_x;
                layout[g].push_back(spec);
            }
            continue;
        }
        for (std::size_t k = 0; k < cfg.num_actions; ++k) {
            const std::size_t instances = cfg.hard_variant ? 1 : 1 + (g / 2 + k) % 2;
            for (std::size_t n = 0; n < instances; ++n) {
                const double x = std::round(rng.uniform(x_lo, x_hi));
                const double y = std::round(rng.uniform(y_lo, y_hi));
                layout[g].push_back({k, x, y, cfg.placement_std, 1});
            }
        }
    }
    return layout;
}

inline void validate_synth_config(SynthConfig& cfg) {
    if (cfg.num_groups == 0 || cfg.num_actions == 0 || cfg.height == 0 || cfg.width == 0 || cfg.channels == 0 ||
        cfg.patch == 0) {
        fail(ErrorCode::usage, "synthetic sizes must be >= 1");
    }
    if (cfg.patch % 2 == 0) fail(ErrorCode::usage, "template size p must be odd");
    if (cfg.patch > std::min(cfg.height, cfg.width)) fail(ErrorCode::usage, "template larger than grid");
    if (cfg.noise_sigma < 0 || cfg.instance_sigma < 0) fail(ErrorCode::usage, "noise levels must be >= 0");
    if (cfg.action_names.empty()) cfg.action_names = default_names("action", cfg.num_actions);
    if (cfg.group_names.empty()) cfg.group_names = default_names("activity", cfg.num_groups);
    if (cfg.action_names.size() != cfg.num_actions || cfg.group_names.size() != cfg.num_groups) {
        fail(ErrorCode::usage, "name lists must have K_a and K_g entries");
    }
    if (cfg.placements.empty()) cfg.placements = default_layout(cfg);
    if (cfg.placements.size() != cfg.num_groups) fail(ErrorCode::usage, "placements must list every activity");
    const double half = static_cast<double>(cfg.patch / 2);
    std::vector<std::size_t> reference;
    for (std::size_t g = 0; g < cfg.num_groups; ++g) {
        std::vector<std::size_t> multiset(cfg.num_actions, 0);
        for (const auto& s : cfg.placements[g]) {
            if (s.action >= cfg.num_actions) fail(ErrorCode::usage, "placement action out of range");
            if (s.std < 0) fail(ErrorCode::usage, "placement std must be >= 0");
            const double r = 3.0 * s.std;
            if (s.mean_x - r < half || s.mean_x + r > static_cast<double>(cfg.width) - 1.0 - half ||
                s.mean_y - r < half || s.mean_y + r > static_cast<double>(cfg.height) - 1.0 - half) {
                fail(ErrorCode::usage, "placement for activity " + std::to_string(g) +
                                           " leaves the grid within 3 standard deviations");
            }
            multiset[s.action] += s.count;
        }
        if (g == 0) reference = multiset;
        if (cfg.hard_variant && multiset != reference) {
            fail(ErrorCode::usage, "hard variant requires identical action counts across activities");
        }
    }
}

/// Unit-RMS gaussian templates with pairwise |cosine| <= max_cosine. A failed
/// attempt is redrawn from the next sub-seed.
inline std::vector<Tensor> gen_templates(std::size_t num_actions, std::size_t p, std::size_t channels,
                                         std::uint64_t seed, double max_cosine = 0.3, std::size_t max_attempts = 100) {
    const std::size_t n = p * p * channels;
    for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
        std::vector<std::vector<double>> raw;
        for (std::size_t k = 0; k < num_actions; ++k) {
            const auto t = seeded_fill({p, p, channels}, derive_seed(seed, attempt * num_actions + k),
                                       Distribution::gaussian, 1.0);
            std::vector<double> v = t.to_doubles();
            double ss = 0.0;
            for (double x : v) ss += x * x;
            const double scale = ss > 0.0 ? std::sqrt(static_cast<double>(n) / ss) : 0.0;
            for (double& x : v) x = static_cast<float>(x * scale);
            raw.push_back(std::move(v));
        }
        bool ok = true;
        for (std::size_t i = 0; i < num_actions && ok; ++i) {
            for (std::size_t j = i + 1; j < num_actions && ok; ++j) {
                double dot = 0, ni = 0, nj = 0;
                for (std::size_t e = 0; e < n; ++e) {
                    dot += raw[i][e] * raw[j][e];
                    ni += raw[i][e] * raw[i][e];
                    nj += raw[j][e] * raw[j][e];
                }
                ok = std::abs(dot) / std::sqrt(ni * nj) <= max_cosine;
            }
        }
        if (!ok) continue;
        std::vector<Tensor> out;
        for (auto& v : raw) out.push_back(Tensor::from_doubles({p, p, channels}, v));
        return out;
    }
    fail(ErrorCode::numeric, "could not draw near-orthogonal templates within " + std::to_string(max_attempts) +
                                 " attempts");
}

/// Where one instance was stamped (stamp centre cell).
struct StampRecord {
    std::size_t action = 0, row = 0, col = 0;
};

struct SynthDataset {
    SynthConfig config;  // resolved (names and layout filled in)
    std::vector<AnnotatedSample> train;
    std::vector<GroupSample> train_groups;
    std::vector<GroupSample> test;
    std::vector<Tensor> templates;
    std::vector<std::vector<StampRecord>> train_stamps, test_stamps;
};

namespace detail {

struct GeneratedSample {
    FeatureMap grid;
    std::size_t group;
    std::vector<BoxAnnotation> boxes;
    std::vector<StampRecord> stamps;
};

inline GeneratedSample generate_sample(const SynthConfig& cfg, const std::vector<Tensor>& templates,
                                       std::size_t group, std::uint64_t seed) {
    const std::size_t h = cfg.height, w = cfg.width, c = cfg.channels, p = cfg.patch, half = p / 2;
    std::vector<double> grid(h * w * c, 0.0);
    if (cfg.noise_sigma > 0) {
        const auto noise = seeded_fill({h, w, c}, derive_seed(seed, 1), Distribution::gaussian, cfg.noise_sigma);
        for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = noise[i];
    }
    GeneratedSample out{FeatureMap{}, group, {}, {}};
    CounterRng rng(derive_seed(seed, 2));
    std::uint64_t instance = 0;
    for (const auto& spec : cfg.placements[group]) {
        for (std::size_t n = 0; n < spec.count; ++n) {
            const double dx = std::clamp(rng.normal(), -3.0, 3.0) * spec.std;
            const double dy = std::clamp(rng.normal(), -3.0, 3.0) * spec.std;
            const auto col = static_cast<std::size_t>(std::clamp(round_half_up(spec.mean_x + dx), static_cast<double>(half),
                                                                 static_cast<double>(w - 1 - half)));
            const auto row = static_cast<std::size_t>(std::clamp(round_half_up(spec.mean_y + dy), static_cast<double>(half),
                                                                 static_cast<double>(h - 1 - half)));
            const auto& tmpl = templates[spec.action];
            const auto jitter = cfg.instance_sigma > 0
                                    ? seeded_fill({p, p, c}, derive_seed(seed, 100 + instance), Distribution::gaussian,
                                                  cfg.instance_sigma)
                                    : Tensor({p, p, c});
            ++instance;
            for (std::size_t a = 0; a < p; ++a) {
                for (std::size_t b = 0; b < p; ++b) {
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        grid[((row - half + a) * w + (col - half + b)) * c + ch] +=
                            static_cast<double>(tmpl.at(a, b, ch)) + jitter.at(a, b, ch);
                    }
                }
            }
            out.boxes.push_back({static_cast<double>(col - half), static_cast<double>(row - half),
                                 static_cast<double>(col + half + 1), static_cast<double>(row + half + 1), spec.action});
            out.stamps.push_back({spec.action, row, col});
        }
    }
    out.grid = FeatureMap(Tensor::from_doubles({h, w, c}, grid));
    return out;
}

} // namespace detail

/// Deterministic dataset: per-sample sub-seeds derive from (seed, split, index).
/// Labels cycle through activities, so splits are class balanced.
inline SynthDataset gen_dataset(SynthConfig cfg) {
    validate_synth_config(cfg);
    SynthDataset ds;
    ds.templates = gen_templates(cfg.num_actions, cfg.patch, cfg.channels, derive_seed(cfg.seed, fnv1a64("templates")));
    const auto train_seed = derive_seed(cfg.seed, fnv1a64("train"));
    const auto test_seed = derive_seed(cfg.seed, fnv1a64("test"));
    for (std::size_t i = 0; i < cfg.n_train; ++i) {
        auto s = detail::generate_sample(cfg, ds.templates, i % cfg.num_groups, derive_seed(train_seed, i));
        ds.train_groups.push_back({s.grid, s.group});
        ds.train.push_back({std::move(s.grid), s.group, AffineTransform::identity(), std::move(s.boxes)});
        ds.train_stamps.push_back(std::move(s.stamps));
    }
    for (std::size_t i = 0; i < cfg.n_test; ++i) {
        auto s = detail::generate_sample(cfg, ds.templates, i % cfg.num_groups, derive_seed(test_seed, i));
        ds.test.push_back({std::move(s.grid), s.group});
        ds.test_stamps.push_back(std::move(s.stamps));
    }
    ds.config = std::move(cfg);
    return ds;
}

// --- Config JSON --------------------------------------------------------------

inline json to_json(const SynthConfig& c) {
    json placements = json::array();
    for (const auto& group : c.placements) {
        json g = json::array();
        for (const auto& s : group) {
            g.push_back({{"action", s.action}, {"x", s.mean_x}, {"y", s.mean_y}, {"std", s.std}, {"count", s.count}});
        }
        placements.push_back(g);
    }
    return {{"K_g", c.num_groups},       {"K_a", c.num_actions},
            {"h", c.height},             {"w", c.width},
            {"C", c.channels},           {"p", c.patch},
            {"noise_sigma", c.noise_sigma}, {"instance_sigma", c.instance_sigma},
            {"placement_std", c.placement_std}, {"n_train", c.n_train},
            {"n_test", c.n_test},        {"seed", c.seed},
            {"hard_variant", c.hard_variant}, {"action_names", c.action_names},
            {"group_names", c.group_names}, {"placements", placements}};
}

inline SynthConfig synth_config_from_json(const json& j, const std::string& path = {}) {
    SynthConfig c;
    c.num_groups = json_get_or(j, "K_g", c.num_groups, path);
    c.num_actions = json_get_or(j, "K_a", c.num_actions, path);
    c.height = json_get_or(j, "h", c.height, path);
    c.width = json_get_or(j, "w", c.width, path);
    c.channels = json_get_or(j, "C", c.channels, path);
    c.patch = json_get_or(j, "p", c.patch, path);
    c.noise_sigma = json_get_or(j, "noise_sigma", c.noise_sigma, path);
    c.instance_sigma = json_get_or(j, "instance_sigma", c.instance_sigma, path);
    c.placement_std = json_get_or(j, "placement_std", c.placement_std, path);
    c.n_train = json_get_or(j, "n_train", c.n_train, path);
    c.n_test = json_get_or(j, "n_test", c.n_test, path);
    c.seed = json_get_or(j, "seed", c.seed, path);
    c.hard_variant = json_get_or(j, "hard_variant", c.hard_variant, path);
    c.action_names = json_get_or(j, "action_names", c.action_names, path);
    c.group_names = json_get_or(j, "group_names", c.group_names, path);
    if (j.contains("placements")) {
        for (const auto& g : j.at("placements")) {
            std::vector<PlacementSpec> specs;
            for (const auto& s : g) {
                specs.push_back({json_get<std::size_t>(s, "action", path), json_get<double>(s, "x", path),
                                 json_get<double>(s, "y", path), json_get_or(s, "std", 1.0, path),
                                 json_get_or<std::size_t>(s, "count", 1, path)});
            }
            c.placements.push_back(std::move(specs));
        }
    }
    return c;
}

// --- Dataset directory --------------------------------------------------------
//
// manifest.json   sizes, names, and per split the sample files and group
//                 labels; the train split also carries boxes and affines
// samples/*.vkt   one feature grid per sample
// templates.vkt   generator templates, K_a x p x p x C
// ground_truth.json  stamp centres for every sample and the resolved config

struct DatasetInfo {
    std::size_t num_groups = 0, num_actions = 0, height = 0, width = 0, channels = 0, patch = 0;
    std::vector<std::string> action_names, group_names;
};

namespace detail {

inline std::string sample_file(const char* split, std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "samples/%s_%05zu.vkt", split, i);
    return buf;
}

inline json stamps_json(const std::vector<std::vector<StampRecord>>& all) {
    json out = json::array();
    for (const auto& stamps : all) {
        json s = json::array();
        for (const auto& r : stamps) s.push_back({r.action, r.row, r.col});
        out.push_back(s);
    }
    return out;
}

} // namespace detail

inline void save_dataset(const SynthDataset& ds, const std::filesystem::path& dir) {
    ensure_dir(dir / "samples");
    const auto& c = ds.config;
    json train = json::array(), test = json::array();
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        const auto& s = ds.train[i];
        const auto file = detail::sample_file("train", i);
        write_tensor(s.grid.grid(), dir / file);
        json boxes = json::array();
        for (const auto& b : s.boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1, b.action_id});
        const auto& t = s.affine;
        train.push_back({{"file", file}, {"group", s.group}, {"affine", {t.a, t.b, t.tx, t.c, t.d, t.ty}},
                         {"boxes", boxes}});
    }
    for (std::size_t i = 0; i < ds.test.size(); ++i) {
        const auto file = detail::sample_file("test", i);
        write_tensor(ds.test[i].grid.grid(), dir / file);
        test.push_back({{"file", file}, {"group", ds.test[i].group}});
    }
    write_json(dir / "manifest.json", {{"K_g", c.num_groups},
                                       {"K_a", c.num_actions},
                                       {"h", c.height},
                                       {"w", c.width},
                                       {"C", c.channels},
                                       {"p", c.patch},
                                       {"action_names", c.action_names},
                                       {"group_names", c.group_names},
                                       {"train", train},
                                       {"test", test}});
    Tensor templates({ds.templates.size(), c.patch, c.patch, c.channels});
    const std::size_t n = c.patch * c.patch * c.channels;
    for (std::size_t k = 0; k < ds.templates.size(); ++k) {
        std::copy(ds.templates[k].data().begin(), ds.templates[k].data().end(), templates.data().begin() + k * n);
    }
    write_tensor(templates, dir / "templates.vkt");
    write_json(dir / "ground_truth.json", {{"config", to_json(c)},
                                           {"train_stamps", detail::stamps_json(ds.train_stamps)},
                                           {"test_stamps", detail::stamps_json(ds.test_stamps)}});
}

inline DatasetInfo load_dataset_info(const std::filesystem::path& dir) {
    const auto path = (dir / "manifest.json").string();
    const auto m = read_json(dir / "manifest.json");
    DatasetInfo info;
    info.num_groups = json_get<std::size_t>(m, "K_g", path);
    info.num_actions = json_get<std::size_t>(m, "K_a", path);
    info.height = json_get<std::size_t>(m, "h", path);
    info.width = json_get<std::size_t>(m, "w", path);
    info.channels = json_get<std::size_t>(m, "C", path);
    info.patch = json_get<std::size_t>(m, "p", path);
    info.action_names = json_get<std::vector<std::string>>(m, "action_names", path);
    info.group_names = json_get<std::vector<std::string>>(m, "group_names", path);
    return info;
}

namespace detail {

inline FeatureMap load_grid(const std::filesystem::path& dir, const json& entry, const DatasetInfo& info,
                            const std::string& path) {
    const auto file = dir / json_get<std::string>(entry, "file", path);
    FeatureMap grid(read_tensor(file));
    if (grid.grid().dims() != Dims{info.height, info.width, info.channels}) {
        fail(ErrorCode::shape, "sample grid " + grid.grid().shape_string() + " does not match manifest",
             file.string());
    }
    return grid;
}

inline std::size_t load_group(const json& entry, const DatasetInfo& info, const std::string& path) {
    const auto g = json_get<std::size_t>(entry, "group", path);
    if (g >= info.num_groups) fail(ErrorCode::format, "group label out of range", path);
    return g;
}

} // namespace detail

/// The stage-1 view: grids, group labels, affines and boxes.
inline std::vector<AnnotatedSample> load_annotated_split(const std::filesystem::path& dir) {
    const auto info = load_dataset_info(dir);
    const auto path = (dir / "manifest.json").string();
    const auto m = read_json(dir / "manifest.json");
    std::vector<AnnotatedSample> out;
    for (const auto& e : json_get<json>(m, "train", path)) {
        if (!e.contains("boxes") || !e.contains("affine")) {
            fail(ErrorCode::format, "train entry lacks individual annotations", path);
        }
        AnnotatedSample s;
        s.grid = detail::load_grid(dir, e, info, path);
        s.group = detail::load_group(e, info, path);
        const auto a = json_get<std::vector<double>>(e, "affine", path);
        if (a.size() != 6) fail(ErrorCode::format, "affine must have 6 entries", path);
        s.affine = {a[0], a[1], a[2], a[3], a[4], a[5]};
        for (const auto& b : e.at("boxes")) {
            if (!b.is_array() || b.size() != 5) fail(ErrorCode::format, "box must be [x0,y0,x1,y1,action]", path);
            s.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>(),
                               b[4].get<std::size_t>()});
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// The group-only view used by stage 2 and evaluation. Reads nothing but the
/// sample file and its group label.
inline std::vector<GroupSample> load_group_split(const std::filesystem::path& dir, const std::string& split) {
    const auto info = load_dataset_info(dir);
    const auto path = (dir / "manifest.json").string();
    const auto m = read_json(dir / "manifest.json");
    if (split != "train" && split != "test") fail(ErrorCode::usage, "unknown split '" + split + "'");
    std::vector<GroupSample> out;
    for (const auto& e : json_get<json>(m, split.c_str(), path)) {
        out.push_back({detail::load_grid(dir, e, info, path), detail::load_group(e, info, path)});
    }
    return out;
}

} // namespace vickam
