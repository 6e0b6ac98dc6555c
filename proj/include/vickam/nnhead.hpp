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
#include <filesystem>
#include <functional>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace vickam {

// --- Building blocks -------------------------------------------------------

/// Dense layer y = W x + b, W stored out x in row-major, 64-bit.
struct Linear {
    std::size_t in = 0, out = 0;
    std::vector<double> weight, bias;

    Linear() = default;
    Linear(std::size_t in_features, std::size_t out_features)
        : in(in_features), out(out_features), weight(in_features * out_features, 0.0), bias(out_features, 0.0) {}

    void forward(std::span<const double> x, std::span<double> y) const {
        for (std::size_t o = 0; o < out; ++o) {
            const double* row = &weight[o * in];
            double acc = bias[o];
            for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
            y[o] = acc;
        }
    }

    /// Accumulates parameter gradients into `grad` and, if `dx` is non-empty,
    /// writes (not accumulates) the input gradient.
    void backward(std::span<const double> x, std::span<const double> dy, Linear& grad, std::span<double> dx) const {
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dy[o];
            grad.bias[o] += g;
            if (g == 0.0) continue;
            double* grow = &grad.weight[o * in];
            for (std::size_t i = 0; i < in; ++i) grow[i] += g * x[i];
        }
        if (dx.empty()) return;
        std::fill(dx.begin(), dx.end(), 0.0);
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dy[o];
            if (g == 0.0) continue;
            const double* row = &weight[o * in];
            for (std::size_t i = 0; i < in; ++i) dx[i] += g * row[i];
        }
    }

    Linear zeros_like() const { return Linear(in, out); }
};

/// Sizes shared by every trainable block.
struct HeadDims {
    std::size_t num_groups = 4;   // K_g
    std::size_t num_actions = 3;  // K_a
    std::size_t height = 24, width = 32;
    std::size_t channels = 4;     // C
    std::size_t hidden = 256;     // D
    std::size_t semantic = 128;   // d
    std::size_t patch = 5;        // p

    friend bool operator==(const HeadDims&, const HeadDims&) = default;
};

/// Every trainable weight of the model.
struct HeadParams {
    Linear global;          // pooled X (C) -> K_g, yields logits for g_s
    Linear encode_map;      // flattened sub-map (h*w) -> D
    Linear encode_action;   // [map feature, semantic row] (D + d) -> D
    Linear interact;        // stacked action features (K_a*D) -> D, shared across activities
    Linear group;           // flattened O (K_g*D) -> K_g, yields logits for g_o
    Linear action;          // stage-1 ROI feature (p*p*C) -> K_a

    HeadParams() = default;
    explicit HeadParams(const HeadDims& d)
        : global(d.channels, d.num_groups),
          encode_map(d.height * d.width, d.hidden),
          encode_action(d.hidden + d.semantic, d.hidden),
          interact(d.num_actions * d.hidden, d.hidden),
          group(d.num_groups * d.hidden, d.num_groups),
          action(d.patch * d.patch * d.channels, d.num_actions) {}

    HeadParams zeros_like() const {
        HeadParams z;
        z.global = global.zeros_like();
        z.encode_map = encode_map.zeros_like();
        z.encode_action = encode_action.zeros_like();
        z.interact = interact.zeros_like();
        z.group = group.zeros_like();
        z.action = action.zeros_like();
        return z;
    }

    template <typename Self, typename Fn>
    static void for_each_layer(Self& self, Fn&& fn) {
        fn("global", self.global);
        fn("encode_map", self.encode_map);
        fn("encode_action", self.encode_action);
        fn("interact", self.interact);
        fn("group", self.group);
        fn("action", self.action);
    }
};

/// A named, mutable view of one parameter block.
struct ParamBlock {
    std::string name;
    std::span<double> values;
    Dims dims;
};

inline std::vector<ParamBlock> param_blocks(HeadParams& params) {
    std::vector<ParamBlock> blocks;
    HeadParams::for_each_layer(params, [&](const char* name, Linear& l) {
        blocks.push_back({std::string(name) + ".weight", l.weight, {l.out, l.in}});
        blocks.push_back({std::string(name) + ".bias", l.bias, {l.out}});
    });
    return blocks;
}

inline void round_to_storage(std::span<double> values) {
    for (double& v : values) v = static_cast<float>(v);
}

/// Glorot-uniform weights from the counter stream, zero biases, rounded to
/// storage precision.
inline HeadParams init_head_params(const HeadDims& dims, std::uint64_t seed) {
    HeadParams params(dims);
    std::uint64_t tag = 0;
    HeadParams::for_each_layer(params, [&](const char*, Linear& l) {
        const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
        const auto layer_seed = derive_seed(seed, ++tag);
        for (std::size_t i = 0; i < l.weight.size(); ++i) {
            l.weight[i] = limit * (2.0 * word_to_unit53(counter_word(layer_seed, i)) - 1.0);
        }
        round_to_storage(l.weight);
    });
    return params;
}

// --- Semantic table --------------------------------------------------------

struct SemanticTable {
    std::vector<std::string> labels;
    std::size_t dim = 0;
    std::uint64_t seed = 0;
    bool trainable = false;
    std::vector<double> table;  // K_a x d

    std::span<const double> row(std::size_t k) const { return std::span<const double>(table).subspan(k * dim, dim); }
};

/// Row k is N(0, 1/d) noise drawn from a stream keyed by (seed, label text),
/// so a row follows its label when the label list is reordered.
inline SemanticTable embed_labels(const std::vector<std::string>& labels, std::size_t d, std::uint64_t seed,
                                  bool trainable = false) {
    if (d == 0) fail(ErrorCode::usage, "semantic dimension must be >= 1");
    std::set<std::string> seen;
    for (const auto& l : labels) {
        if (!seen.insert(l).second) fail(ErrorCode::usage, "duplicate action label '" + l + "'");
    }
    SemanticTable t{labels, d, seed, trainable, std::vector<double>(labels.size() * d)};
    const double sigma = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t k = 0; k < labels.size(); ++k) {
        const auto key = derive_seed(seed, fnv1a64(labels[k]));
        for (std::size_t i = 0; i < d; ++i) {
            t.table[k * d + i] =
                static_cast<float>(sigma * words_to_normal(counter_word(key, 2 * i), counter_word(key, 2 * i + 1)));
        }
    }
    return t;
}

// --- Augmentation ------------------------------------------------------------

/// Relation-weighted action maps, K_g x K_a x h x w.
struct AugmentedMaps {
    Tensor maps;

    std::size_t num_groups() const { return maps.dim(0); }
    std::size_t num_actions() const { return maps.dim(1); }
    std::size_t plane() const { return maps.dim(2) * maps.dim(3); }
};

/// enabled: M_hat[g,k] = M[k] * S[g,k] elementwise; disabled: M_hat[g] = M.
inline AugmentedMaps augment(const ActionMapStack& m, const RelationMaps& s, bool enabled = true) {
    const auto& md = m.maps.dims();
    if (md.size() != 3 || md[0] != s.num_actions || md[1] != s.height || md[2] != s.width) {
        fail(ErrorCode::shape, "action maps " + m.maps.shape_string() + " do not match relation maps " +
                                   dims_to_string(s.dims()));
    }
    const std::size_t plane = s.height * s.width;
    const std::size_t per_group = s.num_actions * plane;
    Tensor out({s.num_groups, s.num_actions, s.height, s.width});
    auto dst = out.data();
    const auto src = m.maps.data();
    for (std::size_t g = 0; g < s.num_groups; ++g) {
        for (std::size_t i = 0; i < per_group; ++i) {
            const double v = enabled ? static_cast<double>(src[i]) * s.maps[g * per_group + i] : src[i];
            dst[g * per_group + i] = static_cast<float>(v);
        }
    }
    return {std::move(out)};
}

// --- Forward / backward --------------------------------------------------------

struct GroupForward {
    std::vector<double> o;       // K_g x D
    std::vector<double> logits;  // K_g
    // Activations kept for the backward pass.
    std::vector<double> pre_map;     // K_g x K_a x D, before ReLU
    std::vector<double> pre_action;  // K_g x K_a x D, before ReLU
    std::vector<double> action_in;   // K_g x K_a x (D + d)
    std::vector<double> stacked;     // K_g x (K_a x D)
};

inline void check_integrate_shapes(const AugmentedMaps& mhat, const SemanticTable& y, const HeadParams& params) {
    const std::size_t kg = params.group.out;
    const std::size_t d_hidden = params.encode_map.out;
    if (mhat.maps.rank() != 4 || mhat.num_groups() != kg || mhat.plane() != params.encode_map.in ||
        params.encode_action.in != d_hidden + y.dim || y.table.size() != mhat.num_actions() * y.dim ||
        params.interact.in != mhat.num_actions() * d_hidden || params.group.in != kg * params.interact.out) {
        fail(ErrorCode::shape, "integration shapes disagree: maps " + mhat.maps.shape_string() + ", semantic " +
                                   dims_to_string({y.table.size() / std::max<std::size_t>(y.dim, 1), y.dim}) +
                                   ", encoder input " + std::to_string(params.encode_map.in));
    }
}

/// Per activity g: f_k = relu(E1 m_gk + b1), a_k = relu(E2 [f_k, Y_k] + b2),
/// O_g = W_int [a_0 .. a_{K_a-1}] + b_int; logits = W_go vec(O) + b_go.
/// With use_semantics off the Y rows are fed as zeros.
inline GroupForward integrate_forward(const AugmentedMaps& mhat, const SemanticTable& y, const HeadParams& params,
                                      bool use_semantics = true) {
    check_integrate_shapes(mhat, y, params);
    const std::size_t kg = mhat.num_groups(), ka = mhat.num_actions();
    const std::size_t dh = params.encode_map.out, ds = y.dim, plane = mhat.plane();
    GroupForward f;
    f.o.assign(kg * dh, 0.0);
    f.logits.assign(kg, 0.0);
    f.pre_map.assign(kg * ka * dh, 0.0);
    f.pre_action.assign(kg * ka * dh, 0.0);
    f.action_in.assign(kg * ka * (dh + ds), 0.0);
    f.stacked.assign(kg * ka * dh, 0.0);
    std::vector<double> m(plane);
    const auto src = mhat.maps.data();
    for (std::size_t g = 0; g < kg; ++g) {
        for (std::size_t k = 0; k < ka; ++k) {
            const std::size_t gk = g * ka + k;
            for (std::size_t i = 0; i < plane; ++i) m[i] = src[gk * plane + i];
            auto z1 = std::span<double>(f.pre_map).subspan(gk * dh, dh);
            params.encode_map.forward(m, z1);
            auto u = std::span<double>(f.action_in).subspan(gk * (dh + ds), dh + ds);
            for (std::size_t i = 0; i < dh; ++i) u[i] = std::max(z1[i], 0.0);
            for (std::size_t i = 0; i < ds; ++i) u[dh + i] = use_semantics ? y.table[k * ds + i] : 0.0;
            auto z2 = std::span<double>(f.pre_action).subspan(gk * dh, dh);
            params.encode_action.forward(u, z2);
            for (std::size_t i = 0; i < dh; ++i) f.stacked[gk * dh + i] = std::max(z2[i], 0.0);
        }
        params.interact.forward(std::span<const double>(f.stacked).subspan(g * ka * dh, ka * dh),
                                std::span<double>(f.o).subspan(g * dh, dh));
    }
    params.group.forward(f.o, f.logits);
    return f;
}

/// Accumulates gradients of a loss with d(loss)/d(logits) = dlogits into
/// `grads` (and `dy`, when the semantic table is trainable and in use).
inline void integrate_backward(const AugmentedMaps& mhat, const SemanticTable& y, const HeadParams& params,
                               const GroupForward& f, std::span<const double> dlogits, HeadParams& grads,
                               std::span<double> dy = {}, bool use_semantics = true) {
    const std::size_t kg = mhat.num_groups(), ka = mhat.num_actions();
    const std::size_t dh = params.encode_map.out, ds = y.dim, plane = mhat.plane();
    std::vector<double> d_o(kg * dh);
    params.group.backward(f.o, dlogits, grads.group, d_o);
    std::vector<double> d_stacked(ka * dh), dz2(dh), du(dh + ds), dz1(dh), m(plane);
    const auto src = mhat.maps.data();
    for (std::size_t g = 0; g < kg; ++g) {
        params.interact.backward(std::span<const double>(f.stacked).subspan(g * ka * dh, ka * dh),
                                 std::span<const double>(d_o).subspan(g * dh, dh), grads.interact, d_stacked);
        for (std::size_t k = 0; k < ka; ++k) {
            const std::size_t gk = g * ka + k;
            bool any = false;
            for (std::size_t i = 0; i < dh; ++i) {
                dz2[i] = f.pre_action[gk * dh + i] > 0.0 ? d_stacked[k * dh + i] : 0.0;
                any = any || dz2[i] != 0.0;
            }
            if (!any) continue;
            params.encode_action.backward(std::span<const double>(f.action_in).subspan(gk * (dh + ds), dh + ds), dz2,
                                          grads.encode_action, du);
            if (!dy.empty() && use_semantics) {
                for (std::size_t i = 0; i < ds; ++i) dy[k * ds + i] += du[dh + i];
            }
            any = false;
            for (std::size_t i = 0; i < dh; ++i) {
                dz1[i] = f.pre_map[gk * dh + i] > 0.0 ? du[i] : 0.0;
                any = any || dz1[i] != 0.0;
            }
            if (!any) continue;
            for (std::size_t i = 0; i < plane; ++i) m[i] = src[gk * plane + i];
            params.encode_map.backward(m, dz1, grads.encode_map, {});
        }
    }
}

/// Spatial mean of each channel.
inline std::vector<double> global_pool(const FeatureMap& x) {
    const std::size_t c = x.channels(), n = x.height() * x.width();
    std::vector<double> pooled(c, 0.0);
    const auto data = x.grid().data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) pooled[j] += data[i * c + j];
    }
    for (double& v : pooled) v /= static_cast<double>(n);
    return pooled;
}

/// Logits for g_s: fully connected layer over the spatially averaged grid.
inline std::vector<double> global_classify(const FeatureMap& x, const HeadParams& params) {
    if (x.channels() != params.global.in) {
        fail(ErrorCode::shape, "feature map " + x.grid().shape_string() + " does not match global classifier input " +
                                   std::to_string(params.global.in));
    }
    const auto pooled = global_pool(x);
    std::vector<double> logits(params.global.out);
    params.global.forward(pooled, logits);
    return logits;
}

// --- Loss ------------------------------------------------------------------------

struct CrossEntropy {
    double loss = 0.0;
    std::vector<double> dlogits;
};

inline std::vector<double> softmax(std::span<const double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - m));
    for (double& v : p) v /= z;
    return p;
}

/// -log softmax(logits)[label] and its gradient softmax - onehot. The loss is
/// (max - l_label) + log1p(sum over the non-max terms), which stays accurate
/// when one logit dominates.
inline CrossEntropy softmax_ce(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size()) {
        fail(ErrorCode::usage, "label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) +
                                   " classes");
    }
    check_finite(logits, "logits");
    const auto top = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    const double m = logits[top];
    double rest = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (i != top) rest += std::exp(logits[i] - m);
    }
    CrossEntropy ce;
    ce.loss = (m - logits[label]) + std::log1p(rest);
    ce.dlogits = softmax(logits);
    ce.dlogits[label] -= 1.0;
    return ce;
}

// --- Adam --------------------------------------------------------------------------

struct AdamState {
    double lr = 5e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m, v;
};

/// One bias-corrected Adam update over matching lists of parameter and
/// gradient blocks. Moments are allocated on first use.
inline void adam_step(AdamState& state, std::span<const std::span<double>> params,
                      std::span<const std::span<const double>> grads) {
    if (params.size() != grads.size()) fail(ErrorCode::shape, "parameter and gradient block counts differ");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) fail(ErrorCode::shape, "optimizer state has a different block count");
    for (std::size_t b = 0; b < params.size(); ++b) {
        if (params[b].size() != grads[b].size() || state.m[b].size() != params[b].size()) {
            fail(ErrorCode::shape, "block " + std::to_string(b) + ": parameter/gradient/moment sizes differ");
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto& m = state.m[b];
        auto& v = state.v[b];
        for (std::size_t i = 0; i < params[b].size(); ++i) {
            const double g = grads[b][i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            params[b][i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

// --- Gradient check -------------------------------------------------------------

struct GradCheckBlock {
    std::string name;
    std::span<double> params;
    std::span<const double> analytic;
};

struct GradCheckResult {
    std::string name;
    std::size_t coords = 0;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckResult> blocks;
    double max_rel_error = 0.0;
};

/// Central differences on up to `coords_per_block` coordinates per block
/// (all of them when the block is smaller; an evenly spread, seeded subset
/// otherwise). Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradCheckBlock> blocks,
                                  double eps = 1e-6, std::size_t coords_per_block = 64, double floor = 1e-6,
                                  std::uint64_t seed = 1) {
    if (!(eps > 0.0)) fail(ErrorCode::usage, "grad_check step must be positive");
    GradCheckReport report;
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const auto& block = blocks[bi];
        if (block.params.size() != block.analytic.size()) {
            fail(ErrorCode::shape, "grad_check block '" + block.name + "' has mismatched gradient size");
        }
        GradCheckResult res{block.name, 0, 0.0};
        const std::size_t n = block.params.size();
        std::vector<std::size_t> coords;
        if (n <= coords_per_block) {
            for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            const auto offset = counter_word(seed, bi) % n;
            for (std::size_t j = 0; j < coords_per_block; ++j) coords.push_back((offset + j * n / coords_per_block) % n);
        }
        for (auto i : coords) {
            const double saved = block.params[i];
            block.params[i] = saved + eps;
            const double up = loss();
            block.params[i] = saved - eps;
            const double down = loss();
            block.params[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                fail(ErrorCode::numeric, "non-finite loss during gradient check of '" + block.name + "'");
            }
            const double numeric = (up - down) / (2.0 * eps);
            const double a = block.analytic[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            res.max_rel_error = std::max(res.max_rel_error, rel);
            ++res.coords;
        }
        report.max_rel_error = std::max(report.max_rel_error, res.max_rel_error);
        report.blocks.push_back(std::move(res));
    }
    return report;
}

// --- Checkpoints -------------------------------------------------------------------
//
// A directory of <block>.vkt files plus manifest.json {shapes, step, config_hash, ...}.

inline void save_checkpoint(const std::filesystem::path& dir, HeadParams params, const SemanticTable& semantic,
                            std::uint64_t step, const std::string& config_hash, json extra = json::object()) {
    ensure_dir(dir);
    json shapes = json::object();
    for (const auto& b : param_blocks(params)) {
        write_tensor(Tensor::from_doubles(b.dims, b.values), dir / (b.name + ".vkt"));
        shapes[b.name] = b.dims;
    }
    const Dims ydims{semantic.labels.size(), semantic.dim};
    write_tensor(Tensor::from_doubles(ydims, semantic.table), dir / "semantic.table.vkt");
    shapes["semantic.table"] = ydims;
    extra["shapes"] = shapes;
    extra["step"] = step;
    extra["config_hash"] = config_hash;
    extra["semantic"] = {{"labels", semantic.labels}, {"seed", semantic.seed}, {"trainable", semantic.trainable}};
    write_json(dir / "manifest.json", extra);
}

struct Checkpoint {
    HeadParams params;
    SemanticTable semantic;
    json manifest;
};

/// Loads a checkpoint; every block must match the shapes implied by `dims`.
inline Checkpoint load_checkpoint(const std::filesystem::path& dir, const HeadDims& dims) {
    Checkpoint ck;
    ck.manifest = read_json(dir / "manifest.json");
    ck.params = HeadParams(dims);
    for (auto& b : param_blocks(ck.params)) {
        const auto t = read_tensor(dir / (b.name + ".vkt"));
        if (t.dims() != b.dims) {
            fail(ErrorCode::shape, "checkpoint block '" + b.name + "' has shape " + t.shape_string() + ", expected " +
                                       dims_to_string(b.dims),
                 dir.string());
        }
        for (std::size_t i = 0; i < t.numel(); ++i) b.values[i] = t[i];
    }
    const auto y = read_tensor(dir / "semantic.table.vkt");
    if (y.dims() != Dims{dims.num_actions, dims.semantic}) {
        fail(ErrorCode::shape, "checkpoint semantic table has shape " + y.shape_string() + ", expected " +
                                   dims_to_string({dims.num_actions, dims.semantic}),
             dir.string());
    }
    const auto& sem = ck.manifest.at("semantic");
    ck.semantic.labels = sem.at("labels").get<std::vector<std::string>>();
    ck.semantic.seed = sem.at("seed").get<std::uint64_t>();
    ck.semantic.trainable = sem.at("trainable").get<bool>();
    ck.semantic.dim = dims.semantic;
    ck.semantic.table = y.to_doubles();
    return ck;
}

} // namespace vickam
