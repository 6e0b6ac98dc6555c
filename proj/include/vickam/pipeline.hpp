#pragma once

#include "vickam/error.hpp"
#include "vickam/fftcorr.hpp"
#include "vickam/io.hpp"
#include "vickam/nnhead.hpp"
#include "vickam/prototypes.hpp"
#include "vickam/random.hpp"
#include "vickam/relmaps.hpp"
#include "vickam/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vickam {

inline constexpr const char* kVersion = "vickam 0.1.0";

// --- Configuration -------------------------------------------------------------

/// Learning rate per epoch. "constant" uses `base`; "warmup_decay" ramps
/// linearly from `initial` to `peak` over `warmup_epochs`, holds, then from
/// `decay_start` subtracts `decay_per_epoch` per epoch down to `floor`.
struct LrSchedule {
    std::string kind = "constant";
    double base = 5e-4;
    double initial = 5e-7, peak = 5e-5;
    std::size_t warmup_epochs = 5, decay_start = 6;
    double decay_per_epoch = 1e-6, floor = 0.0;

    double at(std::size_t epoch) const {
        if (kind == "constant") return base;
        if (epoch < warmup_epochs) {
            return initial + (peak - initial) * static_cast<double>(epoch) / static_cast<double>(warmup_epochs);
        }
        if (epoch < decay_start) return peak;
        return std::max(floor, peak - decay_per_epoch * static_cast<double>(epoch - decay_start + 1));
    }
};

struct ModelFlags {
    bool use_action_maps = true;
    bool use_augmentation = true;
    bool use_semantics = true;
    bool zscore_maps = false;
};

struct TrainConfig {
    HeadDims dims;
    std::size_t region = 19;  // r, marked-region side
    double lambda_pre = 1.0, lambda_main = 3.0;
    LrSchedule lr_stage1, lr_stage2;
    std::size_t epochs_stage1 = 10, epochs_stage2 = 50;
    std::size_t batch_size = 4;
    std::uint64_t seed = 1;
    ModelFlags flags;
    bool semantic_trainable = false;
    bool zero_fill = false;
    double train_fraction = 1.0;
    std::vector<std::string> action_names;
    bool save_every_epoch = true;
};

inline void validate(const TrainConfig& c) {
    const auto& d = c.dims;
    if (d.num_groups == 0 || d.num_actions == 0 || d.height == 0 || d.width == 0 || d.channels == 0 ||
        d.hidden == 0 || d.semantic == 0 || d.patch == 0 || c.batch_size == 0) {
        fail(ErrorCode::usage, "all sizes must be >= 1");
    }
    if (d.patch > std::min(d.height, d.width)) fail(ErrorCode::usage, "p must not exceed min(h, w)");
    if (c.region % 2 == 0) fail(ErrorCode::usage, "marked region side r must be odd");
    if (c.lambda_pre < 0 || c.lambda_main < 0) fail(ErrorCode::usage, "loss weights must be >= 0");
    if (!(c.train_fraction > 0.0 && c.train_fraction <= 1.0)) fail(ErrorCode::usage, "train fraction must be in (0, 1]");
    if (!c.action_names.empty() && c.action_names.size() != d.num_actions) {
        fail(ErrorCode::usage, "action_names must have K_a entries");
    }
}

inline json to_json(const LrSchedule& s) {
    return {{"kind", s.kind}, {"base", s.base}, {"initial", s.initial}, {"peak", s.peak},
            {"warmup_epochs", s.warmup_epochs}, {"decay_start", s.decay_start},
            {"decay_per_epoch", s.decay_per_epoch}, {"floor", s.floor}};
}

inline LrSchedule lr_schedule_from_json(const json& j, const std::string& path) {
    LrSchedule s;
    if (j.is_number()) {
        s.base = j.get<double>();
        return s;
    }
    s.kind = json_get_or(j, "kind", s.kind, path);
    if (s.kind != "constant" && s.kind != "warmup_decay") fail(ErrorCode::usage, "unknown lr schedule " + s.kind);
    s.base = json_get_or(j, "base", s.base, path);
    s.initial = json_get_or(j, "initial", s.initial, path);
    s.peak = json_get_or(j, "peak", s.peak, path);
    s.warmup_epochs = json_get_or(j, "warmup_epochs", s.warmup_epochs, path);
    s.decay_start = json_get_or(j, "decay_start", s.decay_start, path);
    s.decay_per_epoch = json_get_or(j, "decay_per_epoch", s.decay_per_epoch, path);
    s.floor = json_get_or(j, "floor", s.floor, path);
    return s;
}

inline json to_json(const HeadDims& d) {
    return {{"K_g", d.num_groups}, {"K_a", d.num_actions}, {"h", d.height}, {"w", d.width},
            {"C", d.channels},     {"D", d.hidden},        {"d", d.semantic}, {"p", d.patch}};
}

inline HeadDims head_dims_from_json(const json& j, const std::string& path = {}) {
    HeadDims d;
    d.num_groups = json_get_or(j, "K_g", d.num_groups, path);
    d.num_actions = json_get_or(j, "K_a", d.num_actions, path);
    d.height = json_get_or(j, "h", d.height, path);
    d.width = json_get_or(j, "w", d.width, path);
    d.channels = json_get_or(j, "C", d.channels, path);
    d.hidden = json_get_or(j, "D", d.hidden, path);
    d.semantic = json_get_or(j, "d", d.semantic, path);
    d.patch = json_get_or(j, "p", d.patch, path);
    return d;
}

inline json to_json(const ModelFlags& f) {
    return {{"use_action_maps", f.use_action_maps}, {"use_augmentation", f.use_augmentation},
            {"use_semantics", f.use_semantics}, {"zscore_maps", f.zscore_maps}};
}

inline ModelFlags model_flags_from_json(const json& j, const std::string& path = {}) {
    ModelFlags f;
    f.use_action_maps = json_get_or(j, "use_action_maps", f.use_action_maps, path);
    f.use_augmentation = json_get_or(j, "use_augmentation", f.use_augmentation, path);
    f.use_semantics = json_get_or(j, "use_semantics", f.use_semantics, path);
    f.zscore_maps = json_get_or(j, "zscore_maps", f.zscore_maps, path);
    return f;
}

inline json to_json(const TrainConfig& c) {
    json j = to_json(c.dims);
    j["r"] = c.region;
    j["lambda_pre"] = c.lambda_pre;
    j["lambda_main"] = c.lambda_main;
    j["lr_stage1"] = to_json(c.lr_stage1);
    j["lr_stage2"] = to_json(c.lr_stage2);
    j["epochs_stage1"] = c.epochs_stage1;
    j["epochs_stage2"] = c.epochs_stage2;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["flags"] = to_json(c.flags);
    j["semantic_trainable"] = c.semantic_trainable;
    j["zero_fill"] = c.zero_fill;
    j["train_fraction"] = c.train_fraction;
    j["action_names"] = c.action_names;
    j["save_every_epoch"] = c.save_every_epoch;
    return j;
}

inline TrainConfig train_config_from_json(const json& j, const std::string& path = {}) {
    TrainConfig c;
    c.dims = head_dims_from_json(j, path);
    c.region = json_get_or(j, "r", c.region, path);
    c.lambda_pre = json_get_or(j, "lambda_pre", c.lambda_pre, path);
    c.lambda_main = json_get_or(j, "lambda_main", c.lambda_main, path);
    if (j.contains("lr_stage1")) c.lr_stage1 = lr_schedule_from_json(j.at("lr_stage1"), path);
    if (j.contains("lr_stage2")) c.lr_stage2 = lr_schedule_from_json(j.at("lr_stage2"), path);
    c.epochs_stage1 = json_get_or(j, "epochs_stage1", c.epochs_stage1, path);
    c.epochs_stage2 = json_get_or(j, "epochs_stage2", c.epochs_stage2, path);
    c.batch_size = json_get_or(j, "batch_size", c.batch_size, path);
    c.seed = json_get_or(j, "seed", c.seed, path);
    if (j.contains("flags")) c.flags = model_flags_from_json(j.at("flags"), path);
    c.semantic_trainable = json_get_or(j, "semantic_trainable", c.semantic_trainable, path);
    c.zero_fill = json_get_or(j, "zero_fill", c.zero_fill, path);
    c.train_fraction = json_get_or(j, "train_fraction", c.train_fraction, path);
    c.action_names = json_get_or(j, "action_names", c.action_names, path);
    c.save_every_epoch = json_get_or(j, "save_every_epoch", c.save_every_epoch, path);
    return c;
}

inline std::string config_hash(const json& j) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

// --- Losses --------------------------------------------------------------------

/// CE(g_hat, g) + lambda_pre * sum_n CE(a_hat_n, a_n).
inline double loss_pre(std::span<const double> logits_g, std::size_t g,
                       std::span<const std::vector<double>> individual_logits, std::span<const std::size_t> actions,
                       double lambda_pre) {
    if (individual_logits.size() != actions.size()) fail(ErrorCode::shape, "one action label per individual required");
    double loss = softmax_ce(logits_g, g).loss;
    double individual = 0.0;
    for (std::size_t n = 0; n < actions.size(); ++n) individual += softmax_ce(individual_logits[n], actions[n]).loss;
    return loss + lambda_pre * individual;
}

/// CE(g_s, g) + lambda_main * CE(g_o, g).
inline double loss_main(std::span<const double> logits_gs, std::span<const double> logits_go, std::size_t g,
                        double lambda_main) {
    return softmax_ce(logits_gs, g).loss + lambda_main * softmax_ce(logits_go, g).loss;
}

// --- Metrics ---------------------------------------------------------------------

struct Metrics {
    double mca_overall = 0.0;
    double mca_per_class_mean = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]
    std::vector<double> loss_curve;
};

inline Metrics metrics_from_predictions(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                        std::size_t num_classes) {
    if (truth.empty()) fail(ErrorCode::usage, "cannot evaluate an empty set");
    Metrics m;
    m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ++m.confusion.at(truth[i]).at(predicted[i]);
        correct += truth[i] == predicted[i];
    }
    m.mca_overall = static_cast<double>(correct) / static_cast<double>(truth.size());
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t g = 0; g < num_classes; ++g) {
        const auto row = std::accumulate(m.confusion[g].begin(), m.confusion[g].end(), std::size_t{0});
        if (row == 0) continue;
        sum += static_cast<double>(m.confusion[g][g]) / static_cast<double>(row);
        ++present;
    }
    m.mca_per_class_mean = present ? sum / static_cast<double>(present) : 0.0;
    return m;
}

inline json to_json(const Metrics& m) {
    return {{"mca_overall", m.mca_overall},
            {"mca_per_class_mean", m.mca_per_class_mean},
            {"confusion", m.confusion},
            {"loss_curve", m.loss_curve}};
}

inline std::size_t argmax_lowest(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// --- Shared training helpers -------------------------------------------------------

namespace detail {

inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    CounterRng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

inline void scale(std::span<double> v, double s) {
    for (double& x : v) x *= s;
}

inline void adam_on_layers(AdamState& state, std::vector<Linear*> layers, std::vector<Linear*> grads,
                           std::vector<double>* extra = nullptr, std::vector<double>* extra_grad = nullptr) {
    std::vector<std::span<double>> p;
    std::vector<std::span<const double>> g;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        p.emplace_back(layers[i]->weight);
        p.emplace_back(layers[i]->bias);
        g.emplace_back(grads[i]->weight);
        g.emplace_back(grads[i]->bias);
    }
    if (extra) {
        p.emplace_back(*extra);
        g.emplace_back(*extra_grad);
    }
    adam_step(state, p, g);
    for (auto& s : p) round_to_storage(s);
}

} // namespace detail

// --- Stage 1 ---------------------------------------------------------------------

struct Stage1Result {
    PrototypeBank bank;
    RelationMaps relmaps;
    HeadParams params;  // trained global and action classifiers
    Metrics group_metrics;
    double action_accuracy = 0.0;
};

inline std::vector<PlacementRecord> placement_records(std::span<const AnnotatedSample> samples) {
    std::vector<PlacementRecord> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back({s.group, s.affine, s.boxes});
    return out;
}

/// Trains the global and individual-action classifiers under loss_pre, then
/// extracts the prototype bank and relation maps from the same annotations.
inline Stage1Result stage1_run(std::span<const AnnotatedSample> train, const TrainConfig& cfg) {
    validate(cfg);
    const auto& d = cfg.dims;
    if (train.empty()) fail(ErrorCode::usage, "stage 1 needs training samples");
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto& s = train[i];
        if (s.boxes.empty()) fail(ErrorCode::usage, "stage 1 sample " + std::to_string(i) + " has no annotations");
        if (s.grid.grid().dims() != Dims{d.height, d.width, d.channels}) {
            fail(ErrorCode::shape, "sample grid " + s.grid.grid().shape_string() + " does not match config " +
                                       dims_to_string({d.height, d.width, d.channels}));
        }
        if (s.group >= d.num_groups) fail(ErrorCode::usage, "group label out of range in sample " + std::to_string(i));
        for (const auto& b : s.boxes) {
            if (b.action_id >= d.num_actions) fail(ErrorCode::usage, "action label out of range in sample " + std::to_string(i));
        }
    }

    std::vector<std::vector<double>> pooled;
    std::vector<std::vector<std::vector<double>>> rois;
    for (const auto& s : train) {
        pooled.push_back(global_pool(s.grid));
        std::vector<std::vector<double>> r;
        for (const auto& b : s.boxes) r.push_back(roi_pool(s.grid, b, d.patch).to_doubles());
        rois.push_back(std::move(r));
    }

    Stage1Result res;
    res.params = init_head_params(d, derive_seed(cfg.seed, fnv1a64("stage1.init")));
    auto& params = res.params;
    AdamState adam;
    std::vector<double> lg(d.num_groups), la(d.num_actions);
    for (std::size_t epoch = 0; epoch < cfg.epochs_stage1; ++epoch) {
        adam.lr = cfg.lr_stage1.at(epoch);
        const auto order = detail::seeded_permutation(train.size(), derive_seed(cfg.seed, 1000 + epoch));
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            Linear g_global = params.global.zeros_like(), g_action = params.action.zeros_like();
            for (std::size_t bi = start; bi < stop; ++bi) {
                const std::size_t i = order[bi];
                params.global.forward(pooled[i], lg);
                auto ce = softmax_ce(lg, train[i].group);
                epoch_loss += ce.loss;
                params.global.backward(pooled[i], ce.dlogits, g_global, {});
                for (std::size_t n = 0; n < rois[i].size(); ++n) {
                    params.action.forward(rois[i][n], la);
                    auto ca = softmax_ce(la, train[i].boxes[n].action_id);
                    epoch_loss += cfg.lambda_pre * ca.loss;
                    detail::scale(ca.dlogits, cfg.lambda_pre);
                    params.action.backward(rois[i][n], ca.dlogits, g_action, {});
                }
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (auto* l : {&g_global, &g_action}) {
                detail::scale(l->weight, inv);
                detail::scale(l->bias, inv);
            }
            detail::adam_on_layers(adam, {&params.global, &params.action}, {&g_global, &g_action});
        }
        res.group_metrics.loss_curve.push_back(epoch_loss / static_cast<double>(train.size()));
    }

    std::vector<std::size_t> truth, pred;
    std::size_t action_correct = 0, action_total = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
        params.global.forward(pooled[i], lg);
        truth.push_back(train[i].group);
        pred.push_back(argmax_lowest(lg));
        for (std::size_t n = 0; n < rois[i].size(); ++n) {
            params.action.forward(rois[i][n], la);
            action_correct += argmax_lowest(la) == train[i].boxes[n].action_id;
            ++action_total;
        }
    }
    auto curve = std::move(res.group_metrics.loss_curve);
    res.group_metrics = metrics_from_predictions(truth, pred, d.num_groups);
    res.group_metrics.loss_curve = std::move(curve);
    res.action_accuracy = static_cast<double>(action_correct) / static_cast<double>(action_total);

    auto names = cfg.action_names.empty() ? std::vector<std::string>{} : cfg.action_names;
    res.bank = build_prototypes(train, d.patch, d.num_actions, cfg.zero_fill, names);
    const auto records = placement_records(train);
    res.relmaps = stamp_relation_maps(records, d.num_groups, d.num_actions, d.height, d.width, cfg.region);
    return res;
}

// --- Model -------------------------------------------------------------------------

/// Everything needed at test time. Built only from transferred knowledge and
/// trained parameters; never touches individual annotations.
struct Model {
    HeadDims dims;
    ModelFlags flags;
    PrototypeBank bank;
    RelationMaps relmaps;
    HeadParams params;
    SemanticTable semantic;
};

inline void check_knowledge(const HeadDims& d, const PrototypeBank& bank, const RelationMaps& rm) {
    if (bank.prototypes.dims() != Dims{d.num_actions, d.patch, d.patch, d.channels}) {
        fail(ErrorCode::shape, "prototype bank " + bank.prototypes.shape_string() + " does not match config " +
                                   dims_to_string({d.num_actions, d.patch, d.patch, d.channels}));
    }
    if (rm.dims() != Dims{d.num_groups, d.num_actions, d.height, d.width}) {
        fail(ErrorCode::shape, "relation maps " + dims_to_string(rm.dims()) + " do not match config " +
                                   dims_to_string({d.num_groups, d.num_actions, d.height, d.width}));
    }
}

/// Action maps, optional z-scoring, then augmentation: the input of the
/// integration network for one sample.
class MapPipeline {
public:
    MapPipeline(const PrototypeBank& bank, const RelationMaps& relmaps, const HeadDims& d, const ModelFlags& flags)
        : generator_(bank, d.height, d.width), relmaps_(&relmaps), dims_(d), flags_(flags) {}

    AugmentedMaps operator()(const FeatureMap& x) const {
        auto maps = generator_.generate64(x);
        if (flags_.zscore_maps) zscore_maps(maps, dims_.num_actions);
        const ActionMapStack stack{Tensor::from_doubles({dims_.num_actions, dims_.height, dims_.width}, maps)};
        return augment(stack, *relmaps_, flags_.use_augmentation);
    }

private:
    ActionMapGenerator generator_;
    const RelationMaps* relmaps_;
    HeadDims dims_;
    ModelFlags flags_;
};

struct Prediction {
    std::vector<double> probs;
    std::size_t label = 0;
};

/// Averages softmax(g_s) and softmax(g_o); g_s alone when the action-map path
/// is disabled. `mhat` may be null only in that case.
inline Prediction predict_from(const std::vector<double>& pooled, const AugmentedMaps* mhat, const Model& model) {
    std::vector<double> ls(model.dims.num_groups);
    model.params.global.forward(pooled, ls);
    Prediction p;
    p.probs = softmax(ls);
    if (model.flags.use_action_maps) {
        const auto fwd = integrate_forward(*mhat, model.semantic, model.params, model.flags.use_semantics);
        const auto po = softmax(fwd.logits);
        for (std::size_t i = 0; i < p.probs.size(); ++i) p.probs[i] = (p.probs[i] + po[i]) / 2.0;
    }
    p.label = argmax_lowest(p.probs);
    return p;
}

inline Prediction predict(const FeatureMap& x, const Model& model) {
    if (x.grid().dims() != Dims{model.dims.height, model.dims.width, model.dims.channels}) {
        fail(ErrorCode::shape, "feature map " + x.grid().shape_string() + " does not match model");
    }
    const auto pooled = global_pool(x);
    if (!model.flags.use_action_maps) return predict_from(pooled, nullptr, model);
    const MapPipeline maps(model.bank, model.relmaps, model.dims, model.flags);
    const auto mhat = maps(x);
    return predict_from(pooled, &mhat, model);
}

inline Metrics evaluate(std::span<const GroupSample> test, const Model& model) {
    if (test.empty()) fail(ErrorCode::usage, "cannot evaluate an empty test set");
    check_knowledge(model.dims, model.bank, model.relmaps);
    std::optional<MapPipeline> maps;
    if (model.flags.use_action_maps) maps.emplace(model.bank, model.relmaps, model.dims, model.flags);
    std::vector<std::size_t> truth, pred;
    for (const auto& s : test) {
        if (s.grid.grid().dims() != Dims{model.dims.height, model.dims.width, model.dims.channels}) {
            fail(ErrorCode::shape, "test grid " + s.grid.grid().shape_string() + " does not match model");
        }
        const auto pooled = global_pool(s.grid);
        Prediction p;
        if (maps) {
            const auto mhat = (*maps)(s.grid);
            p = predict_from(pooled, &mhat, model);
        } else {
            p = predict_from(pooled, nullptr, model);
        }
        truth.push_back(s.group);
        pred.push_back(p.label);
    }
    return metrics_from_predictions(truth, pred, model.dims.num_groups);
}

// --- Stage 2 -------------------------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double train_mca = 0.0;
    double lr = 0.0;
};

struct Stage2Result {
    Model model;
    std::vector<EpochRecord> epochs;
    Metrics train_metrics;
};

/// Deterministic subset of ceil(fraction * n) indices, ascending.
inline std::vector<std::size_t> train_subset(std::size_t n, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) fail(ErrorCode::usage, "train fraction must be in (0, 1]");
    auto perm = detail::seeded_permutation(n, derive_seed(seed, fnv1a64("train_fraction")));
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
    perm.resize(std::min(keep, n));
    std::sort(perm.begin(), perm.end());
    return perm;
}

/// Called after each epoch with the model as trained so far.
using EpochCallback = std::function<void(const EpochRecord&, const Model&, std::uint64_t step)>;

/// Trains the main framework under loss_main using group labels only.
/// `init` supplies the transferred global classifier from stage 1.
inline Stage2Result stage2_run(std::span<const GroupSample> train_all, const PrototypeBank& bank,
                               const RelationMaps& relmaps, const TrainConfig& cfg, const HeadParams* init = nullptr,
                               const EpochCallback& on_epoch = {}) {
    validate(cfg);
    const auto& d = cfg.dims;
    check_knowledge(d, bank, relmaps);
    if (train_all.empty()) fail(ErrorCode::usage, "stage 2 needs training samples");

    Stage2Result res;
    Model& model = res.model;
    model.dims = d;
    model.flags = cfg.flags;
    model.bank = bank;
    model.relmaps = relmaps;
    model.params = init_head_params(d, derive_seed(cfg.seed, fnv1a64("stage2.init")));
    if (init) {
        if (init->global.in != d.channels || init->global.out != d.num_groups) {
            fail(ErrorCode::shape, "stage-1 global classifier does not match config");
        }
        model.params.global = init->global;
        model.params.action = init->action;
    }
    auto names = cfg.action_names.empty() ? bank.action_names : cfg.action_names;
    model.semantic = embed_labels(names, d.semantic, derive_seed(cfg.seed, fnv1a64("semantic")), cfg.semantic_trainable);

    const auto subset = train_subset(train_all.size(), cfg.train_fraction, cfg.seed);
    std::vector<const GroupSample*> train;
    for (auto i : subset) {
        const auto& s = train_all[i];
        if (s.grid.grid().dims() != Dims{d.height, d.width, d.channels}) {
            fail(ErrorCode::shape, "sample grid " + s.grid.grid().shape_string() + " does not match config");
        }
        if (s.group >= d.num_groups) fail(ErrorCode::usage, "group label out of range");
        train.push_back(&s);
    }

    // Knowledge and the feature source are frozen, so each sample's pooled
    // vector and augmented maps are fixed for the whole run.
    std::vector<std::vector<double>> pooled;
    std::vector<AugmentedMaps> mhat;
    std::optional<MapPipeline> maps;
    if (cfg.flags.use_action_maps) maps.emplace(bank, relmaps, d, cfg.flags);
    for (const auto* s : train) {
        pooled.push_back(global_pool(s->grid));
        if (maps) mhat.push_back((*maps)(s->grid));
    }

    const bool train_y = cfg.semantic_trainable && cfg.flags.use_semantics && cfg.flags.use_action_maps;
    AdamState adam;
    std::uint64_t step = 0;
    std::vector<double> ls(d.num_groups);
    for (std::size_t epoch = 0; epoch < cfg.epochs_stage2; ++epoch) {
        adam.lr = cfg.lr_stage2.at(epoch);
        const auto order = detail::seeded_permutation(train.size(), derive_seed(cfg.seed, 2000 + epoch));
        double epoch_loss = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            HeadParams grads = model.params.zeros_like();
            std::vector<double> dy(train_y ? model.semantic.table.size() : 0, 0.0);
            for (std::size_t bi = start; bi < stop; ++bi) {
                const std::size_t i = order[bi];
                const std::size_t g = train[i]->group;
                model.params.global.forward(pooled[i], ls);
                auto ce_s = softmax_ce(ls, g);
                double loss = ce_s.loss;
                auto probs = softmax(ls);
                model.params.global.backward(pooled[i], ce_s.dlogits, grads.global, {});
                if (cfg.flags.use_action_maps) {
                    const auto fwd = integrate_forward(mhat[i], model.semantic, model.params, cfg.flags.use_semantics);
                    auto ce_o = softmax_ce(fwd.logits, g);
                    loss += cfg.lambda_main * ce_o.loss;
                    const auto po = softmax(fwd.logits);
                    for (std::size_t c = 0; c < probs.size(); ++c) probs[c] = (probs[c] + po[c]) / 2.0;
                    detail::scale(ce_o.dlogits, cfg.lambda_main);
                    integrate_backward(mhat[i], model.semantic, model.params, fwd, ce_o.dlogits, grads, dy,
                                       cfg.flags.use_semantics);
                }
                epoch_loss += loss;
                correct += argmax_lowest(probs) == g;
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (auto& b : param_blocks(grads)) detail::scale(b.values, inv);
            detail::scale(dy, inv);
            if (cfg.flags.use_action_maps) {
                detail::adam_on_layers(adam,
                                       {&model.params.global, &model.params.encode_map, &model.params.encode_action,
                                        &model.params.interact, &model.params.group},
                                       {&grads.global, &grads.encode_map, &grads.encode_action, &grads.interact,
                                        &grads.group},
                                       train_y ? &model.semantic.table : nullptr, train_y ? &dy : nullptr);
            } else {
                detail::adam_on_layers(adam, {&model.params.global}, {&grads.global});
            }
            ++step;
        }
        EpochRecord rec{epoch + 1, epoch_loss / static_cast<double>(train.size()),
                        static_cast<double>(correct) / static_cast<double>(train.size()), adam.lr};
        res.epochs.push_back(rec);
        res.train_metrics.loss_curve.push_back(rec.loss);
        if (on_epoch) on_epoch(rec, model, step);
    }

    std::vector<GroupSample> kept;
    for (const auto* s : train) kept.push_back(*s);
    auto curve = std::move(res.train_metrics.loss_curve);
    res.train_metrics = evaluate(kept, model);
    res.train_metrics.loss_curve = std::move(curve);
    return res;
}

// --- Directories -----------------------------------------------------------------
//
// knowledge/  config.json, prototypes/, relmaps/, stage1/ (checkpoint), metrics.json
// run/        config.json, checkpoints/epoch_NNN/, metrics.jsonl, final_metrics.json

inline json resolved_config_json(const TrainConfig& cfg) {
    json j = to_json(cfg);
    j["version"] = kVersion;
    return j;
}

inline json checkpoint_extra(const HeadDims& d, const ModelFlags& f, std::size_t epoch) {
    return {{"dims", to_json(d)}, {"flags", to_json(f)}, {"epoch", epoch}};
}

inline void save_knowledge(const Stage1Result& s1, const TrainConfig& cfg, const std::filesystem::path& dir) {
    ensure_dir(dir);
    const auto cj = resolved_config_json(cfg);
    write_json(dir / "config.json", cj);
    save_prototype_bank(s1.bank, dir / "prototypes");
    save_relation_maps(s1.relmaps, dir / "relmaps");
    const auto sem = embed_labels(s1.bank.action_names, cfg.dims.semantic, derive_seed(cfg.seed, fnv1a64("semantic")));
    save_checkpoint(dir / "stage1", s1.params, sem, cfg.epochs_stage1, config_hash(cj),
                    checkpoint_extra(cfg.dims, cfg.flags, cfg.epochs_stage1));
    auto m = to_json(s1.group_metrics);
    m["action_accuracy"] = s1.action_accuracy;
    write_json(dir / "metrics.json", m);
}

struct Knowledge {
    TrainConfig config;
    PrototypeBank bank;
    RelationMaps relmaps;
    HeadParams stage1;
};

inline Knowledge load_knowledge(const std::filesystem::path& dir) {
    Knowledge k;
    k.config = train_config_from_json(read_json(dir / "config.json"), (dir / "config.json").string());
    k.bank = load_prototype_bank(dir / "prototypes");
    k.relmaps = load_relation_maps(dir / "relmaps");
    check_knowledge(k.config.dims, k.bank, k.relmaps);
    k.stage1 = load_checkpoint(dir / "stage1", k.config.dims).params;
    return k;
}

inline std::string epoch_dir_name(std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "epoch_%03zu", epoch);
    return buf;
}

inline json epoch_json(const EpochRecord& r) {
    return {{"epoch", r.epoch}, {"loss", r.loss}, {"train_mca", r.train_mca}, {"lr", r.lr}};
}

/// Stage 2 with its run directory. Evaluates on `test` when it is non-empty.
inline Stage2Result run_stage2_to_dir(std::span<const GroupSample> train, std::span<const GroupSample> test,
                                      const Knowledge& knowledge, const TrainConfig& cfg,
                                      const std::filesystem::path& dir) {
    ensure_dir(dir / "checkpoints");
    const auto cj = resolved_config_json(cfg);
    const auto hash = config_hash(cj);
    write_json(dir / "config.json", cj);
    std::ofstream jsonl(dir / "metrics.jsonl", std::ios::trunc);
    if (!jsonl) fail(ErrorCode::format, "cannot open metrics.jsonl", (dir / "metrics.jsonl").string());
    auto on_epoch = [&](const EpochRecord& rec, const Model& model, std::uint64_t step) {
        jsonl << epoch_json(rec).dump() << "\n";
        if (cfg.save_every_epoch || rec.epoch == cfg.epochs_stage2) {
            save_checkpoint(dir / "checkpoints" / epoch_dir_name(rec.epoch), model.params, model.semantic, step, hash,
                            checkpoint_extra(cfg.dims, cfg.flags, rec.epoch));
        }
    };
    auto res = stage2_run(train, knowledge.bank, knowledge.relmaps, cfg, &knowledge.stage1, on_epoch);
    if (cfg.epochs_stage2 == 0) {
        save_checkpoint(dir / "checkpoints" / epoch_dir_name(0), res.model.params, res.model.semantic, 0, hash,
                        checkpoint_extra(cfg.dims, cfg.flags, 0));
    }
    json final_metrics = {{"train", to_json(res.train_metrics)}};
    if (!test.empty()) {
        const auto tm = evaluate(test, res.model);
        final_metrics["test"] = to_json(tm);
        final_metrics["mca_overall"] = tm.mca_overall;
        final_metrics["mca_per_class_mean"] = tm.mca_per_class_mean;
    } else {
        final_metrics["mca_overall"] = res.train_metrics.mca_overall;
        final_metrics["mca_per_class_mean"] = res.train_metrics.mca_per_class_mean;
    }
    write_json(dir / "final_metrics.json", final_metrics);
    return res;
}

/// Resolves a checkpoint path: a checkpoint directory, or a run directory
/// whose latest epoch is used.
inline std::filesystem::path resolve_checkpoint(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    if (fs::exists(path / "manifest.json")) return path;
    const auto dir = path / "checkpoints";
    if (!fs::is_directory(dir)) fail(ErrorCode::format, "not a checkpoint or run directory", path.string());
    std::vector<fs::path> epochs;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_directory() && fs::exists(e.path() / "manifest.json")) epochs.push_back(e.path());
    }
    if (epochs.empty()) fail(ErrorCode::format, "run directory has no checkpoints", path.string());
    std::sort(epochs.begin(), epochs.end());
    return epochs.back();
}

/// Rebuilds a test-time model from a knowledge directory and a checkpoint,
/// failing with a shape error if the two disagree.
inline Model load_model(const Knowledge& knowledge, const std::filesystem::path& checkpoint_path) {
    const auto dir = resolve_checkpoint(checkpoint_path);
    const auto manifest = read_json(dir / "manifest.json");
    const auto mpath = (dir / "manifest.json").string();
    if (!manifest.contains("dims")) fail(ErrorCode::format, "checkpoint manifest lacks dims", mpath);
    const auto dims = head_dims_from_json(manifest.at("dims"), mpath);
    Model m;
    m.dims = dims;
    m.flags = manifest.contains("flags") ? model_flags_from_json(manifest.at("flags"), mpath) : ModelFlags{};
    check_knowledge(dims, knowledge.bank, knowledge.relmaps);
    auto ck = load_checkpoint(dir, dims);
    m.params = std::move(ck.params);
    m.semantic = std::move(ck.semantic);
    m.bank = knowledge.bank;
    m.relmaps = knowledge.relmaps;
    return m;
}

} // namespace vickam
