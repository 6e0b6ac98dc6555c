// vickam: command-line driver for dataset synthesis, the two training stages,
// evaluation, correlation benchmarks and heatmap export.

#include "vickam/vickam.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace vickam;

namespace {

void print_error(const std::string& code, int exit_code, const std::string& message, const std::string& path = {}) {
    json j = {{"code", code}, {"exit", exit_code}, {"message", message}};
    if (!path.empty()) j["path"] = path;
    std::cerr << j.dump() << std::endl;
}

/// A config file may hold "synth" and "train" sections, or be a bare section.
json config_section(const std::string& path, const char* section) {
    if (path.empty()) return json::object();
    auto j = read_json(path);
    if (!j.is_object()) fail(ErrorCode::format, "config must be a JSON object", path);
    if (j.contains("synth") || j.contains("train")) return j.value(section, json::object());
    return j;
}

/// --seed, then VICKAM_SEED, then the config's own value.
std::optional<std::uint64_t> seed_override(const std::optional<std::uint64_t>& flag) {
    if (flag) return flag;
    if (const char* env = std::getenv("VICKAM_SEED"); env && *env) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            fail(ErrorCode::usage, std::string("VICKAM_SEED is not an integer: ") + env);
        }
    }
    return std::nullopt;
}

void require_dir(const std::string& path, const char* what) {
    if (!fs::is_directory(path)) fail(ErrorCode::format, std::string(what) + " directory does not exist", path);
}

void check_data_matches(const DatasetInfo& info, const HeadDims& d, const std::string& path) {
    if (info.num_groups != d.num_groups || info.num_actions != d.num_actions || info.height != d.height ||
        info.width != d.width || info.channels != d.channels) {
        fail(ErrorCode::shape,
             "dataset sizes " + dims_to_string({info.num_groups, info.num_actions, info.height, info.width,
                                                info.channels}) +
                 " (K_g,K_a,h,w,C) do not match model " +
                 dims_to_string({d.num_groups, d.num_actions, d.height, d.width, d.channels}),
             path);
    }
}

struct BenchSize {
    std::size_t h, w, c, p, k;
};

std::vector<BenchSize> parse_sizes(const std::string& spec) {
    std::vector<BenchSize> out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        BenchSize s{0, 0, 0, 0, 1};
        char x1 = 0, x2 = 0, colon = 0;
        std::stringstream is(item);
        if (!(is >> s.h >> x1 >> s.w >> x2 >> s.c >> colon >> s.p) || x1 != 'x' || x2 != 'x' || colon != ':') {
            fail(ErrorCode::usage, "bad size '" + item + "', expected HxWxC:p[:K]");
        }
        if (is.peek() == ':') {
            is.get();
            if (!(is >> s.k)) fail(ErrorCode::usage, "bad size '" + item + "', expected HxWxC:p[:K]");
        }
        if (s.h == 0 || s.w == 0 || s.c == 0 || s.p == 0 || s.k == 0 || s.p > std::min(s.h, s.w)) {
            fail(ErrorCode::usage, "invalid sizes in '" + item + "'");
        }
        out.push_back(s);
    }
    if (out.empty()) fail(ErrorCode::usage, "no sizes given");
    return out;
}

std::vector<double> as_doubles(std::span<const float> v) { return {v.begin(), v.end()}; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prototype-guided action maps for weakly supervised group activity recognition"};
    app.require_subcommand(1);

    std::optional<std::uint64_t> seed;
    std::string config_path, out_path, data_path, knowledge_path, checkpoint_path, sample_path, sizes;
    std::optional<std::size_t> epochs;
    std::optional<double> train_fraction;
    bool no_aug = false, no_sem = false, gs_only = false;
    std::size_t repeats = 5;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", config_path, "JSON config (synth section)");
    synth->add_option("--out", out_path, "dataset directory")->required();
    synth->add_option("--seed", seed, "dataset seed");

    auto* stage1 = app.add_subcommand("stage1", "train stage-1 classifiers and extract knowledge");
    stage1->add_option("--data", data_path, "dataset directory")->required();
    stage1->add_option("--config", config_path, "JSON config (train section)");
    stage1->add_option("--out", out_path, "knowledge directory")->required();
    stage1->add_option("--seed", seed, "training seed");
    stage1->add_option("--epochs", epochs, "stage-1 epochs");

    auto* stage2 = app.add_subcommand("stage2", "train the main framework on group labels only");
    stage2->add_option("--data", data_path, "dataset directory")->required();
    stage2->add_option("--knowledge", knowledge_path, "knowledge directory")->required();
    stage2->add_option("--config", config_path, "JSON config (train section); defaults to the knowledge config");
    stage2->add_option("--out", out_path, "run directory")->required();
    stage2->add_flag("--no-augmentation", no_aug, "skip relation-map augmentation");
    stage2->add_flag("--no-semantics", no_sem, "feed zero semantic embeddings");
    stage2->add_flag("--gs-only", gs_only, "disable the action-map path");
    stage2->add_option("--train-fraction", train_fraction, "fraction of the training split to use");
    stage2->add_option("--seed", seed, "training seed");
    stage2->add_option("--epochs", epochs, "stage-2 epochs");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval->add_option("--data", data_path, "dataset directory")->required();
    eval->add_option("--knowledge", knowledge_path, "knowledge directory")->required();
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint or run directory")->required();
    eval->add_option("--out", out_path, "metrics file (default: <checkpoint>/final_metrics.json)");

    auto* bench = app.add_subcommand("bench", "time naive vs FFT correlation");
    bench->add_option("--sizes", sizes, "comma-separated HxWxC:p[:K]")->required();
    bench->add_option("--repeats", repeats, "timed repetitions per backend");
    bench->add_option("--seed", seed, "input seed");

    auto* export_maps = app.add_subcommand("export-maps", "write action and augmented maps as PGM");
    export_maps->add_option("--sample", sample_path, "sample grid (.vkt)")->required();
    export_maps->add_option("--knowledge", knowledge_path, "knowledge directory")->required();
    export_maps->add_option("--checkpoint", checkpoint_path, "checkpoint whose map flags to use");
    export_maps->add_option("--out", out_path, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", 2, e.what());
        return 2;
    }

    try {
        if (*synth) {
            auto cfg = synth_config_from_json(config_section(config_path, "synth"), config_path);
            if (auto s = seed_override(seed)) cfg.seed = *s;
            const auto ds = gen_dataset(cfg);
            save_dataset(ds, out_path);
            write_json(fs::path(out_path) / "config.json", to_json(ds.config));
            std::cout << json{{"command", "synth"}, {"out", out_path}, {"n_train", ds.train.size()},
                              {"n_test", ds.test.size()}}.dump()
                      << std::endl;
        } else if (*stage1) {
            require_dir(data_path, "data");
            auto cfg = train_config_from_json(config_section(config_path, "train"), config_path);
            if (auto s = seed_override(seed)) cfg.seed = *s;
            if (epochs) cfg.epochs_stage1 = *epochs;
            const auto info = load_dataset_info(data_path);
            check_data_matches(info, cfg.dims, data_path);
            if (info.patch != cfg.dims.patch) {
                std::clog << "note: dataset template size " << info.patch << " differs from prototype size "
                          << cfg.dims.patch << "\n";
            }
            if (cfg.action_names.empty()) cfg.action_names = info.action_names;
            const auto train = load_annotated_split(data_path);
            const auto res = stage1_run(train, cfg);
            save_knowledge(res, cfg, out_path);
            std::cout << json{{"command", "stage1"}, {"out", out_path},
                              {"action_accuracy", res.action_accuracy},
                              {"group_accuracy", res.group_metrics.mca_overall}}.dump()
                      << std::endl;
        } else if (*stage2) {
            require_dir(data_path, "data");
            require_dir(knowledge_path, "knowledge");
            const auto knowledge = load_knowledge(knowledge_path);
            auto cfg = config_path.empty() ? knowledge.config
                                           : train_config_from_json(config_section(config_path, "train"), config_path);
            if (auto s = seed_override(seed)) cfg.seed = *s;
            if (epochs) cfg.epochs_stage2 = *epochs;
            if (train_fraction) cfg.train_fraction = *train_fraction;
            if (no_aug) cfg.flags.use_augmentation = false;
            if (no_sem) cfg.flags.use_semantics = false;
            if (gs_only) cfg.flags.use_action_maps = false;
            if (!(cfg.dims == knowledge.config.dims)) {
                fail(ErrorCode::shape, "config sizes do not match the knowledge directory", knowledge_path);
            }
            if (cfg.action_names.empty()) cfg.action_names = knowledge.bank.action_names;
            check_data_matches(load_dataset_info(data_path), cfg.dims, data_path);
            const auto train = load_group_split(data_path, "train");
            const auto test = load_group_split(data_path, "test");
            const auto res = run_stage2_to_dir(train, test, knowledge, cfg, out_path);
            const auto final_metrics = read_json(fs::path(out_path) / "final_metrics.json");
            std::cout << json{{"command", "stage2"}, {"out", out_path},
                              {"mca_overall", final_metrics.at("mca_overall")},
                              {"train_mca", res.train_metrics.mca_overall}}.dump()
                      << std::endl;
        } else if (*eval) {
            require_dir(data_path, "data");
            require_dir(knowledge_path, "knowledge");
            const auto knowledge = load_knowledge(knowledge_path);
            const auto ck_dir = resolve_checkpoint(checkpoint_path);
            const auto model = load_model(knowledge, ck_dir);
            check_data_matches(load_dataset_info(data_path), model.dims, data_path);
            const auto test = load_group_split(data_path, "test");
            const auto m = evaluate(test, model);
            json out = to_json(m);
            out["checkpoint"] = ck_dir.filename().string();
            out["n_test"] = test.size();
            const fs::path dest = out_path.empty() ? ck_dir / "final_metrics.json" : fs::path(out_path);
            write_json(dest, out);
            std::cout << out.dump(2) << std::endl;
        } else if (*bench) {
            const auto s = seed_override(seed).value_or(7);
            for (const auto& sz : parse_sizes(sizes)) {
                const auto report = bench_corr({sz.h, sz.w, sz.c, sz.p, sz.k, repeats, s});
                for (const auto& r : report.records) {
                    auto j = to_json(r);
                    if (r.backend == "fft") j["speedup"] = report.speedup;
                    std::cout << j.dump() << "\n";
                }
            }
            std::cout.flush();
        } else if (*export_maps) {
            require_dir(knowledge_path, "knowledge");
            const auto knowledge = load_knowledge(knowledge_path);
            const auto& d = knowledge.config.dims;
            ModelFlags flags = knowledge.config.flags;
            if (!checkpoint_path.empty()) flags = load_model(knowledge, checkpoint_path).flags;
            const FeatureMap x(read_tensor(sample_path));
            if (x.grid().dims() != Dims{d.height, d.width, d.channels}) {
                fail(ErrorCode::shape, "sample " + x.grid().shape_string() + " does not match knowledge", sample_path);
            }
            ensure_dir(out_path);
            auto maps = ActionMapGenerator(knowledge.bank, d.height, d.width).generate64(x);
            if (flags.zscore_maps) zscore_maps(maps, d.num_actions);
            const ActionMapStack stack{Tensor::from_doubles({d.num_actions, d.height, d.width}, maps)};
            const auto mhat = augment(stack, knowledge.relmaps, flags.use_augmentation);
            const std::size_t plane = d.height * d.width;
            json files = json::array();
            char name[64];
            for (std::size_t k = 0; k < d.num_actions; ++k) {
                std::snprintf(name, sizeof(name), "action_%02zu.pgm", k);
                write_pgm(fs::path(out_path) / name, as_doubles(stack.maps.data().subspan(k * plane, plane)),
                          d.height, d.width);
                files.push_back(name);
            }
            for (std::size_t g = 0; g < d.num_groups; ++g) {
                for (std::size_t k = 0; k < d.num_actions; ++k) {
                    std::snprintf(name, sizeof(name), "augmented_g%02zu_k%02zu.pgm", g, k);
                    write_pgm(fs::path(out_path) / name,
                              as_doubles(mhat.maps.data().subspan((g * d.num_actions + k) * plane, plane)), d.height,
                              d.width);
                    files.push_back(name);
                }
            }
            std::cout << json{{"command", "export-maps"}, {"out", out_path}, {"files", files}}.dump() << std::endl;
        }
    } catch (const Error& e) {
        const int code = static_cast<int>(e.code());
        print_error(error_code_name(e.code()), code, e.what(), e.path());
        return code;
    } catch (const std::exception& e) {
        print_error("internal", 1, e.what());
        return 1;
    }
    return 0;
}
