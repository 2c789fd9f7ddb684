// Command-line entry point. Exit codes: 0 ok, 1 config/usage, 2 I/O,
// 3 training failure, 4 nothing to evaluate or aggregate, 5 gradcheck failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctwso/config.hpp"
#include "ctwso/error.hpp"
#include "ctwso/evaluation.hpp"
#include "ctwso/gradcheck.hpp"
#include "ctwso/husl.hpp"
#include "ctwso/phantom.hpp"
#include "ctwso/rng.hpp"
#include "ctwso/training.hpp"

namespace fs = std::filesystem;
using namespace ctwso;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kTraining = 3, kNothing = 4, kGradcheck = 5 };

struct NothingToDo : Error {
    using Error::Error;
};

struct Options {
    std::string config;
    std::vector<std::string> arms;
    std::optional<int> seeds;
    std::vector<std::uint64_t> seed_list;
    std::string split = "test";
    std::optional<int> jobs;
    std::optional<std::string> precision;
    std::string dir;
};

ExperimentConfig load(const Options& opt) {
    ExperimentConfig cfg = opt.config.empty() ? ExperimentConfig{} : load_config(opt.config);
    if (opt.precision) {
        cfg.training.precision = parse_precision(*opt.precision);
        cfg.gradcheck.precision = cfg.training.precision;
    }
    if (opt.jobs) {
        if (*opt.jobs < 1) throw ConfigError("--jobs must be >= 1");
        cfg.experiment.jobs = *opt.jobs;
    }
    return cfg;
}

std::vector<std::string> selected_arms(const Options& opt, const ExperimentConfig& cfg) {
    if (opt.arms.empty()) return cfg.experiment.arms;
    for (const auto& a : opt.arms) find_arm(a);
    return opt.arms;
}

fs::path dataset_dir(const ExperimentConfig& cfg) { return cfg.experiment.output_dir / "dataset"; }

DatasetManifest load_dataset(const ExperimentConfig& cfg) {
    const fs::path path = dataset_dir(cfg) / "manifest.csv";
    if (!fs::exists(path)) throw IoError(path.string(), "no dataset; run 'phantom gen' first");
    return read_manifest(path);
}

/// FNV-1a over the manifest and every slice file in manifest order.
std::uint64_t dataset_hash(const DatasetManifest& m) {
    std::string bytes = read_file_bytes(m.root / "manifest.csv");
    for (const auto& e : m.entries) bytes += read_file_bytes(m.resolve(e));
    return fnv1a64(bytes);
}

int cmd_phantom_gen(const Options& opt) {
    const ExperimentConfig cfg = load(opt);
    const DatasetManifest m = generate_dataset(cfg.phantom, dataset_dir(cfg));
    for (Split s : {Split::Train, Split::Validation, Split::Test, Split::OodTest}) {
        const auto entries = m.split(s);
        std::size_t copd = 0;
        for (const auto& e : entries) copd += e.label == Label::Copd ? 1 : 0;
        std::printf("split=%s slices=%zu copd=%zu no_copd=%zu\n", std::string(to_string(s)).c_str(),
                    entries.size(), copd, entries.size() - copd);
    }
    std::printf("dataset=%s hash=%016llx\n", dataset_dir(cfg).string().c_str(),
                static_cast<unsigned long long>(dataset_hash(m)));
    return kOk;
}

int cmd_train(const Options& opt) {
    const ExperimentConfig cfg = load(opt);
    const auto arms = selected_arms(opt, cfg);
    std::vector<std::uint64_t> seeds = cfg.seeds();
    if (opt.seeds) {
        if (*opt.seeds < 1) throw ConfigError("--seeds must be >= 1");
        seeds.clear();
        for (int i = 0; i < *opt.seeds; ++i) seeds.push_back(cfg.experiment.base_seed + static_cast<std::uint64_t>(i));
    }
    if (!opt.seed_list.empty()) seeds = opt.seed_list;

    const DatasetManifest manifest = load_dataset(cfg);
    for (const auto& name : arms) {
        const Arm& arm = find_arm(name);
        ExperimentOptions eo;
        eo.runs_dir = cfg.experiment.output_dir / "runs";
        eo.seeds = seeds;
        eo.jobs = cfg.experiment.jobs;
        eo.on_run_done = [&](std::size_t index, const RunArtifacts& run) {
            const auto& h = run.history;
            std::printf("arm=%s run=%zu seed=%llu epochs=%d best_epoch=%d best_val_loss=%.6f", name.c_str(),
                        index, static_cast<unsigned long long>(run.seed), h.stop_epoch, h.best_epoch,
                        h.best_val_loss);
            if (run.learned_window) {
                std::printf(" ww=%.3f wl=%.3f", run.learned_window->width, run.learned_window->level);
            }
            std::printf(" seconds=%.1f\n", h.wall_seconds);
            std::fflush(stdout);
        };
        run_experiment(manifest, arm, cfg.network, cfg.training, eo);
    }
    return kOk;
}

int cmd_eval(const Options& opt) {
    const Split split = parse_split(opt.split);
    const ExperimentConfig cfg = load(opt);
    const auto arms = selected_arms(opt, cfg);
    const DatasetManifest manifest = load_dataset(cfg);
    if (!manifest.has_split(split)) throw ConfigError("dataset has no split '" + opt.split + "'");

    const fs::path runs = cfg.experiment.output_dir / "runs";
    const fs::path eval_dir = cfg.experiment.output_dir / "eval";
    std::size_t evaluated = 0;
    std::printf("%s\n", kSummaryHeader);
    for (const auto& name : arms) {
        const auto checkpoints = find_checkpoints(runs, name);
        if (checkpoints.empty()) {
            std::fprintf(stderr, "no checkpoints for arm %s under %s\n", name.c_str(), runs.string().c_str());
            continue;
        }
        const Evaluation ev = evaluate_runs(checkpoints, manifest, split);
        const std::string row = format_summary_row(ev);
        fs::create_directories(eval_dir);
        write_file_bytes(eval_dir / (name + "_" + std::string(to_string(split)) + ".csv"),
                         std::string(kSummaryHeader) + "\n" + row + "\n");
        std::printf("%s\n", row.c_str());
        ++evaluated;
    }
    if (evaluated == 0) throw NothingToDo("no checkpoints found");
    return kOk;
}

int cmd_report(const Options& opt) {
    fs::path dir = opt.dir;
    if (dir.empty()) dir = load(opt).experiment.output_dir;
    const Report r = build_report(dir);
    if (r.summary_rows == 0) throw NothingToDo("no evaluation summaries under " + (dir / "eval").string());
    write_file_bytes(dir / "report.csv", r.summary_csv);
    write_file_bytes(dir / "learned_windows.csv", r.learned_window_csv);
    std::printf("%s\n%s", r.summary_csv.c_str(), r.learned_window_csv.c_str());
    return kOk;
}

template <typename T>
GradCheckReport run_gradcheck(const GradcheckSettings& gc, bool with_wso) {
    const NetworkConfig& net = gc.network;
    const auto params = init_params<T>(net, gc.options.seed);
    const auto side = static_cast<std::size_t>(net.input_size);
    const auto n = static_cast<std::size_t>(gc.batch);
    Tensor<T> batch({n, 1, side, side});
    Rng rng = Rng::derive(gc.options.seed, "gradcheck/input");
    for (auto& v : batch.span()) v = static_cast<T>(rng.uniform(0.0, 1.0));
    std::vector<double> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<double>(i % 2);
    std::optional<WsoParams> wso;
    if (with_wso) wso = wso_init(WindowSetting{1400.0, -500.0});
    return gradient_check<T>(params, net, batch, labels, gc.options, wso);
}

int cmd_gradcheck(const Options& opt) {
    const ExperimentConfig cfg = load(opt);
    const GradcheckSettings& gc = cfg.gradcheck;
    bool ok = true;
    double worst = 0.0;
    std::string offender;
    for (bool with_wso : {false, true}) {
        const GradCheckReport r = gc.precision == Precision::F64 ? run_gradcheck<double>(gc, with_wso)
                                                                 : run_gradcheck<float>(gc, with_wso);
        std::printf("check=%s precision=%s checked=%zu excluded=%zu max_rel_error=%.3e worst=%s[%zu] %s\n",
                    with_wso ? "network+wso" : "network", std::string(to_string(gc.precision)).c_str(),
                    r.checked, r.excluded.size(), r.max_rel_error, r.worst.name.c_str(), r.worst.index,
                    r.passed ? "pass" : "FAIL");
        for (const auto& e : r.excluded) std::printf("excluded %s[%zu] (kink)\n", e.name.c_str(), e.index);
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            if (!r.passed) offender = r.worst.name + "[" + std::to_string(r.worst.index) + "]";
        }
        ok = ok && r.passed;
    }
    std::printf("worst_rel_error=%.3e tolerance=%.3e\n", worst, gc.options.tolerance);
    if (!ok) {
        std::fprintf(stderr, "gradcheck failed: worst offender %s\n", offender.c_str());
        return kGradcheck;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CT window-setting optimization experiments"};
    app.require_subcommand(1);
    Options opt;

    auto add_config = [&](CLI::App* c) { c->add_option("--config", opt.config, "config file (key = value)"); };
    auto add_precision = [&](CLI::App* c) {
        c->add_option("--precision", opt.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    };

    auto* phantom = app.add_subcommand("phantom", "synthetic dataset");
    phantom->require_subcommand(1);
    auto* gen = phantom->add_subcommand("gen", "generate the dataset and manifest");
    add_config(gen);

    auto* train = app.add_subcommand("train", "train one or more arms");
    add_config(train);
    add_precision(train);
    train->add_option("--arm", opt.arms, "arm name (repeatable; default: experiment.arms)");
    auto* seeds = train->add_option("--seeds", opt.seeds, "train seeds base_seed .. base_seed + N - 1");
    train->add_option("--seed-list", opt.seed_list, "explicit seeds")->delimiter(',')->excludes(seeds);
    train->add_option("--jobs", opt.jobs, "concurrent runs");

    auto* eval = app.add_subcommand("eval", "evaluate trained arms on one split");
    add_config(eval);
    eval->add_option("--arm", opt.arms, "arm name (repeatable; default: experiment.arms)");
    eval->add_option("--split", opt.split, "train, validation, test or ood_test")->capture_default_str();

    auto* report = app.add_subcommand("report", "aggregate evaluation summaries");
    add_config(report);
    report->add_option("dir", opt.dir, "output directory (default: experiment.output_dir)");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    add_config(gradcheck);
    add_precision(gradcheck);

    app.add_subcommand("print-defaults", "print every config key with its default");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (gen->parsed()) return cmd_phantom_gen(opt);
        if (train->parsed()) return cmd_train(opt);
        if (eval->parsed()) return cmd_eval(opt);
        if (report->parsed()) return cmd_report(opt);
        if (gradcheck->parsed()) return cmd_gradcheck(opt);
        std::fputs(format_config(ExperimentConfig{}).c_str(), stdout);
        return kOk;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const IoError& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return kIo;
    } catch (const TrainingFailure& e) {
        std::fprintf(stderr, "training failed at run index %zu: %s\n", e.run_index(), e.what());
        return kTraining;
    } catch (const NothingToDo& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kNothing;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return kIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    }
}
