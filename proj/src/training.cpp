#include "ctwso/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "ctwso/husl.hpp"
#include "ctwso/optim.hpp"
#include "ctwso/rng.hpp"

namespace ctwso {

std::string_view to_string(Precision p) noexcept { return p == Precision::F64 ? "f64" : "f32"; }

Precision parse_precision(std::string_view text) {
    if (text == "f32") return Precision::F32;
    if (text == "f64") return Precision::F64;
    throw ConfigError("unknown precision '" + std::string(text) + "' (expected f32 or f64)");
}

void TrainConfig::validate() const {
    if (max_epochs < 1) throw ConfigError("training.max_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    if (!(initial_lr > 0.0)) throw ConfigError("training.initial_lr must be > 0");
    if (lr_patience < 1) throw ConfigError("training.lr_patience must be >= 1");
    if (stop_patience <= lr_patience) {
        throw ConfigError("training.stop_patience must exceed training.lr_patience");
    }
    if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ConfigError("training.lr_factor must lie in (0, 1)");
    if (!(wso_lr_scale > 0.0)) throw ConfigError("training.wso_lr_scale must be > 0");
}

std::string_view to_string(SchedulerAction a) noexcept {
    switch (a) {
        case SchedulerAction::Continue: return "continue";
        case SchedulerAction::ReduceLr: return "reduce_lr";
        case SchedulerAction::Stop: return "stop";
    }
    return "?";
}

SchedulerState make_scheduler(const TrainConfig& cfg, double baseline_loss) {
    SchedulerState s;
    s.best_loss = baseline_loss;
    s.lr = cfg.initial_lr;
    return s;
}

SchedulerAction scheduler_step(SchedulerState& state, double val_loss, const TrainConfig& cfg) {
    if (val_loss < state.best_loss) {
        state.best_loss = val_loss;
        state.lr_counter = 0;
        state.stop_counter = 0;
        return SchedulerAction::Continue;
    }
    ++state.lr_counter;
    ++state.stop_counter;
    if (state.stop_counter >= cfg.stop_patience) {
        return SchedulerAction::Stop;
    }
    if (state.lr_counter >= cfg.lr_patience) {
        state.lr_counter = 0;
        ++state.reductions;
        state.lr = cfg.initial_lr * std::pow(cfg.lr_factor, state.reductions);
        return SchedulerAction::ReduceLr;
    }
    return SchedulerAction::Continue;
}

namespace {

std::string real17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string format_history_csv(const RunHistory& history) {
    std::string out = "epoch,train_loss,val_loss,lr,stage\n";
    for (const auto& e : history.epochs) {
        out += std::to_string(e.epoch) + "," + real17(e.train_loss) + "," + real17(e.val_loss) + "," +
               real17(e.lr) + "," + std::to_string(e.stage) + "\n";
    }
    return out;
}

std::vector<double> preprocess_slice(const HuSlice& img, const WindowSetting& window) {
    const LungMask mask = segment_lung(img);
    std::vector<double> out(img.pixels.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double hu = mask.pixels[i] != 0 ? img.pixels[i] : kMinRecordedHu;
        out[i] = window_pixel(hu, window);
    }
    return out;
}

PreparedSplit prepare_split(const DatasetManifest& manifest, Split split, const WindowSetting& window) {
    validate_window(window);
    const std::vector<ManifestEntry> entries = manifest.split(split);
    if (entries.empty()) {
        throw Error("split '" + std::string(to_string(split)) + "' has no slices");
    }
    std::vector<HuSlice> slices(entries.size());
    std::vector<std::string> errors(entries.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < entries.size(); ++i) {
        try {
            slices[i] = read_husl(manifest.resolve(entries[i]));
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!errors[i].empty()) throw IoError(manifest.resolve(entries[i]).string(), errors[i]);
    }
    const std::size_t w = slices.front().width;
    const std::size_t h = slices.front().height;
    if (w != h) throw ShapeError("slices must be square, got " + std::to_string(w) + "x" + std::to_string(h));

    PreparedSplit out;
    out.images = Tensor<double>({entries.size(), 1, h, w});
    out.labels.resize(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (slices[i].width != w || slices[i].height != h) {
            throw ShapeError(manifest.resolve(entries[i]).string() + ": slice size differs from the split's");
        }
        const std::vector<double> px = preprocess_slice(slices[i], window);
        std::copy(px.begin(), px.end(), out.images.data() + i * w * h);
        out.labels[i] = entries[i].label == Label::Copd ? 1.0 : 0.0;
    }
    return out;
}

void FnfSchedule::validate() const {
    if (frozen != std::vector<bool>{true, false, true}) {
        throw ConfigError("FNF schedule must be exactly [frozen, unfrozen, frozen]");
    }
}

namespace {

template <typename T>
Tensor<T> gather(const Tensor<T>& images, const std::vector<std::size_t>& order, std::size_t begin,
                 std::size_t count) {
    const std::size_t plane = images.dim(2) * images.dim(3);
    Tensor<T> batch({count, 1, images.dim(2), images.dim(3)});
    for (std::size_t i = 0; i < count; ++i) {
        std::copy_n(images.data() + order[begin + i] * plane, plane, batch.data() + i * plane);
    }
    return batch;
}

template <typename T>
class Trainer {
public:
    Trainer(const PreparedSplit& train, const PreparedSplit& validation, const NetworkConfig& net_cfg,
            const TrainConfig& cfg, std::optional<WsoParams> wso)
        : net_cfg_(net_cfg), cfg_(cfg), wso_(wso) {
        net_cfg_.validate();
        cfg_.validate();
        if (train.labels.empty()) throw Error("training split is empty");
        if (validation.labels.empty()) throw Error("validation split is empty");
        check_input(train, "training");
        check_input(validation, "validation");
        train_x_ = train.images.template cast<T>();
        train_y_ = train.labels;
        val_x_ = validation.images.template cast<T>();
        val_y_ = validation.labels;
        params_ = init_params<T>(net_cfg_, cfg_.seed);
        grads_ = zeros_like(params_);
        adam_ = make_adam_state(params_, cfg_.initial_lr);
    }

    TrainResult<T> run(const std::vector<bool>& stage_frozen, int stage_budget) {
        const auto start = std::chrono::steady_clock::now();
        TrainResult<T> result;
        RunHistory& history = result.history;

        double current_val = validation_loss();
        history.best_val_loss = current_val;
        history.best_epoch = 0;
        result.params = params_;
        result.wso = wso_;

        int epoch = 0;
        for (std::size_t stage = 0; stage < stage_frozen.size(); ++stage) {
            if (wso_) wso_->frozen = stage_frozen[stage];
            SchedulerState sched = make_scheduler(cfg_, current_val);
            adam_.lr = sched.lr;
            history.stage_starts.push_back(epoch + 1);
            for (int e = 0; e < stage_budget; ++e) {
                ++epoch;
                EpochRecord rec;
                rec.epoch = epoch;
                rec.stage = static_cast<int>(stage) + 1;
                rec.lr = adam_.lr;
                rec.train_loss = train_epoch(epoch);
                rec.val_loss = current_val = validation_loss();
                if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
                    throw Error("non-finite loss at epoch " + std::to_string(epoch));
                }
                if (wso_) {
                    rec.wso_w = wso_->w;
                    rec.wso_b = wso_->b;
                }
                history.epochs.push_back(rec);
                if (rec.val_loss < history.best_val_loss) {
                    history.best_val_loss = rec.val_loss;
                    history.best_epoch = epoch;
                    result.params = params_;
                    result.wso = wso_;
                }
                const SchedulerAction action = scheduler_step(sched, rec.val_loss, cfg_);
                if (action == SchedulerAction::Stop) break;
                if (action == SchedulerAction::ReduceLr) adam_.lr = sched.lr;
            }
        }
        history.stop_epoch = epoch;
        if (result.wso) result.wso->frozen = false;
        result.final_wso = wso_;
        if (result.final_wso) result.final_wso->frozen = false;
        history.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return result;
    }

private:
    void check_input(const PreparedSplit& s, const char* what) const {
        const auto size = static_cast<std::size_t>(net_cfg_.input_size);
        if (s.images.rank() != 4 || s.images.dim(2) != size || s.images.dim(3) != size ||
            s.images.dim(0) != s.labels.size()) {
            throw ShapeError(std::string(what) + " images " + shape_string(s.images.shape()) +
                             " do not match input_size " + std::to_string(size));
        }
    }

    double train_epoch(int epoch) {
        const std::size_t n = train_y_.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = Rng::derive(cfg_.seed, "shuffle/" + std::to_string(epoch));
        for (std::size_t i = n; i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }

        const auto bs_max = static_cast<std::size_t>(cfg_.batch_size);
        double loss_sum = 0.0;
        std::vector<T> dlogits;
        for (std::size_t begin = 0; begin < n; begin += bs_max) {
            const std::size_t bs = std::min(bs_max, n - begin);
            const Tensor<T> x = gather(train_x_, order, begin, bs);
            const Tensor<T> input = wso_ ? wso_forward(x, *wso_) : Tensor<T>();
            const Tensor<T> logits = forward(params_, net_cfg_, wso_ ? input : x, &cache_, cfg_.backend);
            dlogits.assign(bs, T(0));
            for (std::size_t i = 0; i < bs; ++i) {
                const BceResult r = bce_loss(static_cast<double>(logits[i]), train_y_[order[begin + i]]);
                loss_sum += r.loss;
                dlogits[i] = static_cast<T>(r.dlogit / static_cast<double>(bs));
            }
            grads_.zero();
            const Tensor<T> dinput =
                backward(params_, net_cfg_, cache_, std::span<const T>(dlogits), grads_, cfg_.backend);
            if (wso_ && !wso_->frozen) {
                const WsoGradients<T> g = wso_backward(x, *wso_, dinput);
                wso_adam_step(*wso_, g.dw, g.db, wso_adam_, adam_.lr * cfg_.wso_lr_scale);
            }
            adam_step(params_, grads_, adam_);
        }
        return loss_sum / static_cast<double>(n);
    }

    double validation_loss() {
        const std::size_t n = val_y_.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        const std::size_t chunk = 64;
        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < n; begin += chunk) {
            const std::size_t bs = std::min(chunk, n - begin);
            Tensor<T> x = gather(val_x_, order, begin, bs);
            if (wso_) x = wso_forward(x, *wso_);
            const Tensor<T> logits = forward(params_, net_cfg_, x, nullptr, cfg_.backend);
            for (std::size_t i = 0; i < bs; ++i) {
                loss_sum += bce_loss(static_cast<double>(logits[i]), val_y_[begin + i]).loss;
            }
        }
        return loss_sum / static_cast<double>(n);
    }

    NetworkConfig net_cfg_;
    TrainConfig cfg_;
    std::optional<WsoParams> wso_;
    Tensor<T> train_x_;
    std::vector<double> train_y_;
    Tensor<T> val_x_;
    std::vector<double> val_y_;
    ModelParams<T> params_;
    ModelParams<T> grads_;
    AdamState<T> adam_;
    WsoAdamState wso_adam_;
    ForwardCache<T> cache_;
};

}  // namespace

template <typename T>
TrainResult<T> train_plain(const PreparedSplit& train, const PreparedSplit& validation,
                           const NetworkConfig& net_cfg, const TrainConfig& cfg) {
    Trainer<T> trainer(train, validation, net_cfg, cfg, std::nullopt);
    return trainer.run({false}, cfg.max_epochs);
}

template <typename T>
TrainResult<T> train_wso(const PreparedSplit& train, const PreparedSplit& validation,
                         const WindowSetting& init_window, const NetworkConfig& net_cfg,
                         const TrainConfig& cfg) {
    Trainer<T> trainer(train, validation, net_cfg, cfg, wso_init(init_window));
    return trainer.run({false}, cfg.max_epochs);
}

template <typename T>
TrainResult<T> train_fnf(const PreparedSplit& train, const PreparedSplit& validation,
                         const WindowSetting& init_window, const NetworkConfig& net_cfg,
                         const TrainConfig& cfg, const FnfSchedule& schedule) {
    schedule.validate();
    Trainer<T> trainer(train, validation, net_cfg, cfg, wso_init(init_window));
    return trainer.run(schedule.frozen, std::max(1, cfg.max_epochs / 3));
}

template TrainResult<float> train_plain<float>(const PreparedSplit&, const PreparedSplit&,
                                               const NetworkConfig&, const TrainConfig&);
template TrainResult<double> train_plain<double>(const PreparedSplit&, const PreparedSplit&,
                                                 const NetworkConfig&, const TrainConfig&);
template TrainResult<float> train_wso<float>(const PreparedSplit&, const PreparedSplit&,
                                             const WindowSetting&, const NetworkConfig&,
                                             const TrainConfig&);
template TrainResult<double> train_wso<double>(const PreparedSplit&, const PreparedSplit&,
                                               const WindowSetting&, const NetworkConfig&,
                                               const TrainConfig&);
template TrainResult<float> train_fnf<float>(const PreparedSplit&, const PreparedSplit&,
                                             const WindowSetting&, const NetworkConfig&,
                                             const TrainConfig&, const FnfSchedule&);
template TrainResult<double> train_fnf<double>(const PreparedSplit&, const PreparedSplit&,
                                               const WindowSetting&, const NetworkConfig&,
                                               const TrainConfig&, const FnfSchedule&);

const std::vector<Arm>& all_arms() {
    static const std::vector<Arm> arms = {
        {ArmKind::Plain, kFullRangeWindow, "plain-full"},
        {ArmKind::Plain, kEmphysemaWindow, "plain-emphysema"},
        {ArmKind::Wso, kFullRangeWindow, "wso-full"},
        {ArmKind::Wso, kEmphysemaWindow, "wso-emphysema"},
        {ArmKind::Fnf, kFullRangeWindow, "fnf-full"},
        {ArmKind::Fnf, kEmphysemaWindow, "fnf-emphysema"},
    };
    return arms;
}

const Arm& find_arm(std::string_view name) {
    std::string valid;
    for (const auto& arm : all_arms()) {
        if (arm.name == name) return arm;
        valid += (valid.empty() ? "" : ", ") + arm.name;
    }
    throw ConfigError("unknown arm '" + std::string(name) + "' (valid arms: " + valid + ")");
}

WindowSetting input_window(const Arm& arm) noexcept {
    return arm.kind == ArmKind::Plain ? arm.window : kFullRangeWindow;
}

std::string format_learned_window(const WindowSetting& ws) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "width,level\n%.3f,%.3f\n", ws.width, ws.level);
    return buf;
}

WindowSetting parse_learned_window(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string header;
    std::string row;
    if (!std::getline(in, header) || header != "width,level" || !std::getline(in, row)) {
        throw IoError(origin, "expected 'width,level' header and one row");
    }
    const auto comma = row.find(',');
    try {
        if (comma == std::string::npos) throw std::invalid_argument(row);
        return {std::stod(row.substr(0, comma)), std::stod(row.substr(comma + 1))};
    } catch (const std::exception&) {
        throw IoError(origin, "malformed learned window row '" + row + "'");
    }
}

namespace {

template <typename T>
RunArtifacts train_one(const PreparedSplit& train, const PreparedSplit& validation, const Arm& arm,
                       const NetworkConfig& net_cfg, const TrainConfig& cfg,
                       const std::filesystem::path& dir) {
    TrainResult<T> result;
    switch (arm.kind) {
        case ArmKind::Plain: result = train_plain<T>(train, validation, net_cfg, cfg); break;
        case ArmKind::Wso: result = train_wso<T>(train, validation, arm.window, net_cfg, cfg); break;
        case ArmKind::Fnf: result = train_fnf<T>(train, validation, arm.window, net_cfg, cfg); break;
    }

    RunArtifacts art;
    art.seed = cfg.seed;
    art.dir = dir;
    art.history = result.history;
    art.wso = result.wso;

    Checkpoint ckpt;
    ckpt.arm = arm.name;
    ckpt.seed = cfg.seed;
    ckpt.precision = std::string(to_string(cfg.precision));
    ckpt.network = net_cfg;
    ckpt.input_window = input_window(arm);
    ckpt.wso = result.wso;
    if constexpr (std::is_same_v<T, float>) {
        ckpt.params = std::move(result.params);
    } else {
        ckpt.params = result.params.template cast<float>();
    }
    write_checkpoint(dir / "checkpoint.bin", ckpt);
    write_file_bytes(dir / "history.csv", format_history_csv(result.history));
    const std::filesystem::path window_file = dir / "learned_window.txt";
    if (result.wso) {
        art.learned_window = extract_window(*result.wso);
        write_file_bytes(window_file, format_learned_window(*art.learned_window));
    } else {
        std::error_code ec;
        std::filesystem::remove(window_file, ec);
    }
    return art;
}

}  // namespace

std::vector<RunArtifacts> run_experiment(const PreparedSplit& train, const PreparedSplit& validation,
                                         const Arm& arm, const NetworkConfig& net_cfg,
                                         const TrainConfig& cfg, const ExperimentOptions& options) {
    cfg.validate();
    net_cfg.validate();
    if (options.seeds.empty()) throw ConfigError("experiment needs at least one seed");
    const std::size_t runs = options.seeds.size();
    std::vector<std::optional<RunArtifacts>> results(runs);
    std::vector<std::string> failures(runs);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::mutex report_mu;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= runs || failed.load()) return;
            TrainConfig run_cfg = cfg;
            run_cfg.seed = options.seeds[i];
            const std::filesystem::path dir =
                options.runs_dir / arm.name / std::to_string(options.seeds[i]);
            try {
                results[i] = run_cfg.precision == Precision::F64
                                 ? train_one<double>(train, validation, arm, net_cfg, run_cfg, dir)
                                 : train_one<float>(train, validation, arm, net_cfg, run_cfg, dir);
                if (options.on_run_done) {
                    const std::lock_guard<std::mutex> lock(report_mu);
                    options.on_run_done(i, *results[i]);
                }
            } catch (const std::exception& e) {
                failures[i] = e.what();
                failed.store(true);
            }
        }
    };

    const auto jobs = static_cast<std::size_t>(std::clamp<int>(options.jobs, 1, static_cast<int>(runs)));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (std::size_t i = 0; i < runs; ++i) {
        if (!failures[i].empty()) throw TrainingFailure(i, options.seeds[i], failures[i]);
    }
    std::vector<RunArtifacts> out;
    for (auto& r : results) out.push_back(std::move(*r));
    return out;
}

std::vector<RunArtifacts> run_experiment(const DatasetManifest& manifest, const Arm& arm,
                                         const NetworkConfig& net_cfg, const TrainConfig& cfg,
                                         const ExperimentOptions& options) {
    const WindowSetting window = input_window(arm);
    const PreparedSplit train = prepare_split(manifest, Split::Train, window);
    const PreparedSplit validation = prepare_split(manifest, Split::Validation, window);
    return run_experiment(train, validation, arm, net_cfg, cfg, options);
}

}  // namespace ctwso
