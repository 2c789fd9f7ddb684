#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctwso/checkpoint.hpp"
#include "ctwso/network.hpp"
#include "ctwso/phantom.hpp"
#include "ctwso/windowing.hpp"
#include "ctwso/wso.hpp"

namespace ctwso {

enum class Precision { F32, F64 };

std::string_view to_string(Precision p) noexcept;
Precision parse_precision(std::string_view text);

struct TrainConfig {
    int max_epochs = 500;
    int batch_size = 16;
    double initial_lr = 1e-3;
    int lr_patience = 15;
    double lr_factor = 0.1;
    int stop_patience = 50;
    /// The WSO layer's Adam step uses lr * wso_lr_scale.
    double wso_lr_scale = 1.0;
    Precision precision = Precision::F32;
    std::uint64_t seed = 1;
    Backend backend = Backend::Parallel;

    void validate() const;
};

enum class SchedulerAction { Continue, ReduceLr, Stop };

std::string_view to_string(SchedulerAction a) noexcept;

/// Plateau tracking. Both counters reset on a strict improvement of the best
/// validation loss; the LR counter also resets after each reduction.
struct SchedulerState {
    double best_loss = 0.0;
    int lr_counter = 0;
    int stop_counter = 0;
    double lr = 0.0;
    int reductions = 0;  // lr == initial_lr * lr_factor^reductions
};

/// `baseline_loss` is the validation loss before the first epoch, so a flat
/// loss counts from epoch 1.
SchedulerState make_scheduler(const TrainConfig& cfg, double baseline_loss);

/// Feeds one epoch's validation loss. Stop takes precedence over ReduceLr.
SchedulerAction scheduler_step(SchedulerState& state, double val_loss, const TrainConfig& cfg);

struct EpochRecord {
    int epoch = 0;  // counted from 1 across all stages
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;  // rate used during the epoch
    int stage = 1;
    /// WSO parameters at the end of the epoch (absent for plain runs).
    std::optional<double> wso_w;
    std::optional<double> wso_b;
};

struct RunHistory {
    std::vector<EpochRecord> epochs;
    int stop_epoch = 0;
    /// First epoch of each stage; one entry for plain and WSO runs.
    std::vector<int> stage_starts;
    /// 0 when no epoch beat the initial parameters.
    int best_epoch = 0;
    double best_val_loss = 0.0;
    double wall_seconds = 0.0;
};

/// history.csv: header "epoch,train_loss,val_loss,lr,stage", reals with 17 significant digits.
std::string format_history_csv(const RunHistory& history);

/// Network-ready inputs for one split: (N, 1, S, S) intensities in [0, U].
struct PreparedSplit {
    Tensor<double> images;
    std::vector<double> labels;  // 1 = copd
};

/// Loads every slice of `split`, keeps the segmented lung (everything else set
/// to -1024 HU) and windows it through `window`.
PreparedSplit prepare_split(const DatasetManifest& manifest, Split split, const WindowSetting& window);

/// Segments and windows one slice.
std::vector<double> preprocess_slice(const HuSlice& img, const WindowSetting& window);

template <typename T>
struct TrainResult {
    ModelParams<T> params;        // best validation loss
    std::optional<WsoParams> wso;  // WSO state belonging to `params`
    std::optional<WsoParams> final_wso;  // WSO state after the last epoch
    RunHistory history;
};

/// Plain model on pre-windowed inputs.
template <typename T>
TrainResult<T> train_plain(const PreparedSplit& train, const PreparedSplit& validation,
                           const NetworkConfig& net_cfg, const TrainConfig& cfg);

/// WSO layer initialized to `init_window`, unfrozen throughout. Inputs must be
/// full-range windowed.
template <typename T>
TrainResult<T> train_wso(const PreparedSplit& train, const PreparedSplit& validation,
                         const WindowSetting& init_window, const NetworkConfig& net_cfg,
                         const TrainConfig& cfg);

struct FnfSchedule {
    /// Whether the WSO layer is frozen in each stage.
    std::vector<bool> frozen = {true, false, true};

    void validate() const;
};

/// Frozen / not frozen / frozen. Each stage gets a fresh scheduler (LR back to
/// initial_lr) and at most max_epochs / 3 epochs; parameters and Adam moments
/// carry over between stages.
template <typename T>
TrainResult<T> train_fnf(const PreparedSplit& train, const PreparedSplit& validation,
                         const WindowSetting& init_window, const NetworkConfig& net_cfg,
                         const TrainConfig& cfg, const FnfSchedule& schedule = {});

enum class ArmKind { Plain, Wso, Fnf };

struct Arm {
    ArmKind kind = ArmKind::Plain;
    WindowSetting window = kFullRangeWindow;  // manual window or WSO initialization
    std::string name;
};

/// plain-full, plain-emphysema, wso-full, wso-emphysema, fnf-full, fnf-emphysema.
const std::vector<Arm>& all_arms();
/// Throws ConfigError listing the valid names.
const Arm& find_arm(std::string_view name);

struct RunArtifacts {
    std::uint64_t seed = 0;
    std::filesystem::path dir;
    RunHistory history;
    std::optional<WindowSetting> learned_window;
    std::optional<WsoParams> wso;
};

struct ExperimentOptions {
    std::filesystem::path runs_dir;  // runs/<arm>/<seed>/ is created below this
    std::vector<std::uint64_t> seeds;
    int jobs = 1;  // concurrent runs
    /// Called after each finished run (serialized, in completion order).
    std::function<void(std::size_t run_index, const RunArtifacts&)> on_run_done;
};

/// Raised when one run of an experiment fails; artifacts of finished runs are kept.
class TrainingFailure : public Error {
public:
    TrainingFailure(std::size_t run_index, std::uint64_t seed, const std::string& what)
        : Error("run " + std::to_string(run_index) + " (seed " + std::to_string(seed) + "): " + what),
          run_index_(run_index) {}
    std::size_t run_index() const noexcept { return run_index_; }

private:
    std::size_t run_index_;
};

/// Trains one model per seed and writes checkpoint.bin, history.csv and, for
/// WSO/FNF arms, learned_window.txt. Results are in seed order.
std::vector<RunArtifacts> run_experiment(const DatasetManifest& manifest, const Arm& arm,
                                         const NetworkConfig& net_cfg, const TrainConfig& cfg,
                                         const ExperimentOptions& options);

/// Same as above with the splits already prepared through the arm's input window.
std::vector<RunArtifacts> run_experiment(const PreparedSplit& train, const PreparedSplit& validation,
                                         const Arm& arm, const NetworkConfig& net_cfg,
                                         const TrainConfig& cfg, const ExperimentOptions& options);

/// The window the arm's inputs are normalized through before the network or WSO layer.
WindowSetting input_window(const Arm& arm) noexcept;

/// "width,level" header then the window with 3 decimals.
std::string format_learned_window(const WindowSetting& ws);
WindowSetting parse_learned_window(const std::string& text, const std::string& origin);

}  // namespace ctwso
