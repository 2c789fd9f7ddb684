#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctwso/checkpoint.hpp"
#include "ctwso/phantom.hpp"
#include "ctwso/training.hpp"
#include "ctwso/windowing.hpp"

namespace ctwso {

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;  // a sample is called positive when score >= threshold
};

/// Starts at (0, 0, +inf), has one point per distinct score in decreasing
/// order, and ends with (1, 1, -inf).
struct RocCurve {
    std::vector<RocPoint> points;
};

/// Labels are 0/1. Throws UndefinedMetricError unless both classes are present.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Trapezoidal area under the curve.
double auc(const RocCurve& curve);

/// Mann-Whitney pair count: P(s_pos > s_neg) + 0.5 P(s_pos == s_neg), by brute force.
double auc_pair_oracle(std::span<const double> scores, std::span<const int> labels);

/// Threshold of the tie-group point maximizing tpr - fpr; ties go to the higher threshold.
double youden_threshold(const RocCurve& curve);

struct MeanCi {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

/// 0.975 quantile of Student's t with `df` degrees of freedom: tabulated for
/// df <= 30, asymptotic expansion beyond.
double student_t_975(int df);

/// mean +- t(n-1) * s / sqrt(n). Only level 0.95 is supported. Throws
/// UndefinedMetricError for fewer than two values.
MeanCi mean_ci(std::span<const double> values, double level = 0.95);

struct AucSummary {
    std::vector<double> per_run_auc;
    double mean = 0.0;
    std::optional<double> ci_lo;  // absent for a single run
    std::optional<double> ci_hi;
    std::size_t n_runs = 0;
};

AucSummary summarize_aucs(std::vector<double> per_run_auc);

struct RunEvaluation {
    std::filesystem::path checkpoint;
    std::uint64_t seed = 0;
    RocCurve curve;
    double auc = 0.0;
    double youden_threshold = 0.0;
    std::optional<WindowSetting> learned_window;
};

struct Evaluation {
    std::string arm;
    Split split = Split::Test;
    std::vector<RunEvaluation> runs;
    AucSummary summary;
    std::optional<double> learned_ww_mean;
    std::optional<double> learned_wl_mean;
};

/// Sigmoid scores of a checkpoint on one split, in manifest order.
std::vector<double> predict_scores(const Checkpoint& ckpt, const DatasetManifest& manifest, Split split);
/// Same, on a split already prepared through ckpt.input_window.
std::vector<double> predict_scores(const Checkpoint& ckpt, const PreparedSplit& data);

/// Scores every checkpoint on `split` and writes roc_<split>.csv next to each
/// checkpoint. All checkpoints must belong to the same arm and match the data.
Evaluation evaluate_runs(const std::vector<std::filesystem::path>& checkpoints,
                         const DatasetManifest& manifest, Split split);

/// "fpr,tpr,threshold" then one row per point; infinities are written as inf / -inf.
std::string format_roc_csv(const RocCurve& curve);

inline constexpr const char* kSummaryHeader =
    "arm,split,n_runs,mean_auc,ci_lo,ci_hi,learned_ww_mean,learned_wl_mean";

/// One summary row; the CI is clipped to [0, 1] here and left empty for one run,
/// learned-window columns are empty for plain arms.
std::string format_summary_row(const Evaluation& ev);

/// Every runs/<arm>/<seed>/checkpoint.bin below runs_dir for one arm, sorted by seed.
std::vector<std::filesystem::path> find_checkpoints(const std::filesystem::path& runs_dir,
                                                    const std::string& arm);

struct Report {
    std::string summary_csv;         // header plus one row per (arm, split)
    std::string learned_window_csv;  // one row per WSO/FNF arm
    std::size_t summary_rows = 0;
    std::size_t window_rows = 0;
};

inline constexpr const char* kLearnedWindowHeader =
    "arm,n_runs,init_ww,init_wl,ww_mean,ww_min,ww_max,wl_mean,wl_min,wl_max";

/// Aggregates eval/*.csv summaries and runs/*/*/learned_window.txt files under output_dir.
Report build_report(const std::filesystem::path& output_dir);

}  // namespace ctwso
