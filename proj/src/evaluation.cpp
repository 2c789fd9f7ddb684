#include "ctwso/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "ctwso/husl.hpp"
#include "ctwso/optim.hpp"
#include "ctwso/training.hpp"
#include "ctwso/wso.hpp"

namespace ctwso {

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels, std::size_t& pos,
                  std::size_t& neg) {
    if (scores.size() != labels.size()) {
        throw ShapeError("scores and labels differ in length");
    }
    pos = 0;
    neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            ++pos;
        } else if (labels[i] == 0) {
            ++neg;
        } else {
            throw ShapeError("labels must be 0 or 1");
        }
        if (std::isnan(scores[i])) throw UndefinedMetricError("NaN score");
    }
    if (pos == 0 || neg == 0) {
        throw UndefinedMetricError("ROC needs both classes (" + std::to_string(pos) + " positive, " +
                                   std::to_string(neg) + " negative)");
    }
}

}  // namespace

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
    std::size_t pos = 0;
    std::size_t neg = 0;
    check_binary(scores, labels, pos, neg);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    constexpr double inf = std::numeric_limits<double>::infinity();
    RocCurve curve;
    curve.points.push_back({0.0, 0.0, inf});
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        for (; i < order.size() && scores[order[i]] == s; ++i) {
            (labels[order[i]] == 1 ? tp : fp) += 1;
        }
        curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                                static_cast<double>(tp) / static_cast<double>(pos), s});
    }
    curve.points.push_back({1.0, 1.0, -inf});
    return curve;
}

double auc(const RocCurve& curve) {
    double area = 0.0;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const RocPoint& a = curve.points[i - 1];
        const RocPoint& b = curve.points[i];
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
    }
    return area;
}

double auc_pair_oracle(std::span<const double> scores, std::span<const int> labels) {
    std::size_t pos = 0;
    std::size_t neg = 0;
    check_binary(scores, labels, pos, neg);
    // Count in half-units so the sum stays an exact integer.
    std::uint64_t halves = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j]) {
                halves += 2;
            } else if (scores[i] == scores[j]) {
                halves += 1;
            }
        }
    }
    return static_cast<double>(halves) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double youden_threshold(const RocCurve& curve) {
    if (curve.points.size() < 3) {
        throw UndefinedMetricError("ROC curve has no tie-group points");
    }
    // Endpoints are excluded; points are in decreasing threshold order, so a
    // strict comparison keeps the highest threshold among ties.
    double best_j = -std::numeric_limits<double>::infinity();
    double best_threshold = 0.0;
    for (std::size_t i = 1; i + 1 < curve.points.size(); ++i) {
        const double j = curve.points[i].tpr - curve.points[i].fpr;
        if (j > best_j) {
            best_j = j;
            best_threshold = curve.points[i].threshold;
        }
    }
    return best_threshold;
}

double student_t_975(int df) {
    static constexpr double kTable[30] = {
        12.706204736432095, 4.302652729696142,  3.182446305284263,  2.7764451051977987,
        2.570581835636314,  2.4469118511449692, 2.3646242515927844, 2.306004135204166,
        2.2621571628540993, 2.2281388519649385, 2.200985160082949,  2.1788128296634177,
        2.1603686564610127, 2.1447866879169273, 2.131449545559323,  2.1199052992210112,
        2.1098155778331806, 2.10092204024096,   2.093024054408263,  2.0859634472658364,
        2.079613844727662,  2.0738730679040147, 2.0686576104190406, 2.0638985616280205,
        2.059538552753294,  2.055529438642871,  2.0518305164802833, 2.048407141795244,
        2.045229642132703,  2.0422724563012373,
    };
    if (df < 1) throw UndefinedMetricError("t quantile needs df >= 1");
    if (df <= 30) return kTable[df - 1];
    // Cornish-Fisher expansion around the normal quantile; error < 1e-6 for df > 30.
    const double z = 1.959963984540054;
    const double z2 = z * z;
    const double g1 = (z2 + 1.0) * z / 4.0;
    const double g2 = ((5.0 * z2 + 16.0) * z2 + 3.0) * z / 96.0;
    const double g3 = (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 - 15.0) * z / 384.0;
    const double g4 = ((((79.0 * z2 + 776.0) * z2 + 1482.0) * z2 - 1920.0) * z2 - 945.0) * z / 92160.0;
    const double v = static_cast<double>(df);
    return z + g1 / v + g2 / (v * v) + g3 / (v * v * v) + g4 / (v * v * v * v);
}

MeanCi mean_ci(std::span<const double> values, double level) {
    if (level != 0.95) throw UndefinedMetricError("only 95% intervals are supported");
    if (values.size() < 2) throw UndefinedMetricError("confidence interval needs at least two values");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    const double half = student_t_975(static_cast<int>(values.size()) - 1) * sd / std::sqrt(n);
    return {mean, mean - half, mean + half};
}

AucSummary summarize_aucs(std::vector<double> per_run_auc) {
    if (per_run_auc.empty()) throw UndefinedMetricError("no runs to summarize");
    AucSummary s;
    s.n_runs = per_run_auc.size();
    if (s.n_runs >= 2) {
        const MeanCi ci = mean_ci(per_run_auc);
        s.mean = ci.mean;
        s.ci_lo = ci.lo;
        s.ci_hi = ci.hi;
    } else {
        s.mean = per_run_auc.front();
    }
    s.per_run_auc = std::move(per_run_auc);
    return s;
}

std::vector<double> predict_scores(const Checkpoint& ckpt, const DatasetManifest& manifest, Split split) {
    return predict_scores(ckpt, prepare_split(manifest, split, ckpt.input_window));
}

std::vector<double> predict_scores(const Checkpoint& ckpt, const PreparedSplit& data) {
    const auto size = static_cast<std::size_t>(ckpt.network.input_size);
    if (data.images.dim(2) != size) {
        throw ShapeError("checkpoint expects " + std::to_string(size) + "x" + std::to_string(size) +
                         " inputs, data has " + std::to_string(data.images.dim(2)));
    }
    const Tensor<float> images = data.images.cast<float>();
    const std::size_t n = data.labels.size();
    const std::size_t plane = size * size;
    const std::size_t chunk = 64;
    std::vector<double> scores(n);
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t bs = std::min(chunk, n - begin);
        Tensor<float> x({bs, 1, size, size});
        std::copy_n(images.data() + begin * plane, bs * plane, x.data());
        if (ckpt.wso) x = wso_forward(x, *ckpt.wso);
        const Tensor<float> logits = forward(ckpt.params, ckpt.network, x);
        for (std::size_t i = 0; i < bs; ++i) scores[begin + i] = sigmoid(static_cast<double>(logits[i]));
    }
    return scores;
}

std::string format_roc_csv(const RocCurve& curve) {
    std::string out = "fpr,tpr,threshold\n";
    char buf[128];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.fpr, p.tpr, p.threshold);
        out += buf;
    }
    return out;
}

Evaluation evaluate_runs(const std::vector<std::filesystem::path>& checkpoints,
                         const DatasetManifest& manifest, Split split) {
    if (checkpoints.empty()) throw Error("no checkpoints to evaluate");
    if (!manifest.has_split(split)) {
        throw Error("manifest has no '" + std::string(to_string(split)) + "' split");
    }
    std::vector<int> labels;
    for (const auto& e : manifest.split(split)) labels.push_back(e.label == Label::Copd ? 1 : 0);

    Evaluation ev;
    ev.split = split;
    std::vector<double> aucs;
    double ww_sum = 0.0;
    double wl_sum = 0.0;
    std::size_t windows = 0;
    std::map<std::pair<double, double>, PreparedSplit> prepared;  // by input window
    for (const auto& path : checkpoints) {
        const Checkpoint ckpt = read_checkpoint(path);
        if (ev.arm.empty()) {
            ev.arm = ckpt.arm;
        } else if (ckpt.arm != ev.arm) {
            throw Error(path.string() + ": checkpoint of arm '" + ckpt.arm + "' mixed into '" + ev.arm + "'");
        }
        RunEvaluation run;
        run.checkpoint = path;
        run.seed = ckpt.seed;
        const auto key = std::make_pair(ckpt.input_window.width, ckpt.input_window.level);
        auto it = prepared.find(key);
        if (it == prepared.end()) {
            it = prepared.emplace(key, prepare_split(manifest, split, ckpt.input_window)).first;
        }
        const std::vector<double> scores = predict_scores(ckpt, it->second);
        run.curve = roc_curve(scores, labels);
        run.auc = auc(run.curve);
        run.youden_threshold = youden_threshold(run.curve);
        if (ckpt.wso) {
            run.learned_window = extract_window(*ckpt.wso);
            ww_sum += run.learned_window->width;
            wl_sum += run.learned_window->level;
            ++windows;
        }
        write_file_bytes(path.parent_path() / ("roc_" + std::string(to_string(split)) + ".csv"),
                         format_roc_csv(run.curve));
        aucs.push_back(run.auc);
        ev.runs.push_back(std::move(run));
    }
    ev.summary = summarize_aucs(std::move(aucs));
    if (windows > 0) {
        ev.learned_ww_mean = ww_sum / static_cast<double>(windows);
        ev.learned_wl_mean = wl_sum / static_cast<double>(windows);
    }
    return ev;
}

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string optional_fixed(const std::optional<double>& v, int digits) {
    return v ? fixed(*v, digits) : std::string();
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

int arm_rank(const std::string& name) {
    const auto& arms = all_arms();
    for (std::size_t i = 0; i < arms.size(); ++i) {
        if (arms[i].name == name) return static_cast<int>(i);
    }
    return static_cast<int>(arms.size());
}

int split_rank(const std::string& name) {
    try {
        return static_cast<int>(parse_split(name));
    } catch (const Error&) {
        return 99;
    }
}

}  // namespace

std::string format_summary_row(const Evaluation& ev) {
    std::optional<double> lo;
    std::optional<double> hi;
    if (ev.summary.ci_lo) lo = std::clamp(*ev.summary.ci_lo, 0.0, 1.0);
    if (ev.summary.ci_hi) hi = std::clamp(*ev.summary.ci_hi, 0.0, 1.0);
    return ev.arm + "," + std::string(to_string(ev.split)) + "," + std::to_string(ev.summary.n_runs) +
           "," + fixed(ev.summary.mean, 6) + "," + optional_fixed(lo, 6) + "," + optional_fixed(hi, 6) +
           "," + optional_fixed(ev.learned_ww_mean, 3) + "," + optional_fixed(ev.learned_wl_mean, 3);
}

std::vector<std::filesystem::path> find_checkpoints(const std::filesystem::path& runs_dir,
                                                    const std::string& arm) {
    std::vector<std::pair<std::uint64_t, std::filesystem::path>> found;
    const std::filesystem::path arm_dir = runs_dir / arm;
    std::error_code ec;
    if (!std::filesystem::is_directory(arm_dir, ec)) return {};
    for (const auto& entry : std::filesystem::directory_iterator(arm_dir)) {
        const std::filesystem::path ckpt = entry.path() / "checkpoint.bin";
        if (!entry.is_directory() || !std::filesystem::is_regular_file(ckpt)) continue;
        const std::string name = entry.path().filename().string();
        if (name.empty() || name.find_first_not_of("0123456789") != std::string::npos) continue;
        found.emplace_back(std::stoull(name), ckpt);
    }
    std::sort(found.begin(), found.end());
    std::vector<std::filesystem::path> out;
    for (auto& f : found) out.push_back(std::move(f.second));
    return out;
}

Report build_report(const std::filesystem::path& output_dir) {
    Report report;

    std::vector<std::pair<std::pair<int, int>, std::string>> rows;
    const std::filesystem::path eval_dir = output_dir / "eval";
    std::error_code ec;
    if (std::filesystem::is_directory(eval_dir, ec)) {
        for (const auto& entry : std::filesystem::directory_iterator(eval_dir)) {
            if (entry.path().extension() != ".csv") continue;
            std::istringstream in(read_file_bytes(entry.path()));
            std::string line;
            if (!std::getline(in, line) || line != kSummaryHeader) {
                throw IoError(entry.path().string(), "not an evaluation summary");
            }
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const auto cells = split_csv(line);
                if (cells.size() != 8) throw IoError(entry.path().string(), "malformed row '" + line + "'");
                rows.push_back({{arm_rank(cells[0]), split_rank(cells[1])}, line});
            }
        }
    }
    std::sort(rows.begin(), rows.end());
    report.summary_csv = std::string(kSummaryHeader) + "\n";
    for (const auto& r : rows) report.summary_csv += r.second + "\n";
    report.summary_rows = rows.size();

    report.learned_window_csv = std::string(kLearnedWindowHeader) + "\n";
    for (const Arm& arm : all_arms()) {
        if (arm.kind == ArmKind::Plain) continue;
        std::vector<WindowSetting> windows;
        for (const auto& ckpt : find_checkpoints(output_dir / "runs", arm.name)) {
            const std::filesystem::path file = ckpt.parent_path() / "learned_window.txt";
            if (std::filesystem::is_regular_file(file)) {
                windows.push_back(parse_learned_window(read_file_bytes(file), file.string()));
            }
        }
        if (windows.empty()) continue;
        double ww_sum = 0.0;
        double wl_sum = 0.0;
        double ww_min = windows.front().width;
        double ww_max = ww_min;
        double wl_min = windows.front().level;
        double wl_max = wl_min;
        for (const auto& w : windows) {
            ww_sum += w.width;
            wl_sum += w.level;
            ww_min = std::min(ww_min, w.width);
            ww_max = std::max(ww_max, w.width);
            wl_min = std::min(wl_min, w.level);
            wl_max = std::max(wl_max, w.level);
        }
        const double n = static_cast<double>(windows.size());
        report.learned_window_csv += arm.name + "," + std::to_string(windows.size()) + "," +
                                     fixed(arm.window.width, 3) + "," + fixed(arm.window.level, 3) + "," +
                                     fixed(ww_sum / n, 3) + "," + fixed(ww_min, 3) + "," +
                                     fixed(ww_max, 3) + "," + fixed(wl_sum / n, 3) + "," +
                                     fixed(wl_min, 3) + "," + fixed(wl_max, 3) + "\n";
        ++report.window_rows;
    }
    return report;
}

}  // namespace ctwso
