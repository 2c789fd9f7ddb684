#include <doctest.h>

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "ctwso/error.hpp"
#include "ctwso/evaluation.hpp"
#include "ctwso/husl.hpp"
#include "ctwso/rng.hpp"

using namespace ctwso;
namespace fs = std::filesystem;

namespace {

struct Instance {
    std::vector<double> scores;
    std::vector<int> labels;
};

// Scores drawn from a small grid so ties are frequent.
Instance random_instance(Rng& rng, std::size_t n, int levels) {
    Instance in;
    do {
        in.scores.clear();
        in.labels.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const int y = rng.uniform() < 0.5 ? 1 : 0;
            const auto level = rng.uniform_int(0, levels - 1);
            in.scores.push_back(static_cast<double>(level) / levels + 0.1 * y * rng.uniform());
            if (rng.uniform() < 0.3) in.scores.back() = static_cast<double>(level) / levels;
            in.labels.push_back(y);
        }
    } while (std::count(in.labels.begin(), in.labels.end(), 1) == 0 ||
             std::count(in.labels.begin(), in.labels.end(), 0) == 0);
    return in;
}

// Confusion matrix at every distinct threshold, counted directly.
std::vector<RocPoint> brute_force_roc(const Instance& in) {
    std::set<double, std::greater<>> thresholds(in.scores.begin(), in.scores.end());
    const double pos = static_cast<double>(std::count(in.labels.begin(), in.labels.end(), 1));
    const double neg = static_cast<double>(in.labels.size()) - pos;
    std::vector<RocPoint> out{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
    for (double t : thresholds) {
        double tp = 0, fp = 0;
        for (std::size_t i = 0; i < in.scores.size(); ++i) {
            if (in.scores[i] >= t) (in.labels[i] == 1 ? tp : fp) += 1;
        }
        out.push_back({fp / neg, tp / pos, t});
    }
    out.push_back({1.0, 1.0, -std::numeric_limits<double>::infinity()});
    return out;
}

}  // namespace

TEST_CASE("ROC examples") {
    SUBCASE("perfect separation passes through (0, 1)") {
        const std::vector<double> s = {0.9, 0.8, 0.3, 0.1};
        const std::vector<int> y = {1, 1, 0, 0};
        const auto c = roc_curve(s, y);
        bool corner = false;
        for (const auto& p : c.points) corner = corner || (p.fpr == 0.0 && p.tpr == 1.0);
        CHECK(corner);
        CHECK(auc(c) == 1.0);
        CHECK(youden_threshold(c) == 0.8);
    }
    SUBCASE("all tied") {
        const std::vector<double> s(6, 0.4);
        const std::vector<int> y = {1, 0, 1, 0, 0, 1};
        const auto c = roc_curve(s, y);
        REQUIRE(c.points.size() == 3);
        CHECK(c.points[0].fpr == 0.0);
        CHECK(c.points[0].tpr == 0.0);
        CHECK(c.points[1].fpr == 1.0);
        CHECK(c.points[1].tpr == 1.0);
        CHECK(c.points[1].threshold == 0.4);
        CHECK(c.points[2].fpr == 1.0);
        CHECK(auc(c) == 0.5);
        CHECK(youden_threshold(c) == 0.4);
    }
    SUBCASE("single class is undefined") {
        const std::vector<double> s = {0.1, 0.2};
        const std::vector<int> y = {1, 1};
        CHECK_THROWS_AS(roc_curve(s, y), UndefinedMetricError);
        CHECK_THROWS_AS(auc_pair_oracle(s, y), UndefinedMetricError);
    }
    SUBCASE("pair oracle examples") {
        CHECK(auc_pair_oracle(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}) == 1.0);
        CHECK(auc_pair_oracle(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) == 0.5);
    }
}

TEST_CASE("ROC matches a per-threshold confusion-matrix enumeration") {
    Rng rng(31);
    for (int t = 0; t < 100; ++t) {
        const Instance in = random_instance(rng, 50, 12);
        const auto c = roc_curve(in.scores, in.labels);
        const auto ref = brute_force_roc(in);
        REQUIRE(c.points.size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            CHECK(c.points[i].fpr == doctest::Approx(ref[i].fpr).epsilon(1e-15));
            CHECK(c.points[i].tpr == doctest::Approx(ref[i].tpr).epsilon(1e-15));
            CHECK(c.points[i].threshold == ref[i].threshold);
        }
    }
}

TEST_CASE("trapezoid AUC equals the pair-counting oracle, and curve invariants hold") {
    Rng rng(7);
    for (int t = 0; t < 600; ++t) {
        const Instance in = random_instance(rng, static_cast<std::size_t>(rng.uniform_int(2, 120)),
                                            static_cast<int>(rng.uniform_int(1, 20)));
        const auto c = roc_curve(in.scores, in.labels);
        REQUIRE(std::abs(auc(c) - auc_pair_oracle(in.scores, in.labels)) <= 1e-12);
        REQUIRE(c.points.front().fpr == 0.0);
        REQUIRE(c.points.back().tpr == 1.0);
        for (std::size_t i = 1; i < c.points.size(); ++i) {
            REQUIRE(c.points[i].fpr >= c.points[i - 1].fpr);
            REQUIRE(c.points[i].tpr >= c.points[i - 1].tpr);
            REQUIRE(c.points[i].threshold < c.points[i - 1].threshold);
        }
    }
}

TEST_CASE("AUC symmetries") {
    Rng rng(8);
    for (int t = 0; t < 100; ++t) {
        Instance in = random_instance(rng, 40, 8);
        const double a = auc(roc_curve(in.scores, in.labels));

        Instance perm = in;
        for (std::size_t i = perm.scores.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(perm.scores[i - 1], perm.scores[j]);
            std::swap(perm.labels[i - 1], perm.labels[j]);
        }
        CHECK(std::abs(auc(roc_curve(perm.scores, perm.labels)) - a) < 1e-12);

        for (auto& y : in.labels) y = 1 - y;
        CHECK(std::abs(auc(roc_curve(in.scores, in.labels)) - (1.0 - a)) < 1e-12);
    }
}

TEST_CASE("Youden threshold matches an exhaustive scan, ties to the higher threshold") {
    Rng rng(9);
    for (int t = 0; t < 200; ++t) {
        const Instance in = random_instance(rng, 30, 6);
        const auto c = roc_curve(in.scores, in.labels);
        double best_j = -2.0, best_t = 0.0;
        for (std::size_t i = 1; i + 1 < c.points.size(); ++i) {
            const double j = c.points[i].tpr - c.points[i].fpr;
            if (j > best_j || (j == best_j && c.points[i].threshold > best_t)) {
                best_j = j;
                best_t = c.points[i].threshold;
            }
        }
        CHECK(youden_threshold(c) == best_t);
    }
}

TEST_CASE("Student t quantiles agree with Boost") {
    for (int df = 1; df <= 200; ++df) {
        const double ref = boost::math::quantile(boost::math::students_t(df), 0.975);
        CHECK(student_t_975(df) == doctest::Approx(ref).epsilon(df <= 30 ? 1e-4 : 1e-6));
    }
    CHECK(student_t_975(1) == doctest::Approx(12.706).epsilon(1e-4));
    CHECK(student_t_975(6) == doctest::Approx(2.447).epsilon(1e-4));
}

TEST_CASE("mean and confidence interval") {
    SUBCASE("zero variance") {
        const std::vector<double> v(7, 0.8);
        const auto ci = mean_ci(v);
        CHECK(ci.mean == doctest::Approx(0.8));
        CHECK(ci.lo == doctest::Approx(0.8));
        CHECK(ci.hi == doctest::Approx(0.8));
    }
    SUBCASE("two points, unclamped") {
        const auto ci = mean_ci(std::vector<double>{0.0, 1.0});
        CHECK(ci.mean == 0.5);
        CHECK(ci.hi - ci.mean == doctest::Approx(12.706 * 0.5).epsilon(1e-4));
        CHECK(ci.lo < 0.0);
    }
    SUBCASE("seven draws against an independent computation") {
        Rng rng(3);
        std::vector<double> v;
        for (int i = 0; i < 7; ++i) v.push_back(rng.normal(0.8, 0.05));
        double m = 0.0;
        for (double x : v) m += x;
        m /= 7.0;
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        const double half = boost::math::quantile(boost::math::students_t(6.0), 0.975) * std::sqrt(ss / 6.0) / std::sqrt(7.0);
        const auto ci = mean_ci(v);
        CHECK(std::abs(ci.mean - m) < 1e-12);
        CHECK(std::abs(ci.lo - (m - half)) < 1e-6);
        CHECK(std::abs(ci.hi - (m + half)) < 1e-6);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(mean_ci(std::vector<double>{0.5}), UndefinedMetricError);
        CHECK_THROWS(mean_ci(std::vector<double>{0.5, 0.6}, 0.9));
    }
}

TEST_CASE("AUC summaries") {
    const auto one = summarize_aucs({0.9});
    CHECK(one.n_runs == 1);
    CHECK(one.mean == 0.9);
    CHECK_FALSE(one.ci_lo.has_value());
    const auto many = summarize_aucs({0.8, 0.9, 0.85});
    CHECK(many.mean == doctest::Approx(0.85));
    REQUIRE(many.ci_lo.has_value());
    CHECK(*many.ci_lo <= many.mean);
    CHECK(*many.ci_hi >= many.mean);
}

TEST_CASE("summary rows clamp the interval for display only") {
    Evaluation ev;
    ev.arm = "plain-full";
    ev.split = Split::Test;
    ev.summary = summarize_aucs({0.0, 1.0});
    CHECK(format_summary_row(ev) == "plain-full,test,2,0.500000,0.000000,1.000000,,");
    CHECK(*ev.summary.ci_lo < 0.0);
    ev.learned_ww_mean = 100.0;
    ev.learned_wl_mean = -950.25;
    CHECK(format_summary_row(ev) == "plain-full,test,2,0.500000,0.000000,1.000000,100.000,-950.250");
}

TEST_CASE("ROC CSV") {
    const auto c = roc_curve(std::vector<double>{0.75, 0.25}, std::vector<int>{1, 0});
    CHECK(format_roc_csv(c) == "fpr,tpr,threshold\n0,0,inf\n0,1,0.75\n1,1,0.25\n1,1,-inf\n");
}

TEST_CASE("report over an empty directory has nothing to aggregate") {
    const fs::path dir = fs::temp_directory_path() / "ctwso_empty_report";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const Report r = build_report(dir);
    CHECK(r.summary_rows == 0);
    CHECK(find_checkpoints(dir / "runs", "plain-full").empty());
    fs::remove_all(dir);
}
