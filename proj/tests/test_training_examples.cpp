// Training behaviour on the default phantom. Slow: about 20 minutes on one core.
#include <doctest.h>

#include <filesystem>

#include "ctwso/evaluation.hpp"
#include "ctwso/phantom.hpp"
#include "ctwso/training.hpp"

using namespace ctwso;
namespace fs = std::filesystem;

namespace {

// Same budget as the acceptance runs.
TrainConfig budget(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.max_epochs = 20;
    cfg.wso_lr_scale = 30.0;
    cfg.seed = seed;
    return cfg;
}

const DatasetManifest& dataset() {
    static const DatasetManifest m = [] {
        const fs::path dir = fs::temp_directory_path() / "ctwso_training_examples";
        fs::remove_all(dir);
        return generate_dataset(PhantomConfig{}, dir);
    }();
    return m;
}

double validation_auc(const TrainResult<float>& r, const Arm& arm, const PreparedSplit& val) {
    Checkpoint ck;
    ck.arm = arm.name;
    ck.input_window = input_window(arm);
    ck.wso = r.wso;
    ck.params = r.params;
    const auto scores = predict_scores(ck, val);
    const std::vector<int> labels(val.labels.begin(), val.labels.end());
    return auc(roc_curve(scores, labels));
}

}  // namespace

TEST_CASE("emphysema-window plain model separates the validation split") {
    const Arm& arm = find_arm("plain-emphysema");
    const auto train = prepare_split(dataset(), Split::Train, kEmphysemaWindow);
    const auto val = prepare_split(dataset(), Split::Validation, kEmphysemaWindow);
    const auto r = train_plain<float>(train, val, NetworkConfig{}, budget(1));
    const double a = validation_auc(r, arm, val);
    MESSAGE("validation AUC " << a);
    CHECK(a > 0.9);
}

TEST_CASE("full-range WSO initialization moves the level down") {
    const auto train = prepare_split(dataset(), Split::Train, kFullRangeWindow);
    const auto val = prepare_split(dataset(), Split::Validation, kFullRangeWindow);
    const auto r = train_wso<float>(train, val, kFullRangeWindow, NetworkConfig{}, budget(1));
    REQUIRE(r.wso.has_value());
    const auto ws = extract_window(*r.wso);
    MESSAGE("learned window " << ws.width << ", " << ws.level);
    CHECK(ws.level < 0.0);
    for (const auto& e : r.history.epochs) CHECK(e.stage == 1);
}

TEST_CASE("emphysema WSO initialization stays in the emphysema band") {
    const auto train = prepare_split(dataset(), Split::Train, kFullRangeWindow);
    const auto val = prepare_split(dataset(), Split::Validation, kFullRangeWindow);
    int inside = 0;
    for (std::uint64_t seed = 1; seed <= 7; ++seed) {
        const auto r = train_wso<float>(train, val, kEmphysemaWindow, NetworkConfig{}, budget(seed));
        const auto ws = extract_window(*r.wso);
        MESSAGE("seed " << seed << " learned window " << ws.width << ", " << ws.level);
        inside += ws.width > 40.0 && ws.width < 400.0 && ws.level > -1024.0 && ws.level < -850.0 ? 1 : 0;
    }
    CHECK(inside >= 5);
}
