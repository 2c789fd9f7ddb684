#include <doctest.h>

#include "ctwso/config.hpp"
#include "ctwso/error.hpp"

using namespace ctwso;

TEST_CASE("defaults") {
    const ExperimentConfig cfg;
    CHECK(cfg.experiment.arms.size() == 6);
    CHECK(cfg.experiment.runs == 7);
    CHECK(cfg.network.input_size == cfg.phantom.image_size);
    CHECK(cfg.seeds() == std::vector<std::uint64_t>{1, 2, 3, 4, 5, 6, 7});
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("parsing overrides defaults") {
    const auto cfg = parse_config(
        "phantom.image_size = 32\n"
        "training.max_epochs = 12\n"
        "training.precision = f64\n"
        "experiment.arms = plain-full, wso-full\n"
        "experiment.base_seed = 10\n"
        "experiment.runs = 3\n");
    CHECK(cfg.phantom.image_size == 32);
    CHECK(cfg.network.input_size == 32);
    CHECK(cfg.training.max_epochs == 12);
    CHECK(cfg.training.precision == Precision::F64);
    CHECK(cfg.experiment.arms == std::vector<std::string>{"plain-full", "wso-full"});
    CHECK(cfg.seeds() == std::vector<std::uint64_t>{10, 11, 12});
}

TEST_CASE("errors name the line and key") {
    CHECK_THROWS_WITH_AS(parse_config("\nphantom.bogus = 1\n", "f.cfg"),
                         doctest::Contains("f.cfg:2: unknown key 'phantom.bogus'"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("phantom.blob_count = -1\n", "f.cfg"),
                         doctest::Contains("f.cfg:1: phantom.blob_count"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("training.max_epochs = ten\n", "f.cfg"),
                         doctest::Contains("training.max_epochs"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("experiment.arms = plain-full,nope\n", "f.cfg"),
                         doctest::Contains("nope"), ConfigError);
    CHECK_THROWS_AS(parse_config("experiment.arms = plain-full,plain-full\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("training.batch_size = 0\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/ctwso.cfg"), IoError);
}

TEST_CASE("blob_count sets both bounds") {
    const auto cfg = parse_config("phantom.blob_count = 4\n");
    CHECK(cfg.phantom.blob_count_min == 4);
    CHECK(cfg.phantom.blob_count_max == 4);
}

TEST_CASE("printed defaults parse back to the same configuration") {
    ExperimentConfig cfg = parse_config("phantom.ood_offset = 0.17\ntraining.initial_lr = 3e-4\n");
    const std::string text = format_config(cfg);
    CHECK(text.find("0.17\n") != std::string::npos);
    CHECK(format_config(parse_config(text)) == text);
    for (const auto& key : config_keys()) CHECK(text.find(key + " = ") != std::string::npos);
}
