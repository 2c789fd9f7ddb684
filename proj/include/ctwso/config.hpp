#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctwso/gradcheck.hpp"
#include "ctwso/network.hpp"
#include "ctwso/phantom.hpp"
#include "ctwso/training.hpp"

namespace ctwso {

struct ExperimentSettings {
    std::vector<std::string> arms;  // defaults to all six
    std::filesystem::path output_dir = "out";
    int runs = 7;
    std::uint64_t base_seed = 1;  // run i uses base_seed + i
    int jobs = 1;
};

struct GradcheckSettings {
    NetworkConfig network{.growth_rate = 4, .num_blocks = 1, .layers_per_block = 1,
                          .stem_channels = 4, .input_size = 8};
    int batch = 2;
    GradCheckOptions options;
    Precision precision = Precision::F64;
};

/// Everything a command needs. network.input_size follows phantom.image_size
/// and is not a key of its own.
struct ExperimentConfig {
    PhantomConfig phantom;
    NetworkConfig network;
    TrainConfig training;
    ExperimentSettings experiment;
    GradcheckSettings gradcheck;

    ExperimentConfig();

    /// Throws ConfigError naming the offending key.
    void validate() const;
    std::vector<std::uint64_t> seeds() const;
};

/// Applies "section.key = value" lines over the defaults. Unknown keys and bad
/// values raise ConfigError naming `origin`, the line and the key.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config");
/// IoError when the file cannot be read.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every key with its current value, one per line, grouped by section. The
/// output parses back to the same configuration.
std::string format_config(const ExperimentConfig& cfg);

/// All recognized keys in print order.
std::vector<std::string> config_keys();

}  // namespace ctwso
