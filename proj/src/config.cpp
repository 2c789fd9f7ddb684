#include "ctwso/config.hpp"

#include <charconv>
#include <functional>
#include <set>

#include "ctwso/checkpoint.hpp"
#include "ctwso/error.hpp"
#include "ctwso/husl.hpp"

namespace ctwso {

namespace {

// Shortest text that parses back to the same double.
std::string format_real(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

long long parse_integer(const std::string& text) {
    long long v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end) throw ConfigError("expected an integer, got '" + text + "'");
    return v;
}

double parse_real(const std::string& text) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end) throw ConfigError("expected a number, got '" + text + "'");
    return v;
}

int parse_int(const std::string& text) {
    const long long v = parse_integer(text);
    if (v < INT32_MIN || v > INT32_MAX) throw ConfigError("integer out of range: " + text);
    return static_cast<int>(v);
}

std::uint64_t parse_u64(const std::string& text) {
    if (!text.empty() && text[0] == '-') throw ConfigError("expected a non-negative integer, got '" + text + "'");
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end) throw ConfigError("expected a non-negative integer, got '" + text + "'");
    return v;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto end = comma == std::string::npos ? text.size() : comma;
        std::string item = text.substr(start, end - start);
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        item = b == std::string::npos ? std::string{} : item.substr(b, e - b + 1);
        if (item.empty()) throw ConfigError("empty item in list '" + text + "'");
        out.push_back(item);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
    return out;
}

struct Field {
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define CTWSO_INT(key, member)                                                            \
    Field{key, [](const ExperimentConfig& c) { return std::to_string(c.member); },        \
          [](ExperimentConfig& c, const std::string& v) { c.member = parse_int(v); }}
#define CTWSO_REAL(key, member)                                                           \
    Field{key, [](const ExperimentConfig& c) { return format_real(c.member); },           \
          [](ExperimentConfig& c, const std::string& v) { c.member = parse_real(v); }}
#define CTWSO_U64(key, member)                                                            \
    Field{key, [](const ExperimentConfig& c) { return std::to_string(c.member); },        \
          [](ExperimentConfig& c, const std::string& v) { c.member = parse_u64(v); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        CTWSO_INT("phantom.image_size", phantom.image_size),
        CTWSO_INT("phantom.subjects_per_class", phantom.subjects_per_class),
        CTWSO_INT("phantom.slices_per_subject", phantom.slices_per_subject),
        CTWSO_REAL("phantom.body_hu_mean", phantom.body_hu_mean),
        CTWSO_REAL("phantom.body_hu_sigma", phantom.body_hu_sigma),
        CTWSO_REAL("phantom.lung_hu_mean", phantom.lung_hu_mean),
        CTWSO_REAL("phantom.lung_hu_sigma", phantom.lung_hu_sigma),
        CTWSO_REAL("phantom.air_hu", phantom.air_hu),
        CTWSO_INT("phantom.blob_count_min", phantom.blob_count_min),
        CTWSO_INT("phantom.blob_count_max", phantom.blob_count_max),
        CTWSO_REAL("phantom.blob_radius_min", phantom.blob_radius_min),
        CTWSO_REAL("phantom.blob_radius_max", phantom.blob_radius_max),
        CTWSO_REAL("phantom.blob_hu_mean", phantom.blob_hu_mean),
        CTWSO_REAL("phantom.blob_hu_sigma", phantom.blob_hu_sigma),
        CTWSO_INT("phantom.vessel_count", phantom.vessel_count),
        CTWSO_REAL("phantom.vessel_radius_min", phantom.vessel_radius_min),
        CTWSO_REAL("phantom.vessel_radius_max", phantom.vessel_radius_max),
        CTWSO_REAL("phantom.ood_offset", phantom.ood_offset),
        CTWSO_REAL("phantom.train_fraction", phantom.train_fraction),
        CTWSO_REAL("phantom.validation_fraction", phantom.validation_fraction),
        CTWSO_U64("phantom.seed", phantom.seed),

        CTWSO_INT("network.growth_rate", network.growth_rate),
        CTWSO_INT("network.num_blocks", network.num_blocks),
        CTWSO_INT("network.layers_per_block", network.layers_per_block),
        CTWSO_INT("network.stem_channels", network.stem_channels),

        CTWSO_INT("training.max_epochs", training.max_epochs),
        CTWSO_INT("training.batch_size", training.batch_size),
        CTWSO_REAL("training.initial_lr", training.initial_lr),
        CTWSO_INT("training.lr_patience", training.lr_patience),
        CTWSO_REAL("training.lr_factor", training.lr_factor),
        CTWSO_INT("training.stop_patience", training.stop_patience),
        CTWSO_REAL("training.wso_lr_scale", training.wso_lr_scale),
        Field{"training.precision",
              [](const ExperimentConfig& c) { return std::string(to_string(c.training.precision)); },
              [](ExperimentConfig& c, const std::string& v) { c.training.precision = parse_precision(v); }},

        Field{"experiment.arms", [](const ExperimentConfig& c) { return join(c.experiment.arms); },
              [](ExperimentConfig& c, const std::string& v) {
                  auto arms = split_list(v);
                  std::set<std::string> seen;
                  for (const auto& a : arms) {
                      find_arm(a);
                      if (!seen.insert(a).second) throw ConfigError("arm listed twice: " + a);
                  }
                  c.experiment.arms = std::move(arms);
              }},
        Field{"experiment.output_dir",
              [](const ExperimentConfig& c) { return c.experiment.output_dir.string(); },
              [](ExperimentConfig& c, const std::string& v) {
                  if (v.empty()) throw ConfigError("must not be empty");
                  c.experiment.output_dir = v;
              }},
        CTWSO_INT("experiment.runs", experiment.runs),
        CTWSO_U64("experiment.base_seed", experiment.base_seed),
        CTWSO_INT("experiment.jobs", experiment.jobs),

        CTWSO_INT("gradcheck.growth_rate", gradcheck.network.growth_rate),
        CTWSO_INT("gradcheck.num_blocks", gradcheck.network.num_blocks),
        CTWSO_INT("gradcheck.layers_per_block", gradcheck.network.layers_per_block),
        CTWSO_INT("gradcheck.stem_channels", gradcheck.network.stem_channels),
        CTWSO_INT("gradcheck.input_size", gradcheck.network.input_size),
        CTWSO_INT("gradcheck.batch", gradcheck.batch),
        Field{"gradcheck.samples",
              [](const ExperimentConfig& c) { return std::to_string(c.gradcheck.options.samples); },
              [](ExperimentConfig& c, const std::string& v) { c.gradcheck.options.samples = parse_u64(v); }},
        CTWSO_REAL("gradcheck.step", gradcheck.options.step),
        CTWSO_REAL("gradcheck.tolerance", gradcheck.options.tolerance),
        CTWSO_U64("gradcheck.seed", gradcheck.options.seed),
        Field{"gradcheck.precision",
              [](const ExperimentConfig& c) { return std::string(to_string(c.gradcheck.precision)); },
              [](ExperimentConfig& c, const std::string& v) { c.gradcheck.precision = parse_precision(v); }},
    };
    return table;
}

#undef CTWSO_INT
#undef CTWSO_REAL
#undef CTWSO_U64

const Field* find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) return &f;
    }
    return nullptr;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
    for (const auto& a : all_arms()) experiment.arms.push_back(a.name);
    network.input_size = phantom.image_size;
}

void ExperimentConfig::validate() const {
    phantom.validate();
    network.validate();
    training.validate();
    if (experiment.arms.empty()) throw ConfigError("experiment.arms must name at least one arm");
    if (experiment.runs < 1) throw ConfigError("experiment.runs must be >= 1");
    if (experiment.jobs < 1) throw ConfigError("experiment.jobs must be >= 1");
    try {
        gradcheck.network.validate();
    } catch (const ConfigError& e) {
        std::string what = e.what();
        if (what.rfind("network.", 0) == 0) what.replace(0, 8, "gradcheck.");
        throw ConfigError(what);
    }
    if (gradcheck.batch < 1) throw ConfigError("gradcheck.batch must be >= 1");
    if (gradcheck.options.samples < 1) throw ConfigError("gradcheck.samples must be >= 1");
    if (!(gradcheck.options.step > 0.0)) throw ConfigError("gradcheck.step must be > 0");
    if (!(gradcheck.options.tolerance > 0.0)) throw ConfigError("gradcheck.tolerance must be > 0");
}

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
    std::vector<std::uint64_t> out;
    for (int i = 0; i < experiment.runs; ++i) out.push_back(experiment.base_seed + static_cast<std::uint64_t>(i));
    return out;
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    for (const auto& kv : parse_key_value_lines(text, origin)) {
        const std::string where = origin + ":" + std::to_string(kv.line) + ": ";
        // Shorthand for a fixed blob count; rejected early so the message names it.
        if (kv.key == "phantom.blob_count") {
            int n = 0;
            try {
                n = parse_int(kv.value);
            } catch (const ConfigError& e) {
                throw ConfigError(where + kv.key + ": " + e.what());
            }
            if (n < 1) throw ConfigError(where + kv.key + ": diseased slices need at least one blob");
            cfg.phantom.blob_count_min = cfg.phantom.blob_count_max = n;
            continue;
        }
        const Field* f = find_field(kv.key);
        if (f == nullptr) throw ConfigError(where + "unknown key '" + kv.key + "'");
        try {
            f->set(cfg, kv.value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + kv.key + ": " + e.what());
        }
    }
    cfg.network.input_size = cfg.phantom.image_size;
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_file_bytes(path), path.string());
}

std::string format_config(const ExperimentConfig& cfg) {
    std::string out;
    std::string section;
    for (const auto& f : fields()) {
        const std::string s = f.key.substr(0, f.key.find('.'));
        if (s != section) {
            if (!section.empty()) out += "\n";
            out += "# " + s + "\n";
            section = s;
        }
        out += f.key + " = " + f.get(cfg) + "\n";
    }
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
}

}  // namespace ctwso
