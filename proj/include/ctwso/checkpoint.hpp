#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctwso/network.hpp"
#include "ctwso/windowing.hpp"
#include "ctwso/wso.hpp"

namespace ctwso {

// Checkpoint file, all integers little-endian:
//
//   8 bytes   "CTWSOCKP"
//   u32       format version (1)
//   u32       header length L
//   L bytes   UTF-8 header, one "key = value" per line (config echo, see below)
//   u32       tensor count
//   per tensor, in parameter order:
//     u32       name length, then the name bytes
//     u32       rank, then rank x u32 dimensions
//     f32[...]  values, row-major, IEEE-754 binary32
//
// Header keys: arm, seed, precision, network.growth_rate, network.num_blocks,
// network.layers_per_block, network.stem_channels, network.input_size,
// input_window.width, input_window.level, wso.enabled, and when enabled wso.w,
// wso.b, wso.upper. Reals are printed with 17 significant digits so they
// round-trip exactly.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string arm;
    std::uint64_t seed = 0;
    std::string precision = "f32";  // precision the model was trained in
    NetworkConfig network;
    /// Window applied to HU pixels before the network (or before the WSO layer).
    WindowSetting input_window = kFullRangeWindow;
    std::optional<WsoParams> wso;
    ModelParams<float> params;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// `origin` names the source in error messages.
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint");

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

struct KeyValueLine {
    std::string key;
    std::string value;
    int line = 0;
};

/// Parses "key = value" lines; '#' starts a comment. Duplicate keys are rejected.
/// Errors name `origin` and the line number.
std::vector<KeyValueLine> parse_key_value_lines(const std::string& text, const std::string& origin);

/// Same, as a map.
std::map<std::string, std::string> parse_key_values(const std::string& text,
                                                    const std::string& origin);

}  // namespace ctwso
