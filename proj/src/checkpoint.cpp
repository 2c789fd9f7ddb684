#include "ctwso/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <set>
#include <sstream>

#include "ctwso/error.hpp"
#include "ctwso/husl.hpp"

namespace ctwso {

namespace {

constexpr char kMagic[] = "CTWSOCKP";
constexpr std::size_t kMagicSize = 8;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class Reader {
public:
    Reader(const std::string& bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    bool done() const noexcept { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw IoError(origin_, std::string("truncated checkpoint while reading ") + what);
        }
    }

    const std::string& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_real(const std::map<std::string, std::string>& kv, const std::string& key,
               const std::string& origin) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw IoError(origin, "checkpoint header lacks " + key);
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw IoError(origin, "checkpoint header: bad value for " + key);
    }
}

}  // namespace

std::vector<KeyValueLine> parse_key_value_lines(const std::string& text, const std::string& origin) {
    std::vector<KeyValueLine> out;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(number) + ": empty key");
        }
        if (!seen.insert(key).second) {
            throw ConfigError(origin + ":" + std::to_string(number) + ": duplicate key '" + key + "'");
        }
        out.push_back({std::move(key), std::move(value), number});
    }
    return out;
}

std::map<std::string, std::string> parse_key_values(const std::string& text,
                                                    const std::string& origin) {
    std::map<std::string, std::string> out;
    for (auto& kv : parse_key_value_lines(text, origin)) out.emplace(std::move(kv.key), std::move(kv.value));
    return out;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string header;
    auto line = [&](const std::string& k, const std::string& v) { header += k + " = " + v + "\n"; };
    line("arm", ckpt.arm);
    line("seed", std::to_string(ckpt.seed));
    line("precision", ckpt.precision);
    line("network.growth_rate", std::to_string(ckpt.network.growth_rate));
    line("network.num_blocks", std::to_string(ckpt.network.num_blocks));
    line("network.layers_per_block", std::to_string(ckpt.network.layers_per_block));
    line("network.stem_channels", std::to_string(ckpt.network.stem_channels));
    line("network.input_size", std::to_string(ckpt.network.input_size));
    line("input_window.width", format_real(ckpt.input_window.width));
    line("input_window.level", format_real(ckpt.input_window.level));
    line("wso.enabled", ckpt.wso ? "true" : "false");
    if (ckpt.wso) {
        line("wso.w", format_real(ckpt.wso->w));
        line("wso.b", format_real(ckpt.wso->b));
        line("wso.upper", format_real(ckpt.wso->upper));
    }

    std::string out(kMagic, kMagicSize);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
        const auto& name = ckpt.params.names[i];
        const auto& t = ckpt.params.tensors[i];
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (std::size_t k = 0; k < t.size(); ++k) put_u32(out, std::bit_cast<std::uint32_t>(t[k]));
    }
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
    Reader in(bytes, origin);
    if (in.bytes(kMagicSize, "magic") != std::string(kMagic, kMagicSize)) {
        throw IoError(origin, "not a checkpoint (bad magic)");
    }
    if (const auto version = in.u32(); version != kCheckpointVersion) {
        throw IoError(origin, "unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t header_size = in.u32();
    std::map<std::string, std::string> kv;
    try {
        kv = parse_key_values(in.bytes(header_size, "header"), origin);
    } catch (const ConfigError& e) {
        throw IoError(origin, e.what());
    }
    auto text = [&](const std::string& key) {
        const auto it = kv.find(key);
        if (it == kv.end()) throw IoError(origin, "checkpoint header lacks " + key);
        return it->second;
    };
    auto integer = [&](const std::string& key) {
        const double v = to_real(kv, key, origin);
        return static_cast<int>(v);
    };

    Checkpoint ckpt;
    ckpt.arm = text("arm");
    try {
        ckpt.seed = std::stoull(text("seed"));
    } catch (const std::exception&) {
        throw IoError(origin, "checkpoint header: bad value for seed");
    }
    ckpt.precision = text("precision");
    ckpt.network.growth_rate = integer("network.growth_rate");
    ckpt.network.num_blocks = integer("network.num_blocks");
    ckpt.network.layers_per_block = integer("network.layers_per_block");
    ckpt.network.stem_channels = integer("network.stem_channels");
    ckpt.network.input_size = integer("network.input_size");
    ckpt.input_window = {to_real(kv, "input_window.width", origin),
                         to_real(kv, "input_window.level", origin)};
    if (text("wso.enabled") == "true") {
        WsoParams p;
        p.w = to_real(kv, "wso.w", origin);
        p.b = to_real(kv, "wso.b", origin);
        p.upper = to_real(kv, "wso.upper", origin);
        ckpt.wso = p;
    }
    try {
        ckpt.network.validate();
    } catch (const ConfigError& e) {
        throw IoError(origin, std::string("checkpoint network config: ") + e.what());
    }

    const std::uint32_t count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = in.bytes(in.u32(), "tensor name");
        const std::uint32_t rank = in.u32();
        if (rank > 8) throw IoError(origin, name + ": implausible rank " + std::to_string(rank));
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = in.u32();
        Tensor<float> t(shape);
        for (std::size_t k = 0; k < t.size(); ++k) t[k] = in.f32();
        ckpt.params.names.push_back(std::move(name));
        ckpt.params.tensors.push_back(std::move(t));
    }
    if (!in.done()) throw IoError(origin, "trailing bytes after the last tensor");

    const auto layout = param_layout(ckpt.network);
    if (layout.size() != ckpt.params.size()) {
        throw IoError(origin, "tensor count does not match the header's network config");
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (layout[i].first != ckpt.params.names[i] || layout[i].second != ckpt.params.tensors[i].shape()) {
            throw IoError(origin, "tensor " + ckpt.params.names[i] + " does not match the network config");
        }
    }
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file_bytes(path), path.string());
}

}  // namespace ctwso
