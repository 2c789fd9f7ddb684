#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "ctwso/checkpoint.hpp"
#include "ctwso/error.hpp"

using namespace ctwso;
namespace fs = std::filesystem;

namespace {

Checkpoint sample(bool with_wso) {
    Checkpoint c;
    c.arm = with_wso ? "wso-full" : "plain-emphysema";
    c.seed = 42;
    c.network = {.growth_rate = 2, .num_blocks = 1, .layers_per_block = 1, .stem_channels = 3, .input_size = 8};
    c.input_window = with_wso ? kFullRangeWindow : kEmphysemaWindow;
    if (with_wso) c.wso = WsoParams{16.516129032258064, -0.1234567890123456789};
    c.params = init_params<double>(c.network, 5).cast<float>();
    return c;
}

std::uint32_t u32_at(const std::string& s, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[off + static_cast<std::size_t>(i)]);
    return v;
}

}  // namespace

TEST_CASE("round trip is exact") {
    for (bool with_wso : {false, true}) {
        const Checkpoint c = sample(with_wso);
        const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
        CHECK(back.arm == c.arm);
        CHECK(back.seed == c.seed);
        CHECK(back.precision == c.precision);
        CHECK(back.network.growth_rate == 2);
        CHECK(back.network.input_size == 8);
        CHECK(back.input_window.width == c.input_window.width);
        CHECK(back.input_window.level == c.input_window.level);
        REQUIRE(back.wso.has_value() == with_wso);
        if (with_wso) {
            CHECK(std::memcmp(&back.wso->w, &c.wso->w, sizeof(double)) == 0);
            CHECK(std::memcmp(&back.wso->b, &c.wso->b, sizeof(double)) == 0);
        }
        CHECK(back.params.names == c.params.names);
        CHECK(back.params.tensors == c.params.tensors);
        CHECK(encode_checkpoint(back) == encode_checkpoint(c));
    }
}

TEST_CASE("byte layout") {
    const Checkpoint c = sample(false);
    const std::string bytes = encode_checkpoint(c);
    CHECK(bytes.substr(0, 8) == "CTWSOCKP");
    CHECK(u32_at(bytes, 8) == kCheckpointVersion);
    const std::uint32_t header_len = u32_at(bytes, 12);
    const std::string header = bytes.substr(16, header_len);
    CHECK(header.find("arm = plain-emphysema\n") != std::string::npos);
    CHECK(header.find("wso.enabled = false") != std::string::npos);
    CHECK(u32_at(bytes, 16 + header_len) == c.params.size());

    std::size_t expected = 16 + header_len + 4;
    for (std::size_t i = 0; i < c.params.size(); ++i) {
        expected += 4 + c.params.names[i].size() + 4 + 4 * c.params.tensors[i].shape().size() +
                    4 * c.params.tensors[i].size();
    }
    CHECK(bytes.size() == expected);
}

TEST_CASE("corrupt input is rejected") {
    const std::string bytes = encode_checkpoint(sample(true));
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), IoError);
    CHECK_THROWS_AS(decode_checkpoint("NOTACKPT" + bytes.substr(8)), IoError);
    CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), IoError);
    std::string bad_version = bytes;
    bad_version[8] = 7;
    CHECK_THROWS_AS(decode_checkpoint(bad_version), IoError);
    CHECK_THROWS_AS(read_checkpoint("/nonexistent/checkpoint.bin"), IoError);
}

TEST_CASE("file round trip") {
    const fs::path p = fs::temp_directory_path() / "ctwso_ckpt_test" / "checkpoint.bin";
    fs::remove_all(p.parent_path());
    const Checkpoint c = sample(true);
    write_checkpoint(p, c);
    CHECK(encode_checkpoint(read_checkpoint(p)) == encode_checkpoint(c));
    fs::remove_all(p.parent_path());
}

TEST_CASE("key value parsing") {
    const auto kv = parse_key_values("# comment\n a = 1 \n\nb=two words # trailing\n", "t");
    CHECK(kv.at("a") == "1");
    CHECK(kv.at("b") == "two words");
    CHECK_THROWS_WITH_AS(parse_key_values("a = 1\na = 2\n", "t"), doctest::Contains("t:2"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_key_values("novalue\n", "t"), doctest::Contains("t:1"), ConfigError);
    CHECK_THROWS_AS(parse_key_values(" = 3\n", "t"), ConfigError);
}
