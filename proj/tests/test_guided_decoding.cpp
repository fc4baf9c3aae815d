#include <doctest.h>

#include <fstream>
#include <random>

#include "objdino/guided_decoding.hpp"
#include "test_support.hpp"

using namespace objdino;

namespace {

LogitStream random_stream(std::mt19937_64& rng, std::uint32_t v, std::size_t t, std::uint32_t eos, Branch b) {
    std::normal_distribution<float> g(0.0f, 3.0f);
    LogitStream s;
    s.vocab_size = v;
    s.eos_token = eos;
    s.provenance = b;
    s.steps.assign(t, std::vector<float>(v));
    for (auto& step : s.steps)
        for (auto& x : step) x = g(rng);
    return s;
}

// Scalar reference: argmax of the combined logits, written without the library kernels.
std::vector<std::uint32_t> reference_decode(const LogitStream& s, const LogitStream& g, double alpha, bool convex,
                                            std::size_t max_new) {
    std::vector<std::uint32_t> out;
    for (std::size_t t = 0; t < max_new; ++t) {
        std::uint32_t best = 0;
        double best_v = -1e300;
        for (std::uint32_t i = 0; i < s.vocab_size; ++i) {
            const double v = convex ? alpha * s.steps[t][i] + (1 - alpha) * g.steps[t][i]
                                    : s.steps[t][i] + alpha * g.steps[t][i];
            if (v > best_v) {
                best_v = v;
                best = i;
            }
        }
        out.push_back(best);
        if (best == s.eos_token) break;
    }
    return out;
}

std::vector<unsigned char> file_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("combine_logits examples") {
    const std::vector<float> s{1, 2}, g{5, 0};
    const auto add = combine_logits(s, g, {0.4, GuidanceMode::additive, 64});
    CHECK(add[0] == doctest::Approx(3.0));
    CHECK(add[1] == doctest::Approx(2.0));
    CHECK(argmax_token(add) == 0);

    CHECK(combine_logits(s, g, {0.0, GuidanceMode::additive, 64}) == s);
    CHECK(combine_logits(s, g, {1.0, GuidanceMode::convex, 64}) == s);
    CHECK(combine_logits(s, g, {0.0, GuidanceMode::convex, 64}) == g);

    const std::vector<float> short_g{1};
    CHECK_THROWS_AS(combine_logits(s, short_g, GuidanceConfig{}), DecodeError);
}

TEST_CASE("guidance config validation") {
    CHECK_THROWS_AS(validate(GuidanceConfig{-0.1, GuidanceMode::additive, 64}), DecodeError);
    CHECK_THROWS_AS(validate(GuidanceConfig{1.5, GuidanceMode::convex, 64}), DecodeError);
    CHECK_NOTHROW(validate(GuidanceConfig{1.5, GuidanceMode::additive, 64}));
    CHECK(parse_mode("convex") == GuidanceMode::convex);
    CHECK(to_string(GuidanceMode::additive) == "additive");
    CHECK_THROWS(parse_mode("mean"));
}

TEST_CASE("argmax ties go to the lowest index") {
    const std::vector<float> tie{0.5f, 2.0f, 2.0f, 1.0f};
    CHECK(argmax_token(tie) == 1);
}

TEST_CASE("additive guidance with a flip fixture changes exactly the intended step") {
    LogitStream s{3, 2, {{2, 1, 0}, {1, 2, 0}, {0, 0, 5}}, Branch::standard};
    LogitStream g{3, 2, {{0, 0, 0}, {5, 0, 0}, {0, 0, 0}}, Branch::guidance};
    const auto plain = greedy_decode(s, g, {0.0, GuidanceMode::additive, 64});
    const auto guided = greedy_decode(s, g, {0.4, GuidanceMode::additive, 64});
    CHECK(plain == std::vector<std::uint32_t>{0, 1, 2});
    CHECK(guided == std::vector<std::uint32_t>{0, 0, 2});
}

TEST_CASE("identical branches reproduce the standard decode for any alpha") {
    std::mt19937_64 rng(5);
    const auto s = random_stream(rng, 11, 12, 3, Branch::standard);
    auto g = s;
    g.provenance = Branch::guidance;
    const auto base = greedy_decode(s, g, {0.0, GuidanceMode::additive, 12});
    for (double alpha : {0.1, 0.4, 1.0, 3.0}) CHECK(greedy_decode(s, g, {alpha, GuidanceMode::additive, 12}) == base);
}

TEST_CASE("greedy_decode matches the scalar reference on random fixtures") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const std::uint32_t v = 2 + std::uint32_t(trial % 30);
        const std::size_t t = 1 + std::size_t(trial % 20);
        const std::uint32_t eos = std::uint32_t(trial) % v;
        const auto s = random_stream(rng, v, t, eos, Branch::standard);
        const auto g = random_stream(rng, v, t, eos, Branch::guidance);
        const double alpha = double(trial % 7) / 6.0;

        const auto additive = greedy_decode(s, g, {alpha, GuidanceMode::additive, t});
        CHECK(additive == reference_decode(s, g, alpha, false, t));
        const auto convex = greedy_decode(s, g, {alpha, GuidanceMode::convex, t});
        CHECK(convex == reference_decode(s, g, alpha, true, t));

        const auto standard_only = reference_decode(s, g, 1.0, true, t);
        CHECK(greedy_decode(s, g, {0.0, GuidanceMode::additive, t}) == standard_only);
        CHECK(greedy_decode(s, g, {1.0, GuidanceMode::convex, t}) == standard_only);
    }
}

TEST_CASE("eos at the first step stops immediately") {
    LogitStream s{3, 1, {{0, 9, 0}, {9, 0, 0}}, Branch::standard};
    LogitStream g{3, 1, {{0, 0, 0}, {0, 0, 0}}, Branch::guidance};
    CHECK(greedy_decode(s, g, GuidanceConfig{}) == std::vector<std::uint32_t>{1});
}

TEST_CASE("max_new_tokens bounds the output") {
    LogitStream s{2, 1, {{5, 0}, {5, 0}, {5, 0}}, Branch::standard};
    LogitStream g{2, 1, {{0, 0}, {0, 0}, {0, 0}}, Branch::guidance};
    CHECK(greedy_decode(s, g, {0.4, GuidanceMode::additive, 2}) == std::vector<std::uint32_t>{0, 0});
}

TEST_CASE("decode errors") {
    LogitStream s{2, 1, {{5, 0}}, Branch::standard};
    LogitStream g{2, 1, {{0, 0}}, Branch::guidance};
    CHECK_THROWS_WITH_AS(greedy_decode(s, g, {0.4, GuidanceMode::additive, 3}), doctest::Contains("stream underrun"),
                         DecodeError);
    LogitStream wide{3, 1, {{0, 0, 0}}, Branch::guidance};
    CHECK_THROWS_AS(greedy_decode(s, wide, GuidanceConfig{}), DecodeError);
    LogitStream other_eos{2, 0, {{0, 0}}, Branch::guidance};
    CHECK_THROWS_AS(greedy_decode(s, other_eos, GuidanceConfig{}), DecodeError);
    LogitStream bad_eos{2, 2, {{0, 0}}, Branch::standard};
    CHECK_THROWS_AS(validate(bad_eos), DecodeError);
}

TEST_CASE("logit stream file round trip and layout") {
    test::TempDir dir;
    std::mt19937_64 rng(9);
    const auto s = random_stream(rng, 7, 5, 6, Branch::standard);
    const auto path = dir.path() / "std.logits";
    write_logit_stream(s, path);
    const auto back = read_logit_stream(path, Branch::standard);
    CHECK(back.vocab_size == 7);
    CHECK(back.eos_token == 6);
    CHECK(back.steps == s.steps);

    const auto bytes = file_bytes(path);
    CHECK(bytes.size() == 8 + 12 + 5 * 7 * 4);
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "LOGITS01");
    CHECK(bytes[8] == 7);
    CHECK(bytes[12] == 5);
    CHECK(bytes[16] == 6);

    auto write = [&](std::vector<unsigned char> b) {
        const auto p = dir.path() / "bad.logits";
        std::ofstream f(p, std::ios::binary);
        f.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
        return p;
    };
    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_WITH(read_logit_stream(write(magic), Branch::standard), doctest::Contains("bad magic"));
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_WITH(read_logit_stream(write(truncated), Branch::standard), doctest::Contains("truncated"));
    auto trailing = bytes;
    trailing.push_back(1);
    CHECK_THROWS_WITH(read_logit_stream(write(trailing), Branch::standard), doctest::Contains("trailing"));
}
