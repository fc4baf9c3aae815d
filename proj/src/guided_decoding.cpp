#include "objdino/guided_decoding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace objdino {

namespace {

constexpr std::size_t kLogitsHeaderBytes = sizeof(kLogitsMagic) + 3 * 4;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

}  // namespace

void validate(const GuidanceConfig& cfg) {
    if (!(cfg.alpha >= 0.0) || !std::isfinite(cfg.alpha)) throw DecodeError("alpha must be finite and >= 0");
    if (cfg.mode == GuidanceMode::convex && cfg.alpha > 1.0)
        throw DecodeError("convex mode requires alpha in [0, 1]");
}

void validate(const LogitStream& s) {
    if (s.vocab_size == 0) throw DecodeError("vocab size must be >= 1");
    if (s.eos_token >= s.vocab_size) throw DecodeError("eos token outside vocabulary");
    for (const auto& step : s.steps)
        if (step.size() != s.vocab_size) throw DecodeError("logit vector length differs from vocab size");
}

std::vector<float> combine_logits(std::span<const float> standard, std::span<const float> guidance,
                                  const GuidanceConfig& cfg) {
    validate(cfg);
    if (standard.size() != guidance.size()) throw DecodeError("logit length mismatch");
    std::vector<float> out(standard.size());
    const double a = cfg.alpha;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = cfg.mode == GuidanceMode::additive
                     ? float(double(standard[i]) + a * double(guidance[i]))
                     : float(a * double(standard[i]) + (1.0 - a) * double(guidance[i]));
    }
    return out;
}

std::uint32_t argmax_token(std::span<const float> logits) {
    if (logits.empty()) throw DecodeError("empty logit vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i;
    return std::uint32_t(best);
}

std::vector<std::uint32_t> greedy_decode(const LogitStream& standard, const LogitStream& guidance,
                                         const GuidanceConfig& cfg) {
    validate(cfg);
    validate(standard);
    validate(guidance);
    if (standard.vocab_size != guidance.vocab_size) throw DecodeError("vocab size mismatch between branches");
    if (standard.eos_token != guidance.eos_token) throw DecodeError("eos token mismatch between branches");

    std::vector<std::uint32_t> tokens;
    for (std::size_t t = 0; t < cfg.max_new_tokens; ++t) {
        if (t >= standard.steps.size() || t >= guidance.steps.size()) throw DecodeError("stream underrun");
        const auto token = argmax_token(combine_logits(standard.steps[t], guidance.steps[t], cfg));
        tokens.push_back(token);
        if (token == standard.eos_token) break;
    }
    return tokens;
}

void write_logit_stream(const LogitStream& stream, const std::filesystem::path& path) {
    validate(stream);
    std::vector<unsigned char> bytes(std::begin(kLogitsMagic), std::end(kLogitsMagic));
    put_u32(bytes, stream.vocab_size);
    put_u32(bytes, std::uint32_t(stream.steps.size()));
    put_u32(bytes, stream.eos_token);
    for (const auto& step : stream.steps)
        for (float v : step) put_u32(bytes, std::bit_cast<std::uint32_t>(v));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DecodeError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw DecodeError("write failed: " + path.string());
}

LogitStream read_logit_stream(const std::filesystem::path& path, Branch provenance) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DecodeError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
    if (bytes.size() < sizeof(kLogitsMagic) || std::memcmp(bytes.data(), kLogitsMagic, sizeof(kLogitsMagic)) != 0)
        throw DecodeError("bad magic");
    if (bytes.size() < kLogitsHeaderBytes) throw DecodeError("truncated file");

    LogitStream s;
    s.provenance = provenance;
    s.vocab_size = get_u32(bytes.data() + 8);
    const std::uint32_t steps = get_u32(bytes.data() + 12);
    s.eos_token = get_u32(bytes.data() + 16);
    const std::uint64_t expected = kLogitsHeaderBytes + std::uint64_t(steps) * s.vocab_size * 4;
    if (bytes.size() < expected) throw DecodeError("truncated file");
    if (bytes.size() > expected) throw DecodeError("unexpected trailing bytes");

    const unsigned char* p = bytes.data() + kLogitsHeaderBytes;
    s.steps.assign(steps, std::vector<float>(s.vocab_size));
    for (auto& step : s.steps)
        for (auto& v : step) {
            v = std::bit_cast<float>(get_u32(p));
            p += 4;
        }
    validate(s);
    return s;
}

GuidanceMode parse_mode(const std::string& text) {
    if (text == "additive") return GuidanceMode::additive;
    if (text == "convex") return GuidanceMode::convex;
    throw DecodeError("unknown guidance mode '" + text + "'");
}

std::string to_string(GuidanceMode mode) {
    return mode == GuidanceMode::additive ? "additive" : "convex";
}

}  // namespace objdino
