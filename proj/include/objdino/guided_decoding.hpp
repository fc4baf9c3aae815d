#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace objdino {

inline constexpr char kLogitsMagic[8] = {'L', 'O', 'G', 'I', 'T', 'S', '0', '1'};

enum class Branch { standard, guidance };

struct LogitStream {
    std::uint32_t vocab_size = 0;
    std::uint32_t eos_token = 0;
    std::vector<std::vector<float>> steps;  // each of length vocab_size
    Branch provenance = Branch::standard;
};

// additive: l_std + alpha * l_guid.  convex: alpha * l_std + (1 - alpha) * l_guid.
enum class GuidanceMode { additive, convex };

struct GuidanceConfig {
    double alpha = 0.4;
    GuidanceMode mode = GuidanceMode::additive;
    std::size_t max_new_tokens = 64;
};

class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void validate(const GuidanceConfig& cfg);
void validate(const LogitStream& stream);

std::vector<float> combine_logits(std::span<const float> standard, std::span<const float> guidance,
                                  const GuidanceConfig& cfg);

// Lowest index among the maxima.
std::uint32_t argmax_token(std::span<const float> logits);

// Greedy decode over the combined streams. The emitted sequence ends with eos_token when the
// stop token is produced, otherwise after max_new_tokens tokens.
std::vector<std::uint32_t> greedy_decode(const LogitStream& standard, const LogitStream& guidance,
                                         const GuidanceConfig& cfg);

void write_logit_stream(const LogitStream& stream, const std::filesystem::path& path);
LogitStream read_logit_stream(const std::filesystem::path& path, Branch provenance);

GuidanceMode parse_mode(const std::string& text);
std::string to_string(GuidanceMode mode);

}  // namespace objdino
