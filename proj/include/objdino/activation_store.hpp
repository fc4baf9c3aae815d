#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "objdino/tensor.hpp"

namespace objdino {

inline constexpr char kDumpMagic[8] = {'O', 'B', 'J', 'D', 'U', 'M', 'P', '1'};

enum class Component : std::uint8_t { query = 0, key = 1, value = 2 };
inline constexpr Component kComponents[3] = {Component::query, Component::key, Component::value};

// Layers and heads are zero-based: layer in [0, L), head in [0, H); the final layer is L - 1.
struct HeadId {
    std::uint32_t layer = 0;
    std::uint32_t head = 0;
    auto operator<=>(const HeadId&) const = default;
};

std::string to_string(HeadId id);  // "layer,head"

struct DumpHeader {
    std::uint32_t layers = 0;
    std::uint32_t heads = 0;
    std::uint32_t patches = 0;
    std::uint32_t head_dim = 0;
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::uint32_t patch_size = 0;
    std::uint32_t image_h = 0;
    std::uint32_t image_w = 0;

    bool operator==(const DumpHeader&) const = default;
};

class DumpError : public std::runtime_error {
public:
    enum class Kind { io, bad_magic, truncated, inconsistent_grid, invalid_header, trailing_bytes };
    DumpError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Throws DumpError(invalid_header / inconsistent_grid) when an invariant is violated.
void validate(const DumpHeader& header);

// One image's Q/K/V patch-token matrices for every (layer, head), each N x d.
class ActivationDump {
public:
    ActivationDump() = default;
    explicit ActivationDump(const DumpHeader& header);
    ActivationDump(const DumpHeader& header, std::vector<Matrix> tensors);

    const DumpHeader& header() const { return header_; }
    std::size_t head_count() const { return std::size_t(header_.layers) * header_.heads; }

    const Matrix& tensor(HeadId id, Component r) const { return tensors_[index(id, r)]; }
    Matrix& tensor(HeadId id, Component r) { return tensors_[index(id, r)]; }

    // All heads in layer-major order.
    std::vector<HeadId> head_ids() const;
    bool contains(HeadId id) const { return id.layer < header_.layers && id.head < header_.heads; }

    const std::vector<Matrix>& tensors() const { return tensors_; }

    bool operator==(const ActivationDump&) const = default;

private:
    std::size_t index(HeadId id, Component r) const;

    DumpHeader header_;
    std::vector<Matrix> tensors_;
};

void write_dump(const ActivationDump& dump, const std::filesystem::path& path);
ActivationDump read_dump(const std::filesystem::path& path);

// Object box in inclusive grid coordinates.
struct GridBox {
    std::uint32_t row_min = 0;
    std::uint32_t col_min = 0;
    std::uint32_t row_max = 0;
    std::uint32_t col_max = 0;
    bool operator==(const GridBox&) const = default;

    std::size_t area() const { return std::size_t(row_max - row_min + 1) * (col_max - col_min + 1); }
    bool contains(std::uint32_t r, std::uint32_t c) const {
        return r >= row_min && r <= row_max && c >= col_min && c <= col_max;
    }
};

struct PlantedGroundTruth {
    GridBox object_box_patches;
    std::vector<HeadId> planted_heads;
    bool operator==(const PlantedGroundTruth&) const = default;
};

void write_ground_truth(const PlantedGroundTruth& gt, const std::filesystem::path& path);
PlantedGroundTruth read_ground_truth(const std::filesystem::path& path);

// Sidecar path for a dump: "<dir>/<stem>.gt.json".
std::filesystem::path ground_truth_path(const std::filesystem::path& dump_path);

struct SyntheticConfig {
    std::uint64_t seed = 1;
    std::uint32_t layers = 12;
    std::uint32_t heads = 12;
    std::uint32_t grid = 14;
    std::uint32_t head_dim = 16;
    std::uint32_t patch_size = 16;
    GridBox object_box;
    std::vector<HeadId> planted_heads;
    double noise_sigma = 0.1;
    // Optional extra structured behaviours: every head of group g encodes the same banded
    // partition of the grid (horizontal bands for even g, vertical for odd g, 2 + g/2 bands).
    std::vector<std::vector<HeadId>> distractor_groups;
};

struct SyntheticImage {
    ActivationDump dump;
    PlantedGroundTruth truth;
};

// Planted heads carry object-vs-background structure in q, k and v; other heads are isotropic
// noise. Deterministic in the seed. Throws std::invalid_argument on a bad configuration and
// std::runtime_error if the planted heads fail to dominate the within-object similarity.
SyntheticImage generate_synthetic(const SyntheticConfig& config);

// Number of distinct head behaviours the generator produced (object, isotropic, distractors).
std::size_t behaviour_group_count(const SyntheticConfig& config);

}  // namespace objdino
