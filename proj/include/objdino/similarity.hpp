#pragma once

#include <cstdint>
#include <vector>

#include "objdino/activation_store.hpp"
#include "objdino/tensor.hpp"

namespace objdino {

inline constexpr double kDefaultTau = 60.0;

enum class MapKind : std::uint8_t { query, key, value, ensemble };

// Row-stochastic N x N patch-similarity matrix.
struct SimilarityMap {
    MapKind kind = MapKind::ensemble;
    Matrix matrix;

    std::size_t n_patches() const { return matrix.rows(); }
};

// Convex weights for combining the query/key/value maps.
class EnsembleWeights {
public:
    EnsembleWeights() = default;
    // Throws std::invalid_argument unless all weights are >= 0 and sum to 1 within 1e-9.
    EnsembleWeights(double wq, double wk, double wv);

    static EnsembleWeights uniform() { return {}; }

    double query() const { return wq_; }
    double key() const { return wk_; }
    double value() const { return wv_; }

private:
    double wq_ = 1.0 / 3.0;
    double wk_ = 1.0 / 3.0;
    double wv_ = 1.0 / 3.0;
};

struct SaliencyMap {
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::vector<float> values;  // row-major, each in [0, 1]
};

MapKind map_kind(Component r);

// softmax(r~ r~^T / tau) row-wise, with r~ the row-normalized token matrix.
SimilarityMap component_similarity(const Matrix& tokens, double tau, MapKind kind = MapKind::ensemble);

SimilarityMap ensemble(const SimilarityMap& a_q, const SimilarityMap& a_k, const SimilarityMap& a_v,
                       const EnsembleWeights& w);

// A_ens for one head of a dump.
SimilarityMap head_ensemble(const ActivationDump& dump, HeadId id, double tau,
                            const EnsembleWeights& w);

std::vector<float> flatten_head_feature(const SimilarityMap& a_ens);
Matrix unflatten(const std::vector<float>& feature, std::size_t n);

// Column mean of the map, min-max normalized; optionally inverted. Constant maps give zeros.
SaliencyMap saliency(const SimilarityMap& a, std::uint32_t grid_h, std::uint32_t grid_w, bool invert);

// Mean of map entries over (rows in `rows`) x (columns in `cols`).
double block_mean(const Matrix& m, const std::vector<std::size_t>& rows,
                  const std::vector<std::size_t>& cols);

}  // namespace objdino
