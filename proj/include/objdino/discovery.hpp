#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "objdino/activation_store.hpp"
#include "objdino/head_selector.hpp"
#include "objdino/similarity.hpp"
#include "objdino/symmetric_eigen.hpp"

namespace objdino {

inline constexpr double kDefaultTauCut = 0.2;
inline constexpr double kDefaultEpsilon = 1e-5;

struct AffinityGraph {
    SymmetricMatrix weights;
    double tau_cut = kDefaultTauCut;
    double epsilon = kDefaultEpsilon;

    std::size_t size() const { return weights.n; }
};

struct Bipartition {
    std::vector<double> fiedler;  // unit norm, largest-magnitude entry positive
    std::vector<bool> positive;   // fiedler >= 0
    double eigenvalue = 0.0;      // second-smallest generalized eigenvalue
};

// Pixel box, half-open: [x_min, x_max) x [y_min, y_max).
using PixelBox = std::array<std::uint32_t, 4>;

struct DiscoveryResult {
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::vector<bool> foreground_mask;  // foreground side of the cut
    std::vector<bool> component_mask;   // largest 4-connected component of that side
    PixelBox bbox_pixels{};
    std::vector<double> fiedler;
    SaliencyMap saliency;
};

struct DiscoveryConfig {
    double tau = kDefaultTau;
    EnsembleWeights weights;
    double tau_cut = kDefaultTauCut;
    double epsilon = kDefaultEpsilon;
};

// Mean A_ens over the selected heads, symmetrized as (M + M^T) / 2.
SimilarityMap aggregate_affinity(const ActivationDump& dump, const HeadSelection& selection,
                                 double tau, const EnsembleWeights& w);

// Off-diagonal entries min-max rescaled to [0, 1], diagonal 1. Softmax maps at realistic
// temperatures hover around 1/N, so edge thresholds are applied on this scale.
SimilarityMap contrast_normalize(const SimilarityMap& sim);

// w_ij = 1 where sim(i, j) >= tau_cut, epsilon otherwise; unit diagonal; symmetric.
AffinityGraph build_graph(const SimilarityMap& sim, double tau_cut, double epsilon);

// Second eigenpair of (D - W) x = lambda D x via the normalized Laplacian.
Bipartition fiedler_bipartition(const AffinityGraph& graph);

// Normalized-cut value of a bipartition: cut/assoc(A) + cut/assoc(B).
double ncut_value(const AffinityGraph& graph, const std::vector<bool>& side);

// Side holding the largest |fiedler| entry, its largest 4-connected component and that
// component's pixel box.
DiscoveryResult extract_foreground(const Bipartition& cut, std::uint32_t grid_h, std::uint32_t grid_w,
                                   std::uint32_t patch_size);

DiscoveryResult discover(const ActivationDump& dump, const HeadSelection& selection,
                         const DiscoveryConfig& config);

// {"image_id": ..., "bbox": [x_min, y_min, x_max, y_max]}
std::string prediction_json_line(const std::string& image_id, const PixelBox& box);

}  // namespace objdino
