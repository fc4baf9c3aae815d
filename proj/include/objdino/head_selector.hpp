#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "objdino/activation_store.hpp"
#include "objdino/similarity.hpp"

namespace objdino {

using Feature = std::vector<float>;

struct ClusterAssignment {
    std::size_t requested_k = 0;
    std::size_t k = 0;                      // effective K after dropping empty clusters
    std::vector<std::size_t> labels;        // one per feature, in [0, k)
    std::vector<std::vector<double>> centroids;
    double inertia = 0.0;                   // within-cluster sum of squared distances
    std::vector<double> inertia_trace;      // inertia after every Lloyd iteration
    std::size_t iterations = 0;
};

inline constexpr std::size_t kDefaultClusters = 5;
inline constexpr std::size_t kMaxLloydIterations = 100;
inline constexpr double kCentroidShiftTolerance = 1e-6;
inline constexpr std::size_t kKmeansRestarts = 4;

// k-means++ seeding, Lloyd iterations, then Hartigan transfers. The best of
// kKmeansRestarts runs is returned; deterministic in `seed`.
ClusterAssignment kmeans(std::span<const Feature> features, std::size_t k, std::uint64_t seed);

double squared_distance(std::span<const float> a, std::span<const double> b);

// Lower is better. Requires K >= 2 with no two identical centroids.
double davies_bouldin(std::span<const Feature> features, const ClusterAssignment& assignment);

struct HeadSelection {
    int object_cluster = 0;
    std::vector<HeadId> heads;                     // H_obj, layer-major order
    std::vector<std::size_t> final_layer_counts;   // per cluster
    std::map<HeadId, double> per_head_frequency;   // every head of the dump
    std::size_t images = 1;
};

// Picks the cluster holding the most heads of `final_layer` (ties go to the lowest index).
HeadSelection select_object_cluster(const ClusterAssignment& assignment, std::span<const HeadId> heads,
                                    std::uint32_t final_layer);

struct SelectionConfig {
    double tau = kDefaultTau;
    EnsembleWeights weights;
    std::size_t k = kDefaultClusters;
    double theta = 0.5;
    std::uint64_t seed = 0;
};

// Flattened A_ens for every head, layer-major.
std::vector<Feature> head_features(const ActivationDump& dump, double tau, const EnsembleWeights& w);

HeadSelection select_image(const ActivationDump& dump, const SelectionConfig& config);

// Per-image selection, then frequency aggregation: a head is kept when it landed in its image's
// object cluster in at least a `theta` fraction of images. With several images the result is
// reported as a two-way labelling (cluster 0 = selected heads, cluster 1 = the rest).
HeadSelection select_over_dataset(std::span<const ActivationDump> dumps, const SelectionConfig& config);

// Histogram of selected heads per layer, "layer,selected_heads" rows.
std::string layer_histogram_csv(const HeadSelection& selection, std::uint32_t layers);

std::string to_json(const HeadSelection& selection);
HeadSelection head_selection_from_json(const std::string& text);
HeadSelection read_head_selection(const std::filesystem::path& path);

}  // namespace objdino
