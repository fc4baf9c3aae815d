#include "objdino/head_selector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "objdino/parallel.hpp"

namespace objdino {

double squared_distance(std::span<const float> a, std::span<const double> b) {
    // Four running sums in a fixed order: faster, and still reproducible.
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    const std::size_t n = a.size();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        for (std::size_t j = 0; j < 4; ++j) {
            const double d = double(a[i + j]) - b[i + j];
            acc[j] += d * d;
        }
    for (; i < n; ++i) {
        const double d = double(a[i]) - b[i];
        acc[0] += d * d;
    }
    return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

namespace {

double centroid_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc);
}

std::vector<double> to_double(const Feature& f) { return {f.begin(), f.end()}; }

std::vector<std::vector<double>> plus_plus_seeds(std::span<const Feature> points, std::size_t k,
                                                 std::mt19937_64& rng) {
    const std::size_t n = points.size();
    std::vector<std::vector<double>> centers;
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    centers.push_back(to_double(points[first(rng)]));

    std::vector<double> nearest(n);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = squared_distance(points[i], centers.back());
    while (centers.size() < k) {
        double total = 0.0;
        for (double d : nearest) total += d;
        if (total <= 0.0) {
            // Every point already coincides with a center; the duplicate empties out during Lloyd
            // and is dropped.
            centers.push_back(centers.back());
            continue;
        }
        const double target = std::uniform_real_distribution<double>(0.0, total)(rng);
        double running = 0.0;
        std::size_t pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            running += nearest[i];
            if (running > target && nearest[i] > 0.0) {
                pick = i;
                break;
            }
        }
        centers.push_back(to_double(points[pick]));
        for (std::size_t i = 0; i < n; ++i)
            nearest[i] = std::min(nearest[i], squared_distance(points[i], centers.back()));
    }
    return centers;
}

std::size_t nearest_center(std::span<const float> p, const std::vector<std::vector<double>>& centers,
                           double* best_out = nullptr) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.size(); ++c) {
        const double d = squared_distance(p, centers[c]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    if (best_out) *best_out = best_d;
    return best;
}

double sse(std::span<const Feature> points, const std::vector<std::size_t>& labels,
           const std::vector<std::vector<double>>& centers) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) total += squared_distance(points[i], centers[labels[i]]);
    return total;
}

// Hartigan single-point transfers: move a point whenever doing so strictly lowers the SSE.
// Returns false when no move applies.
bool hartigan_sweep(std::span<const Feature> points, std::vector<std::size_t>& labels,
                    std::vector<std::vector<double>>& centers) {
    const std::size_t k = centers.size();
    std::vector<std::size_t> sizes(k, 0);
    for (auto l : labels) ++sizes[l];
    bool moved = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const std::size_t from = labels[i];
        if (sizes[from] < 2) continue;
        const double n_from = double(sizes[from]);
        const double removal = n_from / (n_from - 1.0) * squared_distance(points[i], centers[from]);
        std::size_t best = from;
        double best_gain = 1e-12 * std::max(1.0, removal);
        for (std::size_t to = 0; to < k; ++to) {
            if (to == from) continue;
            const double n_to = double(sizes[to]);
            const double gain = removal - n_to / (n_to + 1.0) * squared_distance(points[i], centers[to]);
            if (gain > best_gain) {
                best_gain = gain;
                best = to;
            }
        }
        if (best == from) continue;
        const double n_to = double(sizes[best]);
        for (std::size_t d = 0; d < centers[from].size(); ++d) {
            const double x = points[i][d];
            centers[from][d] = (centers[from][d] * n_from - x) / (n_from - 1.0);
            centers[best][d] = (centers[best][d] * n_to + x) / (n_to + 1.0);
        }
        --sizes[from];
        ++sizes[best];
        labels[i] = best;
        moved = true;
    }
    return moved;
}

std::vector<std::vector<double>> exact_centroids(std::span<const Feature> points,
                                                 const std::vector<std::size_t>& labels, std::size_t k) {
    const std::size_t dim = points.front().size();
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t d = 0; d < dim; ++d) sums[labels[i]][d] += points[i][d];
        ++sizes[labels[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
        for (auto& v : sums[c]) v /= double(sizes[c]);
    return sums;
}

ClusterAssignment kmeans_run(std::span<const Feature> features, std::size_t k, std::mt19937_64& rng) {
    const std::size_t dim = features.front().size();
    ClusterAssignment out;
    out.requested_k = k;
    out.centroids = plus_plus_seeds(features, k, rng);
    out.labels.assign(features.size(), 0);

    for (std::size_t iter = 0; iter < kMaxLloydIterations; ++iter) {
        for (std::size_t i = 0; i < features.size(); ++i)
            out.labels[i] = nearest_center(features[i], out.centroids);

        const std::size_t kc = out.centroids.size();
        std::vector<std::vector<double>> sums(kc, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> sizes(kc, 0);
        for (std::size_t i = 0; i < features.size(); ++i) {
            auto& s = sums[out.labels[i]];
            for (std::size_t d = 0; d < dim; ++d) s[d] += features[i][d];
            ++sizes[out.labels[i]];
        }

        // Drop empty clusters and renumber the rest in their original order.
        std::vector<std::size_t> remap(kc, 0);
        std::vector<std::vector<double>> next;
        double shift = 0.0;
        for (std::size_t c = 0; c < kc; ++c) {
            if (sizes[c] == 0) continue;
            for (auto& v : sums[c]) v /= double(sizes[c]);
            shift = std::max(shift, centroid_distance(sums[c], out.centroids[c]));
            remap[c] = next.size();
            next.push_back(std::move(sums[c]));
        }
        for (auto& l : out.labels) l = remap[l];
        out.centroids = std::move(next);
        out.inertia_trace.push_back(sse(features, out.labels, out.centroids));
        out.iterations = iter + 1;
        if (shift < kCentroidShiftTolerance) break;
    }
    // Lloyd stops at any fixed point; transfers escape the ones that are not locally optimal.
    for (std::size_t sweep = 0; sweep < kMaxLloydIterations; ++sweep) {
        if (!hartigan_sweep(features, out.labels, out.centroids)) break;
        out.centroids = exact_centroids(features, out.labels, out.centroids.size());
        out.inertia_trace.push_back(sse(features, out.labels, out.centroids));
    }
    out.k = out.centroids.size();
    out.inertia = out.inertia_trace.back();
    return out;
}

}  // namespace

ClusterAssignment kmeans(std::span<const Feature> features, std::size_t k, std::uint64_t seed) {
    if (k == 0) throw std::invalid_argument("K must be >= 1");
    if (k > features.size())
        throw std::invalid_argument("K (" + std::to_string(k) + ") exceeds number of points (" +
                                    std::to_string(features.size()) + ")");
    const std::size_t dim = features.front().size();
    for (const auto& f : features)
        if (f.size() != dim) throw std::invalid_argument("features must share one dimension");

    std::mt19937_64 rng(seed);
    ClusterAssignment best;
    for (std::size_t r = 0; r < kKmeansRestarts; ++r) {
        auto run = kmeans_run(features, k, rng);
        if (r == 0 || run.inertia < best.inertia) best = std::move(run);
    }
    return best;
}

double davies_bouldin(std::span<const Feature> features, const ClusterAssignment& a) {
    const std::size_t k = a.centroids.size();
    if (k < 2) throw std::invalid_argument("Davies-Bouldin needs K >= 2");
    if (a.labels.size() != features.size()) throw std::invalid_argument("labels do not cover features");

    std::vector<double> spread(k, 0.0);
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < features.size(); ++i) {
        spread[a.labels[i]] += std::sqrt(squared_distance(features[i], a.centroids[a.labels[i]]));
        ++sizes[a.labels[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (sizes[c] == 0) throw std::invalid_argument("empty cluster");
        spread[c] /= double(sizes[c]);
    }

    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double worst = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            const double d = centroid_distance(a.centroids[i], a.centroids[j]);
            if (d == 0.0) throw std::invalid_argument("degenerate centroids");
            worst = std::max(worst, (spread[i] + spread[j]) / d);
        }
        total += worst;
    }
    return total / double(k);
}

HeadSelection select_object_cluster(const ClusterAssignment& a, std::span<const HeadId> heads,
                                    std::uint32_t final_layer) {
    if (heads.size() != a.labels.size()) throw std::invalid_argument("assignment does not cover heads");
    HeadSelection sel;
    sel.final_layer_counts.assign(a.k, 0);
    for (std::size_t i = 0; i < heads.size(); ++i)
        if (heads[i].layer == final_layer) ++sel.final_layer_counts[a.labels[i]];

    std::size_t best = 0;
    for (std::size_t c = 1; c < sel.final_layer_counts.size(); ++c)
        if (sel.final_layer_counts[c] > sel.final_layer_counts[best]) best = c;
    sel.object_cluster = int(best);

    for (std::size_t i = 0; i < heads.size(); ++i) {
        const bool chosen = a.labels[i] == best;
        if (chosen) sel.heads.push_back(heads[i]);
        sel.per_head_frequency[heads[i]] = chosen ? 1.0 : 0.0;
    }
    return sel;
}

std::vector<Feature> head_features(const ActivationDump& dump, double tau, const EnsembleWeights& w) {
    const auto ids = dump.head_ids();
    std::vector<Feature> features(ids.size());
    parallel_for(ids.size(), [&](std::size_t i) {
        features[i] = flatten_head_feature(head_ensemble(dump, ids[i], tau, w));
    });
    return features;
}

HeadSelection select_image(const ActivationDump& dump, const SelectionConfig& config) {
    const auto features = head_features(dump, config.tau, config.weights);
    const auto assignment = kmeans(features, config.k, config.seed);
    const auto ids = dump.head_ids();
    return select_object_cluster(assignment, ids, dump.header().layers - 1);
}

HeadSelection select_over_dataset(std::span<const ActivationDump> dumps, const SelectionConfig& config) {
    if (dumps.empty()) throw std::invalid_argument("empty dataset");
    const auto& first = dumps.front().header();
    for (const auto& d : dumps) {
        if (d.header().layers != first.layers || d.header().heads != first.heads)
            throw std::invalid_argument("dumps disagree on L/H");
    }

    std::vector<HeadSelection> per_image(dumps.size());
    for (std::size_t i = 0; i < dumps.size(); ++i) {
        SelectionConfig image_config = config;
        image_config.seed = config.seed + i;
        per_image[i] = select_image(dumps[i], image_config);
    }
    if (dumps.size() == 1) return per_image.front();

    const auto ids = dumps.front().head_ids();
    HeadSelection out;
    out.images = dumps.size();
    out.object_cluster = 0;
    out.final_layer_counts.assign(2, 0);
    for (const HeadId id : ids) {
        double hits = 0.0;
        for (const auto& s : per_image) hits += s.per_head_frequency.at(id);
        const double freq = hits / double(dumps.size());
        out.per_head_frequency[id] = freq;
        const bool chosen = freq >= config.theta;
        if (chosen) out.heads.push_back(id);
        if (id.layer == first.layers - 1) ++out.final_layer_counts[chosen ? 0 : 1];
    }
    return out;
}

std::string layer_histogram_csv(const HeadSelection& selection, std::uint32_t layers) {
    std::vector<std::size_t> counts(layers, 0);
    for (const auto& id : selection.heads)
        if (id.layer < layers) ++counts[id.layer];
    std::ostringstream out;
    out << "layer,selected_heads\n";
    for (std::uint32_t l = 0; l < layers; ++l) out << l << "," << counts[l] << "\n";
    return out.str();
}

std::string to_json(const HeadSelection& selection) {
    nlohmann::json j;
    j["object_cluster"] = selection.object_cluster;
    j["heads"] = nlohmann::json::array();
    for (const auto& id : selection.heads) j["heads"].push_back({id.layer, id.head});
    j["frequencies"] = nlohmann::json::object();
    for (const auto& [id, f] : selection.per_head_frequency) j["frequencies"][to_string(id)] = f;
    return j.dump(2) + "\n";
}

HeadSelection head_selection_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    HeadSelection sel;
    sel.object_cluster = j.at("object_cluster").get<int>();
    for (const auto& pair : j.at("heads")) {
        const auto lh = pair.get<std::vector<std::uint32_t>>();
        if (lh.size() != 2) throw std::runtime_error("head entry must be [layer, head]");
        sel.heads.push_back({lh[0], lh[1]});
    }
    if (j.contains("frequencies")) {
        for (const auto& [key, value] : j.at("frequencies").items()) {
            const auto comma = key.find(',');
            if (comma == std::string::npos) throw std::runtime_error("bad frequency key " + key);
            const HeadId id{std::uint32_t(std::stoul(key.substr(0, comma))),
                            std::uint32_t(std::stoul(key.substr(comma + 1)))};
            sel.per_head_frequency[id] = value.get<double>();
        }
    }
    return sel;
}

HeadSelection read_head_selection(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open head selection " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return head_selection_from_json(buf.str());
}

}  // namespace objdino
