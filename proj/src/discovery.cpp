#include "objdino/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "objdino/parallel.hpp"

namespace objdino {

SimilarityMap aggregate_affinity(const ActivationDump& dump, const HeadSelection& selection,
                                 double tau, const EnsembleWeights& w) {
    if (selection.heads.empty()) throw std::invalid_argument("empty head selection");
    for (const auto& id : selection.heads)
        if (!dump.contains(id)) throw std::invalid_argument("selected head " + to_string(id) + " outside dump");

    const std::size_t n = dump.header().patches;
    std::vector<SimilarityMap> maps(selection.heads.size());
    parallel_for(maps.size(), [&](std::size_t i) { maps[i] = head_ensemble(dump, selection.heads[i], tau, w); });

    std::vector<double> sum(n * n, 0.0);
    for (const auto& m : maps) {
        auto d = m.matrix.data();
        for (std::size_t i = 0; i < d.size(); ++i) sum[i] += d[i];
    }
    const double count = double(maps.size());
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) = float((sum[i * n + j] + sum[j * n + i]) / (2.0 * count));
    return {MapKind::ensemble, std::move(out)};
}

SimilarityMap contrast_normalize(const SimilarityMap& sim) {
    const std::size_t n = sim.n_patches();
    Matrix out(n, n, 1.0f);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) {
                lo = std::min<double>(lo, sim.matrix(i, j));
                hi = std::max<double>(hi, sim.matrix(i, j));
            }
    if (n < 2 || hi == lo) return {sim.kind, std::move(out)};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) out(i, j) = float((sim.matrix(i, j) - lo) / (hi - lo));
    return {sim.kind, std::move(out)};
}

AffinityGraph build_graph(const SimilarityMap& sim, double tau_cut, double epsilon) {
    if (!(tau_cut > 0.0 && tau_cut < 1.0)) throw std::invalid_argument("tau_cut must lie in (0, 1)");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1)");
    const std::size_t n = sim.n_patches();
    AffinityGraph g{SymmetricMatrix(n), tau_cut, epsilon};
    for (std::size_t i = 0; i < n; ++i) {
        g.weights(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = 0.5 * (double(sim.matrix(i, j)) + double(sim.matrix(j, i)));
            const double w = s >= tau_cut ? 1.0 : epsilon;
            g.weights(i, j) = w;
            g.weights(j, i) = w;
        }
    }
    return g;
}

namespace {

std::vector<double> degrees(const AffinityGraph& g) {
    const std::size_t n = g.size();
    std::vector<double> deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(g.weights(i, j) - g.weights(j, i)) > 1e-6)
                throw std::invalid_argument("affinity matrix is not symmetric");
            deg[i] += g.weights(i, j);
        }
        if (!(deg[i] > 0.0)) throw std::invalid_argument("affinity node with nonpositive degree");
    }
    return deg;
}

}  // namespace

Bipartition fiedler_bipartition(const AffinityGraph& g) {
    const std::size_t n = g.size();
    if (n < 2) throw std::invalid_argument("fiedler bipartition needs at least 2 nodes");
    const auto deg = degrees(g);

    std::vector<double> inv_sqrt(n), trivial(n);
    double trivial_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        inv_sqrt[i] = 1.0 / std::sqrt(deg[i]);
        trivial[i] = std::sqrt(deg[i]);
        trivial_norm += deg[i];
    }
    trivial_norm = std::sqrt(trivial_norm);
    for (auto& t : trivial) t /= trivial_norm;

    // Normalized Laplacian I - D^-1/2 W D^-1/2 with the known null vector D^1/2 1 lifted out of
    // the way (its eigenvalue moves to 4 > 2 >= every Laplacian eigenvalue), so the smallest
    // remaining eigenvector is the Fiedler vector even when lambda_2 = 0 is repeated.
    constexpr double kLift = 4.0;
    SymmetricMatrix lap(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            lap(i, j) = (i == j ? 1.0 : 0.0) - g.weights(i, j) * inv_sqrt[i] * inv_sqrt[j] +
                        kLift * trivial[i] * trivial[j];

    const auto eig = symmetric_eigen(lap);
    Bipartition out;
    out.eigenvalue = eig.values.front();
    out.fiedler.resize(n);
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out.fiedler[i] = eig.vectors.front()[i] * inv_sqrt[i];
        norm += out.fiedler[i] * out.fiedler[i];
    }
    norm = std::sqrt(norm);
    std::size_t peak = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out.fiedler[i] /= norm;
        if (std::abs(out.fiedler[i]) > std::abs(out.fiedler[peak])) peak = i;
    }
    if (out.fiedler[peak] < 0)
        for (auto& x : out.fiedler) x = -x;
    out.positive.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.positive[i] = out.fiedler[i] >= 0.0;
    return out;
}

double ncut_value(const AffinityGraph& g, const std::vector<bool>& side) {
    const std::size_t n = g.size();
    double cut = 0.0, assoc_a = 0.0, assoc_b = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double w = g.weights(i, j);
            (side[i] ? assoc_a : assoc_b) += w;
            if (side[i] && !side[j]) cut += w;
        }
    if (assoc_a == 0.0 || assoc_b == 0.0) return std::numeric_limits<double>::infinity();
    return cut / assoc_a + cut / assoc_b;
}

DiscoveryResult extract_foreground(const Bipartition& cut, std::uint32_t grid_h, std::uint32_t grid_w,
                                   std::uint32_t patch_size) {
    const std::size_t n = std::size_t(grid_h) * grid_w;
    if (cut.fiedler.size() != n || cut.positive.size() != n)
        throw std::invalid_argument("partition does not match the grid");

    std::size_t peak = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (std::abs(cut.fiedler[i]) > std::abs(cut.fiedler[peak])) peak = i;
    const bool fg_side = cut.positive[peak];

    DiscoveryResult out;
    out.grid_h = grid_h;
    out.grid_w = grid_w;
    out.fiedler = cut.fiedler;
    out.foreground_mask.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.foreground_mask[i] = cut.positive[i] == fg_side;

    // Largest 4-connected component; the earliest in raster order wins ties.
    std::vector<int> label(n, -1);
    std::vector<std::size_t> best, stack, current;
    for (std::size_t start = 0; start < n; ++start) {
        if (!out.foreground_mask[start] || label[start] >= 0) continue;
        current.clear();
        stack.assign(1, start);
        label[start] = int(start);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            current.push_back(p);
            const std::size_t r = p / grid_w, c = p % grid_w;
            auto visit = [&](std::size_t q) {
                if (out.foreground_mask[q] && label[q] < 0) {
                    label[q] = int(start);
                    stack.push_back(q);
                }
            };
            if (r > 0) visit(p - grid_w);
            if (r + 1 < grid_h) visit(p + grid_w);
            if (c > 0) visit(p - 1);
            if (c + 1 < grid_w) visit(p + 1);
        }
        if (current.size() > best.size()) best = current;
    }

    out.component_mask.assign(n, false);
    std::uint32_t rmin = grid_h, cmin = grid_w, rmax = 0, cmax = 0;
    for (std::size_t p : best) {
        out.component_mask[p] = true;
        const auto r = std::uint32_t(p / grid_w), c = std::uint32_t(p % grid_w);
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
    }
    out.bbox_pixels = {cmin * patch_size, rmin * patch_size, (cmax + 1) * patch_size, (rmax + 1) * patch_size};
    return out;
}

DiscoveryResult discover(const ActivationDump& dump, const HeadSelection& selection,
                         const DiscoveryConfig& config) {
    const auto& h = dump.header();
    const SimilarityMap affinity = aggregate_affinity(dump, selection, config.tau, config.weights);
    const AffinityGraph graph = build_graph(contrast_normalize(affinity), config.tau_cut, config.epsilon);
    auto result = extract_foreground(fiedler_bipartition(graph), h.grid_h, h.grid_w, h.patch_size);
    result.saliency = saliency(affinity, h.grid_h, h.grid_w, false);
    return result;
}

std::string prediction_json_line(const std::string& image_id, const PixelBox& box) {
    nlohmann::json j;
    j["image_id"] = image_id;
    j["bbox"] = {box[0], box[1], box[2], box[3]};
    return j.dump();
}

}  // namespace objdino
