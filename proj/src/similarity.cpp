#include "objdino/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace objdino {

EnsembleWeights::EnsembleWeights(double wq, double wk, double wv) : wq_(wq), wk_(wk), wv_(wv) {
    if (!(wq >= 0.0 && wk >= 0.0 && wv >= 0.0))
        throw std::invalid_argument("ensemble weights must be nonnegative");
    if (std::abs(wq + wk + wv - 1.0) > 1e-9)
        throw std::invalid_argument("ensemble weights must sum to 1");
}

MapKind map_kind(Component r) {
    switch (r) {
        case Component::query: return MapKind::query;
        case Component::key: return MapKind::key;
        case Component::value: return MapKind::value;
    }
    return MapKind::ensemble;
}

SimilarityMap component_similarity(const Matrix& tokens, double tau, MapKind kind) {
    const Matrix unit = l2_normalize_rows(tokens);
    return {kind, row_softmax(matmul_transpose(unit, unit), tau)};
}

SimilarityMap ensemble(const SimilarityMap& a_q, const SimilarityMap& a_k, const SimilarityMap& a_v,
                       const EnsembleWeights& w) {
    const std::size_t n = a_q.n_patches();
    for (const auto* m : {&a_q, &a_k, &a_v}) {
        if (m->matrix.rows() != n || m->matrix.cols() != n)
            throw std::invalid_argument("ensemble inputs must share N");
    }
    Matrix out(n, n);
    auto q = a_q.matrix.data(), k = a_k.matrix.data(), v = a_v.matrix.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] = float(w.query() * q[i] + w.key() * k[i] + w.value() * v[i]);
    return {MapKind::ensemble, std::move(out)};
}

SimilarityMap head_ensemble(const ActivationDump& dump, HeadId id, double tau,
                            const EnsembleWeights& w) {
    return ensemble(component_similarity(dump.tensor(id, Component::query), tau, MapKind::query),
                    component_similarity(dump.tensor(id, Component::key), tau, MapKind::key),
                    component_similarity(dump.tensor(id, Component::value), tau, MapKind::value), w);
}

std::vector<float> flatten_head_feature(const SimilarityMap& a_ens) {
    auto d = a_ens.matrix.data();
    return {d.begin(), d.end()};
}

Matrix unflatten(const std::vector<float>& feature, std::size_t n) {
    return Matrix(n, n, feature);
}

SaliencyMap saliency(const SimilarityMap& a, std::uint32_t grid_h, std::uint32_t grid_w, bool invert) {
    if (std::size_t(grid_h) * grid_w != a.n_patches())
        throw std::invalid_argument("grid does not match patch count");
    const auto scores = column_means(a.matrix);
    SaliencyMap out{grid_h, grid_w, std::vector<float>(scores.size(), 0.0f)};
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    if (scores.empty() || *hi == *lo) return out;
    const double span = *hi - *lo;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        const double v = (scores[j] - *lo) / span;
        out.values[j] = float(invert ? 1.0 - v : v);
    }
    return out;
}

double block_mean(const Matrix& m, const std::vector<std::size_t>& rows,
                  const std::vector<std::size_t>& cols) {
    if (rows.empty() || cols.empty()) throw std::invalid_argument("empty block");
    double total = 0.0;
    for (std::size_t i : rows)
        for (std::size_t j : cols) total += m(i, j);
    return total / double(rows.size() * cols.size());
}

}  // namespace objdino
