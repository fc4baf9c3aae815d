#include <doctest.h>

#include <cmath>
#include <random>

#include "objdino/similarity.hpp"
#include "test_support.hpp"

using namespace objdino;

namespace {

SimilarityMap from_rows(std::vector<std::vector<float>> rows, MapKind kind = MapKind::ensemble) {
    const std::size_t n = rows.size();
    std::vector<float> data;
    for (auto& r : rows) data.insert(data.end(), r.begin(), r.end());
    return {kind, Matrix(n, n, std::move(data))};
}

void check_row_stochastic(const Matrix& m, double tol) {
    for (double s : row_sums(m)) CHECK(std::abs(s - 1.0) <= tol);
    for (float v : m.data()) CHECK((v >= 0.0f && v <= 1.0f));
}

}  // namespace

TEST_CASE("component_similarity examples") {
    const auto single = component_similarity(Matrix(1, 3, {0.2f, -1.0f, 4.0f}), kDefaultTau);
    CHECK(single.matrix == Matrix(1, 1, {1.0f}));

    const auto twins = component_similarity(Matrix(2, 2, {1, 2, 1, 2}), 0.7);
    for (float v : twins.matrix.data()) CHECK(v == doctest::Approx(0.5));

    // Scalar softmax oracle: rows e1, e2 at tau = 1 give cos = [[1, 0], [0, 1]].
    const double hi = std::exp(1.0) / (std::exp(1.0) + 1.0);
    const auto basis = component_similarity(identity(2), 1.0);
    CHECK(std::abs(basis.matrix(0, 0) - hi) < 1e-6);
    CHECK(std::abs(basis.matrix(0, 1) - (1.0 - hi)) < 1e-6);
    CHECK(std::abs(basis.matrix(0, 0) - 0.7311) < 1e-4);
    CHECK(std::abs(basis.matrix(1, 0) - 0.2689) < 1e-4);
    CHECK(std::abs(basis.matrix(1, 1) - 0.7311) < 1e-4);

    CHECK_THROWS_WITH(component_similarity(identity(2), 0.0), "invalid temperature");
}

TEST_CASE("component_similarity agrees with the scalar oracle") {
    std::mt19937_64 rng(19);
    std::normal_distribution<float> g(0.0f, 2.0f);
    for (double tau : {0.03, 1.0, 60.0}) {
        Matrix tokens(12, 5);
        for (auto& v : tokens.data()) v = g(rng);
        const auto fast = component_similarity(tokens, tau);
        const auto slow = test::oracle_similarity(tokens, tau);
        for (std::size_t i = 0; i < 12; ++i)
            for (std::size_t j = 0; j < 12; ++j) CHECK(std::abs(fast.matrix(i, j) - slow[i][j]) < 1e-5);
    }
}

TEST_CASE("ensemble weights must be a convex combination") {
    CHECK_NOTHROW(EnsembleWeights(0.2, 0.3, 0.5));
    CHECK_THROWS_AS(EnsembleWeights(0.33, 0.33, 0.33), std::invalid_argument);
    CHECK_THROWS_AS(EnsembleWeights(-0.5, 1.0, 0.5), std::invalid_argument);
    const auto u = EnsembleWeights::uniform();
    CHECK(u.query() + u.key() + u.value() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ensemble examples") {
    const auto a_q = from_rows({{1, 0}, {0, 1}}, MapKind::query);
    const auto flat = from_rows({{0.5f, 0.5f}, {0.5f, 0.5f}});

    CHECK(ensemble(a_q, flat, flat, EnsembleWeights(1, 0, 0)).matrix == a_q.matrix);
    CHECK(ensemble(flat, flat, flat, EnsembleWeights(0.2, 0.5, 0.3)).matrix == flat.matrix);

    const auto mix = ensemble(a_q, flat, flat, EnsembleWeights::uniform());
    CHECK(mix.kind == MapKind::ensemble);
    CHECK(mix.matrix(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
    CHECK(mix.matrix(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    CHECK(mix.matrix(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    CHECK(mix.matrix(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-6));

    const auto three = from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    CHECK_THROWS_AS(ensemble(a_q, flat, three, EnsembleWeights::uniform()), std::invalid_argument);
}

TEST_CASE("every head of a dump yields row-stochastic maps") {
    const auto image = generate_synthetic(test::small_config(5, 5, {0, 0, 1, 2}));
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (const auto& id : image.dump.head_ids()) {
        for (Component r : kComponents)
            check_row_stochastic(component_similarity(image.dump.tensor(id, r), kDefaultTau).matrix, 1e-5);
        const double a = u(rng), b = u(rng) * (1 - a);
        check_row_stochastic(head_ensemble(image.dump, id, kDefaultTau, EnsembleWeights(a, b, 1 - a - b)).matrix,
                             1e-5);
    }
}

TEST_CASE("larger temperatures flatten every row") {
    std::mt19937_64 rng(23);
    std::normal_distribution<float> g(0.0f, 1.0f);
    Matrix tokens(10, 6);
    for (auto& v : tokens.data()) v = g(rng);
    std::vector<double> previous(10, 2.0);
    for (double tau : {0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 60.0, 100.0}) {
        const auto m = component_similarity(tokens, tau).matrix;
        for (std::size_t r = 0; r < 10; ++r) {
            const auto row = m.row(r);
            const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
            const double spread = *hi - *lo;
            CHECK(spread <= previous[r] + 1e-7);
            previous[r] = spread;
        }
    }
}

TEST_CASE("flatten_head_feature") {
    const auto m = from_rows({{0.1f, 0.9f}, {0.3f, 0.7f}});
    const auto f = flatten_head_feature(m);
    CHECK(f == std::vector<float>{0.1f, 0.9f, 0.3f, 0.7f});
    CHECK(unflatten(f, 2) == m.matrix);
    CHECK(flatten_head_feature(component_similarity(Matrix(1, 2, {1, 1}), 1.0)) == std::vector<float>{1.0f});
}

TEST_CASE("saliency of a uniform map is all zeros") {
    const auto flat = from_rows({{0.25f, 0.25f, 0.25f, 0.25f},
                                 {0.25f, 0.25f, 0.25f, 0.25f},
                                 {0.25f, 0.25f, 0.25f, 0.25f},
                                 {0.25f, 0.25f, 0.25f, 0.25f}});
    for (bool invert : {false, true}) {
        const auto s = saliency(flat, 2, 2, invert);
        CHECK(s.values == std::vector<float>(4, 0.0f));
    }
    CHECK_THROWS_AS(saliency(flat, 3, 2, false), std::invalid_argument);
}

TEST_CASE("saliency of a block-diagonal map keeps block membership") {
    // Blocks {0,1,2} (each row 1/3 inside) and {3,4} (each row 1/2 inside).
    const float t = 1.0f / 3.0f, h = 0.5f;
    const auto m = from_rows({{t, t, t, 0, 0}, {t, t, t, 0, 0}, {t, t, t, 0, 0}, {0, 0, 0, h, h}, {0, 0, 0, h, h}});
    // Skewing row 3 gives column means 0.2 (first block), 0.25 and 0.15.
    auto skew = m;
    skew.matrix(3, 3) = 0.75f;
    skew.matrix(3, 4) = 0.25f;
    const std::vector<double> cm{0.2, 0.2, 0.2, 0.25, 0.15};
    const auto s = saliency(skew, 1, 5, false);
    const auto inv = saliency(skew, 1, 5, true);
    for (std::size_t j = 0; j < 5; ++j) {
        const auto [lo, hi] = std::minmax_element(cm.begin(), cm.end());
        CHECK(s.values[j] == doctest::Approx((cm[j] - *lo) / (*hi - *lo)));
        CHECK(inv.values[j] == doctest::Approx(1.0 - s.values[j]));
    }
    CHECK(s.values[0] == s.values[1]);
    CHECK(s.values[1] == s.values[2]);
    CHECK(s.values[0] != s.values[3]);
    const auto argmax = [](const std::vector<float>& v) { return std::max_element(v.begin(), v.end()) - v.begin(); };
    const auto argmin = [](const std::vector<float>& v) { return std::min_element(v.begin(), v.end()) - v.begin(); };
    CHECK(argmax(inv.values) == argmin(s.values));
    CHECK(argmin(inv.values) == argmax(s.values));
}

TEST_CASE("planted heads show the object block, isotropic heads do not") {
    const auto cfg = test::small_config(9, 7, {1, 2, 3, 4});
    const auto image = generate_synthetic(cfg);
    const auto [object, background] = test::split_patches(cfg.grid, cfg.object_box);
    for (const auto& id : image.dump.head_ids()) {
        const auto a = head_ensemble(image.dump, id, kDefaultTau, EnsembleWeights::uniform()).matrix;
        const double margin = block_mean(a, object, object) - block_mean(a, object, background);
        const bool planted =
            std::find(cfg.planted_heads.begin(), cfg.planted_heads.end(), id) != cfg.planted_heads.end();
        if (planted) CHECK(margin > 0.0);
        else CHECK(std::abs(margin) < 0.05);
    }
}
