#include "cellmatch/assignment.hpp"
#include "cellmatch/costs.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace cellmatch;
using testing::random_vec;

namespace {

Nucleus nucleus(int id, const Vec3& c, const Vec3& r = Vec3(1.5, 1.2, 1.0)) {
  Nucleus n;
  n.id = id;
  n.centroid = c;
  n.radii = r;
  return n;
}

Worm random_worm(std::mt19937_64& rng, int n) {
  std::vector<Vec3> pts;
  for (int k = 0; k < n; ++k) pts.push_back(random_vec(rng, -20.0, 20.0));
  Worm w = testing::make_worm(pts);
  for (auto& nu : w.nuclei) {
    Vec3 r = random_vec(rng, 0.8, 2.0);
    std::sort(r.data(), r.data() + 3, std::greater<>());
    nu.radii = r;
  }
  return w;
}

}  // namespace

TEST_CASE("mahalanobis: hand examples") {
  CHECK(mahalanobis(Vec3(1, 2, 2), Vec3(1, 1, 1)) == 9.0);
  CHECK(mahalanobis(Vec3(2, 0, 0), Vec3(4, 1, 1)) == 1.0);
  CHECK(mahalanobis(Vec3::Zero(), Vec3(3, 0.5, 7)) == 0.0);
}

TEST_CASE("mahalanobis: non-positive variance") {
  try {
    mahalanobis(Vec3(1, 0, 0), Vec3(1, 0, 1));
    FAIL("expected NonPositiveVariance");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonPositiveVariance);
  }
  CHECK_THROWS_AS(mahalanobis(Vec3(1, 0, 0), Vec3(-1, 1, 1)), Error);
}

TEST_CASE("mahalanobis: unit covariance is squared Euclidean") {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 1000; ++k) {
    const Vec3 d = random_vec(rng, -100.0, 100.0);
    CHECK(std::abs(mahalanobis(d, Vec3::Ones()) - d.squaredNorm()) <= 1e-12 * std::max(1.0, d.squaredNorm()));
  }
}

TEST_CASE("linear_cost: hand examples") {
  const SharedCovariances unit;
  const CostWeights w{1.0, 1.0, 0.0};
  const Nucleus a = nucleus(0, Vec3(1, 2, 3), Vec3(3, 2, 1));
  CHECK(linear_cost(a, a, w, unit) == 0.0);
  const Nucleus b = nucleus(1, Vec3(4, 2, 3), Vec3(3, 6, 1));
  CHECK(linear_cost(a, b, w, unit) == 25.0);
}

TEST_CASE("linear_cost: equals the weighted sum of two mahalanobis terms") {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 100; ++k) {
    const Nucleus a = nucleus(0, random_vec(rng, -10, 10), random_vec(rng, 0.5, 2));
    const Nucleus b = nucleus(1, random_vec(rng, -10, 10), random_vec(rng, 0.5, 2));
    SharedCovariances s;
    s.cen = random_vec(rng, 0.1, 50);
    s.rad = random_vec(rng, 0.1, 50);
    const CostWeights w{std::abs(random_vec(rng, 0, 2)[0]), std::abs(random_vec(rng, 0, 2)[1]), 0.3};
    const double expected =
        w.cen * mahalanobis(a.centroid - b.centroid, s.cen) + w.rad * mahalanobis(a.radii - b.radii, s.rad);
    CHECK(linear_cost(a, b, w, s) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(linear_cost(a, b, w, s) >= 0.0);
  }
}

TEST_CASE("quadratic_cost: hand examples and errors") {
  const SharedCovariances unit;
  const CostWeights w{1.0, 1.0, 1.0};
  const Nucleus i = nucleus(0, Vec3(1, 0, 0)), j = nucleus(1, Vec3::Zero());
  const Nucleus s = nucleus(0, Vec3(0, 1, 0)), t = nucleus(1, Vec3::Zero());
  CHECK(quadratic_cost(i, j, s, t, w, unit) == 2.0);
  CHECK(quadratic_cost(i, j, i, j, w, unit) == 0.0);
  try {
    quadratic_cost(i, i, s, t, w, unit);
    FAIL("expected SamePair");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SamePair);
  }
  CHECK_THROWS_AS(quadratic_cost(i, j, s, s, w, unit), Error);
}

TEST_CASE("quadratic_cost: exchange symmetric and non-negative") {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 100; ++k) {
    const Nucleus i = nucleus(0, random_vec(rng, -10, 10)), j = nucleus(1, random_vec(rng, -10, 10));
    const Nucleus s = nucleus(0, random_vec(rng, -10, 10)), t = nucleus(1, random_vec(rng, -10, 10));
    SharedCovariances sig;
    sig.off = random_vec(rng, 0.1, 20);
    const CostWeights w{1.0, 1.0, 0.7};
    const double a = quadratic_cost(i, j, s, t, w, sig), b = quadratic_cost(j, i, t, s, w, sig);
    CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, a));
    CHECK(a >= 0.0);
  }
}

TEST_CASE("normalize_weights") {
  const auto a = normalize_weights({1, 1, 1});
  CHECK(a.cen == doctest::Approx(1.0));
  CHECK(a.off == doctest::Approx(1.0));
  const auto b = normalize_weights({2, 2, 2});
  CHECK(b.rad == doctest::Approx(1.0));
  const auto c = normalize_weights({3, 0, 0});
  CHECK(std::abs(c.cen - std::sqrt(3.0)) < 1e-12);
  CHECK(c.rad == 0.0);
  std::mt19937_64 rng(4);
  for (int k = 0; k < 100; ++k) {
    const Vec3 v = random_vec(rng, 0.0, 1000.0);
    const auto n = normalize_weights({v[0], v[1], v[2]});
    CHECK(std::abs(Vec3(n.cen, n.rad, n.off).norm() - std::sqrt(3.0)) < 1e-9);
    CHECK(n.cen / n.rad == doctest::Approx(v[0] / v[1]));
  }
  try {
    normalize_weights({0, 0, 0});
    FAIL("expected ZeroWeights");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ZeroWeights);
  }
}

TEST_CASE("build_pairwise_instance: infinite thresholds give the dense instance") {
  std::mt19937_64 rng(5);
  const Worm a = random_worm(rng, 9), b = random_worm(rng, 7);
  const SharedCovariances s;
  const CostWeights w{1, 1, 1};
  const auto inst = build_pairwise_instance(a, b, w, s, {1, kInf, kInf}, 100.0);
  for (const auto& row : inst.allowed) CHECK(row.size() == b.size());
  for (int i = 0; i < inst.n_left; ++i)
    for (int t = 0; t < inst.n_right; ++t)
      CHECK(inst.linear(i, t) == linear_cost(a.nuclei[static_cast<std::size_t>(i)],
                                             b.nuclei[static_cast<std::size_t>(t)], w, s) - 100.0);
}

TEST_CASE("build_pairwise_instance: identical worms keep the diagonal at -c0") {
  std::mt19937_64 rng(6);
  const Worm a = random_worm(rng, 10);
  const auto inst = build_pairwise_instance(a, a, {1, 1, 1}, {}, {1, 1e-9, 1e-9}, 10000.0);
  for (int i = 0; i < inst.n_left; ++i) {
    CHECK(inst.is_allowed(i, i));
    CHECK(inst.linear(i, i) == -10000.0);
  }
}

TEST_CASE("build_pairwise_instance: k_min rescue and agreement with the dense instance") {
  std::mt19937_64 rng(7);
  const Worm a = random_worm(rng, 15), b = random_worm(rng, 12);
  SharedCovariances s;
  s.cen = Vec3(4, 9, 2);
  s.rad = Vec3(0.5, 0.3, 0.2);
  const CostWeights w{0.7, 1.1, 0.4};
  const auto dense = build_pairwise_instance(a, b, w, s, {static_cast<int>(b.size()), kInf, kInf}, 50.0);
  for (int k_min : {1, 3, 5, 20}) {
    const auto sparse = build_pairwise_instance(a, b, w, s, {k_min, 2.0, 1.0}, 50.0);
    for (int i = 0; i < sparse.n_left; ++i) {
      const auto& row = sparse.allowed[static_cast<std::size_t>(i)];
      CHECK(row.size() >= std::min<std::size_t>(static_cast<std::size_t>(k_min), b.size()));
      CHECK(std::is_sorted(row.begin(), row.end(), [](const auto& x, const auto& y) { return x.right < y.right; }));
      for (const auto& c : row) CHECK(c.cost == dense.linear(i, c.right));
      // Rows keep the k_min cheapest candidates.
      std::vector<double> all;
      for (const auto& c : dense.allowed[static_cast<std::size_t>(i)]) all.push_back(c.cost);
      std::sort(all.begin(), all.end());
      const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(k_min), all.size());
      for (std::size_t r = 0; r < k; ++r)
        CHECK(std::any_of(row.begin(), row.end(), [&](const auto& c) { return c.cost == all[r]; }));
      // Every thresholded pair is present.
      for (int t = 0; t < sparse.n_right; ++t) {
        const auto& x = a.nuclei[static_cast<std::size_t>(i)];
        const auto& y = b.nuclei[static_cast<std::size_t>(t)];
        if (centroid_distance(x, y, s) <= 2.0 && radii_distance(x, y, s) <= 1.0) CHECK(sparse.is_allowed(i, t));
      }
    }
  }
}

TEST_CASE("build_pairwise_instance: quadratic terms follow the neighbour graph") {
  std::mt19937_64 rng(8);
  const Worm a = random_worm(rng, 14), b = random_worm(rng, 14);
  SharedCovariances s;
  s.off = Vec3(3, 2, 5);
  const CostWeights w{1, 1, 0.8};
  const auto inst = build_pairwise_instance(a, b, w, s, {14, kInf, kInf}, 10.0, {true, 4, std::nullopt});
  REQUIRE(inst.quadratic);
  const auto graph = neighbor_graph(a.centroids(), 4);
  for (int i = 0; i < inst.n_left; ++i)
    for (int j = 0; j < inst.n_left; ++j) {
      if (i == j) continue;
      const bool linked = std::binary_search(graph[static_cast<std::size_t>(i)].begin(),
                                             graph[static_cast<std::size_t>(i)].end(), j);
      CHECK(inst.coupled(i, j) == linked);
      CHECK(inst.coupled(i, j) == inst.coupled(j, i));
      if (!linked) continue;
      const double expected = quadratic_cost(a.nuclei[static_cast<std::size_t>(i)], a.nuclei[static_cast<std::size_t>(j)],
                                             b.nuclei[2], b.nuclei[5], w, s);
      CHECK(inst.quad(i, 2, j, 5) == doctest::Approx(expected).epsilon(1e-14));
    }
}

TEST_CASE("neighbor_graph: symmetric, at least k per node, all pairs for large k") {
  std::mt19937_64 rng(9);
  std::vector<Vec3> pts;
  for (int k = 0; k < 30; ++k) pts.push_back(random_vec(rng, -5, 5));
  const auto g = neighbor_graph(pts, 5);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(g[i].size() >= 5);
    for (int j : g[i]) {
      CHECK(j != static_cast<int>(i));
      CHECK(std::binary_search(g[static_cast<std::size_t>(j)].begin(), g[static_cast<std::size_t>(j)].end(),
                               static_cast<int>(i)));
    }
  }
  for (const auto& row : neighbor_graph(pts, 0)) CHECK(row.size() == pts.size() - 1);
}

TEST_CASE("common sigma scale leaves the dense linear argmin unchanged") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const Worm a = random_worm(rng, 8), b = random_worm(rng, 8);
    SharedCovariances s;
    s.cen = random_vec(rng, 0.5, 5);
    s.rad = random_vec(rng, 0.5, 5);
    SharedCovariances scaled = s;
    scaled.cen *= 3.7;
    scaled.rad *= 3.7;
    // A large c0 forces full assignment, so only relative costs matter.
    const auto x = lap_from_instance(build_pairwise_instance(a, b, {1, 1, 0}, s, {8, kInf, kInf}, 1e6));
    const auto y = lap_from_instance(build_pairwise_instance(a, b, {1, 1, 0}, scaled, {8, kInf, kInf}, 1e6));
    auto px = x.matching, py = y.matching;
    px.normalize();
    py.normalize();
    CHECK(px.pairs == py.pairs);
  }
}
