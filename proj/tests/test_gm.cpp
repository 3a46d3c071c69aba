#include "cellmatch/assignment.hpp"
#include "cellmatch/gm.hpp"
#include "cellmatch/synth.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>
#include <set>

using namespace cellmatch;
using testing::random_gm_instance;

namespace {

void check_valid(const GmInstance& inst, const Matching& m) {
  std::set<int> left, right;
  for (const auto& [i, s] : m.pairs) {
    CHECK(left.insert(i).second);
    CHECK(right.insert(s).second);
    CHECK(inst.is_allowed(i, s));
  }
}

// Two samples of the same ground truth without deformation or pose change.
std::pair<Worm, Worm> noisy_copies(std::uint64_t seed, int n_labels = 60) {
  GeneratorConfig cfg;
  cfg.n_labels = n_labels;
  cfg.deformation_magnitude = 0.0;
  cfg.dropout_prob = 0.0;
  cfg.pose_jitter = {0.0, 0.0};
  cfg.seed = seed;
  const auto model = make_ground_truth(cfg);
  return {sample_worm(model, cfg, derive_seed(seed, 9, 0)), sample_worm(model, cfg, derive_seed(seed, 9, 1))};
}

}  // namespace

TEST_CASE("gm_objective: empty, single pair and forbidden pair") {
  std::mt19937_64 rng(1);
  const auto inst = random_gm_instance(rng, 5, 5);
  Matching m{5, 5, {}, {}};
  CHECK(gm_objective(inst, m) == 0.0);
  const auto& c = inst.allowed[2].front();
  m.pairs = {{2, c.right}};
  CHECK(gm_objective(inst, m) == c.cost);
  GmInstance sparse = inst;
  sparse.allowed[0] = {{0, -1.0}};
  m.pairs = {{0, 1}};
  try {
    gm_objective(sparse, m);
    FAIL("expected ForbiddenPair");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ForbiddenPair);
  }
}

TEST_CASE("gm_objective: recomputation from raw nuclei") {
  std::mt19937_64 rng(2);
  const auto [a, b] = noisy_copies(3, 20);
  SharedCovariances s;
  s.cen = Vec3(2, 3, 1);
  s.rad = Vec3(0.2, 0.3, 0.1);
  s.off = Vec3(4, 2, 3);
  const CostWeights w{0.9, 0.6, 1.2};
  const auto inst = build_pairwise_instance(a, b, w, s, {20, kInf, kInf}, 500.0, {true, 0, std::nullopt});
  for (int trial = 0; trial < 20; ++trial) {
    const Matching m = oracle::random_matching(static_cast<int>(a.size()), static_cast<int>(b.size()), 0.7, rng);
    double expected = 0.0;
    for (const auto& [i, t] : m.pairs)
      expected += linear_cost(a.nuclei[static_cast<std::size_t>(i)], b.nuclei[static_cast<std::size_t>(t)], w, s) - 500.0;
    for (std::size_t x = 0; x < m.pairs.size(); ++x)
      for (std::size_t y = x + 1; y < m.pairs.size(); ++y) {
        const auto [i, t] = m.pairs[x];
        const auto [j, u] = m.pairs[y];
        expected += quadratic_cost(a.nuclei[static_cast<std::size_t>(i)], a.nuclei[static_cast<std::size_t>(j)],
                                   b.nuclei[static_cast<std::size_t>(t)], b.nuclei[static_cast<std::size_t>(u)], w, s);
      }
    CHECK(gm_objective(inst, m) == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("solve_gm: zero quadratic part returns the LAP optimum") {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 20; ++k) {
    const auto inst = random_gm_instance(rng, 10, 12).linear_part();
    const auto sol = solve_gm(inst);
    CHECK(sol.objective == doctest::Approx(lap_from_instance(inst).objective).epsilon(1e-12));
    check_valid(inst, sol.matching);
  }
}

TEST_CASE("brute_force_gm: hand instances") {
  GmInstance one;
  one.n_left = one.n_right = 1;
  one.allowed = {{{0, -5.0}}};
  const auto r = brute_force_gm(one);
  CHECK(r.objective == -5.0);
  CHECK(r.matching.size() == 1);

  // The identity is cheaper linearly, the swap wins through its quadratic term.
  GmInstance two;
  two.n_left = two.n_right = 2;
  two.allowed = {{{0, -3.0}, {1, -2.0}}, {{0, -2.0}, {1, -3.0}}};
  auto q = std::make_shared<MaterializedQuadratic>(2, 2);
  q->set(0, 1, 1, 0, -5.0);
  two.quadratic = q;
  auto swap = brute_force_gm(two).matching;
  swap.normalize();
  CHECK(swap.pairs == std::vector<std::pair<int, int>>{{0, 1}, {1, 0}});
  CHECK(brute_force_gm(two).objective == -9.0);
}

TEST_CASE("brute_force_gm: agrees with the enumeration oracle and with LAP") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> size(1, 6);
  for (int k = 0; k < 50; ++k) {
    const auto inst = random_gm_instance(rng, size(rng), size(rng));
    const auto bf = brute_force_gm(inst);
    CHECK(bf.objective == doctest::Approx(oracle::gm_enumerate(inst)).epsilon(1e-12));
    CHECK(gm_objective(inst, bf.matching) == doctest::Approx(bf.objective).epsilon(1e-12));
    const auto lin = inst.linear_part();
    CHECK(brute_force_gm(lin).objective == doctest::Approx(lap_from_instance(lin).objective).epsilon(1e-12));
  }
}

TEST_CASE("brute_force_gm: size limit") {
  std::mt19937_64 rng(5);
  const auto inst = random_gm_instance(rng, kBruteForceLimit + 1, 3, 0.5);
  try {
    brute_force_gm(inst);
    FAIL("expected TooLarge");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TooLarge);
  }
}

TEST_CASE("solve_gm: never worse than its LAP initialisation, always valid") {
  std::mt19937_64 rng(6);
  for (int k = 0; k < 30; ++k) {
    const auto inst = random_gm_instance(rng, 12, 12, 0.5);
    const auto init = lap_from_instance(inst);
    const auto sol = solve_gm(inst, {3, 100, static_cast<std::uint64_t>(k), 0.1});
    CHECK(sol.objective <= gm_objective(inst, init.matching) + 1e-9);
    CHECK(sol.objective == doctest::Approx(gm_objective(inst, sol.matching)).epsilon(1e-9));
    CHECK(sol.restarts_used == 3);
    check_valid(inst, sol.matching);
  }
}

TEST_CASE("solve_gm: deterministic for a fixed seed") {
  std::mt19937_64 rng(7);
  const auto inst = random_gm_instance(rng, 8, 8);
  const auto a = solve_gm(inst, {4, 100, 11, 0.1});
  const auto b = solve_gm(inst, {4, 100, 11, 0.1});
  CHECK(a.matching.pairs == b.matching.pairs);
  CHECK(a.objective == b.objective);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("solve_gm: recovers planted correspondences") {
  std::size_t correct = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto [a, b] = noisy_copies(seed);
    SharedCovariances s;
    s.cen = Vec3::Constant(2.0 * 0.45 * 0.45);
    s.rad = Vec3::Constant(2.0 * 0.08 * 0.08);
    s.off = Vec3::Constant(4.0 * 0.45 * 0.45);
    const auto inst = build_pairwise_instance(a, b, normalize_weights({1, 1, 1}), s, {8, kInf, kInf}, kC0Learning);
    const auto sol = solve_gm(inst);
    for (const auto& [i, t] : sol.matching.pairs)
      if (a.gt_labels.at(a.nuclei[static_cast<std::size_t>(i)].id) == b.gt_labels.at(b.nuclei[static_cast<std::size_t>(t)].id))
        ++correct;
    total += a.size();
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(total) >= 0.99);
}

TEST_CASE("solve_gm: quadratic evaluations per sweep grow linearly with the instance") {
  // Fixed neighbour count and candidates per row: one sweep costs O(|S|·L²).
  std::vector<double> per_sweep;
  for (int n : {40, 80, 160}) {
    GeneratorConfig cfg;
    cfg.n_labels = n;
    cfg.body_length = 60.0 * std::sqrt(n / 60.0);
    cfg.body_width = 14.0 * std::sqrt(n / 60.0);
    cfg.pose_jitter = {0.0, 0.0};
    const auto model = make_ground_truth(cfg);
    const Worm a = sample_worm(model, cfg, 1), b = sample_worm(model, cfg, 2);
    const auto inst = build_pairwise_instance(a, b, {1, 1, 1}, {}, {6, 1e-9, 1e-9}, 10000.0);
    // One sweep from the LAP start, including the initial cache fill.
    const auto sol = solve_gm(inst, {1, 1, 0, 0.1});
    REQUIRE(sol.iterations == 1);
    per_sweep.push_back(static_cast<double>(sol.quad_evaluations));
  }
  for (std::size_t k = 1; k < per_sweep.size(); ++k) {
    const double ratio = per_sweep[k] / per_sweep[k - 1];
    CHECK(ratio > 1.4);
    CHECK(ratio < 2.8);
  }
}
