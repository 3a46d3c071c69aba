#include "cellmatch/assignment.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>
#include <set>

using namespace cellmatch;

namespace {

CostTable random_table(std::mt19937_64& rng, int rows, int cols, double forbidden) {
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::bernoulli_distribution off(forbidden);
  CostTable t(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int s = 0; s < cols; ++s) t(i, s) = off(rng) ? kInf : u(rng);
  return t;
}

void check_structure(const LapResult& r, const CostTable& t) {
  std::set<int> left, right;
  double sum = 0.0;
  for (const auto& [i, s] : r.matching.pairs) {
    CHECK(left.insert(i).second);
    CHECK(right.insert(s).second);
    REQUIRE(std::isfinite(t(i, s)));
    sum += t(i, s);
  }
  CHECK(r.objective == doctest::Approx(sum).epsilon(1e-12));
  CHECK_NOTHROW(check_uniqueness(r.matching));
}

}  // namespace

TEST_CASE("solve_lap: diagonal table") {
  CostTable t(3, 3);
  t << -1, 0, 0, 0, -1, 0, 0, 0, -1;
  const auto r = solve_lap(t);
  CHECK(r.objective == -3.0);
  auto m = r.matching;
  m.normalize();
  CHECK(m.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 2}});
}

TEST_CASE("solve_lap: positive table gives the empty matching") {
  CostTable t = CostTable::Constant(4, 5, 3.0);
  const auto r = solve_lap(t);
  CHECK(r.matching.size() == 0);
  CHECK(r.objective == 0.0);
}

TEST_CASE("solve_lap: degenerate shapes") {
  CHECK(solve_lap(CostTable(0, 4)).matching.size() == 0);
  CHECK(solve_lap(CostTable(3, 0)).objective == 0.0);
  CHECK(solve_lap(CostTable::Constant(2, 2, kInf)).matching.size() == 0);
}

TEST_CASE("solve_lap: matches exhaustive enumeration on random 6x7 tables") {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 200; ++k) {
    const CostTable t = random_table(rng, 6, 7, 0.2);
    const auto r = solve_lap(t);
    check_structure(r, t);
    CHECK(std::abs(r.objective - oracle::lap_enumerate(t)) <= 1e-9);
  }
}

TEST_CASE("solve_lap: random shapes up to 7x7") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> size(1, 7);
  for (int k = 0; k < 200; ++k) {
    const CostTable t = random_table(rng, size(rng), size(rng), 0.2);
    const auto r = solve_lap(t);
    check_structure(r, t);
    CHECK(std::abs(r.objective - oracle::lap_enumerate(t)) <= 1e-9);
  }
}

TEST_CASE("solve_lap: a constant shift keeps the argmin of a full table") {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 50; ++k) {
    // All entries very negative, so every row is assigned.
    CostTable t = random_table(rng, 6, 6, 0.0).array() - 1000.0;
    auto a = solve_lap(t).matching;
    auto b = solve_lap((t.array() + 500.0).matrix()).matching;
    a.normalize();
    b.normalize();
    CHECK(a.size() == 6);
    CHECK(a.pairs == b.pairs);
  }
}

TEST_CASE("lap_from_instance: identical worms and diagonal-only instances") {
  std::mt19937_64 rng(4);
  std::vector<Vec3> pts;
  for (int k = 0; k < 12; ++k) pts.push_back(testing::random_vec(rng, -20, 20));
  const Worm w = testing::make_worm(pts);
  const auto inst = build_pairwise_instance(w, w, {1, 1, 0}, {}, {12, kInf, kInf}, 10000.0);
  const auto r = lap_from_instance(inst);
  auto m = r.matching;
  m.normalize();
  REQUIRE(m.size() == 12);
  for (const auto& [i, s] : m.pairs) CHECK(i == s);

  GmInstance diag;
  diag.n_left = diag.n_right = 5;
  diag.c0 = 40.0;
  diag.allowed.resize(5);
  for (int i = 0; i < 5; ++i) diag.allowed[static_cast<std::size_t>(i)] = {{i, -40.0}};
  const auto d = lap_from_instance(diag);
  CHECK(d.objective == -200.0);
  CHECK(d.matching.size() == 5);
}

TEST_CASE("lap_from_instance: sparse instance containing the dense optimum") {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) {
    std::vector<Vec3> a, b;
    for (int n = 0; n < 10; ++n) {
      a.push_back(testing::random_vec(rng, -10, 10));
      b.push_back(a.back() + testing::random_vec(rng, -1, 1));
    }
    const Worm wa = testing::make_worm(a), wb = testing::make_worm(b);
    const auto dense = build_pairwise_instance(wa, wb, {1, 1, 0}, {}, {10, kInf, kInf}, 100.0);
    const auto opt = lap_from_instance(dense);
    // Keep the optimum's pairs plus a random subset.
    GmInstance sparse = dense;
    std::bernoulli_distribution keep(0.3);
    const auto l2r = opt.matching.left_to_right();
    for (int i = 0; i < sparse.n_left; ++i) {
      auto& row = sparse.allowed[static_cast<std::size_t>(i)];
      std::vector<Candidate> kept;
      for (const auto& c : row)
        if (c.right == l2r[static_cast<std::size_t>(i)] || keep(rng)) kept.push_back(c);
      row = kept;
    }
    CHECK(lap_from_instance(sparse).objective == doctest::Approx(opt.objective).epsilon(1e-12));
  }
}
