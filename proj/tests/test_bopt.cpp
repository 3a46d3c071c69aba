#include "cellmatch/bopt.hpp"
#include "cellmatch/geometry.hpp"
#include "cellmatch/pairwise.hpp"
#include "cellmatch/synth.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace cellmatch;

namespace {

SearchSpace unit_square() {
  SearchSpace s;
  s.dims = {{"x", DimKind::Continuous, 0.0, 1.0, false}, {"y", DimKind::Continuous, 0.0, 1.0, false}};
  return s;
}

bool in_bounds(const SearchSpace& s, const std::vector<double>& x) {
  if (x.size() != s.dims.size()) return false;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const auto& d = s.dims[k];
    if (x[k] < d.low || x[k] > d.high) return false;
    if (d.kind == DimKind::Integer && x[k] != std::round(x[k])) return false;
  }
  return true;
}

Trial trial(int id, std::vector<double> p, std::vector<double> f) { return Trial{id, std::move(p), std::move(f)}; }

}  // namespace

TEST_CASE("search space validation") {
  try {
    validate(SearchSpace{});
    FAIL("expected EmptySpace");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptySpace);
  }
  SearchSpace bad;
  bad.dims = {{"x", DimKind::Continuous, 1.0, 1.0, false}};
  CHECK_THROWS_AS(validate(bad), Error);
  bad.dims = {{"x", DimKind::Continuous, -1.0, 1.0, true}};
  CHECK_THROWS_AS(validate(bad), Error);
  CHECK_THROWS_AS(tpe_suggest({}, SearchSpace{}, {}, 1), Error);
}

TEST_CASE("cold start is a seeded uniform sample") {
  for (int stage : {1, 2, 3}) {
    const SearchSpace s = stage_space(stage);
    const auto a = tpe_suggest({}, s, {}, 42);
    CHECK(a == tpe_suggest({}, s, {}, 42));
    CHECK(a == sample_uniform(s, 42));
    CHECK(a != tpe_suggest({}, s, {}, 43));
    CHECK(in_bounds(s, a));
  }
}

TEST_CASE("stage spaces") {
  CHECK(stage_space(1).dims.size() == 6);
  CHECK(stage_space(2).dims.size() == 3);
  CHECK(stage_space(3).dims.size() == 3);
  for (const auto& d : stage_space(1).dims) {
    CHECK(d.low == 1.0);
    CHECK(d.high == 200.0);
    CHECK(d.log_scale);
  }
  const auto s2 = stage_space(2);
  CHECK(s2.dims[0].kind == DimKind::Integer);
  CHECK(s2.dims[0].low == 1.0);
  CHECK(s2.dims[0].high == 30.0);
  CHECK(s2.dims[1].low == 0.01);
  CHECK(s2.dims[2].high == 10.0);
}

TEST_CASE("tpe_suggest: suggestions stay in bounds") {
  std::mt19937_64 rng(1);
  for (int stage : {1, 2, 3}) {
    const SearchSpace s = stage_space(stage);
    std::vector<Trial> h;
    for (int k = 0; k < 40; ++k) {
      auto x = sample_uniform(s, static_cast<std::uint64_t>(1000 * stage + k));
      h.push_back(trial(k, x, {std::uniform_real_distribution<double>(0, 1)(rng), 0.5}));
    }
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      CHECK(in_bounds(s, tpe_suggest(h, s, {}, seed)));
      CHECK(in_bounds(s, motpe_suggest(h, s, {}, seed)));
    }
  }
}

TEST_CASE("tpe_suggest: deterministic given seed and history") {
  const SearchSpace s = unit_square();
  std::vector<Trial> h;
  for (int k = 0; k < 20; ++k) {
    const auto x = sample_uniform(s, static_cast<std::uint64_t>(k));
    h.push_back(trial(k, x, {x[0] + x[1]}));
  }
  CHECK(tpe_suggest(h, s, {}, 5) == tpe_suggest(h, s, {}, 5));
}

TEST_CASE("tpe_suggest: concentrated good cluster attracts suggestions") {
  const SearchSpace s = unit_square();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0), c(0.55, 0.65);
  std::vector<Trial> h;
  for (int k = 0; k < 30; ++k) h.push_back(trial(k, {c(rng), c(rng)}, {0.01 * u(rng)}));
  for (int k = 30; k < 100; ++k) {
    std::vector<double> x{u(rng), u(rng)};
    h.push_back(trial(k, x, {1.0 + u(rng)}));
  }
  // Hull of the good set: the 25 best trials all lie in the cluster box.
  double lo0 = 1, hi0 = 0, lo1 = 1, hi1 = 0;
  for (int k = 0; k < 30; ++k) {
    lo0 = std::min(lo0, h[static_cast<std::size_t>(k)].params[0]);
    hi0 = std::max(hi0, h[static_cast<std::size_t>(k)].params[0]);
    lo1 = std::min(lo1, h[static_cast<std::size_t>(k)].params[1]);
    hi1 = std::max(hi1, h[static_cast<std::size_t>(k)].params[1]);
  }
  int inside = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto x = tpe_suggest(h, s, {}, seed);
    inside += (x[0] >= lo0 && x[0] <= hi0 && x[1] >= lo1 && x[1] <= hi1) ? 1 : 0;
  }
  CHECK(inside >= 90);
}

TEST_CASE("tpe_suggest: improves on random search for a sphere") {
  SearchSpace s;
  for (int k = 0; k < 3; ++k) s.dims.push_back({"x" + std::to_string(k), DimKind::Continuous, -5.0, 5.0, false});
  auto f = [](const std::vector<double>& x) { return std::pow(x[0] - 1, 2) + std::pow(x[1] + 2, 2) + std::pow(x[2], 2); };
  std::vector<Trial> h;
  for (int k = 0; k < 120; ++k) {
    auto x = tpe_suggest(h, s, {}, static_cast<std::uint64_t>(k));
    h.push_back(trial(k, x, {f(x)}));
  }
  double startup = 1e9, best = 1e9;
  for (int k = 0; k < 120; ++k) {
    if (k < 10) startup = std::min(startup, h[static_cast<std::size_t>(k)].objectives[0]);
    best = std::min(best, h[static_cast<std::size_t>(k)].objectives[0]);
  }
  CHECK(best < 0.5);
  CHECK(best < 0.2 * startup);
}

TEST_CASE("motpe: constant second objective gives the single-objective split") {
  const SearchSpace s = unit_square();
  std::mt19937_64 rng(3);
  std::vector<Trial> h;
  for (int k = 0; k < 41; ++k) {
    const auto x = sample_uniform(s, static_cast<std::uint64_t>(k));
    h.push_back(trial(k, x, {std::uniform_real_distribution<double>(0, 1)(rng), 7.0}));
  }
  const TpeConfig cfg;
  const auto good = motpe_good_set(h, cfg);
  std::vector<std::size_t> order(h.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return h[a].objectives[0] < h[b].objectives[0]; });
  order.resize(static_cast<std::size_t>(std::ceil(cfg.gamma * static_cast<double>(h.size()))));
  std::sort(order.begin(), order.end());
  CHECK(good == order);
}

TEST_CASE("motpe: all mutually nondominated trials are capped") {
  std::vector<Trial> h;
  for (int k = 0; k < 40; ++k) {
    const double x = k / 39.0;
    h.push_back(trial(k, {x, 0.5}, {x, 1.0 - x}));
  }
  const auto good = motpe_good_set(h, {});
  CHECK(good.size() == 10);
  // Crowding keeps both extremes.
  CHECK(good.front() == 0);
  CHECK(good.back() == 39);
  CHECK(in_bounds(unit_square(), motpe_suggest(h, unit_square(), {}, 1)));
}

TEST_CASE("motpe: suggestions concentrate near the front") {
  // f1 = x + y, f2 = 1 - x + y: the front is y = 0.
  const SearchSpace s = unit_square();
  std::vector<Trial> h;
  for (int k = 0; k < 60; ++k) {
    const auto x = sample_uniform(s, static_cast<std::uint64_t>(500 + k));
    h.push_back(trial(k, x, {x[0] + x[1], 1.0 - x[0] + x[1]}));
  }
  double mean_y = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) mean_y += motpe_suggest(h, s, {}, seed)[1];
  CHECK(mean_y / 100.0 < 0.2);
}

TEST_CASE("nondomination ranks") {
  const std::vector<std::array<double, 2>> p{{1, 3}, {2, 2}, {3, 1}, {2, 3}, {3, 3}, {4, 4}};
  CHECK(nondomination_ranks(p) == std::vector<int>{0, 0, 0, 1, 2, 3});
}

TEST_CASE("pareto_front: hand examples") {
  const std::vector<std::array<double, 2>> p{{1, 3}, {2, 2}, {3, 1}, {2, 3}};
  CHECK(pareto_front_indices(p) == std::vector<std::size_t>{0, 1, 2});
  const std::vector<std::array<double, 2>> same(5, {1.0, 2.0});
  CHECK(pareto_front_indices(same).size() == 5);
  std::vector<Trial> trials;
  for (std::size_t k = 0; k < p.size(); ++k) trials.push_back(trial(static_cast<int>(k), {0.0}, {p[k][0], p[k][1]}));
  const auto front = pareto_front(trials);
  REQUIRE(front.size() == 3);
  CHECK(front[2].trial_id == 2);
}

TEST_CASE("pareto_front: equals the quadratic oracle") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> grid(0, 20);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::array<double, 2>> p;
    // Alternate continuous and tie-heavy point sets.
    for (int k = 0; k < 1000; ++k)
      p.push_back(rep % 2 ? std::array<double, 2>{u(rng), u(rng)}
                          : std::array<double, 2>{double(grid(rng)), double(grid(rng))});
    CHECK(pareto_front_indices(p) == oracle::pareto_quadratic(p));
  }
}

TEST_CASE("stage2_select: worked examples") {
  const std::vector<Trial> one{trial(4, {1, 1, 1}, {-5.0, 100.0})};
  CHECK(stage2_select(one).trial_id == 4);
  const std::vector<Trial> three{trial(0, {1, 1, 1}, {-100.0, 5000.0}), trial(1, {1, 1, 1}, {-99.97, 2000.0}),
                                 trial(2, {1, 1, 1}, {-90.0, 100.0})};
  CHECK(stage2_select(three, 12000.0, 0.0005).trial_id == 1);
  // Outside the band the lowest loss wins.
  CHECK(stage2_select(three, 12000.0, 0.0001).trial_id == 0);
  // The cap removes the best loss.
  CHECK(stage2_select(three, 4000.0, 0.0005).trial_id == 1);
  const std::vector<Trial> ties{trial(5, {1, 1, 1}, {-10.0, 300.0}), trial(3, {1, 1, 1}, {-10.0, 300.0})};
  CHECK(stage2_select(ties).trial_id == 3);
  try {
    stage2_select({trial(0, {1, 1, 1}, {-1.0, 12000.0})});
    FAIL("expected NoFeasible");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NoFeasible);
  }
}

TEST_CASE("learn_parameters: degenerate noise-free data starts at the optimum") {
  GeneratorConfig cfg;
  cfg.n_labels = 30;
  const auto model = make_ground_truth(cfg.noise_free());
  const Worm w = prealign(sample_worm(model, cfg.noise_free(), 1)).aligned;
  std::vector<Worm> worms;
  for (int k = 0; k < 4; ++k) {
    worms.push_back(w);
    worms.back().worm_id = "w" + std::to_string(k);
  }
  LearnConfig lc;
  lc.n_learn = 4;
  lc.trials_per_stage = {12, 12, 6};
  const auto r = learn_parameters(worms, lc);
  const double optimum = -6.0 * static_cast<double>(w.size());
  for (const auto& st : r.stages) {
    REQUIRE_FALSE(st.best_so_far.empty());
    CHECK(st.best_so_far.front() == optimum);
    CHECK(st.best_so_far.back() == optimum);
    CHECK(st.chosen.objectives[0] == optimum);
  }
}

TEST_CASE("learn_parameters: bookkeeping, sparsity density and determinism") {
  const auto ds = testing::small_dataset(6, 1, 11);
  std::vector<Worm> worms;
  for (const auto& w : ds.train) worms.push_back(prealign(w).aligned);
  LearnConfig lc;
  lc.n_learn = 5;
  lc.trials_per_stage = {14, 14, 6};
  lc.seed = 3;
  std::vector<TrialRecord> seen;
  const auto a = learn_parameters(worms, lc, [&](const TrialRecord& t) { seen.push_back(t); });
  CHECK(seen.size() == 34);
  CHECK(a.log.size() == 34);
  for (const auto& st : a.stages)
    for (std::size_t k = 1; k < st.best_so_far.size(); ++k) CHECK(st.best_so_far[k] <= st.best_so_far[k - 1]);
  CHECK(a.n_lin < lc.n_lin_cap);

  // n̄_lin recomputed from the instances of the chosen sparsity.
  std::vector<Worm> subset(worms.begin(), worms.begin() + 5);
  double allowed = 0.0;
  int pairs = 0;
  for (int x = 0; x < 5; ++x)
    for (int y = x + 1; y < 5; ++y, ++pairs)
      allowed += static_cast<double>(build_pairwise_instance(subset[static_cast<std::size_t>(x)],
                                                             subset[static_cast<std::size_t>(y)], {1, 1, 1},
                                                             a.sigmas, a.sparsity, kC0Learning)
                                         .n_allowed());
  CHECK(a.n_lin == doctest::Approx(allowed / pairs).epsilon(1e-12));

  lc.workers = 3;
  const auto b = learn_parameters(worms, lc);
  CHECK(a.sigmas.cen == b.sigmas.cen);
  CHECK(a.sigmas.rad == b.sigmas.rad);
  CHECK(a.sigmas.off == b.sigmas.off);
  CHECK(a.sparsity.k_min == b.sparsity.k_min);
  CHECK(a.sparsity.tau_cen == b.sparsity.tau_cen);
  for (std::size_t k = 0; k < a.log.size(); ++k) CHECK(a.log[k].objectives == b.log[k].objectives);
}

TEST_CASE("learn_parameters: argument errors") {
  const auto ds = testing::small_dataset(3, 1, 12);
  LearnConfig lc;
  lc.n_learn = 2;
  CHECK_THROWS_AS(learn_parameters(ds.train, lc), Error);
  lc.n_learn = 5;
  CHECK_THROWS_AS(learn_parameters(ds.train, lc), Error);
}
