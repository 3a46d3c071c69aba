#include "cellmatch/assignment.hpp"
#include "cellmatch/geometry.hpp"
#include "cellmatch/synth.hpp"

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <set>

using namespace cellmatch;

namespace {

GeneratorConfig still_config() {
  GeneratorConfig cfg;
  cfg.pose_jitter = {0.0, 0.0};
  cfg.dropout_prob = 0.0;
  return cfg;
}

bool same_worm(const Worm& a, const Worm& b) {
  if (a.size() != b.size() || a.gt_labels != b.gt_labels || a.worm_id != b.worm_id) return false;
  for (std::size_t k = 0; k < a.size(); ++k)
    if (a.nuclei[k].id != b.nuclei[k].id || a.nuclei[k].centroid != b.nuclei[k].centroid ||
        a.nuclei[k].radii != b.nuclei[k].radii)
      return false;
  return true;
}

}  // namespace

TEST_CASE("make_ground_truth: single label lies in the body") {
  GeneratorConfig cfg;
  cfg.n_labels = 1;
  const auto m = make_ground_truth(cfg);
  REQUIRE(m.n_labels() == 1);
  CHECK((m.centroid_means[0].array() / m.semi_axes.array()).matrix().squaredNorm() <= 1.0);
}

TEST_CASE("make_ground_truth: deterministic per seed") {
  GeneratorConfig cfg;
  const auto a = make_ground_truth(cfg), b = make_ground_truth(cfg);
  CHECK(a.centroid_means == b.centroid_means);
  CHECK(a.radii_means == b.radii_means);
  CHECK(a.noise_scale == b.noise_scale);
  cfg.seed = 8;
  CHECK(make_ground_truth(cfg).centroid_means != a.centroid_means);
}

TEST_CASE("make_ground_truth: minimum separation holds for every pair") {
  for (std::uint64_t seed : {1u, 2u, 3u, 7u}) {
    GeneratorConfig cfg;
    cfg.seed = seed;
    const auto m = make_ground_truth(cfg);
    REQUIRE(m.n_labels() == 60);
    std::vector<double> largest;
    for (const auto& r : m.radii_means) {
      largest.push_back(r[0]);
      CHECK(r.minCoeff() > 0.0);
      CHECK(r[0] >= r[1]);
      CHECK(r[1] >= r[2]);
    }
    std::sort(largest.begin(), largest.end());
    CHECK(m.min_separation >= 2.0 * largest[29]);
    for (int i = 0; i < 60; ++i)
      for (int j = i + 1; j < 60; ++j)
        CHECK((m.centroid_means[static_cast<std::size_t>(i)] - m.centroid_means[static_cast<std::size_t>(j)]).norm() >=
              m.min_separation);
  }
}

TEST_CASE("make_ground_truth: impossible packing fails") {
  GeneratorConfig cfg;
  cfg.n_labels = 2000;
  try {
    make_ground_truth(cfg);
    FAIL("expected PackingFailed");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::PackingFailed);
  }
}

TEST_CASE("generator config validation") {
  GeneratorConfig cfg;
  cfg.dropout_prob = 1.0;
  CHECK_THROWS_AS(validate(cfg), Error);
  cfg = {};
  cfg.n_labels = 0;
  CHECK_THROWS_AS(validate(cfg), Error);
  cfg = {};
  cfg.spurious_rate = -1.0;
  CHECK_THROWS_AS(validate(cfg), Error);
  CHECK_NOTHROW(validate(GeneratorConfig{}));
}

TEST_CASE("sample_worm: noise-free still worm equals the model means") {
  GeneratorConfig cfg = still_config().noise_free();
  const auto m = make_ground_truth(cfg);
  const Worm w = sample_worm(m, cfg, 5);
  REQUIRE(w.size() == 60);
  for (std::size_t k = 0; k < w.size(); ++k) {
    const int label = w.gt_labels.at(w.nuclei[k].id);
    CHECK(w.nuclei[k].centroid == m.centroid_means[static_cast<std::size_t>(label)]);
    CHECK(w.nuclei[k].radii == m.radii_means[static_cast<std::size_t>(label)]);
  }
  CHECK_NOTHROW(validate(w));
}

TEST_CASE("sample_worm: full dropout leaves only spurious nuclei") {
  GeneratorConfig cfg;
  const auto m = make_ground_truth(cfg);
  cfg.dropout_prob = 0.999999999;
  cfg.spurious_rate = 3.0;
  std::size_t spurious = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Worm w = sample_worm(m, cfg, seed);
    CHECK(w.gt_labels.empty());
    spurious += w.size();
  }
  CHECK(spurious > 20);
  cfg.spurious_rate = 0.0;
  CHECK(sample_worm(m, cfg, 1).size() == 0);
}

TEST_CASE("sample_worm: per-label centroid covariance matches the field and noise model") {
  const GeneratorConfig cfg = still_config();
  const auto m = make_ground_truth(cfg);
  const int n = 2000;
  std::vector<Vec3> sum(60, Vec3::Zero()), sq(60, Vec3::Zero());
  for (int k = 0; k < n; ++k) {
    const Worm w = sample_worm(m, cfg, 10000 + static_cast<std::uint64_t>(k));
    for (const auto& nu : w.nuclei) {
      const auto l = static_cast<std::size_t>(w.gt_labels.at(nu.id));
      sum[l] += nu.centroid;
      sq[l] += nu.centroid.cwiseAbs2();
    }
  }
  for (std::size_t l = 0; l < 60; ++l) {
    const Vec3 mean = sum[l] / n;
    const Vec3 var = sq[l] / n - mean.cwiseAbs2();
    const Vec3 u = (m.centroid_means[l].array() / m.semi_axes.array()).matrix();
    const double m2 = u.squaredNorm() + u.cwiseAbs2().squaredNorm() + u[0] * u[0] * u[1] * u[1] +
                      u[0] * u[0] * u[2] * u[2] + u[1] * u[1] * u[2] * u[2];
    const double field = std::pow(cfg.deformation_magnitude / 3.0, 2) * m2;
    double expected = 0.0;
    for (int a = 0; a < 3; ++a) expected += field + std::pow(cfg.centroid_noise_sigma[a] * m.noise_scale[l], 2);
    CHECK(var.sum() == doctest::Approx(expected).epsilon(0.10));
  }
}

TEST_CASE("sample_worm: empirical means converge at rate 1/sqrt(N)") {
  const GeneratorConfig cfg = still_config();
  const auto m = make_ground_truth(cfg);
  std::vector<double> xs, ys;
  for (int n : {10, 40, 160, 640}) {
    double err = 0.0;
    for (int rep = 0; rep < 4; ++rep) {
      std::vector<Vec3> sum(60, Vec3::Zero());
      for (int k = 0; k < n; ++k) {
        const Worm w = sample_worm(m, cfg, derive_seed(99, static_cast<std::uint64_t>(n * 10 + rep), static_cast<std::uint64_t>(k)));
        for (const auto& nu : w.nuclei) sum[static_cast<std::size_t>(w.gt_labels.at(nu.id))] += nu.centroid;
      }
      for (std::size_t l = 0; l < 60; ++l) err += (sum[l] / n - m.centroid_means[l]).norm();
    }
    xs.push_back(std::log(n));
    ys.push_back(std::log(err));
  }
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    mx += xs[k] / xs.size();
    my += ys[k] / ys.size();
  }
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sxy += (xs[k] - mx) * (ys[k] - my);
    sxx += (xs[k] - mx) * (xs[k] - mx);
  }
  CHECK(sxy / sxx == doctest::Approx(-0.5).epsilon(0.2));
}

TEST_CASE("noise-free samples are recovered by a unit-covariance LAP after prealignment") {
  GeneratorConfig cfg;
  cfg = cfg.noise_free();
  const auto m = make_ground_truth(cfg);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Worm a = prealign(sample_worm(m, cfg, seed)).aligned;
    const Worm b = prealign(sample_worm(m, cfg, seed + 100)).aligned;
    const auto r = lap_from_instance(build_pairwise_instance(a, b, {1, 1, 0}, {}, {60, kInf, kInf}, 10000.0));
    REQUIRE(r.matching.size() == 60);
    for (const auto& [i, s] : r.matching.pairs)
      CHECK(a.gt_labels.at(a.nuclei[static_cast<std::size_t>(i)].id) ==
            b.gt_labels.at(b.nuclei[static_cast<std::size_t>(s)].id));
  }
}

TEST_CASE("generate_dataset: distinct, reproducible worms") {
  GeneratorConfig cfg;
  const auto a = generate_dataset(cfg, 5, 5), b = generate_dataset(cfg, 5, 5);
  REQUIRE(a.train.size() == 5);
  REQUIRE(a.test.size() == 5);
  std::set<std::string> ids;
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(same_worm(a.train[k], b.train[k]));
    CHECK(same_worm(a.test[k], b.test[k]));
    ids.insert(a.train[k].worm_id);
    ids.insert(a.test[k].worm_id);
    CHECK(a.train[k].nuclei[0].centroid != a.test[k].nuclei[0].centroid);
  }
  CHECK(ids.size() == 10);
  CHECK(a.train[0].worm_id == "train_000");
  CHECK(a.test[4].worm_id == "test_004");
  CHECK_THROWS_AS(generate_dataset(cfg, 0, 1), Error);
}

TEST_CASE("generate_dataset: label presence follows the dropout rate") {
  GeneratorConfig cfg;
  cfg.dropout_prob = 0.1;
  const auto ds = generate_dataset(cfg, 200, 1);
  std::vector<int> seen(60, 0);
  for (const auto& w : ds.train)
    for (const auto& [id, l] : w.gt_labels) ++seen[static_cast<std::size_t>(l)];
  double total = 0.0;
  for (int s : seen) {
    total += s;
    // Binomial(200, 0.9): 4.5 standard deviations.
    CHECK(std::abs(s - 180.0) <= 4.5 * std::sqrt(200 * 0.9 * 0.1));
  }
  CHECK(total / (60.0 * 200.0) == doctest::Approx(0.9).epsilon(0.02));
}

TEST_CASE("generate_dataset: desk config generates in under a second") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = generate_dataset(GeneratorConfig{}, 20, 10);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(ds.train.size() + ds.test.size() == 30);
  CHECK(s < 1.0);
}
