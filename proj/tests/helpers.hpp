#pragma once

#include "cellmatch/common.hpp"
#include "cellmatch/costs.hpp"
#include "cellmatch/synth.hpp"

#include <memory>
#include <random>
#include <string>
#include <vector>

namespace testing {

using cellmatch::Mat3;
using cellmatch::Vec3;
using cellmatch::Worm;

// Worm with the given centroids, unit-ish radii and labels equal to indices.
inline Worm make_worm(const std::vector<Vec3>& centroids, const std::string& id = "w") {
  Worm w;
  w.worm_id = id;
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    cellmatch::Nucleus n;
    n.id = static_cast<int>(k);
    n.centroid = centroids[k];
    n.radii = Vec3(1.5, 1.2, 1.0);
    w.nuclei.push_back(n);
    w.gt_labels[n.id] = static_cast<int>(k);
  }
  return w;
}

inline Vec3 random_vec(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return Vec3(u(rng), u(rng), u(rng));
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  const Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  return q.normalized().toRotationMatrix();
}

// Generator worm with labels; small default config.
inline cellmatch::Dataset small_dataset(int n_train, int n_test, std::uint64_t seed = 7) {
  cellmatch::GeneratorConfig cfg;
  cfg.seed = seed;
  return cellmatch::generate_dataset(cfg, n_train, n_test);
}

// n×n instance: each row keeps each candidate with probability `density`
// (at least one), linear costs in [-10, 2], a quadratic term in [-3, 3]
// for every coupled pair of assignments.
inline cellmatch::GmInstance random_gm_instance(std::mt19937_64& rng, int n_left, int n_right, double density = 0.7) {
  std::uniform_real_distribution<double> lin(-10.0, 2.0), quad(-3.0, 3.0);
  std::bernoulli_distribution keep(density);
  std::uniform_int_distribution<int> any(0, n_right - 1);
  cellmatch::GmInstance inst;
  inst.n_left = n_left;
  inst.n_right = n_right;
  inst.c0 = 10.0;
  inst.allowed.resize(static_cast<std::size_t>(n_left));
  for (int i = 0; i < n_left; ++i) {
    const int forced = any(rng);
    for (int s = 0; s < n_right; ++s)
      if (s == forced || keep(rng)) inst.allowed[static_cast<std::size_t>(i)].push_back({s, lin(rng)});
  }
  auto q = std::make_shared<cellmatch::MaterializedQuadratic>(n_left, n_right);
  for (int i = 0; i < n_left; ++i)
    for (int j = i + 1; j < n_left; ++j)
      for (const auto& a : inst.allowed[static_cast<std::size_t>(i)])
        for (const auto& b : inst.allowed[static_cast<std::size_t>(j)])
          if (a.right != b.right) q->set(i, a.right, j, b.right, quad(rng));
  inst.quadratic = q;
  return inst;
}

}  // namespace testing
