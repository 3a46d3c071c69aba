#pragma once

#include "cellmatch/common.hpp"

#include <cstdint>
#include <vector>

namespace cellmatch {

struct PoseJitter {
  double rotation = 0.5;     // max rotation angle (radians) about a random axis
  double translation = 5.0;  // max per-axis shift
};

struct GeneratorConfig {
  int n_labels = 60;
  double body_length = 60.0;
  double body_width = 14.0;
  Vec3 radii_mean = Vec3(1.8, 1.4, 1.1);
  Vec3 centroid_noise_sigma = Vec3::Constant(0.45);
  Vec3 radii_noise_sigma = Vec3::Constant(0.08);
  double deformation_magnitude = 2.0;
  // Log-standard deviation of the per-label noise multiplier.
  double noise_heterogeneity = 0.5;
  double dropout_prob = 0.03;
  double spurious_rate = 0.0;
  PoseJitter pose_jitter;
  std::uint64_t seed = 7;

  static GeneratorConfig full_scale();
  // No noise, deformation, dropout, spurious nuclei; pose jitter kept.
  GeneratorConfig noise_free() const;
};

void validate(const GeneratorConfig& cfg);

struct GroundTruthModel {
  Vec3 semi_axes = Vec3::Ones();
  std::vector<Vec3> centroid_means;
  std::vector<Vec3> radii_means;
  // Per-label multiplier on the centroid and radii noise.
  std::vector<double> noise_scale;
  double min_separation = 0.0;

  int n_labels() const { return static_cast<int>(centroid_means.size()); }
};

// Bilaterally symmetric body plan inside an ellipsoid, denser towards +x
// (head) and +z, with a minimum separation of twice the median largest
// radius. Throws PackingFailed.
GroundTruthModel make_ground_truth(const GeneratorConfig& cfg);

// Seed of worm `index` in stream `stream` (1 = train, 2 = test).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index);

Worm sample_worm(const GroundTruthModel& model, const GeneratorConfig& cfg, std::uint64_t worm_seed,
                 const std::string& worm_id = "worm");

struct Dataset {
  GroundTruthModel model;
  std::vector<Worm> train;
  std::vector<Worm> test;
};

Dataset generate_dataset(const GeneratorConfig& cfg, int n_train, int n_test);

}  // namespace cellmatch
