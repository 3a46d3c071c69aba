#pragma once

#include "cellmatch/costs.hpp"
#include "cellmatch/geometry.hpp"
#include "cellmatch/gm.hpp"
#include "cellmatch/mgm.hpp"

#include <map>
#include <optional>
#include <vector>

namespace cellmatch {

// Added to every covariance diagonal (length² units).
inline constexpr double kCovarianceFloor = 1e-4;
// Below this many samples the shared covariances replace empirical ones.
inline constexpr int kMinEmpiricalSupport = 3;

struct AtlasEntry {
  int label = 0;
  Vec3 mean_cen = Vec3::Zero();
  Mat3 cov_cen = Mat3::Identity();
  Vec3 mean_rad = Vec3::Zero();
  Mat3 cov_rad = Mat3::Identity();
  int support = 0;
};

struct OffsetStats {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
  int support = 0;
};

struct Atlas {
  std::vector<AtlasEntry> entries;
  // Keyed by entry indices (i, j), i < j; mean is x_i − x_j.
  std::map<std::pair<int, int>, OffsetStats> offsets;
  CostWeights weights;
  // Entry index -> ground-truth label, when known.
  std::map<int, int> label_names;

  // Offset statistics for any ordered pair; (j, i) negates the mean.
  OffsetStats offset(int i, int j) const;
  std::vector<Vec3> means() const;
};

struct AccuracyReport {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t unmatched = 0;
  double accuracy = 0.0;
};

// One entry per clique. Throws InsufficientSupport if a clique has fewer than
// `min_support` members or the universe is empty.
Atlas build_unsupervised_atlas(const Universe& universe, const std::vector<Worm>& worms,
                               const SharedCovariances& sigmas, int min_support = 1);

inline constexpr CostWeights kSupervisedWeights{0.48, 0.34, 0.81};

// One entry per ground-truth label; weights are normalised. Throws
// MissingLabels if a worm is unlabelled.
Atlas build_supervised_atlas(const std::vector<Worm>& worms, const CostWeights& weights = kSupervisedWeights,
                             const SharedCovariances& fallback = {});

// Greedy transfer of ground-truth labels to cliques: clique index -> label.
// Cliques missing from the result are unlabelled.
std::map<int, int> assign_gt_labels(const Universe& universe, const std::vector<Worm>& worms);

struct AtlasMatchOptions {
  SparsityParams sparsity{6, 8.0, 12.0};
  double c0 = kC0Learning;
  bool quadratic = true;
  int quad_neighbors = kDefaultQuadNeighbors;
  GmConfig gm;
};

// GM instance with atlas entries on the left and worm nuclei on the right,
// using per-entry covariances.
GmInstance build_atlas_instance(const Atlas& atlas, const Worm& worm, const AtlasMatchOptions& opts = {});

// Pairs are (entry index, nucleus index).
Matching match_to_atlas(const Atlas& atlas, const Worm& worm, const AtlasMatchOptions& opts = {});

// Over all nuclei of the worm: correct iff matched to an entry whose
// transferred label equals the ground truth. Unlabelled nuclei never count
// as correct.
AccuracyReport atlas_accuracy(const Matching& m, const Worm& worm, const std::map<int, int>& label_map);

// Each nucleus inherits the label of its clique; nuclei of unlabelled cliques
// count as unmatched.
AccuracyReport pre_atlas_accuracy(const Universe& universe, const std::map<int, int>& label_map,
                                  const std::vector<Worm>& worms);

AccuracyReport combine(const std::vector<AccuracyReport>& parts);

// Affine map carrying `worm` onto `base` through shared ground-truth labels.
AffineTransform label_alignment(const Worm& worm, const Worm& base);

struct BaseSelection {
  int index = 0;
  std::vector<double> mean_distance;
};

// For every candidate base, aligns the other worms by ground truth, builds the
// supervised atlas and averages the normalised centroid distance of the
// remaining worms; lowest wins.
BaseSelection select_supervised_base_worm(const std::vector<Worm>& worms, int workers = 1);

}  // namespace cellmatch
