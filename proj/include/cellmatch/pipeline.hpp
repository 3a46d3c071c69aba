#pragma once

#include "cellmatch/atlas.hpp"
#include "cellmatch/bopt.hpp"
#include "cellmatch/geometry.hpp"
#include "cellmatch/mgm.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cellmatch {

// Parameter source for the final pairwise matching.
enum class CostModel {
  Learned,           // all three stages
  UnlearnedQuadratic,  // Σ = I, λ = 1, k_min rescue only
  LinearOnly,        // stages 1-2, LAP pairwise
};

struct PipelineConfig {
  LearnConfig learn;
  int realign_iterations = 7;
  GmConfig gm{5, 100, 0, 0.1};
  double c0_final = kC0FinalMgm;
  SyncMode sync_mode = SyncMode::Dense;
  bool skip_atlas = false;
  CostModel cost_model = CostModel::Learned;
  // Cliques smaller than this do not enter the atlas; 0 = max(2, N/5).
  int min_clique_size = 0;
  AtlasMatchOptions atlas_match;
  std::uint64_t seed = 0;
  int workers = 1;
  // Reuse instead of running learning (sweeps, ablations).
  std::optional<LearnResult> learned;
};

using Progress = std::function<void(const std::string&)>;

// Stage failures are rethrown as StageFailed naming the stage.
struct StageError : Error {
  StageError(const std::string& stage, const std::string& what)
      : Error(ErrorKind::StageFailed, stage + ": " + what), stage_name(stage) {}
  std::string stage_name;
};

struct WormAccuracy {
  std::string worm_id;
  AccuracyReport report;
};

struct UnsupervisedOutcome {
  int reference = 0;
  LearnResult learned;
  CostParams pair_params;
  std::vector<Worm> train_aligned;
  std::vector<Worm> test_aligned;
  SyncResult sync;
  std::size_t input_matches = 0;
  std::map<int, int> universe_labels;
  AccuracyReport pre_atlas;
  std::optional<Atlas> atlas;
  std::vector<WormAccuracy> test_accuracy;
  AccuracyReport atlas_accuracy;
};

// Unlearned dense linear parameters (Σ = I, λ = (1, 1, 0)).
CostParams unlearned_linear_params(int max_worm_size);

// Pairwise parameters of the chosen cost model (c0 = 10000; callers lower
// it for the final matching).
CostParams pairwise_params(const PipelineConfig& cfg, const LearnResult& learned, int max_worm_size);

// Worm on the right, reference on the left; `iterations` affine rounds,
// optionally preceded by pose hypothesis selection. Atlas realignment always
// selects the pose.
Worm realign_to_worm(const Worm& worm, const Worm& reference, const CostParams& params, bool quadratic,
                     int iterations, std::uint64_t seed, bool resolve_pose = false);
Worm realign_to_atlas(const Worm& worm, const Atlas& atlas, const AtlasMatchOptions& opts, int iterations);

UnsupervisedOutcome run_unsupervised(const std::vector<Worm>& train, const std::vector<Worm>& test,
                                     const PipelineConfig& cfg, const Progress& progress = {});

struct SupervisedOutcome {
  int base = 0;
  Atlas atlas;
  std::vector<Worm> test_aligned;
  std::vector<WormAccuracy> test_accuracy;
  AccuracyReport atlas_accuracy;
};

struct SupervisedAtlas {
  int base = 0;
  std::vector<Worm> aligned;
  Atlas atlas;
};

// Base worm selection, ground-truth alignment onto it, supervised atlas.
// Throws MissingLabels.
SupervisedAtlas supervised_atlas(const std::vector<Worm>& prealigned, int workers = 1);

SupervisedOutcome run_supervised(const std::vector<Worm>& train, const std::vector<Worm>& test,
                                 const PipelineConfig& cfg, const Progress& progress = {});

struct SweepPoint {
  int n_train = 0;
  double pre_atlas = 0.0;
  // The N training worms matched back to their own atlas.
  double atlas = 0.0;
  // The test worms matched to the same atlas.
  double test_atlas = 0.0;
};

// Reruns matching, synchronisation and atlas building on the first N aligned
// training worms of a finished run, keeping its parameters and alignment.
std::vector<SweepPoint> training_size_sweep(const UnsupervisedOutcome& run, const PipelineConfig& cfg,
                                            const std::vector<int>& sizes, const Progress& progress = {});

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;
};

Summary summarize(const std::vector<WormAccuracy>& per_worm);

}  // namespace cellmatch
