#pragma once

#include "cellmatch/costs.hpp"
#include "cellmatch/gm.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cellmatch {

enum class DimKind { Continuous, Integer };

struct Dim {
  std::string name;
  DimKind kind = DimKind::Continuous;
  double low = 0.0;
  double high = 1.0;
  bool log_scale = false;
};

struct SearchSpace {
  std::vector<Dim> dims;
};

// Throws EmptySpace for no dimensions, InvalidArgument for bad bounds.
void validate(const SearchSpace& space);

struct Trial {
  int trial_id = 0;
  std::vector<double> params;  // aligned with SearchSpace::dims
  std::vector<double> objectives;
};

struct TpeConfig {
  double gamma = 0.25;
  int n_candidates = 24;
  int n_startup = 10;
  double prior_weight = 1.0;
};

std::vector<double> sample_uniform(const SearchSpace& space, std::uint64_t seed);

// Single objective (objectives[0], minimised).
std::vector<double> tpe_suggest(const std::vector<Trial>& history, const SearchSpace& space, const TpeConfig& cfg,
                                std::uint64_t seed);

// Bi-objective; the good set fills nondomination ranks in order up to
// ceil(gamma·n), truncating the last rank by crowding distance.
std::vector<double> motpe_suggest(const std::vector<Trial>& history, const SearchSpace& space, const TpeConfig& cfg,
                                  std::uint64_t seed);

// Indices of the trials forming the good set of a bi-objective history.
std::vector<std::size_t> motpe_good_set(const std::vector<Trial>& history, const TpeConfig& cfg);

// Nondomination rank of every point (0 = Pareto front), minimisation.
std::vector<int> nondomination_ranks(const std::vector<std::array<double, 2>>& points);

// Indices of nondominated points in input order, O(n log n).
std::vector<std::size_t> pareto_front_indices(const std::vector<std::array<double, 2>>& points);

std::vector<Trial> pareto_front(const std::vector<Trial>& trials);

inline constexpr double kNLinCap = 12000.0;
inline constexpr double kLossBand = 0.0005;

// Feasible n̄_lin < cap, loss ≤ min + band·|min|, then minimal n̄_lin (lower
// trial_id on ties). Throws NoFeasible.
Trial stage2_select(const std::vector<Trial>& front, double cap = kNLinCap, double band = kLossBand);

enum class LossKind { SyncSparse, DiscreteCycle };

struct LearnConfig {
  int n_learn = 15;
  std::array<int, 3> trials_per_stage{200, 200, 100};
  std::uint64_t seed = 0;
  double n_lin_cap = kNLinCap;
  double loss_band = kLossBand;
  LossKind loss_kind = LossKind::SyncSparse;
  TpeConfig tpe;
  GmConfig gm{2, 100, 0, 0.1};
  int quad_neighbors = kDefaultQuadNeighbors;
  int workers = 1;
};

struct TrialRecord {
  int trial = 0;
  int stage = 0;
  std::vector<std::string> names;
  std::vector<double> params;
  std::vector<double> objectives;
};

struct StageSummary {
  int stage = 0;
  std::vector<double> best_so_far;  // first objective
  Trial chosen;
};

struct LearnResult {
  SharedCovariances sigmas;
  SparsityParams sparsity;
  std::vector<TrialRecord> log;
  std::array<StageSummary, 3> stages;
  // Mean allowed entries per instance under the chosen sparsity.
  double n_lin = 0.0;
};

SearchSpace stage_space(int stage);

// Called after every evaluated trial.
using TrialObserver = std::function<void(const TrialRecord&)>;

// Three-stage learning on the first n_learn worms. Throws StageFailed.
LearnResult learn_parameters(const std::vector<Worm>& worms, const LearnConfig& cfg,
                             const TrialObserver& observer = {});

}  // namespace cellmatch
