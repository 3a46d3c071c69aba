#pragma once

#include "cellmatch/costs.hpp"
#include "cellmatch/gm.hpp"
#include "cellmatch/mgm.hpp"

#include <cstdint>
#include <vector>

namespace cellmatch {

enum class PairSolver { Lap, Gm };

struct PairwiseConfig {
  CostParams params;
  PairSolver solver = PairSolver::Lap;
  GmConfig gm;
  // Mixed with the worm indices into every pair's GM seed.
  std::uint64_t seed = 0;
  int workers = 1;
};

struct PairwiseResult {
  MultiMatching mm;
  AllowedMasks masks;
  // Mean number of allowed linear entries per instance.
  double mean_allowed = 0.0;
};

// Solves every pair (a, b), a < b, with worm a on the left.
PairwiseResult solve_all_pairs(const std::vector<Worm>& worms, const PairwiseConfig& cfg);

// Seed of the GM solve for worms (a, b).
std::uint64_t pair_seed(std::uint64_t seed, int a, int b);

}  // namespace cellmatch
