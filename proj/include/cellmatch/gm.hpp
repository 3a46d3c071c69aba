#pragma once

#include "cellmatch/costs.hpp"

#include <cstdint>

namespace cellmatch {

struct GmConfig {
  int restarts = 5;
  int max_sweeps = 100;
  std::uint64_t seed = 0;
  // Fraction of the initial pairs dropped at the start of each extra restart.
  double perturb_fraction = 0.1;
};

struct GmSolution {
  Matching matching;
  double objective = 0.0;
  // Local-search sweeps summed over restarts.
  int iterations = 0;
  int restarts_used = 0;
  // Instrumentation: quadratic cost evaluations performed.
  std::uint64_t quad_evaluations = 0;
  // Sweeps performed by the winning restart.
  int best_restart_sweeps = 0;
};

// Σ C_is + Σ_{i<j} c_{is,jt} over the pairs of m. Throws ForbiddenPair.
double gm_objective(const GmInstance& inst, const Matching& m);

// LAP initialisation on the linear part, then best-improvement local search
// (relabel / unassign / steal and pairwise swaps) with multi-start.
GmSolution solve_gm(const GmInstance& inst, const GmConfig& cfg = {});

inline constexpr int kBruteForceLimit = 8;

// Exhaustive enumeration of partial injective maps. Throws TooLarge above
// kBruteForceLimit nodes per side.
GmSolution brute_force_gm(const GmInstance& inst);

}  // namespace cellmatch
