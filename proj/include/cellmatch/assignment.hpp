#pragma once

#include "cellmatch/common.hpp"
#include "cellmatch/costs.hpp"

namespace cellmatch {

// Rectangular cost table; +∞ marks a forbidden pair.
using CostTable = Eigen::MatrixXd;

struct LapResult {
  Matching matching;
  double objective = 0.0;
};

// Exact minimiser of Σ costs(i,s)·x_is under "at most one" constraints on both
// sides. Rows may stay unassigned at zero cost, so pairs with positive cost are
// never chosen.
LapResult solve_lap(const CostTable& costs);

// solve_lap on the linear part (C_is) of an instance; quadratic terms are
// ignored.
LapResult lap_from_instance(const GmInstance& inst);

}  // namespace cellmatch
