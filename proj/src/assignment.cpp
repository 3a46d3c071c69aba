#include "cellmatch/assignment.hpp"

#include <cmath>
#include <vector>

namespace cellmatch {

namespace {

// Shortest augmenting path with dual potentials (Jonker–Volgenant family) on a
// table with rows <= cols where every row has some finite entry. Returns the
// column of each row.
using RowTable = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<int> augmenting_path_lap(const RowTable& c) {
  const int nr = static_cast<int>(c.rows());
  const int nc = static_cast<int>(c.cols());
  std::vector<double> u(static_cast<std::size_t>(nr), 0.0), v(static_cast<std::size_t>(nc), 0.0);
  std::vector<int> col4row(static_cast<std::size_t>(nr), -1), row4col(static_cast<std::size_t>(nc), -1);
  std::vector<double> shortest(static_cast<std::size_t>(nc));
  std::vector<int> path(static_cast<std::size_t>(nc));
  std::vector<char> in_sr(static_cast<std::size_t>(nr)), in_sc(static_cast<std::size_t>(nc));
  std::vector<int> sr_list;

  for (int cur = 0; cur < nr; ++cur) {
    std::fill(shortest.begin(), shortest.end(), kInf);
    std::fill(path.begin(), path.end(), -1);
    std::fill(in_sr.begin(), in_sr.end(), 0);
    std::fill(in_sc.begin(), in_sc.end(), 0);
    sr_list.clear();

    double min_val = 0.0;
    int i = cur;
    int sink = -1;
    while (sink < 0) {
      in_sr[static_cast<std::size_t>(i)] = 1;
      sr_list.push_back(i);
      double lowest = kInf;
      int best = -1;
      for (int j = 0; j < nc; ++j) {
        if (in_sc[static_cast<std::size_t>(j)]) continue;
        const double cij = c(i, j);
        if (cij < kInf) {
          const double r = min_val + cij - u[static_cast<std::size_t>(i)] - v[static_cast<std::size_t>(j)];
          if (r < shortest[static_cast<std::size_t>(j)]) {
            path[static_cast<std::size_t>(j)] = i;
            shortest[static_cast<std::size_t>(j)] = r;
          }
        }
        const double sj = shortest[static_cast<std::size_t>(j)];
        if (sj < lowest || (sj == lowest && sj < kInf && row4col[static_cast<std::size_t>(j)] < 0 &&
                            (best < 0 || row4col[static_cast<std::size_t>(best)] >= 0))) {
          lowest = sj;
          best = j;
        }
      }
      if (best < 0 || lowest == kInf) throw Error(ErrorKind::InvalidArgument, "infeasible assignment table");
      min_val = lowest;
      in_sc[static_cast<std::size_t>(best)] = 1;
      if (row4col[static_cast<std::size_t>(best)] < 0)
        sink = best;
      else
        i = row4col[static_cast<std::size_t>(best)];
    }

    u[static_cast<std::size_t>(cur)] += min_val;
    for (int r : sr_list)
      if (r != cur)
        u[static_cast<std::size_t>(r)] +=
            min_val - shortest[static_cast<std::size_t>(col4row[static_cast<std::size_t>(r)])];
    for (int j = 0; j < nc; ++j)
      if (in_sc[static_cast<std::size_t>(j)]) v[static_cast<std::size_t>(j)] -= min_val - shortest[static_cast<std::size_t>(j)];

    int j = sink;
    while (true) {
      const int r = path[static_cast<std::size_t>(j)];
      row4col[static_cast<std::size_t>(j)] = r;
      std::swap(col4row[static_cast<std::size_t>(r)], j);
      if (r == cur) break;
    }
  }
  return col4row;
}

}  // namespace

LapResult solve_lap(const CostTable& costs) {
  const int nl = static_cast<int>(costs.rows());
  const int nr = static_cast<int>(costs.cols());
  LapResult out;
  out.matching.n_left = nl;
  out.matching.n_right = nr;
  if (nl == 0 || nr == 0) return out;

  // Each row gets a private zero-cost "unassigned" column; the dummies are
  // interchangeable so one shared block of nl columns suffices.
  RowTable ext(nl, nr + nl);
  ext.leftCols(nr) = costs;
  ext.rightCols(nl).setZero();
  for (int i = 0; i < nl; ++i)
    for (int s = 0; s < nr; ++s)
      if (std::isnan(ext(i, s))) ext(i, s) = kInf;

  const std::vector<int> col4row = augmenting_path_lap(ext);
  for (int i = 0; i < nl; ++i) {
    const int s = col4row[static_cast<std::size_t>(i)];
    if (s < nr && costs(i, s) < kInf) {
      out.matching.pairs.emplace_back(i, s);
      out.matching.pair_costs.push_back(costs(i, s));
      out.objective += costs(i, s);
    }
  }
  return out;
}

LapResult lap_from_instance(const GmInstance& inst) {
  CostTable table = CostTable::Constant(inst.n_left, inst.n_right, kInf);
  for (int i = 0; i < inst.n_left; ++i)
    for (const auto& cand : inst.allowed[static_cast<std::size_t>(i)]) table(i, cand.right) = cand.cost;
  return solve_lap(table);
}

}  // namespace cellmatch
