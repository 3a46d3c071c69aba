#include "cellmatch/gm.hpp"

#include "cellmatch/assignment.hpp"

#include <algorithm>
#include <random>

namespace cellmatch {

double gm_objective(const GmInstance& inst, const Matching& m) {
  std::vector<int> assign(static_cast<std::size_t>(inst.n_left), -1);
  double obj = 0.0;
  for (const auto& [i, s] : m.pairs) {
    const double c = inst.linear(i, s);
    if (!(c < kInf))
      throw Error(ErrorKind::ForbiddenPair,
                  "pair (" + std::to_string(i) + "," + std::to_string(s) + ") is not allowed");
    obj += c;
    assign[static_cast<std::size_t>(i)] = s;
  }
  if (!inst.quadratic) return obj;
  for (int i = 0; i < inst.n_left; ++i) {
    const int s = assign[static_cast<std::size_t>(i)];
    if (s < 0) continue;
    for (int j : inst.quadratic->neighbors(i)) {
      if (j <= i) continue;
      const int t = assign[static_cast<std::size_t>(j)];
      if (t >= 0) obj += inst.quadratic->cost(i, s, j, t);
    }
  }
  return obj;
}

namespace {

constexpr double kImprovementEps = 1e-9;

// Local-search state with cached incident quadratic sums:
// q[i][k] = Σ_{j ∈ N(i), assigned, m(j) ≠ s_k} c(i, s_k, j, m(j)).
class LocalSearch {
 public:
  explicit LocalSearch(const GmInstance& inst) : inst_(inst) {
    assign_.assign(static_cast<std::size_t>(inst.n_left), -1);
    pos_.assign(static_cast<std::size_t>(inst.n_left), -1);
    owner_.assign(static_cast<std::size_t>(inst.n_right), -1);
    q_.resize(static_cast<std::size_t>(inst.n_left));
    for (int i = 0; i < inst.n_left; ++i) q_[static_cast<std::size_t>(i)].assign(row(i).size(), 0.0);
  }

  void load(const Matching& m) {
    for (const auto& [i, s] : m.pairs) set_raw(i, s);
    if (!inst_.quadratic) return;
    for (int j = 0; j < inst_.n_left; ++j)
      if (assign_[static_cast<std::size_t>(j)] >= 0) push_terms(j, assign_[static_cast<std::size_t>(j)], +1.0);
  }

  // Runs sweeps until one makes no improvement or the cap is hit; returns the
  // number of sweeps.
  int run(int max_sweeps) {
    int sweeps = 0;
    while (sweeps < max_sweeps) {
      ++sweeps;
      bool improved = false;
      for (int i = 0; i < inst_.n_left; ++i) improved |= improve_node(i);
      if (!improved) break;
    }
    return sweeps;
  }

  Matching matching() const {
    Matching m;
    m.n_left = inst_.n_left;
    m.n_right = inst_.n_right;
    for (int i = 0; i < inst_.n_left; ++i) {
      const int p = pos_[static_cast<std::size_t>(i)];
      if (p < 0) continue;
      m.pairs.emplace_back(i, assign_[static_cast<std::size_t>(i)]);
      m.pair_costs.push_back(row(i)[static_cast<std::size_t>(p)].cost);
    }
    return m;
  }

  std::uint64_t evaluations() const { return evals_; }

 private:
  const std::vector<Candidate>& row(int i) const { return inst_.allowed[static_cast<std::size_t>(i)]; }

  double quad(int i, int s, int j, int t) {
    ++evals_;
    return inst_.quadratic->cost(i, s, j, t);
  }

  bool coupled(int i, int j) const { return inst_.coupled(i, j); }

  double value(int i, int p) const {
    return row(i)[static_cast<std::size_t>(p)].cost + q_[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)];
  }

  void set_raw(int i, int s) {
    const int old = assign_[static_cast<std::size_t>(i)];
    if (old >= 0) owner_[static_cast<std::size_t>(old)] = -1;
    assign_[static_cast<std::size_t>(i)] = s;
    pos_[static_cast<std::size_t>(i)] = s >= 0 ? inst_.find(i, s) : -1;
    if (s >= 0) owner_[static_cast<std::size_t>(s)] = i;
  }

  // Adds (sign=+1) or removes (sign=-1) the terms of j sitting at t from the
  // caches of j's neighbours.
  void push_terms(int j, int t, double sign) {
    for (int i : inst_.quadratic->neighbors(j)) {
      const auto& r = row(i);
      auto& qi = q_[static_cast<std::size_t>(i)];
      for (std::size_t k = 0; k < r.size(); ++k)
        if (r[k].right != t) qi[k] += sign * quad(i, r[k].right, j, t);
    }
  }

  void move(int i, int s) {
    const int old = assign_[static_cast<std::size_t>(i)];
    if (inst_.quadratic && old >= 0) push_terms(i, old, -1.0);
    set_raw(i, s);
    if (inst_.quadratic && s >= 0) push_terms(i, s, +1.0);
  }

  bool improve_node(int i) {
    const int cur = assign_[static_cast<std::size_t>(i)];
    const int cur_pos = pos_[static_cast<std::size_t>(i)];
    const double cur_val = cur_pos >= 0 ? value(i, cur_pos) : 0.0;
    const auto& r = row(i);

    double best = -kImprovementEps;
    enum class Kind { None, Unassign, Relabel, Swap } kind = Kind::None;
    int best_k = -1;

    if (cur >= 0 && -cur_val < best) {
      best = -cur_val;
      kind = Kind::Unassign;
    }
    for (std::size_t k = 0; k < r.size(); ++k) {
      const int s = r[k].right;
      if (s == cur) continue;
      const double new_val = value(i, static_cast<int>(k));
      const int j = owner_[static_cast<std::size_t>(s)];
      double delta;
      if (j < 0) {
        delta = new_val - cur_val;
      } else {
        // Steal s from j, leaving j unassigned.
        const double j_val = value(j, pos_[static_cast<std::size_t>(j)]);
        const double shared = (cur >= 0 && coupled(i, j)) ? quad(i, cur, j, s) : 0.0;
        delta = new_val - cur_val - j_val + shared;
      }
      if (delta < best) {
        best = delta;
        kind = Kind::Relabel;
        best_k = static_cast<int>(k);
      }
      if (j >= 0 && cur >= 0) {
        // Swap right nodes of i and j.
        const int pj = inst_.find(j, cur);
        if (pj >= 0) {
          const bool c = coupled(i, j);
          const double delta_swap = new_val + value(j, pj) - cur_val - value(j, pos_[static_cast<std::size_t>(j)]) +
                                    (c ? quad(i, s, j, cur) + quad(i, cur, j, s) : 0.0);
          if (delta_swap < best) {
            best = delta_swap;
            kind = Kind::Swap;
            best_k = static_cast<int>(k);
          }
        }
      }
    }

    switch (kind) {
      case Kind::None:
        return false;
      case Kind::Unassign:
        move(i, -1);
        return true;
      case Kind::Relabel: {
        const int s = r[static_cast<std::size_t>(best_k)].right;
        const int j = owner_[static_cast<std::size_t>(s)];
        if (j >= 0) move(j, -1);
        move(i, s);
        return true;
      }
      case Kind::Swap: {
        const int s = r[static_cast<std::size_t>(best_k)].right;
        const int j = owner_[static_cast<std::size_t>(s)];
        move(j, -1);
        move(i, s);
        move(j, cur);
        return true;
      }
    }
    return false;
  }

  const GmInstance& inst_;
  std::vector<int> assign_, pos_, owner_;
  std::vector<std::vector<double>> q_;
  std::uint64_t evals_ = 0;
};

}  // namespace

GmSolution solve_gm(const GmInstance& inst, const GmConfig& cfg) {
  const Matching init = lap_from_instance(inst).matching;
  GmSolution best;
  best.objective = kInf;
  const int restarts = std::max(1, cfg.restarts);
  for (int r = 0; r < restarts; ++r) {
    Matching start = init;
    if (r > 0 && !start.pairs.empty()) {
      std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(r));
      const std::size_t drop = std::max<std::size_t>(
          1, static_cast<std::size_t>(cfg.perturb_fraction * static_cast<double>(start.pairs.size())));
      std::vector<std::size_t> idx(start.pairs.size());
      for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
      std::shuffle(idx.begin(), idx.end(), rng);
      std::vector<char> dropped(start.pairs.size(), 0);
      for (std::size_t k = 0; k < std::min(drop, idx.size()); ++k) dropped[idx[k]] = 1;
      Matching kept{start.n_left, start.n_right, {}, {}};
      for (std::size_t k = 0; k < start.pairs.size(); ++k)
        if (!dropped[k]) kept.pairs.push_back(start.pairs[k]);
      start = std::move(kept);
    }
    LocalSearch ls(inst);
    ls.load(start);
    const int sweeps = ls.run(cfg.max_sweeps);
    Matching m = ls.matching();
    const double obj = gm_objective(inst, m);
    best.iterations += sweeps;
    best.quad_evaluations += ls.evaluations();
    ++best.restarts_used;
    if (obj < best.objective) {
      best.objective = obj;
      best.matching = std::move(m);
      best.best_restart_sweeps = sweeps;
    }
  }
  return best;
}

namespace {

struct BruteForce {
  const GmInstance& inst;
  std::vector<int> assign;
  std::vector<char> used;
  std::vector<int> best_assign;
  double best = 0.0;

  void search(int i, double acc) {
    if (i == inst.n_left) {
      if (acc < best) {
        best = acc;
        best_assign = assign;
      }
      return;
    }
    assign[static_cast<std::size_t>(i)] = -1;
    search(i + 1, acc);
    for (const auto& cand : inst.allowed[static_cast<std::size_t>(i)]) {
      const int s = cand.right;
      if (used[static_cast<std::size_t>(s)]) continue;
      double add = cand.cost;
      if (inst.quadratic)
        for (int j = 0; j < i; ++j) {
          const int t = assign[static_cast<std::size_t>(j)];
          if (t >= 0 && inst.coupled(i, j)) add += inst.quadratic->cost(i, s, j, t);
        }
      used[static_cast<std::size_t>(s)] = 1;
      assign[static_cast<std::size_t>(i)] = s;
      search(i + 1, acc + add);
      assign[static_cast<std::size_t>(i)] = -1;
      used[static_cast<std::size_t>(s)] = 0;
    }
  }
};

}  // namespace

GmSolution brute_force_gm(const GmInstance& inst) {
  if (inst.n_left > kBruteForceLimit || inst.n_right > kBruteForceLimit)
    throw Error(ErrorKind::TooLarge, "brute force limited to " + std::to_string(kBruteForceLimit) + " nodes per side");
  BruteForce bf{inst,
                std::vector<int>(static_cast<std::size_t>(inst.n_left), -1),
                std::vector<char>(static_cast<std::size_t>(inst.n_right), 0),
                std::vector<int>(static_cast<std::size_t>(inst.n_left), -1),
                0.0};
  bf.search(0, 0.0);
  GmSolution sol;
  sol.matching.n_left = inst.n_left;
  sol.matching.n_right = inst.n_right;
  for (int i = 0; i < inst.n_left; ++i) {
    const int s = bf.best_assign[static_cast<std::size_t>(i)];
    if (s >= 0) {
      sol.matching.pairs.emplace_back(i, s);
      sol.matching.pair_costs.push_back(inst.linear(i, s));
    }
  }
  sol.objective = gm_objective(inst, sol.matching);
  sol.restarts_used = 1;
  return sol;
}

}  // namespace cellmatch
