#include "cellmatch/bopt.hpp"

#include "cellmatch/mgm.hpp"
#include "cellmatch/pairwise.hpp"
#include "cellmatch/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace cellmatch {

void validate(const SearchSpace& space) {
  if (space.dims.empty()) throw Error(ErrorKind::EmptySpace, "search space has no dimensions");
  for (const auto& d : space.dims) {
    if (!(d.low < d.high)) throw Error(ErrorKind::InvalidArgument, "dimension '" + d.name + "' needs low < high");
    if (d.log_scale && !(d.low > 0.0))
      throw Error(ErrorKind::InvalidArgument, "log-scale dimension '" + d.name + "' needs low > 0");
  }
}

namespace {

using Rng = std::mt19937_64;

// Bounds of a dimension in the internal (possibly log) coordinate.
std::pair<double, double> internal_bounds(const Dim& d) {
  double lo = d.low, hi = d.high;
  if (d.kind == DimKind::Integer && !d.log_scale) {
    lo -= 0.5;
    hi += 0.5;
  }
  if (d.log_scale) return {std::log(lo), std::log(hi)};
  return {lo, hi};
}

double to_internal(const Dim& d, double v) { return d.log_scale ? std::log(v) : v; }

double to_external(const Dim& d, double u) {
  double v = d.log_scale ? std::exp(u) : u;
  if (d.kind == DimKind::Integer) v = std::round(v);
  return std::clamp(v, d.low, d.high);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

// Univariate truncated-Gaussian mixture on [lo, hi].
class Parzen {
 public:
  Parzen(const std::vector<double>& obs, double lo, double hi, double prior_weight) : lo_(lo), hi_(hi) {
    const double range = hi - lo;
    const double n = static_cast<double>(obs.size());
    double sd = range;
    if (obs.size() >= 2) {
      const double mean = std::accumulate(obs.begin(), obs.end(), 0.0) / n;
      double ss = 0.0;
      for (double x : obs) ss += (x - mean) * (x - mean);
      sd = std::sqrt(ss / (n - 1.0));
    }
    const double scott = 1.06 * sd * std::pow(std::max(n, 1.0), -0.2);
    const double bw = std::clamp(scott, range / std::min(100.0, 1.0 + n), range);
    for (double x : obs) add(x, bw, 1.0);
    add(0.5 * (lo + hi), range, prior_weight);
    double total = std::accumulate(w_.begin(), w_.end(), 0.0);
    for (double& w : w_) w /= total;
  }

  double log_pdf(double x) const {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(mu_.size());
    for (std::size_t k = 0; k < mu_.size(); ++k) {
      const double z = (x - mu_[k]) / sigma_[k];
      terms[k] = std::log(w_[k]) - 0.5 * z * z - kLogSqrt2Pi - std::log(sigma_[k]) - std::log(mass_[k]);
      best = std::max(best, terms[k]);
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - best);
    return best + std::log(s);
  }

  double sample(Rng& rng) const {
    std::discrete_distribution<std::size_t> pick(w_.begin(), w_.end());
    const std::size_t k = pick(rng);
    std::normal_distribution<double> g(mu_[k], sigma_[k]);
    for (int tries = 0; tries < 100; ++tries) {
      const double x = g(rng);
      if (x >= lo_ && x <= hi_) return x;
    }
    return std::clamp(mu_[k], lo_, hi_);
  }

 private:
  void add(double mu, double sigma, double w) {
    mu_.push_back(mu);
    sigma_.push_back(sigma);
    w_.push_back(w);
    mass_.push_back(std::max(normal_cdf((hi_ - mu) / sigma) - normal_cdf((lo_ - mu) / sigma), 1e-300));
  }

  double lo_, hi_;
  std::vector<double> mu_, sigma_, w_, mass_;
};

std::vector<double> density_ratio_suggest(const std::vector<Trial>& history, const std::vector<std::size_t>& good,
                                          const SearchSpace& space, const TpeConfig& cfg, Rng& rng) {
  std::vector<char> is_good(history.size(), 0);
  for (std::size_t g : good) is_good[g] = 1;
  std::vector<Parzen> lg, lb;
  for (std::size_t d = 0; d < space.dims.size(); ++d) {
    const auto [lo, hi] = internal_bounds(space.dims[d]);
    std::vector<double> og, ob;
    for (std::size_t t = 0; t < history.size(); ++t)
      (is_good[t] ? og : ob).push_back(to_internal(space.dims[d], history[t].params[d]));
    lg.emplace_back(og, lo, hi, cfg.prior_weight);
    lb.emplace_back(ob, lo, hi, cfg.prior_weight);
  }
  std::vector<double> best_x;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < std::max(1, cfg.n_candidates); ++c) {
    std::vector<double> x(space.dims.size());
    double score = 0.0;
    for (std::size_t d = 0; d < space.dims.size(); ++d) {
      x[d] = lg[d].sample(rng);
      score += lg[d].log_pdf(x[d]) - lb[d].log_pdf(x[d]);
    }
    if (score > best_score) {
      best_score = score;
      best_x = x;
    }
  }
  std::vector<double> out(space.dims.size());
  for (std::size_t d = 0; d < space.dims.size(); ++d) out[d] = to_external(space.dims[d], best_x[d]);
  return out;
}

std::size_t good_count(std::size_t n, double gamma) {
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(n))), 1, n);
}

}  // namespace

std::vector<double> sample_uniform(const SearchSpace& space, std::uint64_t seed) {
  validate(space);
  Rng rng(seed);
  std::vector<double> out;
  for (const auto& d : space.dims) {
    const auto [lo, hi] = internal_bounds(d);
    out.push_back(to_external(d, std::uniform_real_distribution<double>(lo, hi)(rng)));
  }
  return out;
}

std::vector<double> tpe_suggest(const std::vector<Trial>& history, const SearchSpace& space, const TpeConfig& cfg,
                                std::uint64_t seed) {
  validate(space);
  if (history.size() < static_cast<std::size_t>(std::max(1, cfg.n_startup))) return sample_uniform(space, seed);
  std::vector<std::size_t> order(history.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double fa = history[a].objectives.at(0), fb = history[b].objectives.at(0);
    return fa != fb ? fa < fb : history[a].trial_id < history[b].trial_id;
  });
  order.resize(good_count(history.size(), cfg.gamma));
  Rng rng(seed);
  return density_ratio_suggest(history, order, space, cfg, rng);
}

std::vector<int> nondomination_ranks(const std::vector<std::array<double, 2>>& p) {
  const std::size_t n = p.size();
  auto dominates = [&](std::size_t a, std::size_t b) {
    return p[a][0] <= p[b][0] && p[a][1] <= p[b][1] && (p[a][0] < p[b][0] || p[a][1] < p[b][1]);
  };
  std::vector<std::vector<std::size_t>> dominated(n);
  std::vector<int> count(n, 0), rank(n, 0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (a != b && dominates(a, b)) {
        dominated[a].push_back(b);
        ++count[b];
      }
  std::vector<std::size_t> front;
  for (std::size_t a = 0; a < n; ++a)
    if (count[a] == 0) front.push_back(a);
  int r = 0;
  while (!front.empty()) {
    std::vector<std::size_t> next;
    for (std::size_t a : front) {
      rank[a] = r;
      for (std::size_t b : dominated[a])
        if (--count[b] == 0) next.push_back(b);
    }
    front = std::move(next);
    ++r;
  }
  return rank;
}

std::vector<std::size_t> motpe_good_set(const std::vector<Trial>& history, const TpeConfig& cfg) {
  std::vector<std::array<double, 2>> pts;
  for (const auto& t : history) {
    if (t.objectives.size() != 2) throw Error(ErrorKind::InvalidArgument, "bi-objective trials expected");
    pts.push_back({t.objectives[0], t.objectives[1]});
  }
  const std::vector<int> rank = nondomination_ranks(pts);
  const std::size_t cap = good_count(history.size(), cfg.gamma);
  const int max_rank = rank.empty() ? -1 : *std::max_element(rank.begin(), rank.end());
  std::vector<std::size_t> good;
  for (int r = 0; r <= max_rank && good.size() < cap; ++r) {
    std::vector<std::size_t> level;
    for (std::size_t t = 0; t < history.size(); ++t)
      if (rank[t] == r) level.push_back(t);
    if (good.size() + level.size() <= cap) {
      good.insert(good.end(), level.begin(), level.end());
      continue;
    }
    // Crowding distance decides which members of the last rank enter.
    std::vector<double> crowd(history.size(), 0.0);
    for (int m = 0; m < 2; ++m) {
      std::vector<std::size_t> s = level;
      std::sort(s.begin(), s.end(), [&](std::size_t a, std::size_t b) {
        return pts[a][m] != pts[b][m] ? pts[a][m] < pts[b][m] : history[a].trial_id < history[b].trial_id;
      });
      const double span = pts[s.back()][m] - pts[s.front()][m];
      crowd[s.front()] = crowd[s.back()] = std::numeric_limits<double>::infinity();
      if (span > 0.0)
        for (std::size_t k = 1; k + 1 < s.size(); ++k) crowd[s[k]] += (pts[s[k + 1]][m] - pts[s[k - 1]][m]) / span;
    }
    std::sort(level.begin(), level.end(), [&](std::size_t a, std::size_t b) {
      return crowd[a] != crowd[b] ? crowd[a] > crowd[b] : history[a].trial_id < history[b].trial_id;
    });
    level.resize(cap - good.size());
    good.insert(good.end(), level.begin(), level.end());
  }
  std::sort(good.begin(), good.end());
  return good;
}

std::vector<double> motpe_suggest(const std::vector<Trial>& history, const SearchSpace& space, const TpeConfig& cfg,
                                  std::uint64_t seed) {
  validate(space);
  if (history.size() < static_cast<std::size_t>(std::max(1, cfg.n_startup))) return sample_uniform(space, seed);
  const auto good = motpe_good_set(history, cfg);
  Rng rng(seed);
  return density_ratio_suggest(history, good, space, cfg, rng);
}

std::vector<std::size_t> pareto_front_indices(const std::vector<std::array<double, 2>>& p) {
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (p[a][0] != p[b][0]) return p[a][0] < p[b][0];
    if (p[a][1] != p[b][1]) return p[a][1] < p[b][1];
    return a < b;
  });
  // A point survives iff it has the lowest f2 among equal f1 and that f2 is
  // strictly below every point with smaller f1.
  std::vector<std::size_t> out;
  double best_prior = std::numeric_limits<double>::infinity();
  std::size_t k = 0;
  while (k < order.size()) {
    std::size_t end = k;
    while (end < order.size() && p[order[end]][0] == p[order[k]][0]) ++end;
    const double group_min = p[order[k]][1];
    if (group_min < best_prior)
      for (std::size_t q = k; q < end && p[order[q]][1] == group_min; ++q) out.push_back(order[q]);
    best_prior = std::min(best_prior, group_min);
    k = end;
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Trial> pareto_front(const std::vector<Trial>& trials) {
  std::vector<std::array<double, 2>> pts;
  for (const auto& t : trials) {
    if (t.objectives.size() != 2) throw Error(ErrorKind::InvalidArgument, "bi-objective trials expected");
    pts.push_back({t.objectives[0], t.objectives[1]});
  }
  std::vector<Trial> out;
  for (std::size_t i : pareto_front_indices(pts)) out.push_back(trials[i]);
  return out;
}

Trial stage2_select(const std::vector<Trial>& front, double cap, double band) {
  std::vector<const Trial*> feasible;
  for (const auto& t : front)
    if (t.objectives.at(1) < cap) feasible.push_back(&t);
  if (feasible.empty()) throw Error(ErrorKind::NoFeasible, "no trial with n_lin below the cap");
  double min_loss = std::numeric_limits<double>::infinity();
  for (const Trial* t : feasible) min_loss = std::min(min_loss, t->objectives[0]);
  const double threshold = min_loss + band * std::abs(min_loss);
  const Trial* best = nullptr;
  for (const Trial* t : feasible) {
    if (t->objectives[0] > threshold) continue;
    if (!best || t->objectives[1] < best->objectives[1] ||
        (t->objectives[1] == best->objectives[1] && t->trial_id < best->trial_id))
      best = t;
  }
  return *best;
}

SearchSpace stage_space(int stage) {
  auto sigma_dims = [](const char* prefix) {
    std::vector<Dim> dims;
    for (const char* axis : {"x", "y", "z"})
      dims.push_back({std::string(prefix) + "_" + axis, DimKind::Continuous, 1.0, 200.0, true});
    return dims;
  };
  SearchSpace s;
  switch (stage) {
    case 1: {
      s.dims = sigma_dims("sigma_cen");
      const auto rad = sigma_dims("sigma_rad");
      s.dims.insert(s.dims.end(), rad.begin(), rad.end());
      break;
    }
    case 2:
      s.dims = {{"k_min", DimKind::Integer, 1.0, 30.0, false},
                {"tau_cen", DimKind::Continuous, 0.01, 10.0, true},
                {"tau_rad", DimKind::Continuous, 0.01, 10.0, true}};
      break;
    case 3:
      s.dims = sigma_dims("sigma_off");
      break;
    default:
      throw Error(ErrorKind::InvalidArgument, "stages are 1, 2, 3");
  }
  return s;
}

namespace {

double evaluate_loss(const PairwiseResult& r, LossKind kind) {
  if (kind == LossKind::DiscreteCycle) return static_cast<double>(discrete_cycle_loss(r.mm).inconsistent_triples);
  const SyncResult sync = synchronize(r.mm, SyncMode::Sparse, &r.masks);
  return synchronization_loss(r.mm, sync.consistent);
}

struct StageRunner {
  const std::vector<Worm>& worms;
  const LearnConfig& cfg;
  const TrialObserver& observer;
  LearnResult& result;
  int next_trial = 0;

  template <class Eval>
  std::vector<Trial> run(int stage, bool bi_objective, Eval&& eval) {
    const SearchSpace space = stage_space(stage);
    std::vector<Trial> history;
    StageSummary& summary = result.stages[static_cast<std::size_t>(stage - 1)];
    summary.stage = stage;
    const int n_trials = std::max(1, cfg.trials_per_stage[static_cast<std::size_t>(stage - 1)]);
    for (int k = 0; k < n_trials; ++k) {
      const std::uint64_t seed = derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(k));
      Trial t;
      t.trial_id = k;
      t.params = bi_objective ? motpe_suggest(history, space, cfg.tpe, seed) : tpe_suggest(history, space, cfg.tpe, seed);
      t.objectives = eval(t.params);
      history.push_back(t);
      const double best = summary.best_so_far.empty() ? t.objectives[0]
                                                      : std::min(summary.best_so_far.back(), t.objectives[0]);
      summary.best_so_far.push_back(best);

      TrialRecord rec;
      rec.trial = next_trial++;
      rec.stage = stage;
      for (const auto& d : space.dims) rec.names.push_back(d.name);
      rec.params = t.params;
      rec.objectives = t.objectives;
      if (observer) observer(rec);
      result.log.push_back(std::move(rec));
    }
    return history;
  }
};

const Trial& best_single(const std::vector<Trial>& h) {
  const Trial* best = &h.front();
  for (const auto& t : h)
    if (t.objectives[0] < best->objectives[0]) best = &t;
  return *best;
}

}  // namespace

LearnResult learn_parameters(const std::vector<Worm>& worms, const LearnConfig& cfg, const TrialObserver& observer) {
  if (cfg.n_learn < 3) throw Error(ErrorKind::InvalidArgument, "n_learn must be >= 3");
  if (static_cast<int>(worms.size()) < cfg.n_learn)
    throw Error(ErrorKind::InvalidArgument, "need " + std::to_string(cfg.n_learn) + " worms, got " +
                                                std::to_string(worms.size()));
  std::vector<std::size_t> order(worms.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return worms[a].worm_id < worms[b].worm_id; });
  std::vector<Worm> subset;
  for (int k = 0; k < cfg.n_learn; ++k) subset.push_back(worms[order[static_cast<std::size_t>(k)]]);
  int max_size = 1;
  for (const auto& w : subset) max_size = std::max(max_size, static_cast<int>(w.size()));

  LearnResult result;
  StageRunner runner{subset, cfg, observer, result};
  PairwiseConfig pc;
  pc.params.c0 = kC0Learning;
  pc.params.weights = {1.0, 1.0, 1.0};
  pc.params.quad_neighbors = cfg.quad_neighbors;
  pc.seed = cfg.seed;
  pc.workers = cfg.workers;
  pc.gm = cfg.gm;

  auto stage_guard = [](int stage, auto&& body) {
    try {
      body();
    } catch (const Error& e) {
      throw Error(ErrorKind::StageFailed, "stage " + std::to_string(stage) + ": " + e.what());
    }
  };

  stage_guard(1, [&] {
    pc.solver = PairSolver::Lap;
    pc.params.sparsity = {max_size, kInf, kInf};
    const auto h = runner.run(1, false, [&](const std::vector<double>& x) {
      pc.params.sigmas.cen = Vec3(x[0], x[1], x[2]);
      pc.params.sigmas.rad = Vec3(x[3], x[4], x[5]);
      return std::vector<double>{evaluate_loss(solve_all_pairs(subset, pc), cfg.loss_kind)};
    });
    const Trial& best = best_single(h);
    result.stages[0].chosen = best;
    result.sigmas.cen = Vec3(best.params[0], best.params[1], best.params[2]);
    result.sigmas.rad = Vec3(best.params[3], best.params[4], best.params[5]);
    pc.params.sigmas = result.sigmas;
  });

  stage_guard(2, [&] {
    pc.solver = PairSolver::Lap;
    const auto h = runner.run(2, true, [&](const std::vector<double>& x) {
      pc.params.sparsity = {static_cast<int>(x[0]), x[1], x[2]};
      const PairwiseResult r = solve_all_pairs(subset, pc);
      return std::vector<double>{evaluate_loss(r, cfg.loss_kind), r.mean_allowed};
    });
    const Trial chosen = stage2_select(pareto_front(h), cfg.n_lin_cap, cfg.loss_band);
    result.stages[1].chosen = chosen;
    result.sparsity = {static_cast<int>(chosen.params[0]), chosen.params[1], chosen.params[2]};
    result.n_lin = chosen.objectives[1];
    pc.params.sparsity = result.sparsity;
  });

  stage_guard(3, [&] {
    pc.solver = PairSolver::Gm;
    const auto h = runner.run(3, false, [&](const std::vector<double>& x) {
      pc.params.sigmas.off = Vec3(x[0], x[1], x[2]);
      return std::vector<double>{evaluate_loss(solve_all_pairs(subset, pc), cfg.loss_kind)};
    });
    const Trial& best = best_single(h);
    result.stages[2].chosen = best;
    result.sigmas.off = Vec3(best.params[0], best.params[1], best.params[2]);
  });
  return result;
}

}  // namespace cellmatch
