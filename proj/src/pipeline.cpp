#include "cellmatch/pipeline.hpp"

#include "cellmatch/assignment.hpp"
#include "cellmatch/pairwise.hpp"
#include "cellmatch/parallel.hpp"
#include "cellmatch/synth.hpp"

#include <algorithm>
#include <cmath>

namespace cellmatch {

namespace {

void report(const Progress& progress, const std::string& msg) {
  if (progress) progress(msg);
}

template <class Body>
auto stage(const std::string& name, Body&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

int max_size(const std::vector<Worm>& worms) {
  int n = 1;
  for (const auto& w : worms) n = std::max(n, static_cast<int>(w.size()));
  return n;
}

bool all_labelled(const std::vector<Worm>& worms) {
  return !worms.empty() &&
         std::all_of(worms.begin(), worms.end(), [](const Worm& w) { return w.has_labels(); });
}

std::vector<Worm> prealign_all(const std::vector<Worm>& worms, int workers) {
  std::vector<Worm> out(worms.size());
  parallel_for(worms.size(), workers, [&](std::size_t k) { out[k] = prealign(worms[k]).aligned; });
  return out;
}

}  // namespace

CostParams unlearned_linear_params(int max_worm_size) {
  CostParams p;
  p.weights = {1.0, 1.0, 0.0};
  p.sparsity = {std::max(1, max_worm_size), kInf, kInf};
  p.c0 = kC0Learning;
  return p;
}

CostParams pairwise_params(const PipelineConfig& cfg, const LearnResult& learned, int max_worm_size) {
  CostParams p;
  p.c0 = kC0Learning;
  p.quad_neighbors = cfg.learn.quad_neighbors;
  switch (cfg.cost_model) {
    case CostModel::Learned:
      p.sigmas = learned.sigmas;
      p.sparsity = learned.sparsity;
      p.weights = {1.0, 1.0, 1.0};
      break;
    case CostModel::LinearOnly:
      p.sigmas = learned.sigmas;
      p.sigmas.off = Vec3::Ones();
      p.sparsity = learned.sparsity;
      p.weights = {1.0, 1.0, 0.0};
      break;
    case CostModel::UnlearnedQuadratic:
      p.sparsity = {std::min(10, max_worm_size), 0.01, 0.01};
      p.weights = {1.0, 1.0, 1.0};
      break;
  }
  return p;
}

Worm realign_to_worm(const Worm& worm, const Worm& reference, const CostParams& params, bool quadratic,
                     int iterations, std::uint64_t seed, bool resolve_pose) {
  InstanceOptions opts;
  opts.quadratic = quadratic;
  GmConfig gm;
  gm.seed = seed;
  const ReferenceMatcher matcher = [&](const Worm& cur) {
    const GmInstance inst = build_pairwise_instance(reference, cur, params, opts);
    return quadratic ? solve_gm(inst, gm).matching : lap_from_instance(inst).matching;
  };
  return realign(worm, reference.centroids(), matcher, iterations, resolve_pose).aligned;
}

Worm realign_to_atlas(const Worm& worm, const Atlas& atlas, const AtlasMatchOptions& opts, int iterations) {
  const ReferenceMatcher matcher = [&](const Worm& cur) { return match_to_atlas(atlas, cur, opts); };
  return realign(worm, atlas.means(), matcher, iterations, true).aligned;
}

namespace {

bool uses_gm(const PipelineConfig& cfg) { return cfg.cost_model != CostModel::LinearOnly; }

// Final pairwise matching, synchronisation, atlas and test matching on worms
// that are already aligned.
void match_and_build(UnsupervisedOutcome& out, const PipelineConfig& cfg, const Progress& progress) {
  PairwiseConfig pc;
  pc.params = out.pair_params;
  pc.params.c0 = cfg.c0_final;
  pc.solver = uses_gm(cfg) ? PairSolver::Gm : PairSolver::Lap;
  pc.gm = cfg.gm;
  pc.seed = derive_seed(cfg.seed, 500, 0);
  pc.workers = cfg.workers;
  const PairwiseResult pairs = stage("pairwise", [&] {
    report(progress, "pairwise matching of " + std::to_string(out.train_aligned.size()) + " worms");
    return solve_all_pairs(out.train_aligned, pc);
  });
  out.input_matches = pairs.mm.total_matches();
  out.sync = stage("synchronize", [&] { return synchronize(pairs.mm, cfg.sync_mode, &pairs.masks); });
  report(progress, "synchronized: retained " + std::to_string(out.sync.retained) + " of " +
                       std::to_string(out.input_matches) + " matches");

  const bool labelled = all_labelled(out.train_aligned);
  if (labelled) {
    out.universe_labels = assign_gt_labels(out.sync.universe, out.train_aligned);
    out.pre_atlas = pre_atlas_accuracy(out.sync.universe, out.universe_labels, out.train_aligned);
  }
  if (cfg.skip_atlas) return;

  const int n = static_cast<int>(out.train_aligned.size());
  const int min_size = cfg.min_clique_size > 0 ? cfg.min_clique_size : std::max(2, n / 5);
  Universe kept;
  for (const auto& c : out.sync.universe.cliques)
    if (static_cast<int>(c.size()) >= min_size) kept.cliques.push_back(c);
  out.atlas = stage("build-atlas", [&] {
    Atlas a = build_unsupervised_atlas(kept, out.train_aligned, out.pair_params.sigmas, min_size);
    if (labelled) a.label_names = assign_gt_labels(kept, out.train_aligned);
    return a;
  });
  report(progress, "atlas with " + std::to_string(out.atlas->entries.size()) + " entries");

  std::vector<Matching> matched(out.test_aligned.size());
  stage("match", [&] {
    parallel_for(out.test_aligned.size(), cfg.workers, [&](std::size_t k) {
      AtlasMatchOptions opts = cfg.atlas_match;
      opts.gm.seed = derive_seed(cfg.seed, 400, k);
      matched[k] = match_to_atlas(*out.atlas, out.test_aligned[k], opts);
    });
    return 0;
  });
  out.test_accuracy.clear();
  std::vector<AccuracyReport> parts;
  for (std::size_t k = 0; k < out.test_aligned.size(); ++k) {
    if (!out.test_aligned[k].has_labels()) continue;
    const AccuracyReport r = atlas_accuracy(matched[k], out.test_aligned[k], out.atlas->label_names);
    out.test_accuracy.push_back({out.test_aligned[k].worm_id, r});
    parts.push_back(r);
  }
  out.atlas_accuracy = combine(parts);
}

}  // namespace

UnsupervisedOutcome run_unsupervised(const std::vector<Worm>& train, const std::vector<Worm>& test,
                                     const PipelineConfig& cfg, const Progress& progress) {
  if (train.size() < 3) throw Error(ErrorKind::InvalidArgument, "need at least 3 training worms");
  if (cfg.realign_iterations < 0) throw Error(ErrorKind::InvalidArgument, "realign_iterations must be >= 0");
  UnsupervisedOutcome out;
  const int workers = cfg.workers;
  std::vector<Worm> train_pre = stage("prealign", [&] { return prealign_all(train, workers); });
  std::vector<Worm> test_pre = stage("prealign", [&] { return prealign_all(test, workers); });

  out.reference = stage("reference", [&] { return select_reference_worm(train_pre, workers).index; });
  const Worm reference = train_pre[static_cast<std::size_t>(out.reference)];
  report(progress, "reference worm " + reference.worm_id);

  const int n_max = std::max(max_size(train_pre), max_size(test_pre));
  auto realign_all = [&](const std::vector<Worm>& worms, const CostParams& params, bool quadratic,
                         std::uint64_t stream, int skip) {
    std::vector<Worm> res(worms.size());
    parallel_for(worms.size(), workers, [&](std::size_t k) {
      if (static_cast<int>(k) == skip) {
        res[k] = worms[k];
        return;
      }
      res[k] = realign_to_worm(worms[k], reference, params, quadratic, cfg.realign_iterations,
                               derive_seed(cfg.seed, stream, k), !quadratic);
    });
    return res;
  };

  const CostParams unlearned = unlearned_linear_params(n_max);
  stage("realign-1", [&] {
    train_pre = realign_all(train_pre, unlearned, false, 300, out.reference);
    test_pre = realign_all(test_pre, unlearned, false, 301, -1);
    return 0;
  });
  report(progress, "first re-alignment done");

  if (cfg.learned) {
    out.learned = *cfg.learned;
  } else if (cfg.cost_model != CostModel::UnlearnedQuadratic) {
    out.learned = stage("learn", [&] {
      LearnConfig lc = cfg.learn;
      lc.workers = workers;
      lc.n_learn = std::min<int>(lc.n_learn, static_cast<int>(train_pre.size()));
      return learn_parameters(train_pre, lc);
    });
    report(progress, "parameters learned");
  }
  out.pair_params = pairwise_params(cfg, out.learned, n_max);

  stage("realign-2", [&] {
    out.train_aligned = realign_all(train_pre, out.pair_params, uses_gm(cfg), 310, out.reference);
    out.test_aligned = realign_all(test_pre, out.pair_params, uses_gm(cfg), 311, -1);
    return 0;
  });
  report(progress, "second re-alignment done");
  match_and_build(out, cfg, progress);
  return out;
}

SupervisedAtlas supervised_atlas(const std::vector<Worm>& prealigned, int workers) {
  if (!all_labelled(prealigned)) throw Error(ErrorKind::MissingLabels, "supervised atlas needs labelled worms");
  SupervisedAtlas out;
  out.base = select_supervised_base_worm(prealigned, workers).index;
  const Worm& base = prealigned[static_cast<std::size_t>(out.base)];
  out.aligned.resize(prealigned.size());
  for (std::size_t k = 0; k < prealigned.size(); ++k)
    out.aligned[k] =
        static_cast<int>(k) == out.base ? base : transform_worm(prealigned[k], label_alignment(prealigned[k], base));
  out.atlas = build_supervised_atlas(out.aligned);
  return out;
}

SupervisedOutcome run_supervised(const std::vector<Worm>& train, const std::vector<Worm>& test,
                                 const PipelineConfig& cfg, const Progress& progress) {
  if (!all_labelled(train)) throw Error(ErrorKind::MissingLabels, "supervised atlas needs labelled training worms");
  SupervisedOutcome out;
  const std::vector<Worm> train_pre = stage("prealign", [&] { return prealign_all(train, cfg.workers); });
  const std::vector<Worm> test_pre = stage("prealign", [&] { return prealign_all(test, cfg.workers); });
  SupervisedAtlas sa = stage("build-atlas", [&] { return supervised_atlas(train_pre, cfg.workers); });
  out.base = sa.base;
  out.atlas = std::move(sa.atlas);
  report(progress, "base worm " + train_pre[static_cast<std::size_t>(out.base)].worm_id);

  out.test_aligned.resize(test_pre.size());
  std::vector<Matching> matched(test_pre.size());
  stage("match", [&] {
    parallel_for(test_pre.size(), cfg.workers, [&](std::size_t k) {
      AtlasMatchOptions opts = cfg.atlas_match;
      opts.gm.seed = derive_seed(cfg.seed, 410, k);
      out.test_aligned[k] = realign_to_atlas(test_pre[k], out.atlas, opts, cfg.realign_iterations);
      matched[k] = match_to_atlas(out.atlas, out.test_aligned[k], opts);
    });
    return 0;
  });
  std::vector<AccuracyReport> parts;
  for (std::size_t k = 0; k < test_pre.size(); ++k) {
    if (!out.test_aligned[k].has_labels()) continue;
    const AccuracyReport r = atlas_accuracy(matched[k], out.test_aligned[k], out.atlas.label_names);
    out.test_accuracy.push_back({out.test_aligned[k].worm_id, r});
    parts.push_back(r);
  }
  out.atlas_accuracy = combine(parts);
  return out;
}

std::vector<SweepPoint> training_size_sweep(const UnsupervisedOutcome& run, const PipelineConfig& cfg,
                                            const std::vector<int>& sizes, const Progress& progress) {
  std::vector<SweepPoint> out;
  for (int n : sizes) {
    const int used = std::min<int>(n, static_cast<int>(run.train_aligned.size()));
    if (used < 3) continue;
    UnsupervisedOutcome sub;
    sub.pair_params = run.pair_params;
    sub.train_aligned.assign(run.train_aligned.begin(), run.train_aligned.begin() + used);
    sub.test_aligned = sub.train_aligned;
    PipelineConfig c = cfg;
    c.skip_atlas = false;
    report(progress, "sweep N=" + std::to_string(used));
    match_and_build(sub, c, {});
    SweepPoint p{used, sub.pre_atlas.accuracy, sub.atlas_accuracy.accuracy, 0.0};
    std::vector<AccuracyReport> parts;
    for (std::size_t k = 0; k < run.test_aligned.size(); ++k) {
      if (!run.test_aligned[k].has_labels()) continue;
      AtlasMatchOptions opts = c.atlas_match;
      opts.gm.seed = derive_seed(c.seed, 400, k);
      parts.push_back(atlas_accuracy(match_to_atlas(*sub.atlas, run.test_aligned[k], opts), run.test_aligned[k],
                                     sub.atlas->label_names));
    }
    p.test_atlas = combine(parts).accuracy;
    out.push_back(p);
  }
  return out;
}

Summary summarize(const std::vector<WormAccuracy>& per_worm) {
  Summary s;
  if (per_worm.empty()) return s;
  for (const auto& w : per_worm) s.mean += w.report.accuracy;
  s.mean /= static_cast<double>(per_worm.size());
  for (const auto& w : per_worm) s.stddev += (w.report.accuracy - s.mean) * (w.report.accuracy - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(per_worm.size()));
  return s;
}

}  // namespace cellmatch
