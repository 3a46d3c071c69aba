// Batch driver: dataset generation, the individual pipeline steps, both
// pipelines and evaluation. Exit codes: 0 success, 1 internal or solver
// failure, 2 usage or configuration error.

#include "cellmatch/assignment.hpp"
#include "cellmatch/io.hpp"
#include "cellmatch/pairwise.hpp"
#include "cellmatch/parallel.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace cellmatch;
using io::Json;

namespace {

struct Common {
  std::uint64_t seed = 0;
  int workers = default_workers();
};

void add_common(CLI::App* app, Common& c, std::uint64_t default_seed) {
  c.seed = default_seed;
  app->add_option("--seed", c.seed, "master seed")->envname("CELLMATCH_SEED")->capture_default_str();
  app->add_option("--workers", c.workers, "worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

void log(const std::string& msg) { std::cerr << msg << "\n"; }

fs::path require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw Error(ErrorKind::Io, "missing directory " + p.string());
  return p;
}

void write_jsonl(const fs::path& path, const std::vector<TrialRecord>& log) {
  std::string text;
  for (const auto& r : log) text += io::to_json(r).dump() + "\n";
  io::write_text(path, text);
}

Json per_worm_json(const std::vector<WormAccuracy>& per_worm) {
  Json out = Json::array();
  for (const auto& w : per_worm) {
    Json j = io::to_json(w.report);
    j["worm_id"] = w.worm_id;
    out.push_back(j);
  }
  return out;
}

Json summary_json(const std::vector<WormAccuracy>& per_worm) {
  const Summary s = summarize(per_worm);
  return Json{{"mean", s.mean}, {"std", s.stddev}, {"n_worms", per_worm.size()}};
}

Json learned_json(const LearnResult& r) {
  Json stages = Json::array();
  for (const auto& st : r.stages) {
    Json params = Json::object();
    const SearchSpace space = stage_space(st.stage);
    for (std::size_t k = 0; k < space.dims.size() && k < st.chosen.params.size(); ++k)
      params[space.dims[k].name] = st.chosen.params[k];
    Json obj = Json::array();
    for (const double o : st.chosen.objectives) obj.push_back(io::number_or_null(o));
    stages.push_back(Json{{"stage", st.stage}, {"chosen_trial", st.chosen.trial_id}, {"params", params}, {"objectives", obj}});
  }
  return Json{{"sigma_cen", io::vec_to_json(r.sigmas.cen)},
              {"sigma_rad", io::vec_to_json(r.sigmas.rad)},
              {"sigma_off", io::vec_to_json(r.sigmas.off)},
              {"k_min", r.sparsity.k_min},
              {"tau_cen", io::number_or_null(r.sparsity.tau_cen)},
              {"tau_rad", io::number_or_null(r.sparsity.tau_rad)},
              {"n_lin", r.n_lin},
              {"stages", stages}};
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  Common common;
  fs::path out;
  fs::path config;
  int labels = 0;
  int train = 20;
  int test = 10;
  bool full_scale = false;
};

int cmd_generate(const GenerateArgs& a) {
  GeneratorConfig cfg = a.full_scale ? GeneratorConfig::full_scale() : GeneratorConfig{};
  if (!a.config.empty()) cfg = io::generator_config_from_json(io::read_json(a.config));
  if (a.labels > 0) cfg.n_labels = a.labels;
  cfg.seed = a.common.seed;
  validate(cfg);
  if (a.train < 1 || a.test < 1) throw Error(ErrorKind::InvalidArgument, "--train and --test must be >= 1");

  const Dataset ds = generate_dataset(cfg, a.train, a.test);
  const Json cfg_json = io::to_json(cfg);
  const Json m = io::meta(cfg.seed, cfg_json);
  io::write_worm_dir(a.out / "train", ds.train, m);
  io::write_worm_dir(a.out / "test", ds.test, m);
  Json model = io::to_json(ds.model);
  model["meta"] = m;
  io::write_json(a.out / "model.json", model);
  Json gen = cfg_json;
  gen["meta"] = m;
  io::write_json(a.out / "generator.json", gen);
  log("wrote " + std::to_string(ds.train.size() + ds.test.size()) + " worms to " + a.out.string());
  return 0;
}

// ---------------------------------------------------------------- prealign

struct PrealignArgs {
  Common common;
  fs::path worms, out;
};

int cmd_prealign(const PrealignArgs& a) {
  const std::vector<Worm> worms = io::read_worm_dir(require_dir(a.worms));
  std::vector<PrealignResult> res(worms.size());
  parallel_for(worms.size(), a.common.workers, [&](std::size_t k) { res[k] = prealign(worms[k]); });
  const Json m = io::meta(a.common.seed, Json{{"command", "prealign"}});
  Json transforms = Json::object();
  std::vector<Worm> aligned;
  for (std::size_t k = 0; k < worms.size(); ++k) {
    aligned.push_back(res[k].aligned);
    transforms[worms[k].worm_id] = io::to_json(res[k].tf);
  }
  io::write_worm_dir(a.out / "worms", aligned, m);
  io::write_json(a.out / "transforms.json", Json{{"meta", m}, {"transforms", transforms}});
  return 0;
}

// ---------------------------------------------------------------- learn

struct LearnArgs {
  Common common;
  fs::path worms, out;
  std::vector<int> stage_trials{200, 200, 100};
  std::string loss = "sync";
  int n_learn = 15;
};

LossKind parse_loss(const std::string& s) { return s == "cycle" ? LossKind::DiscreteCycle : LossKind::SyncSparse; }

int cmd_learn(const LearnArgs& a) {
  const std::vector<Worm> worms = io::read_worm_dir(require_dir(a.worms));
  PipelineConfig pc;
  pc.learn.trials_per_stage = {a.stage_trials[0], a.stage_trials[1], a.stage_trials[2]};
  pc.learn.loss_kind = parse_loss(a.loss);
  pc.learn.n_learn = std::min<int>(a.n_learn, static_cast<int>(worms.size()));
  pc.learn.seed = a.common.seed;
  pc.learn.workers = a.common.workers;
  const LearnResult r = learn_parameters(worms, pc.learn);
  int n_max = 1;
  for (const auto& w : worms) n_max = std::max(n_max, static_cast<int>(w.size()));

  const Json cfg_json = io::to_json(pc.learn);
  const Json m = io::meta(a.common.seed, cfg_json);
  Json params = io::to_json(pairwise_params(pc, r, n_max));
  params["meta"] = m;
  io::write_json(a.out / "params.json", params);
  write_jsonl(a.out / "trials.jsonl", r.log);
  io::write_json(a.out / "learn.json", Json{{"meta", m}, {"config", cfg_json}, {"learned", learned_json(r)}});
  return 0;
}

// ---------------------------------------------------------------- pairwise

struct PairwiseArgs {
  Common common;
  fs::path worms, params, out;
  std::string solver = "gm";
  double c0 = -1.0;
};

int cmd_pairwise(const PairwiseArgs& a) {
  const std::vector<Worm> worms = io::read_worm_dir(require_dir(a.worms));
  PairwiseConfig pc;
  pc.params = io::cost_params_from_json(io::read_json(a.params));
  if (a.c0 >= 0.0) pc.params.c0 = a.c0;
  pc.solver = a.solver == "lap" ? PairSolver::Lap : PairSolver::Gm;
  pc.gm = PipelineConfig{}.gm;
  pc.seed = a.common.seed;
  pc.workers = a.common.workers;
  const PairwiseResult res = solve_all_pairs(worms, pc);

  InstanceOptions opts;
  opts.quadratic = pc.solver == PairSolver::Gm;
  Json matchings = Json::array();
  for (const auto& [key, m] : res.mm.pairwise) {
    const Worm& l = worms[static_cast<std::size_t>(key.first)];
    const Worm& r = worms[static_cast<std::size_t>(key.second)];
    const double obj = gm_objective(build_pairwise_instance(l, r, pc.params, opts), m);
    matchings.push_back(io::matching_to_json(m, l, r, obj));
  }
  const Json cfg_json{{"params", io::to_json(pc.params)}, {"solver", a.solver}};
  io::write_json(a.out, Json{{"meta", io::meta(a.common.seed, cfg_json)},
                             {"mean_allowed", res.mean_allowed},
                             {"matchings", matchings}});
  return 0;
}

// ---------------------------------------------------------------- synchronize

struct SyncArgs {
  Common common;
  fs::path worms, pairs, params, out;
  std::string mode = "dense";
};

int cmd_synchronize(const SyncArgs& a) {
  const std::vector<Worm> worms = io::read_worm_dir(require_dir(a.worms));
  std::map<std::string, int> index;
  for (std::size_t k = 0; k < worms.size(); ++k) index[worms[k].worm_id] = static_cast<int>(k);
  MultiMatching mm;
  for (const auto& w : worms) mm.sizes.push_back(static_cast<int>(w.size()));
  const Json pairs = io::read_json(a.pairs);
  for (const auto& j : pairs.at("matchings")) {
    const auto l = index.find(j.at("left_worm").get<std::string>());
    const auto r = index.find(j.at("right_worm").get<std::string>());
    if (l == index.end() || r == index.end()) throw Error(ErrorKind::InvalidArgument, "matching refers to unknown worm");
    if (l->second >= r->second) throw Error(ErrorKind::InvalidArgument, "matchings must have the left worm first");
    mm.pairwise[{l->second, r->second}] =
        io::matching_from_json(j, worms[static_cast<std::size_t>(l->second)], worms[static_cast<std::size_t>(r->second)]);
  }
  const SyncMode mode = a.mode == "sparse" ? SyncMode::Sparse : SyncMode::Dense;
  AllowedMasks masks;
  if (mode == SyncMode::Sparse) {
    if (a.params.empty()) throw Error(ErrorKind::InvalidArgument, "sparse mode needs --params");
    const CostParams p = io::cost_params_from_json(io::read_json(a.params));
    InstanceOptions opts;
    opts.quadratic = false;
    for (const auto& [key, m] : mm.pairwise)
      masks[key] = mask_of(build_pairwise_instance(worms[static_cast<std::size_t>(key.first)],
                                                   worms[static_cast<std::size_t>(key.second)], p, opts));
  }
  const SyncResult res = synchronize(mm, mode, mode == SyncMode::Sparse ? &masks : nullptr);
  Json u = io::universe_to_json(res.universe, worms);
  u["meta"] = io::meta(a.common.seed, Json{{"mode", a.mode}});
  u["input_matches"] = mm.total_matches();
  u["retained"] = res.retained;
  io::write_json(a.out, u);
  return 0;
}

// ---------------------------------------------------------------- build-atlas

struct AtlasArgs {
  Common common;
  fs::path worms, universe, params, out;
  bool supervised = false;
  int min_clique_size = 0;
};

int cmd_build_atlas(const AtlasArgs& a) {
  const std::vector<Worm> worms = io::read_worm_dir(require_dir(a.worms));
  Atlas atlas;
  Json cfg{{"supervised", a.supervised}};
  if (a.supervised) {
    atlas = supervised_atlas(worms, a.common.workers).atlas;
  } else {
    if (a.universe.empty() || a.params.empty())
      throw Error(ErrorKind::InvalidArgument, "unsupervised atlas needs --universe and --params");
    const Universe u = io::universe_from_json(io::read_json(a.universe), worms);
    const CostParams p = io::cost_params_from_json(io::read_json(a.params));
    const int n = static_cast<int>(worms.size());
    const int min_size = a.min_clique_size > 0 ? a.min_clique_size : std::max(2, n / 5);
    Universe kept;
    for (const auto& c : u.cliques)
      if (static_cast<int>(c.size()) >= min_size) kept.cliques.push_back(c);
    atlas = build_unsupervised_atlas(kept, worms, p.sigmas, min_size);
    if (std::all_of(worms.begin(), worms.end(), [](const Worm& w) { return w.has_labels(); }))
      atlas.label_names = assign_gt_labels(kept, worms);
    cfg["min_clique_size"] = min_size;
  }
  Json j = io::to_json(atlas);
  j["meta"] = io::meta(a.common.seed, cfg);
  io::write_json(a.out, j);
  return 0;
}

// ---------------------------------------------------------------- match

struct MatchArgs {
  Common common;
  fs::path atlas, worms, out;
  int realign = 0;
};

int cmd_match(const MatchArgs& a) {
  const Atlas atlas = io::atlas_from_json(io::read_json(a.atlas));
  const std::vector<Worm> worms = io::read_worm_dir(require_dir(a.worms));
  std::vector<Matching> matched(worms.size());
  std::vector<double> objective(worms.size());
  parallel_for(worms.size(), a.common.workers, [&](std::size_t k) {
    AtlasMatchOptions opts;
    opts.gm.seed = derive_seed(a.common.seed, 400, k);
    const Worm w = a.realign > 0 ? realign_to_atlas(worms[k], atlas, opts, a.realign) : worms[k];
    matched[k] = match_to_atlas(atlas, w, opts);
    objective[k] = gm_objective(build_atlas_instance(atlas, w, opts), matched[k]);
  });
  Json out = Json::array();
  for (std::size_t k = 0; k < worms.size(); ++k) {
    Json pairs = Json::array();
    for (const auto& [e, s] : matched[k].pairs)
      pairs.push_back(Json::array({e, worms[k].nuclei[static_cast<std::size_t>(s)].id}));
    out.push_back(Json{{"left_worm", "atlas"}, {"right_worm", worms[k].worm_id}, {"pairs", pairs}, {"objective", objective[k]}});
  }
  io::write_json(a.out, Json{{"meta", io::meta(a.common.seed, Json{{"realign", a.realign}})}, {"matchings", out}});
  return 0;
}

// ---------------------------------------------------------------- pipelines

struct PipelineArgs {
  Common common;
  fs::path data, out;
  std::string mode = "dense";
  std::string cost_model = "learned";
  std::vector<int> stage_trials{200, 200, 100};
  std::string loss = "sync";
  int n_learn = 15;
  std::vector<int> sweep;
};

PipelineConfig pipeline_config(const PipelineArgs& a) {
  PipelineConfig cfg;
  cfg.seed = a.common.seed;
  cfg.workers = a.common.workers;
  cfg.learn.seed = a.common.seed;
  cfg.learn.trials_per_stage = {a.stage_trials[0], a.stage_trials[1], a.stage_trials[2]};
  cfg.learn.loss_kind = parse_loss(a.loss);
  cfg.learn.n_learn = a.n_learn;
  cfg.sync_mode = a.mode == "sparse" ? SyncMode::Sparse : SyncMode::Dense;
  cfg.skip_atlas = a.mode == "skip-atlas";
  cfg.cost_model = a.cost_model == "unlearned-quadratic" ? CostModel::UnlearnedQuadratic
                   : a.cost_model == "linear-only"       ? CostModel::LinearOnly
                                                         : CostModel::Learned;
  return cfg;
}

Json dataset_json(const std::vector<Worm>& train, const std::vector<Worm>& test) {
  return Json{{"n_train", train.size()}, {"n_test", test.size()}};
}

Json sweep_json(const std::vector<SweepPoint>& pts) {
  Json out = Json::array();
  for (const auto& p : pts)
    out.push_back(Json{{"n_train", p.n_train}, {"pre_atlas", p.pre_atlas}, {"atlas", p.atlas}, {"test_atlas", p.test_atlas}});
  return out;
}

int cmd_pipeline_unsup(const PipelineArgs& a) {
  const std::vector<Worm> train = io::read_worm_dir(require_dir(a.data / "train"));
  const std::vector<Worm> test = io::read_worm_dir(require_dir(a.data / "test"));
  const PipelineConfig cfg = pipeline_config(a);
  const UnsupervisedOutcome u = run_unsupervised(train, test, cfg, log);

  const Json cfg_json = io::to_json(cfg);
  const Json m = io::meta(cfg.seed, cfg_json);
  Json report{{"meta", m},
              {"kind", "pipeline-unsup"},
              {"config", cfg_json},
              {"dataset", dataset_json(train, test)},
              {"reference_worm", train[static_cast<std::size_t>(u.reference)].worm_id},
              {"learned", cfg.cost_model == CostModel::UnlearnedQuadratic ? Json(nullptr) : learned_json(u.learned)},
              {"pair_params", io::to_json(u.pair_params)},
              {"sync",
               Json{{"input_matches", u.input_matches},
                    {"retained", u.sync.retained},
                    {"cliques", u.sync.universe.cliques.size()}}},
              {"pre_atlas", io::to_json(u.pre_atlas)}};
  if (u.atlas) {
    report["atlas_entries"] = u.atlas->entries.size();
    report["atlas_accuracy"] = io::to_json(u.atlas_accuracy);
    report["summary"] = summary_json(u.test_accuracy);
    report["per_worm"] = per_worm_json(u.test_accuracy);
  }
  if (!a.sweep.empty()) {
    PipelineConfig sc = cfg;
    sc.learned = u.learned;
    report["sweep"] = sweep_json(training_size_sweep(u, sc, a.sweep, log));
  }

  io::write_json(a.out / "report.json", report);
  Json params = io::to_json(u.pair_params);
  params["meta"] = m;
  io::write_json(a.out / "params.json", params);
  write_jsonl(a.out / "trials.jsonl", u.learned.log);
  Json uni = io::universe_to_json(u.sync.universe, u.train_aligned);
  uni["meta"] = m;
  io::write_json(a.out / "universe.json", uni);
  if (u.atlas) {
    Json at = io::to_json(*u.atlas);
    at["meta"] = m;
    io::write_json(a.out / "atlas.json", at);
  }
  io::write_worm_dir(a.out / "aligned" / "train", u.train_aligned, m);
  io::write_worm_dir(a.out / "aligned" / "test", u.test_aligned, m);

  std::printf("pre-atlas accuracy  %.4f\n", u.pre_atlas.accuracy);
  if (u.atlas) {
    const Summary s = summarize(u.test_accuracy);
    std::printf("atlas accuracy      %.4f  (per worm %.4f +- %.4f)\n", u.atlas_accuracy.accuracy, s.mean, s.stddev);
  }
  return 0;
}

int cmd_pipeline_sup(const PipelineArgs& a) {
  const std::vector<Worm> train = io::read_worm_dir(require_dir(a.data / "train"));
  const std::vector<Worm> test = io::read_worm_dir(require_dir(a.data / "test"));
  const PipelineConfig cfg = pipeline_config(a);
  const SupervisedOutcome s = run_supervised(train, test, cfg, log);

  Json cfg_json = io::to_json(cfg);
  cfg_json.erase("learn");
  const Json m = io::meta(cfg.seed, cfg_json);
  Json report{{"meta", m},
              {"kind", "pipeline-sup"},
              {"config", cfg_json},
              {"dataset", dataset_json(train, test)},
              {"base_worm", train[static_cast<std::size_t>(s.base)].worm_id},
              {"atlas_entries", s.atlas.entries.size()},
              {"atlas_accuracy", io::to_json(s.atlas_accuracy)},
              {"summary", summary_json(s.test_accuracy)},
              {"per_worm", per_worm_json(s.test_accuracy)}};
  io::write_json(a.out / "report.json", report);
  Json at = io::to_json(s.atlas);
  at["meta"] = m;
  io::write_json(a.out / "atlas.json", at);
  io::write_worm_dir(a.out / "aligned" / "test", s.test_aligned, m);
  const Summary sm = summarize(s.test_accuracy);
  std::printf("atlas accuracy      %.4f  (per worm %.4f +- %.4f)\n", s.atlas_accuracy.accuracy, sm.mean, sm.stddev);
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  Common common;
  fs::path run, matches, worms, atlas, out;
  std::vector<int> sizes{5, 10, 15, 20};
};

std::string sweep_svg(const std::vector<SweepPoint>& pts) {
  const double w = 480, h = 320, left = 60, right = 20, top = 20, bottom = 50;
  double lo = 1.0, hi = 0.0;
  int n_lo = 1 << 30, n_hi = 0;
  for (const auto& p : pts) {
    lo = std::min({lo, p.pre_atlas, p.atlas});
    hi = std::max({hi, p.pre_atlas, p.atlas});
    n_lo = std::min(n_lo, p.n_train);
    n_hi = std::max(n_hi, p.n_train);
  }
  lo = std::floor(lo * 50.0) / 50.0;
  hi = std::min(1.0, std::ceil(hi * 50.0) / 50.0 + 1e-9);
  if (hi <= lo) hi = lo + 0.02;
  if (n_hi <= n_lo) n_hi = n_lo + 1;
  auto x = [&](int n) { return left + (w - left - right) * (n - n_lo) / static_cast<double>(n_hi - n_lo); };
  auto y = [&](double v) { return top + (h - top - bottom) * (hi - v) / (hi - lo); };
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  for (const auto& p : pts)
    s << "<text x=\"" << x(p.n_train) << "\" y=\"" << h - bottom + 18 << "\" font-size=\"12\" text-anchor=\"middle\">"
      << p.n_train << "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    s << "<text x=\"" << left - 6 << "\" y=\"" << y(v) + 4 << "\" font-size=\"12\" text-anchor=\"end\">" << v
      << "</text>\n";
  }
  s << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 12
    << "\" font-size=\"13\" text-anchor=\"middle\">training worms N</text>\n";
  const std::pair<const char*, const char*> series[] = {{"pre-atlas", "#d62728"}, {"atlas", "#1f77b4"}};
  for (int k = 0; k < 2; ++k) {
    s << "<polyline fill=\"none\" stroke=\"" << series[k].second << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : pts) s << x(p.n_train) << "," << y(k == 0 ? p.pre_atlas : p.atlas) << " ";
    s << "\"/>\n";
    s << "<text x=\"" << w - right - 90 << "\" y=\"" << h - bottom - 30 + 16 * k << "\" font-size=\"12\" fill=\""
      << series[k].second << "\">" << series[k].first << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<WormAccuracy> evaluate_matches(const Json& matches, const std::vector<Worm>& worms, const Atlas& atlas) {
  std::map<std::string, const Worm*> by_id;
  for (const auto& w : worms) by_id[w.worm_id] = &w;
  std::vector<WormAccuracy> out;
  for (const auto& j : matches.at("matchings")) {
    const auto it = by_id.find(j.at("right_worm").get<std::string>());
    if (it == by_id.end()) throw Error(ErrorKind::InvalidArgument, "matching refers to unknown worm");
    const Worm& w = *it->second;
    if (!w.has_labels()) throw Error(ErrorKind::MissingLabels, "worm " + w.worm_id + " has no labels");
    std::map<int, int> idx;
    for (std::size_t k = 0; k < w.size(); ++k) idx[w.nuclei[k].id] = static_cast<int>(k);
    Matching m;
    m.n_left = static_cast<int>(atlas.entries.size());
    m.n_right = static_cast<int>(w.size());
    for (const auto& p : j.at("pairs")) {
      const auto s = idx.find(p[1].get<int>());
      if (s == idx.end()) throw Error(ErrorKind::InvalidArgument, "unknown nucleus in " + w.worm_id);
      m.pairs.emplace_back(p[0].get<int>(), s->second);
    }
    m.normalize();
    check_uniqueness(m);
    out.push_back({w.worm_id, atlas_accuracy(m, w, atlas.label_names)});
  }
  return out;
}

int cmd_evaluate(const EvaluateArgs& a) {
  Json report{{"kind", "evaluate"}};
  std::vector<WormAccuracy> per_worm;
  std::uint64_t seed = a.common.seed;
  Json cfg{{"sizes", a.sizes}};
  if (!a.run.empty()) {
    require_dir(a.run);
    const Json run_report = io::read_json(a.run / "report.json");
    if (run_report.at("kind") != "pipeline-unsup") throw Error(ErrorKind::InvalidArgument, "not an unsupervised run");
    seed = std::stoull(run_report.at("meta").at("seed").get<std::string>());
    PipelineConfig pc;
    pc.seed = seed;
    pc.workers = a.common.workers;
    pc.sync_mode = run_report.at("config").at("sync_mode") == "sparse" ? SyncMode::Sparse : SyncMode::Dense;
    const std::string cm = run_report.at("config").at("cost_model").get<std::string>();
    pc.cost_model = cm == "linear-only" ? CostModel::LinearOnly
                    : cm == "unlearned-quadratic" ? CostModel::UnlearnedQuadratic
                                                  : CostModel::Learned;
    UnsupervisedOutcome u;
    u.pair_params = io::cost_params_from_json(io::read_json(a.run / "params.json"));
    u.train_aligned = io::read_worm_dir(a.run / "aligned" / "train");
    u.test_aligned = io::read_worm_dir(a.run / "aligned" / "test");
    const Atlas atlas = io::atlas_from_json(io::read_json(a.run / "atlas.json"));
    std::vector<Matching> matched(u.test_aligned.size());
    parallel_for(u.test_aligned.size(), pc.workers, [&](std::size_t k) {
      AtlasMatchOptions opts = pc.atlas_match;
      opts.gm.seed = derive_seed(seed, 400, k);
      matched[k] = match_to_atlas(atlas, u.test_aligned[k], opts);
    });
    for (std::size_t k = 0; k < u.test_aligned.size(); ++k)
      if (u.test_aligned[k].has_labels())
        per_worm.push_back({u.test_aligned[k].worm_id, atlas_accuracy(matched[k], u.test_aligned[k], atlas.label_names)});
    const std::vector<SweepPoint> sweep = training_size_sweep(u, pc, a.sizes, log);
    report["sweep"] = sweep_json(sweep);
    io::write_text(a.out / "sweep.svg", sweep_svg(sweep));
    cfg["run_config_hash"] = run_report.at("meta").at("config_hash");
  } else {
    if (a.matches.empty() || a.worms.empty() || a.atlas.empty())
      throw Error(ErrorKind::InvalidArgument, "evaluate needs --run or --matches, --worms and --atlas");
    const Atlas atlas = io::atlas_from_json(io::read_json(a.atlas));
    per_worm = evaluate_matches(io::read_json(a.matches), io::read_worm_dir(require_dir(a.worms)), atlas);
  }
  report["per_worm"] = per_worm_json(per_worm);
  report["summary"] = summary_json(per_worm);
  Json ordered{{"meta", io::meta(seed, cfg)}};
  for (const auto& [k, v] : report.items()) ordered[k] = v;
  io::write_json(a.out / "evaluation.json", ordered);
  const Summary s = summarize(per_worm);
  std::printf("accuracy %.4f +- %.4f over %zu worms\n", s.mean, s.stddev, per_worm.size());
  return 0;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Io:
    case ErrorKind::InvalidArgument:
    case ErrorKind::MissingLabels:
      return 2;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cellmatch: learned graph matching and atlas building for point-cloud instances"};
  app.require_subcommand(1);

  const std::vector<std::string> modes{"sparse", "dense", "skip-atlas"};
  const std::vector<std::string> cost_models{"learned", "unlearned-quadratic", "linear-only"};
  const std::vector<std::string> losses{"sync", "cycle"};

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "sample a synthetic dataset");
  add_common(g, gen.common, 7);
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--config", gen.config, "generator config JSON")->check(CLI::ExistingFile);
  g->add_option("--labels", gen.labels, "number of labels")->check(CLI::PositiveNumber);
  g->add_option("--train", gen.train, "training worms")->capture_default_str();
  g->add_option("--test", gen.test, "test worms")->capture_default_str();
  g->add_flag("--full-scale", gen.full_scale, "558-label preset");

  PrealignArgs pre;
  auto* p = app.add_subcommand("prealign", "canonical rigid pose of every worm");
  add_common(p, pre.common, 0);
  p->add_option("--worms", pre.worms, "worm directory")->required();
  p->add_option("--out", pre.out, "output directory (worms/ and transforms.json)")->required();

  LearnArgs learn;
  auto* l = app.add_subcommand("learn", "three-stage cost parameter learning");
  add_common(l, learn.common, 0);
  l->add_option("--worms", learn.worms, "aligned worm directory")->required();
  l->add_option("--out", learn.out, "output directory")->required();
  l->add_option("--stage-trials", learn.stage_trials, "trials per stage")->delimiter(',')->expected(3);
  l->add_option("--loss", learn.loss, "self-supervised loss")->check(CLI::IsMember(losses))->capture_default_str();
  l->add_option("--n-learn", learn.n_learn, "worms used for learning")->check(CLI::PositiveNumber);

  PairwiseArgs pw;
  auto* w = app.add_subcommand("pairwise", "match all worm pairs");
  add_common(w, pw.common, 0);
  w->add_option("--worms", pw.worms, "worm directory")->required();
  w->add_option("--params", pw.params, "cost parameter JSON")->required()->check(CLI::ExistingFile);
  w->add_option("--out", pw.out, "output file")->required();
  w->add_option("--solver", pw.solver, "pairwise solver")->check(CLI::IsMember({"gm", "lap"}))->capture_default_str();
  w->add_option("--c0", pw.c0, "override the unassignment constant");

  SyncArgs sy;
  auto* s = app.add_subcommand("synchronize", "cycle-consistent universe from pairwise matchings");
  add_common(s, sy.common, 0);
  s->add_option("--worms", sy.worms, "worm directory")->required();
  s->add_option("--pairs", sy.pairs, "pairwise output")->required()->check(CLI::ExistingFile);
  s->add_option("--params", sy.params, "cost parameters (sparse mode)")->check(CLI::ExistingFile);
  s->add_option("--mode", sy.mode, "synchronisation mode")->check(CLI::IsMember({"sparse", "dense"}));
  s->add_option("--out", sy.out, "output file")->required();

  AtlasArgs at;
  auto* b = app.add_subcommand("build-atlas", "Gaussian atlas from a universe or from labels");
  add_common(b, at.common, 0);
  b->add_option("--worms", at.worms, "aligned worm directory")->required();
  b->add_option("--universe", at.universe, "universe JSON")->check(CLI::ExistingFile);
  b->add_option("--params", at.params, "cost parameter JSON")->check(CLI::ExistingFile);
  b->add_flag("--supervised", at.supervised, "group nuclei by ground-truth labels");
  b->add_option("--min-clique-size", at.min_clique_size, "0 = max(2, N/5)");
  b->add_option("--out", at.out, "output file")->required();

  MatchArgs ma;
  auto* m = app.add_subcommand("match", "match worms to an atlas");
  add_common(m, ma.common, 0);
  m->add_option("--atlas", ma.atlas, "atlas JSON")->required()->check(CLI::ExistingFile);
  m->add_option("--worms", ma.worms, "worm directory")->required();
  m->add_option("--realign", ma.realign, "affine re-alignment rounds against the atlas");
  m->add_option("--out", ma.out, "output file")->required();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "accuracy reports and training-size sweep");
  add_common(e, ev.common, 0);
  e->add_option("--run", ev.run, "pipeline-unsup output directory");
  e->add_option("--matches", ev.matches, "match output")->check(CLI::ExistingFile);
  e->add_option("--worms", ev.worms, "labelled worm directory");
  e->add_option("--atlas", ev.atlas, "atlas JSON")->check(CLI::ExistingFile);
  e->add_option("--sizes", ev.sizes, "training sizes of the sweep")->delimiter(',');
  e->add_option("--out", ev.out, "output directory")->required();

  PipelineArgs un, su;
  auto* pu = app.add_subcommand("pipeline-unsup", "unsupervised pipeline end to end");
  auto* ps = app.add_subcommand("pipeline-sup", "supervised atlas pipeline");
  for (auto [cmd, args] : {std::pair{pu, &un}, std::pair{ps, &su}}) {
    add_common(cmd, args->common, 0);
    cmd->add_option("--data", args->data, "dataset directory with train/ and test/")->required();
    cmd->add_option("--out", args->out, "output directory")->required();
  }
  pu->add_option("--mode", un.mode, "synchronisation mode")->check(CLI::IsMember(modes))->capture_default_str();
  pu->add_option("--cost-model", un.cost_model, "ablation")->check(CLI::IsMember(cost_models))->capture_default_str();
  pu->add_option("--stage-trials", un.stage_trials, "trials per learning stage")->delimiter(',')->expected(3);
  pu->add_option("--loss", un.loss, "self-supervised loss")->check(CLI::IsMember(losses))->capture_default_str();
  pu->add_option("--n-learn", un.n_learn, "worms used for learning")->check(CLI::PositiveNumber);
  pu->add_option("--sweep", un.sweep, "training sizes for an in-run sweep")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*p) return cmd_prealign(pre);
    if (*l) return cmd_learn(learn);
    if (*w) return cmd_pairwise(pw);
    if (*s) return cmd_synchronize(sy);
    if (*b) return cmd_build_atlas(at);
    if (*m) return cmd_match(ma);
    if (*e) return cmd_evaluate(ev);
    if (*pu) return cmd_pipeline_unsup(un);
    if (*ps) return cmd_pipeline_sup(su);
  } catch (const StageError& err) {
    std::cerr << "error in stage " << err.stage_name << ": " << err.what() << "\n";
    return 1;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_code(err.kind());
  } catch (const nlohmann::json::exception& err) {
    std::cerr << "error: malformed input: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
