#include "cellmatch/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cellmatch::io {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorKind::InvalidArgument, what); }

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) bad(std::string("missing field '") + key + "'");
  return j.at(key);
}

template <typename T>
T get(const Json& j, const char* key) {
  try {
    return field(j, key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    bad(std::string("field '") + key + "': " + e.what());
  }
}

std::map<int, int> index_of_ids(const Worm& w) {
  std::map<int, int> out;
  for (std::size_t k = 0; k < w.size(); ++k) out[w.nuclei[k].id] = static_cast<int>(k);
  return out;
}

int lookup(const std::map<int, int>& ids, int id, const std::string& worm_id) {
  const auto it = ids.find(id);
  if (it == ids.end()) bad("nucleus " + std::to_string(id) + " not in worm " + worm_id);
  return it->second;
}

Json gm_to_json(const GmConfig& g) {
  return Json{{"restarts", g.restarts},
              {"max_sweeps", g.max_sweeps},
              {"seed", std::to_string(g.seed)},
              {"perturb_fraction", g.perturb_fraction}};
}

Json sparsity_to_json(const SparsityParams& s) {
  return Json{{"k_min", s.k_min}, {"tau_cen", number_or_null(s.tau_cen)}, {"tau_rad", number_or_null(s.tau_rad)}};
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::string config_hash(const Json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config.dump())));
  return buf;
}

Json meta(std::uint64_t seed, const Json& config) {
  return Json{{"seed", std::to_string(seed)}, {"config_hash", config_hash(config)}, {"version", kVersion}};
}

Json vec_to_json(const Vec3& v) { return Json::array({v[0], v[1], v[2]}); }

Vec3 vec_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) bad("expected a 3-vector");
  Vec3 v;
  for (int k = 0; k < 3; ++k) {
    if (!j[static_cast<std::size_t>(k)].is_number()) bad("expected a number in 3-vector");
    v[k] = j[static_cast<std::size_t>(k)].get<double>();
  }
  return v;
}

Json mat_to_json(const Mat3& m) {
  Json out = Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.push_back(m(r, c));
  return out;
}

Mat3 mat_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 9) bad("expected 9 row-major entries");
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j[static_cast<std::size_t>(3 * r + c)].get<double>();
  return m;
}

Json number_or_null(double v) { return std::isinf(v) ? Json(nullptr) : Json(v); }

double number_or_inf(const Json& j) {
  if (j.is_null()) return kInf;
  if (!j.is_number()) bad("expected a number or null");
  return j.get<double>();
}

Json to_json(const Worm& w) {
  Json nuclei = Json::array();
  for (const auto& n : w.nuclei) {
    const auto it = w.gt_labels.find(n.id);
    nuclei.push_back(Json{{"id", n.id},
                          {"centroid", vec_to_json(n.centroid)},
                          {"radii", vec_to_json(n.radii)},
                          {"gt_label", it == w.gt_labels.end() ? Json(nullptr) : Json(it->second)}});
  }
  return Json{{"worm_id", w.worm_id}, {"nuclei", nuclei}};
}

Worm worm_from_json(const Json& j) {
  Worm w;
  w.worm_id = get<std::string>(j, "worm_id");
  const Json& nuclei = field(j, "nuclei");
  if (!nuclei.is_array()) bad("'nuclei' must be an array");
  for (const auto& n : nuclei) {
    Nucleus nu;
    nu.id = get<int>(n, "id");
    nu.centroid = vec_from_json(field(n, "centroid"));
    nu.radii = vec_from_json(field(n, "radii"));
    if (n.contains("gt_label") && !n.at("gt_label").is_null()) w.gt_labels[nu.id] = get<int>(n, "gt_label");
    w.nuclei.push_back(nu);
  }
  validate(w);
  return w;
}

Json to_json(const RigidTransform& tf) {
  return Json{{"rotation", mat_to_json(tf.rotation)}, {"translation", vec_to_json(tf.translation)}};
}

Json to_json(const AffineTransform& tf) {
  return Json{{"linear", mat_to_json(tf.linear)}, {"translation", vec_to_json(tf.translation)}};
}

Json matching_to_json(const Matching& m, const Worm& left, const Worm& right, double objective) {
  Json pairs = Json::array();
  for (const auto& [i, s] : m.pairs)
    pairs.push_back(Json::array({left.nuclei.at(static_cast<std::size_t>(i)).id,
                                 right.nuclei.at(static_cast<std::size_t>(s)).id}));
  return Json{{"left_worm", left.worm_id}, {"right_worm", right.worm_id}, {"pairs", pairs}, {"objective", objective}};
}

Matching matching_from_json(const Json& j, const Worm& left, const Worm& right) {
  if (get<std::string>(j, "left_worm") != left.worm_id || get<std::string>(j, "right_worm") != right.worm_id)
    bad("matching does not refer to worms " + left.worm_id + " and " + right.worm_id);
  const auto li = index_of_ids(left), ri = index_of_ids(right);
  Matching m;
  m.n_left = static_cast<int>(left.size());
  m.n_right = static_cast<int>(right.size());
  for (const auto& p : field(j, "pairs")) {
    if (!p.is_array() || p.size() != 2) bad("pair must have two entries");
    m.pairs.emplace_back(lookup(li, p[0].get<int>(), left.worm_id), lookup(ri, p[1].get<int>(), right.worm_id));
  }
  m.normalize();
  check_uniqueness(m);
  return m;
}

Json universe_to_json(const Universe& u, const std::vector<Worm>& worms) {
  Json cliques = Json::array();
  for (const auto& c : u.cliques) {
    Json members = Json::array();
    for (const auto& [w, k] : c) {
      const Worm& worm = worms.at(static_cast<std::size_t>(w));
      members.push_back(Json::array({worm.worm_id, worm.nuclei.at(static_cast<std::size_t>(k)).id}));
    }
    cliques.push_back(members);
  }
  return Json{{"cliques", cliques}};
}

Universe universe_from_json(const Json& j, const std::vector<Worm>& worms) {
  std::map<std::string, int> worm_index;
  std::vector<std::map<int, int>> ids;
  for (std::size_t w = 0; w < worms.size(); ++w) {
    worm_index[worms[w].worm_id] = static_cast<int>(w);
    ids.push_back(index_of_ids(worms[w]));
  }
  Universe u;
  for (const auto& c : field(j, "cliques")) {
    std::vector<Member> clique;
    for (const auto& m : c) {
      if (!m.is_array() || m.size() != 2) bad("clique member must be [worm_id, nucleus_id]");
      const auto it = worm_index.find(m[0].get<std::string>());
      if (it == worm_index.end()) bad("unknown worm " + m[0].get<std::string>());
      clique.emplace_back(it->second, lookup(ids[static_cast<std::size_t>(it->second)], m[1].get<int>(), it->first));
    }
    std::sort(clique.begin(), clique.end());
    for (std::size_t k = 1; k < clique.size(); ++k)
      if (clique[k].first == clique[k - 1].first) bad("clique holds two nuclei of one worm");
    u.cliques.push_back(std::move(clique));
  }
  std::sort(u.cliques.begin(), u.cliques.end());
  return u;
}

Json to_json(const Atlas& a) {
  Json entries = Json::array();
  for (std::size_t e = 0; e < a.entries.size(); ++e) {
    const AtlasEntry& x = a.entries[e];
    const auto it = a.label_names.find(static_cast<int>(e));
    entries.push_back(Json{{"label", x.label},
                           {"name", it == a.label_names.end() ? Json(nullptr) : Json(it->second)},
                           {"mean_cen", vec_to_json(x.mean_cen)},
                           {"cov_cen", mat_to_json(x.cov_cen)},
                           {"mean_rad", vec_to_json(x.mean_rad)},
                           {"cov_rad", mat_to_json(x.cov_rad)},
                           {"support", x.support}});
  }
  Json offsets = Json::object();
  for (const auto& [key, s] : a.offsets)
    offsets[std::to_string(key.first) + "-" + std::to_string(key.second)] =
        Json{{"mean", vec_to_json(s.mean)}, {"cov", mat_to_json(s.cov)}, {"support", s.support}};
  return Json{{"entries", entries},
              {"offsets", offsets},
              {"weights", Json::array({a.weights.cen, a.weights.rad, a.weights.off})}};
}

Atlas atlas_from_json(const Json& j) {
  Atlas a;
  const Json& entries = field(j, "entries");
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const Json& x = entries[e];
    AtlasEntry en;
    en.label = get<int>(x, "label");
    en.mean_cen = vec_from_json(field(x, "mean_cen"));
    en.cov_cen = mat_from_json(field(x, "cov_cen"));
    en.mean_rad = vec_from_json(field(x, "mean_rad"));
    en.cov_rad = mat_from_json(field(x, "cov_rad"));
    en.support = get<int>(x, "support");
    if (x.contains("name") && !x.at("name").is_null()) a.label_names[static_cast<int>(e)] = x.at("name").get<int>();
    a.entries.push_back(en);
  }
  for (const auto& [key, s] : field(j, "offsets").items()) {
    const auto dash = key.find('-');
    if (dash == std::string::npos) bad("offset key must be 'i-j': " + key);
    const int i = std::stoi(key.substr(0, dash)), k = std::stoi(key.substr(dash + 1));
    const int n = static_cast<int>(a.entries.size());
    if (!(0 <= i && i < k && k < n)) bad("offset key out of range: " + key);
    a.offsets[{i, k}] = OffsetStats{vec_from_json(field(s, "mean")), mat_from_json(field(s, "cov")), get<int>(s, "support")};
  }
  const Vec3 w = vec_from_json(field(j, "weights"));
  a.weights = {w[0], w[1], w[2]};
  return a;
}

Json to_json(const CostParams& p) {
  return Json{{"sigma_cen", vec_to_json(p.sigmas.cen)},
              {"sigma_rad", vec_to_json(p.sigmas.rad)},
              {"sigma_off", vec_to_json(p.sigmas.off)},
              {"lambda", Json::array({p.weights.cen, p.weights.rad, p.weights.off})},
              {"k_min", p.sparsity.k_min},
              {"tau_cen", number_or_null(p.sparsity.tau_cen)},
              {"tau_rad", number_or_null(p.sparsity.tau_rad)},
              {"c0", p.c0},
              {"quad_neighbors", p.quad_neighbors}};
}

CostParams cost_params_from_json(const Json& j) {
  CostParams p;
  p.sigmas.cen = vec_from_json(field(j, "sigma_cen"));
  p.sigmas.rad = vec_from_json(field(j, "sigma_rad"));
  p.sigmas.off = vec_from_json(field(j, "sigma_off"));
  const Vec3 l = vec_from_json(field(j, "lambda"));
  p.weights = {l[0], l[1], l[2]};
  p.sparsity.k_min = get<int>(j, "k_min");
  p.sparsity.tau_cen = number_or_inf(field(j, "tau_cen"));
  p.sparsity.tau_rad = number_or_inf(field(j, "tau_rad"));
  p.c0 = get<double>(j, "c0");
  if (j.contains("quad_neighbors")) p.quad_neighbors = get<int>(j, "quad_neighbors");
  for (const Vec3* s : {&p.sigmas.cen, &p.sigmas.rad, &p.sigmas.off})
    if (!(s->minCoeff() > 0.0)) bad("sigma entries must be positive");
  if (p.sparsity.k_min < 1) bad("k_min must be >= 1");
  if (!(p.sparsity.tau_cen > 0.0) || !(p.sparsity.tau_rad > 0.0)) bad("thresholds must be positive");
  if (p.weights.cen < 0.0 || p.weights.rad < 0.0 || p.weights.off < 0.0) bad("lambda must be non-negative");
  return p;
}

Json to_json(const GeneratorConfig& c) {
  return Json{{"n_labels", c.n_labels},
              {"body_length", c.body_length},
              {"body_width", c.body_width},
              {"radii_mean", vec_to_json(c.radii_mean)},
              {"centroid_noise_sigma", vec_to_json(c.centroid_noise_sigma)},
              {"radii_noise_sigma", vec_to_json(c.radii_noise_sigma)},
              {"deformation_magnitude", c.deformation_magnitude},
              {"noise_heterogeneity", c.noise_heterogeneity},
              {"dropout_prob", c.dropout_prob},
              {"spurious_rate", c.spurious_rate},
              {"pose_jitter", Json{{"rotation", c.pose_jitter.rotation}, {"translation", c.pose_jitter.translation}}},
              {"seed", std::to_string(c.seed)}};
}

GeneratorConfig generator_config_from_json(const Json& j) {
  GeneratorConfig c;
  if (!j.is_object()) bad("generator config must be an object");
  // Every field is optional and defaults to the desk preset.
  if (j.contains("n_labels")) c.n_labels = get<int>(j, "n_labels");
  if (j.contains("body_length")) c.body_length = get<double>(j, "body_length");
  if (j.contains("body_width")) c.body_width = get<double>(j, "body_width");
  if (j.contains("radii_mean")) c.radii_mean = vec_from_json(j.at("radii_mean"));
  if (j.contains("centroid_noise_sigma")) c.centroid_noise_sigma = vec_from_json(j.at("centroid_noise_sigma"));
  if (j.contains("radii_noise_sigma")) c.radii_noise_sigma = vec_from_json(j.at("radii_noise_sigma"));
  if (j.contains("deformation_magnitude")) c.deformation_magnitude = get<double>(j, "deformation_magnitude");
  if (j.contains("noise_heterogeneity")) c.noise_heterogeneity = get<double>(j, "noise_heterogeneity");
  if (j.contains("dropout_prob")) c.dropout_prob = get<double>(j, "dropout_prob");
  if (j.contains("spurious_rate")) c.spurious_rate = get<double>(j, "spurious_rate");
  if (j.contains("pose_jitter")) {
    const Json& p = j.at("pose_jitter");
    c.pose_jitter.rotation = get<double>(p, "rotation");
    c.pose_jitter.translation = get<double>(p, "translation");
  }
  if (j.contains("seed")) {
    const Json& s = j.at("seed");
    c.seed = s.is_string() ? std::stoull(s.get<std::string>()) : s.get<std::uint64_t>();
  }
  try {
    validate(c);
  } catch (const Error& e) {
    bad(e.what());
  }
  return c;
}

Json to_json(const GroundTruthModel& m) {
  Json labels = Json::array();
  for (int k = 0; k < m.n_labels(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    labels.push_back(Json{{"label", k},
                          {"centroid_mean", vec_to_json(m.centroid_means[ku])},
                          {"radii_mean", vec_to_json(m.radii_means[ku])},
                          {"noise_scale", m.noise_scale[ku]}});
  }
  return Json{{"semi_axes", vec_to_json(m.semi_axes)}, {"min_separation", m.min_separation}, {"labels", labels}};
}

Json to_json(const TrialRecord& r) {
  Json params = Json::object();
  for (std::size_t k = 0; k < r.names.size(); ++k) params[r.names[k]] = r.params.at(k);
  Json objectives = Json::array();
  for (const double o : r.objectives) objectives.push_back(number_or_null(o));
  return Json{{"trial", r.trial}, {"stage", r.stage}, {"params", params}, {"objectives", objectives}};
}

const char* to_string(CostModel m) {
  switch (m) {
    case CostModel::Learned:
      return "learned";
    case CostModel::UnlearnedQuadratic:
      return "unlearned-quadratic";
    case CostModel::LinearOnly:
      return "linear-only";
  }
  return "?";
}

const char* to_string(SyncMode m) { return m == SyncMode::Dense ? "dense" : "sparse"; }

const char* to_string(LossKind k) { return k == LossKind::SyncSparse ? "sync" : "cycle"; }

Json to_json(const LearnConfig& c) {
  return Json{{"n_learn", c.n_learn},
              {"trials_per_stage", Json::array({c.trials_per_stage[0], c.trials_per_stage[1], c.trials_per_stage[2]})},
              {"seed", std::to_string(c.seed)},
              {"n_lin_cap", c.n_lin_cap},
              {"loss_band", c.loss_band},
              {"loss", to_string(c.loss_kind)},
              {"tpe",
               Json{{"gamma", c.tpe.gamma},
                    {"n_candidates", c.tpe.n_candidates},
                    {"n_startup", c.tpe.n_startup},
                    {"prior_weight", c.tpe.prior_weight}}},
              {"gm", gm_to_json(c.gm)},
              {"quad_neighbors", c.quad_neighbors}};
}

// Worker counts are left out: results do not depend on them.
Json to_json(const PipelineConfig& c) {
  return Json{{"learn", to_json(c.learn)},
              {"realign_iterations", c.realign_iterations},
              {"gm", gm_to_json(c.gm)},
              {"c0_final", c.c0_final},
              {"sync_mode", to_string(c.sync_mode)},
              {"skip_atlas", c.skip_atlas},
              {"cost_model", to_string(c.cost_model)},
              {"min_clique_size", c.min_clique_size},
              {"atlas_match",
               Json{{"sparsity", sparsity_to_json(c.atlas_match.sparsity)},
                    {"c0", c.atlas_match.c0},
                    {"quadratic", c.atlas_match.quadratic},
                    {"quad_neighbors", c.atlas_match.quad_neighbors},
                    {"gm", gm_to_json(c.atlas_match.gm)}}},
              {"seed", std::to_string(c.seed)}};
}

Json to_json(const AccuracyReport& r) {
  return Json{{"correct", r.correct}, {"total", r.total}, {"unmatched", r.unmatched}, {"accuracy", r.accuracy}};
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

void write_json(const fs::path& path, const Json& j) { write_text(path, dump(j)); }

std::vector<Worm> read_worm_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Worm> out;
  for (const auto& f : files) {
    try {
      out.push_back(worm_from_json(read_json(f)));
    } catch (const Error& e) {
      throw Error(e.kind() == ErrorKind::Io ? ErrorKind::Io : ErrorKind::InvalidArgument, f.string() + ": " + e.what());
    }
  }
  if (out.empty()) throw Error(ErrorKind::Io, "no worm files in " + dir.string());
  return out;
}

void write_worm_dir(const fs::path& dir, const std::vector<Worm>& worms, const Json& meta_block) {
  for (const auto& w : worms) {
    Json j = to_json(w);
    j["meta"] = meta_block;
    write_json(dir / (w.worm_id + ".json"), j);
  }
}

}  // namespace cellmatch::io
