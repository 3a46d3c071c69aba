#include "cellmatch/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cellmatch {

GeneratorConfig GeneratorConfig::full_scale() {
  GeneratorConfig cfg;
  cfg.n_labels = 558;
  cfg.body_length = 200.0;
  cfg.body_width = 30.0;
  return cfg;
}

GeneratorConfig GeneratorConfig::noise_free() const {
  GeneratorConfig cfg = *this;
  cfg.centroid_noise_sigma.setZero();
  cfg.radii_noise_sigma.setZero();
  cfg.deformation_magnitude = 0.0;
  cfg.dropout_prob = 0.0;
  cfg.spurious_rate = 0.0;
  return cfg;
}

void validate(const GeneratorConfig& cfg) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidArgument, "generator config: " + what); };
  if (cfg.n_labels < 1) fail("n_labels must be >= 1");
  if (!(cfg.body_length > 0.0) || !(cfg.body_width > 0.0)) fail("body dimensions must be positive");
  if (!(cfg.radii_mean.minCoeff() > 0.0)) fail("radii_mean must be positive");
  if (cfg.centroid_noise_sigma.minCoeff() < 0.0 || cfg.radii_noise_sigma.minCoeff() < 0.0)
    fail("noise sigmas must be non-negative");
  if (cfg.deformation_magnitude < 0.0) fail("deformation_magnitude must be non-negative");
  if (cfg.noise_heterogeneity < 0.0) fail("noise_heterogeneity must be non-negative");
  if (!(cfg.dropout_prob >= 0.0 && cfg.dropout_prob < 1.0)) fail("dropout_prob must be in [0, 1)");
  if (cfg.spurious_rate < 0.0) fail("spurious_rate must be non-negative");
  if (cfg.pose_jitter.rotation < 0.0 || cfg.pose_jitter.translation < 0.0) fail("pose jitter must be non-negative");
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  // splitmix64 over a mix of the three inputs.
  std::uint64_t z = master ^ (stream * 0x9E3779B97F4A7C15ULL) ^ (index * 0xD1B54A32D192ED03ULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Vec3 sorted_desc(Vec3 v) {
  std::sort(v.data(), v.data() + 3, std::greater<>());
  return v;
}

bool inside(const Vec3& p, const Vec3& semi) { return (p.array() / semi.array()).matrix().squaredNorm() <= 1.0; }

Vec3 uniform_in_body(Rng& rng, const Vec3& semi) {
  while (true) {
    const Vec3 p(uniform(rng, -semi[0], semi[0]), uniform(rng, -semi[1], semi[1]), uniform(rng, -semi[2], semi[2]));
    if (inside(p, semi)) return p;
  }
}

// Acceptance weight in (0, 1] making the body much denser towards +x (head)
// and +z, so that both third moments have a stable sign.
double skew_weight(const Vec3& p, const Vec3& semi) {
  return std::exp(3.0 * (p[0] / semi[0] - 1.0) + 2.0 * (p[2] / semi[2] - 1.0));
}

// Monomials of a degree-2 polynomial without the constant term.
Eigen::Matrix<double, 9, 1> monomials(const Vec3& p, const Vec3& semi) {
  const Vec3 u = (p.array() / semi.array()).matrix();
  Eigen::Matrix<double, 9, 1> m;
  m << u[0], u[1], u[2], u[0] * u[0], u[1] * u[1], u[2] * u[2], u[0] * u[1], u[0] * u[2], u[1] * u[2];
  return m;
}

}  // namespace

GroundTruthModel make_ground_truth(const GeneratorConfig& cfg) {
  validate(cfg);
  Rng rng(derive_seed(cfg.seed, 0, 0));
  GroundTruthModel model;
  model.semi_axes = Vec3(0.5 * cfg.body_length, 0.5 * cfg.body_width, 0.5 * cfg.body_width);
  const Vec3& semi = model.semi_axes;
  const auto n = static_cast<std::size_t>(cfg.n_labels);

  for (std::size_t k = 0; k < n; ++k) {
    const Vec3 scale(uniform(rng, 0.8, 1.25), uniform(rng, 0.8, 1.25), uniform(rng, 0.8, 1.25));
    model.radii_means.push_back(sorted_desc(cfg.radii_mean.cwiseProduct(scale)));
    model.noise_scale.push_back(std::exp(cfg.noise_heterogeneity * std::normal_distribution<double>(0.0, 1.0)(rng)));
  }
  std::vector<double> largest;
  for (const auto& r : model.radii_means) largest.push_back(r[0]);
  std::nth_element(largest.begin(), largest.begin() + static_cast<std::ptrdiff_t>(n / 2), largest.end());
  model.min_separation = 2.0 * largest[n / 2];
  const double sep2 = model.min_separation * model.min_separation;

  auto clear_of = [&](const Vec3& p) {
    for (const auto& q : model.centroid_means)
      if ((p - q).squaredNorm() < sep2) return false;
    return true;
  };

  constexpr int kMaxAttempts = 10000;
  const double midline = 0.2 * semi[1];
  int attempts = 0;
  while (model.centroid_means.size() < n) {
    Vec3 p = uniform_in_body(rng, semi);
    if (uniform(rng, 0.0, 1.0) > skew_weight(p, semi)) continue;
    if (++attempts > kMaxAttempts)
      throw Error(ErrorKind::PackingFailed, "placed " + std::to_string(model.centroid_means.size()) + " of " +
                                                std::to_string(n) + " labels");
    const bool pair = std::abs(p[1]) >= midline && model.centroid_means.size() + 2 <= n;
    if (!pair) {
      if (std::abs(p[1]) >= midline) p[1] *= midline / std::abs(p[1]) * 0.5;
      if (!clear_of(p)) continue;
      model.centroid_means.push_back(p);
      continue;
    }
    const Vec3 mirror(p[0], -p[1], p[2]);
    if ((p - mirror).squaredNorm() < sep2 || !clear_of(p) || !clear_of(mirror)) continue;
    model.centroid_means.push_back(p);
    model.centroid_means.push_back(mirror);
  }
  return model;
}

Worm sample_worm(const GroundTruthModel& model, const GeneratorConfig& cfg, std::uint64_t worm_seed,
                 const std::string& worm_id) {
  Rng rng(worm_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Vec3& semi = model.semi_axes;

  Eigen::Matrix<double, 3, 9> field;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 9; ++c) field(r, c) = gauss(rng) * cfg.deformation_magnitude / 3.0;

  struct Draft {
    Vec3 centroid, radii;
    int label;
  };
  std::vector<Draft> drafts;
  for (int k = 0; k < model.n_labels(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const Vec3& mean = model.centroid_means[ku];
    const double s = model.noise_scale[ku];
    Vec3 c = mean + field * monomials(mean, semi);
    for (int a = 0; a < 3; ++a) c[a] += gauss(rng) * cfg.centroid_noise_sigma[a] * s;
    Vec3 r = model.radii_means[ku];
    for (int a = 0; a < 3; ++a) r[a] = std::max(0.3, r[a] + gauss(rng) * cfg.radii_noise_sigma[a] * s);
    const bool dropped = uniform(rng, 0.0, 1.0) < cfg.dropout_prob;
    if (!dropped) drafts.push_back({c, sorted_desc(r), k});
  }
  const int n_spurious = cfg.spurious_rate > 0.0 ? std::poisson_distribution<int>(cfg.spurious_rate)(rng) : 0;
  for (int k = 0; k < n_spurious; ++k) {
    const Vec3 p = uniform_in_body(rng, semi);
    const Vec3 scale(uniform(rng, 0.8, 1.25), uniform(rng, 0.8, 1.25), uniform(rng, 0.8, 1.25));
    drafts.push_back({p, sorted_desc(cfg.radii_mean.cwiseProduct(scale)), -1});
  }

  Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
  if (axis.norm() < 1e-12) axis = Vec3::UnitX();
  const double angle = cfg.pose_jitter.rotation > 0.0 ? uniform(rng, 0.0, cfg.pose_jitter.rotation) : 0.0;
  const Mat3 rot = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  const double tr = cfg.pose_jitter.translation;
  const Vec3 shift = tr > 0.0 ? Vec3(uniform(rng, -tr, tr), uniform(rng, -tr, tr), uniform(rng, -tr, tr)) : Vec3::Zero();

  std::shuffle(drafts.begin(), drafts.end(), rng);
  Worm w;
  w.worm_id = worm_id;
  for (std::size_t k = 0; k < drafts.size(); ++k) {
    Nucleus n;
    n.id = static_cast<int>(k);
    n.centroid = rot * drafts[k].centroid + shift;
    n.radii = drafts[k].radii;
    w.nuclei.push_back(n);
    if (drafts[k].label >= 0) w.gt_labels[n.id] = drafts[k].label;
  }
  return w;
}

namespace {

std::string indexed_id(const char* prefix, int k) {
  std::string digits = std::to_string(k);
  if (digits.size() < 3) digits.insert(0, 3 - digits.size(), '0');
  return std::string(prefix) + "_" + digits;
}

}  // namespace

Dataset generate_dataset(const GeneratorConfig& cfg, int n_train, int n_test) {
  if (n_train < 1 || n_test < 1) throw Error(ErrorKind::InvalidArgument, "dataset counts must be >= 1");
  Dataset ds;
  ds.model = make_ground_truth(cfg);
  for (int k = 0; k < n_train; ++k)
    ds.train.push_back(sample_worm(ds.model, cfg, derive_seed(cfg.seed, 1, static_cast<std::uint64_t>(k)),
                                   indexed_id("train", k)));
  for (int k = 0; k < n_test; ++k)
    ds.test.push_back(sample_worm(ds.model, cfg, derive_seed(cfg.seed, 2, static_cast<std::uint64_t>(k)),
                                  indexed_id("test", k)));
  return ds;
}

}  // namespace cellmatch
