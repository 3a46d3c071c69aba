#include "cellmatch/costs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cellmatch {

namespace {

void check_sigma(const Vec3& sigma) {
  if (!(sigma[0] > 0.0 && sigma[1] > 0.0 && sigma[2] > 0.0))
    throw Error(ErrorKind::NonPositiveVariance, "covariance diagonal must be positive");
}

}  // namespace

double mahalanobis(const Vec3& diff, const Vec3& sigma_diag) {
  check_sigma(sigma_diag);
  return diff[0] * diff[0] / sigma_diag[0] + diff[1] * diff[1] / sigma_diag[1] + diff[2] * diff[2] / sigma_diag[2];
}

double centroid_distance(const Nucleus& i, const Nucleus& s, const SharedCovariances& sigmas) {
  return mahalanobis(i.centroid - s.centroid, sigmas.cen);
}

double radii_distance(const Nucleus& i, const Nucleus& s, const SharedCovariances& sigmas) {
  return mahalanobis(i.radii - s.radii, sigmas.rad);
}

double linear_cost(const Nucleus& i, const Nucleus& s, const CostWeights& w, const SharedCovariances& sigmas) {
  return w.cen * centroid_distance(i, s, sigmas) + w.rad * radii_distance(i, s, sigmas);
}

double quadratic_cost(const Nucleus& i, const Nucleus& j, const Nucleus& s, const Nucleus& t, const CostWeights& w,
                      const SharedCovariances& sigmas) {
  if (&i == &j || &s == &t || i.id == j.id || s.id == t.id)
    throw Error(ErrorKind::SamePair, "quadratic cost needs two distinct nuclei on each side");
  const Vec3 source_off = i.centroid - j.centroid;
  const Vec3 target_off = s.centroid - t.centroid;
  return w.off * mahalanobis(source_off - target_off, sigmas.off);
}

CostWeights normalize_weights(const CostWeights& w) {
  if (w.cen < 0.0 || w.rad < 0.0 || w.off < 0.0)
    throw Error(ErrorKind::InvalidArgument, "weights must be non-negative");
  const double norm = std::sqrt(w.cen * w.cen + w.rad * w.rad + w.off * w.off);
  if (!(norm > 0.0)) throw Error(ErrorKind::ZeroWeights, "all weights are zero");
  const double scale = std::sqrt(3.0) / norm;
  return {w.cen * scale, w.rad * scale, w.off * scale};
}

std::vector<std::vector<int>> neighbor_graph(const std::vector<Vec3>& points, int k) {
  const int n = static_cast<int>(points.size());
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  if (k <= 0 || k >= n - 1) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) adj[static_cast<std::size_t>(i)].push_back(j);
    return adj;
  }
  std::vector<std::vector<char>> mark(static_cast<std::size_t>(n), std::vector<char>(static_cast<std::size_t>(n), 0));
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), 0);
    const Vec3& p = points[static_cast<std::size_t>(i)];
    std::partial_sort(order.begin(), order.begin() + k + 1, order.end(), [&](int a, int b) {
      const double da = (points[static_cast<std::size_t>(a)] - p).squaredNorm();
      const double db = (points[static_cast<std::size_t>(b)] - p).squaredNorm();
      return da != db ? da < db : a < b;
    });
    int taken = 0;
    for (int idx = 0; idx < n && taken < k; ++idx) {
      const int j = order[static_cast<std::size_t>(idx)];
      if (j == i) continue;
      mark[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 1;
      mark[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = 1;
      ++taken;
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (mark[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) adj[static_cast<std::size_t>(i)].push_back(j);
  return adj;
}

WormPairQuadratic::WormPairQuadratic(const Worm& left, const Worm& right, const Vec3& sigma_off, double lambda_off,
                                     int k_neighbors)
    : left_(left.centroids()), right_(right.centroids()), lambda_(lambda_off) {
  check_sigma(sigma_off);
  inv_sigma_ = sigma_off.cwiseInverse();
  neighbors_ = neighbor_graph(left_, k_neighbors);
}

double WormPairQuadratic::cost(int i, int s, int j, int t) const {
  const Vec3 d = (left_[static_cast<std::size_t>(i)] - left_[static_cast<std::size_t>(j)]) -
                 (right_[static_cast<std::size_t>(s)] - right_[static_cast<std::size_t>(t)]);
  return lambda_ * (d[0] * d[0] * inv_sigma_[0] + d[1] * d[1] * inv_sigma_[1] + d[2] * d[2] * inv_sigma_[2]);
}

MaterializedQuadratic::MaterializedQuadratic(int n_left, int n_right)
    : n_left_(n_left),
      n_right_(n_right),
      table_(static_cast<std::size_t>(n_left * n_right) * static_cast<std::size_t>(n_left * n_right), 0.0),
      neighbors_(static_cast<std::size_t>(n_left)) {}

std::size_t MaterializedQuadratic::index(int i, int s, int j, int t) const {
  const std::size_t a = static_cast<std::size_t>(i * n_right_ + s);
  const std::size_t b = static_cast<std::size_t>(j * n_right_ + t);
  return a * static_cast<std::size_t>(n_left_ * n_right_) + b;
}

void MaterializedQuadratic::set(int i, int s, int j, int t, double value) {
  if (i == j || s == t) throw Error(ErrorKind::SamePair, "quadratic entry needs i != j and s != t");
  table_[index(i, s, j, t)] = value;
  table_[index(j, t, i, s)] = value;
  auto link = [&](int a, int b) {
    auto& v = neighbors_[static_cast<std::size_t>(a)];
    auto it = std::lower_bound(v.begin(), v.end(), b);
    if (it == v.end() || *it != b) v.insert(it, b);
  };
  link(i, j);
  link(j, i);
}

double MaterializedQuadratic::cost(int i, int s, int j, int t) const { return table_[index(i, s, j, t)]; }

int GmInstance::find(int i, int s) const {
  const auto& row = allowed[static_cast<std::size_t>(i)];
  auto it = std::lower_bound(row.begin(), row.end(), s, [](const Candidate& c, int v) { return c.right < v; });
  if (it == row.end() || it->right != s) return -1;
  return static_cast<int>(it - row.begin());
}

double GmInstance::linear(int i, int s) const {
  const int k = find(i, s);
  return k < 0 ? kInf : allowed[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].cost;
}

bool GmInstance::coupled(int i, int j) const {
  if (!quadratic) return false;
  const auto& nb = quadratic->neighbors(i);
  return std::binary_search(nb.begin(), nb.end(), j);
}

double GmInstance::quad(int i, int s, int j, int t) const {
  if (!coupled(i, j)) return 0.0;
  return quadratic->cost(i, s, j, t);
}

std::size_t GmInstance::n_allowed() const {
  std::size_t n = 0;
  for (const auto& row : allowed) n += row.size();
  return n;
}

GmInstance GmInstance::linear_part() const {
  GmInstance out = *this;
  out.quadratic.reset();
  return out;
}

GmInstance build_pairwise_instance(const Worm& left, const Worm& right, const CostWeights& w,
                                   const SharedCovariances& sigmas, const SparsityParams& sp, double c0,
                                   const InstanceOptions& opts) {
  if (sp.k_min < 1) throw Error(ErrorKind::InvalidArgument, "k_min must be >= 1");
  if (!(sp.tau_cen > 0.0) || !(sp.tau_rad > 0.0)) throw Error(ErrorKind::InvalidArgument, "thresholds must be > 0");
  const SharedCovariances& gate = opts.sparsify_sigmas ? *opts.sparsify_sigmas : sigmas;
  const bool same_gate = !opts.sparsify_sigmas;

  GmInstance inst;
  inst.n_left = static_cast<int>(left.size());
  inst.n_right = static_cast<int>(right.size());
  inst.c0 = c0;
  inst.allowed.resize(left.size());

  const std::size_t nr = right.size();
  std::vector<double> cost(nr), gate_cost(nr);
  std::vector<char> keep(nr);
  std::vector<int> order(nr);
  for (std::size_t i = 0; i < left.size(); ++i) {
    const Nucleus& a = left.nuclei[i];
    for (std::size_t s = 0; s < nr; ++s) {
      const Nucleus& b = right.nuclei[s];
      const double dc = centroid_distance(a, b, gate);
      const double dr = radii_distance(a, b, gate);
      keep[s] = (dc <= sp.tau_cen && dr <= sp.tau_rad) ? 1 : 0;
      cost[s] = linear_cost(a, b, w, sigmas);
      gate_cost[s] = same_gate ? cost[s] : w.cen * dc + w.rad * dr;
    }
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(sp.k_min), nr);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), [&](int x, int y) {
      const double cx = gate_cost[static_cast<std::size_t>(x)];
      const double cy = gate_cost[static_cast<std::size_t>(y)];
      return cx != cy ? cx < cy : x < y;
    });
    for (std::size_t r = 0; r < k; ++r) keep[static_cast<std::size_t>(order[r])] = 1;
    auto& row = inst.allowed[i];
    for (std::size_t s = 0; s < nr; ++s)
      if (keep[s]) row.push_back({static_cast<int>(s), cost[s] - c0});
  }
  if (opts.quadratic && w.off > 0.0 && left.size() > 1)
    inst.quadratic = std::make_shared<WormPairQuadratic>(left, right, sigmas.off, w.off, opts.quad_neighbors);
  return inst;
}

GmInstance build_pairwise_instance(const Worm& left, const Worm& right, const CostParams& params,
                                   const InstanceOptions& opts) {
  InstanceOptions o = opts;
  o.quad_neighbors = params.quad_neighbors;
  return build_pairwise_instance(left, right, params.weights, params.sigmas, params.sparsity, params.c0, o);
}

}  // namespace cellmatch
