#pragma once

#include "cellmatch/common.hpp"

#include <limits>
#include <memory>
#include <vector>

namespace cellmatch {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Diagonal cross-nuclei covariances (variance units).
struct SharedCovariances {
  Vec3 cen = Vec3::Ones();
  Vec3 rad = Vec3::Ones();
  Vec3 off = Vec3::Ones();
};

struct CostWeights {
  double cen = 1.0;
  double rad = 1.0;
  double off = 1.0;
};

struct SparsityParams {
  int k_min = 1;
  double tau_cen = kInf;
  double tau_rad = kInf;
};

inline constexpr double kC0Learning = 10000.0;
inline constexpr double kC0FinalMgm = 40.0;
inline constexpr int kDefaultQuadNeighbors = 10;

// Everything needed to build a worm-to-worm instance; also the on-disk
// cost-parameter file.
struct CostParams {
  SharedCovariances sigmas;
  CostWeights weights;
  SparsityParams sparsity;
  double c0 = kC0Learning;
  // Quadratic terms couple each left node with this many nearest left
  // neighbours (symmetrised); 0 couples all pairs.
  int quad_neighbors = kDefaultQuadNeighbors;
};

// Σ_k diff[k]² / sigma[k]. Throws NonPositiveVariance.
double mahalanobis(const Vec3& diff, const Vec3& sigma_diag);

// diffᵀ·P·diff for a precision (inverse covariance) matrix P.
inline double mahalanobis_precision(const Vec3& diff, const Mat3& precision) { return diff.dot(precision * diff); }

double centroid_distance(const Nucleus& i, const Nucleus& s, const SharedCovariances& sigmas);
double radii_distance(const Nucleus& i, const Nucleus& s, const SharedCovariances& sigmas);

// λ_cen·d_cen + λ_rad·d_rad with shared covariances.
double linear_cost(const Nucleus& i, const Nucleus& s, const CostWeights& w, const SharedCovariances& sigmas);

// λ_off·d_off between source pair (i,j) and target pair (s,t). Throws SamePair.
double quadratic_cost(const Nucleus& i, const Nucleus& j, const Nucleus& s, const Nucleus& t, const CostWeights& w,
                      const SharedCovariances& sigmas);

// Positive rescaling to Euclidean norm √3. Throws ZeroWeights.
CostWeights normalize_weights(const CostWeights& w);

// Lazily evaluated quadratic part of a GM instance. Only pairs (i, j) with
// j ∈ neighbors(i) carry a term; the relation is symmetric.
class QuadraticModel {
 public:
  virtual ~QuadraticModel() = default;
  virtual double cost(int i, int s, int j, int t) const = 0;
  virtual const std::vector<int>& neighbors(int i) const = 0;
  virtual int n_left() const = 0;
};

// Symmetrised k-nearest-neighbour graph; k <= 0 or k >= n-1 gives all pairs.
std::vector<std::vector<int>> neighbor_graph(const std::vector<Vec3>& points, int k);

class WormPairQuadratic final : public QuadraticModel {
 public:
  WormPairQuadratic(const Worm& left, const Worm& right, const Vec3& sigma_off, double lambda_off, int k_neighbors);
  double cost(int i, int s, int j, int t) const override;
  const std::vector<int>& neighbors(int i) const override { return neighbors_[static_cast<std::size_t>(i)]; }
  int n_left() const override { return static_cast<int>(left_.size()); }

 private:
  std::vector<Vec3> left_, right_;
  Vec3 inv_sigma_;
  double lambda_;
  std::vector<std::vector<int>> neighbors_;
};

// Explicit table, used by tests and small random instances.
class MaterializedQuadratic final : public QuadraticModel {
 public:
  MaterializedQuadratic(int n_left, int n_right);
  // Sets c_{is,jt} and c_{jt,is}; marks i and j as neighbours.
  void set(int i, int s, int j, int t, double value);
  double cost(int i, int s, int j, int t) const override;
  const std::vector<int>& neighbors(int i) const override { return neighbors_[static_cast<std::size_t>(i)]; }
  int n_left() const override { return n_left_; }

 private:
  std::size_t index(int i, int s, int j, int t) const;
  int n_left_, n_right_;
  std::vector<double> table_;
  std::vector<std::vector<int>> neighbors_;
};

struct Candidate {
  int right = 0;
  // Shifted linear cost C_is = c_is − c0.
  double cost = 0.0;
};

// Sparse pairwise matching problem. `allowed[i]` is sorted by right index.
struct GmInstance {
  int n_left = 0;
  int n_right = 0;
  double c0 = 0.0;
  std::vector<std::vector<Candidate>> allowed;
  std::shared_ptr<const QuadraticModel> quadratic;

  // Position of s in allowed[i], or -1.
  int find(int i, int s) const;
  bool is_allowed(int i, int s) const { return find(i, s) >= 0; }
  double linear(int i, int s) const;
  // 0 when no model is attached or i, j are not coupled.
  double quad(int i, int s, int j, int t) const;
  bool coupled(int i, int j) const;
  std::size_t n_allowed() const;
  // Same instance without the quadratic part.
  GmInstance linear_part() const;
};

struct InstanceOptions {
  bool quadratic = true;
  int quad_neighbors = kDefaultQuadNeighbors;
  // Covariances used for the τ thresholds and the k_min ranking when they
  // differ from the cost covariances.
  std::optional<SharedCovariances> sparsify_sigmas;
};

// Worm-to-worm instance with `left` as the label side.
GmInstance build_pairwise_instance(const Worm& left, const Worm& right, const CostWeights& w,
                                   const SharedCovariances& sigmas, const SparsityParams& sp, double c0,
                                   const InstanceOptions& opts = {});

GmInstance build_pairwise_instance(const Worm& left, const Worm& right, const CostParams& params,
                                   const InstanceOptions& opts = {});

}  // namespace cellmatch
