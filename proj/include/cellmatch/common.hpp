#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cellmatch {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class ErrorKind {
  DegenerateCloud,
  NoMatches,
  NonPositiveVariance,
  SamePair,
  ZeroWeights,
  ForbiddenPair,
  TooLarge,
  MissingPair,
  InconsistentInput,
  InsufficientSupport,
  MissingLabels,
  EmptySpace,
  NoFeasible,
  StageFailed,
  PackingFailed,
  InvalidArgument,
  Io,
};

const char* to_string(ErrorKind kind);

// All library failures are reported through this exception; `kind()` is the
// machine-checkable part, `what()` carries the context.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct Nucleus {
  int id = 0;
  Vec3 centroid = Vec3::Zero();
  // Principal-axis radii, descending.
  Vec3 radii = Vec3::Ones();
};

struct Worm {
  std::string worm_id;
  std::vector<Nucleus> nuclei;
  // nucleus id -> ground-truth label; evaluation only.
  std::map<int, int> gt_labels;

  std::size_t size() const { return nuclei.size(); }
  bool has_labels() const { return !gt_labels.empty(); }
  std::optional<int> label_of_index(std::size_t index) const;
  std::vector<Vec3> centroids() const;
};

// Checks the Worm invariants (unique ids, injective labels, sorted positive
// radii, finite centroids). Throws InvalidArgument.
void validate(const Worm& worm);

// Partial injective correspondence between a left and a right index set.
struct Matching {
  int n_left = 0;
  int n_right = 0;
  std::vector<std::pair<int, int>> pairs;
  // Optional per-pair cost, parallel to `pairs` (empty when unknown).
  std::vector<double> pair_costs;

  std::size_t size() const { return pairs.size(); }
  // left index -> right index, -1 when unassigned.
  std::vector<int> left_to_right() const;
  std::vector<int> right_to_left() const;
  // Sorts pairs by left index, keeping pair_costs aligned.
  void normalize();
};

// Throws InvalidArgument if the uniqueness constraints are violated or an
// index is out of range.
void check_uniqueness(const Matching& m);

}  // namespace cellmatch
