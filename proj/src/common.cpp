#include "cellmatch/common.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace cellmatch {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateCloud: return "DegenerateCloud";
    case ErrorKind::NoMatches: return "NoMatches";
    case ErrorKind::NonPositiveVariance: return "NonPositiveVariance";
    case ErrorKind::SamePair: return "SamePair";
    case ErrorKind::ZeroWeights: return "ZeroWeights";
    case ErrorKind::ForbiddenPair: return "ForbiddenPair";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::MissingPair: return "MissingPair";
    case ErrorKind::InconsistentInput: return "InconsistentInput";
    case ErrorKind::InsufficientSupport: return "InsufficientSupport";
    case ErrorKind::MissingLabels: return "MissingLabels";
    case ErrorKind::EmptySpace: return "EmptySpace";
    case ErrorKind::NoFeasible: return "NoFeasible";
    case ErrorKind::StageFailed: return "StageFailed";
    case ErrorKind::PackingFailed: return "PackingFailed";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

std::optional<int> Worm::label_of_index(std::size_t index) const {
  auto it = gt_labels.find(nuclei.at(index).id);
  if (it == gt_labels.end()) return std::nullopt;
  return it->second;
}

std::vector<Vec3> Worm::centroids() const {
  std::vector<Vec3> out;
  out.reserve(nuclei.size());
  for (const auto& n : nuclei) out.push_back(n.centroid);
  return out;
}

void validate(const Worm& worm) {
  std::set<int> ids;
  for (const auto& n : worm.nuclei) {
    if (!ids.insert(n.id).second)
      throw Error(ErrorKind::InvalidArgument, "duplicate nucleus id " + std::to_string(n.id));
    if (!n.centroid.allFinite())
      throw Error(ErrorKind::InvalidArgument, "non-finite centroid in nucleus " + std::to_string(n.id));
    if (!(n.radii[0] >= n.radii[1] && n.radii[1] >= n.radii[2] && n.radii[2] > 0.0))
      throw Error(ErrorKind::InvalidArgument, "radii must be positive and descending in nucleus " +
                                                  std::to_string(n.id));
  }
  std::set<int> labels;
  for (const auto& [id, label] : worm.gt_labels) {
    if (!ids.count(id))
      throw Error(ErrorKind::InvalidArgument, "label for unknown nucleus " + std::to_string(id));
    if (!labels.insert(label).second)
      throw Error(ErrorKind::InvalidArgument, "label " + std::to_string(label) + " used twice");
  }
}

std::vector<int> Matching::left_to_right() const {
  std::vector<int> out(static_cast<std::size_t>(n_left), -1);
  for (const auto& [l, r] : pairs) out.at(static_cast<std::size_t>(l)) = r;
  return out;
}

std::vector<int> Matching::right_to_left() const {
  std::vector<int> out(static_cast<std::size_t>(n_right), -1);
  for (const auto& [l, r] : pairs) out.at(static_cast<std::size_t>(r)) = l;
  return out;
}

void Matching::normalize() {
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pairs[a] < pairs[b]; });
  std::vector<std::pair<int, int>> sorted_pairs;
  std::vector<double> sorted_costs;
  sorted_pairs.reserve(pairs.size());
  for (auto k : order) {
    sorted_pairs.push_back(pairs[k]);
    if (!pair_costs.empty()) sorted_costs.push_back(pair_costs[k]);
  }
  pairs = std::move(sorted_pairs);
  pair_costs = std::move(sorted_costs);
}

void check_uniqueness(const Matching& m) {
  std::vector<char> left(static_cast<std::size_t>(m.n_left), 0);
  std::vector<char> right(static_cast<std::size_t>(m.n_right), 0);
  for (const auto& [l, r] : m.pairs) {
    if (l < 0 || l >= m.n_left || r < 0 || r >= m.n_right)
      throw Error(ErrorKind::InvalidArgument, "matching index out of range");
    if (left[static_cast<std::size_t>(l)]++ || right[static_cast<std::size_t>(r)]++)
      throw Error(ErrorKind::InvalidArgument, "matching violates uniqueness");
  }
  if (!m.pair_costs.empty() && m.pair_costs.size() != m.pairs.size())
    throw Error(ErrorKind::InvalidArgument, "pair_costs size mismatch");
}

}  // namespace cellmatch
