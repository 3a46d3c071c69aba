#include "cellmatch/atlas.hpp"

#include "cellmatch/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace cellmatch {

OffsetStats Atlas::offset(int i, int j) const {
  if (i < j) return offsets.at({i, j});
  OffsetStats o = offsets.at({j, i});
  o.mean = -o.mean;
  return o;
}

std::vector<Vec3> Atlas::means() const {
  std::vector<Vec3> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.mean_cen);
  return out;
}

namespace {

struct Moments {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Zero();
};

// Maximum-likelihood mean and covariance (1/n).
Moments moments(const std::vector<Vec3>& xs) {
  Moments m;
  for (const auto& x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (const auto& x : xs) {
    const Vec3 d = x - m.mean;
    m.cov += d * d.transpose();
  }
  m.cov /= static_cast<double>(xs.size());
  return m;
}

Mat3 regularized(const Mat3& empirical, std::size_t n, const Vec3& fallback_diag) {
  const Mat3 base = n >= static_cast<std::size_t>(kMinEmpiricalSupport) ? empirical : Mat3(fallback_diag.asDiagonal());
  return base + kCovarianceFloor * Mat3::Identity();
}

// Members of every atlas entry as (worm index, nucleus index); worms in
// ascending order.
using Groups = std::vector<std::vector<Member>>;

Atlas build_from_groups(const Groups& groups, const std::vector<int>& labels, const std::vector<Worm>& worms,
                        const SharedCovariances& fallback, const CostWeights& weights) {
  Atlas atlas;
  atlas.weights = weights;
  const std::size_t n_entries = groups.size();
  // presence[w][k]: nucleus of worm w in entry k, or -1.
  std::vector<std::vector<int>> presence(worms.size(), std::vector<int>(n_entries, -1));
  for (std::size_t k = 0; k < n_entries; ++k) {
    std::vector<Vec3> cen, rad;
    for (const auto& [w, n] : groups[k]) {
      const Nucleus& nuc = worms[static_cast<std::size_t>(w)].nuclei[static_cast<std::size_t>(n)];
      cen.push_back(nuc.centroid);
      rad.push_back(nuc.radii);
      presence[static_cast<std::size_t>(w)][k] = n;
    }
    const Moments mc = moments(cen), mr = moments(rad);
    AtlasEntry e;
    e.label = labels[k];
    e.mean_cen = mc.mean;
    e.mean_rad = mr.mean;
    e.cov_cen = regularized(mc.cov, cen.size(), fallback.cen);
    e.cov_rad = regularized(mr.cov, rad.size(), fallback.rad);
    e.support = static_cast<int>(cen.size());
    atlas.entries.push_back(e);
  }
  std::vector<Vec3> diffs;
  for (std::size_t i = 0; i < n_entries; ++i)
    for (std::size_t j = i + 1; j < n_entries; ++j) {
      diffs.clear();
      for (std::size_t w = 0; w < worms.size(); ++w) {
        const int a = presence[w][i], b = presence[w][j];
        if (a < 0 || b < 0) continue;
        diffs.push_back(worms[w].nuclei[static_cast<std::size_t>(a)].centroid -
                        worms[w].nuclei[static_cast<std::size_t>(b)].centroid);
      }
      OffsetStats o;
      o.support = static_cast<int>(diffs.size());
      if (diffs.size() >= static_cast<std::size_t>(kMinEmpiricalSupport)) {
        const Moments m = moments(diffs);
        o.mean = m.mean;
        o.cov = m.cov + kCovarianceFloor * Mat3::Identity();
      } else {
        o.mean = atlas.entries[i].mean_cen - atlas.entries[j].mean_cen;
        o.cov = Mat3(fallback.off.asDiagonal()) + kCovarianceFloor * Mat3::Identity();
      }
      atlas.offsets[{static_cast<int>(i), static_cast<int>(j)}] = o;
    }
  return atlas;
}

void require_labels(const std::vector<Worm>& worms) {
  for (const auto& w : worms)
    if (!w.has_labels()) throw Error(ErrorKind::MissingLabels, "worm '" + w.worm_id + "' has no ground-truth labels");
}

}  // namespace

Atlas build_unsupervised_atlas(const Universe& universe, const std::vector<Worm>& worms,
                               const SharedCovariances& sigmas, int min_support) {
  if (universe.cliques.empty()) throw Error(ErrorKind::InsufficientSupport, "universe has no cliques");
  Groups groups;
  std::vector<int> labels;
  for (std::size_t k = 0; k < universe.cliques.size(); ++k) {
    const auto& c = universe.cliques[k];
    if (c.size() < static_cast<std::size_t>(std::max(1, min_support)))
      throw Error(ErrorKind::InsufficientSupport,
                  "clique " + std::to_string(k) + " has " + std::to_string(c.size()) + " members");
    groups.push_back(c);
    labels.push_back(static_cast<int>(k));
  }
  const CostWeights w = normalize_weights({sigmas.cen.norm(), sigmas.rad.norm(), sigmas.off.norm()});
  return build_from_groups(groups, labels, worms, sigmas, w);
}

Atlas build_supervised_atlas(const std::vector<Worm>& worms, const CostWeights& weights,
                             const SharedCovariances& fallback) {
  require_labels(worms);
  std::map<int, std::vector<Member>> by_label;
  for (std::size_t w = 0; w < worms.size(); ++w)
    for (std::size_t n = 0; n < worms[w].size(); ++n)
      if (const auto l = worms[w].label_of_index(n)) by_label[*l].emplace_back(static_cast<int>(w), static_cast<int>(n));
  if (by_label.empty()) throw Error(ErrorKind::InsufficientSupport, "no labelled nuclei");
  Groups groups;
  std::vector<int> labels;
  for (auto& [l, members] : by_label) {
    groups.push_back(std::move(members));
    labels.push_back(l);
  }
  Atlas atlas = build_from_groups(groups, labels, worms, fallback, normalize_weights(weights));
  for (std::size_t k = 0; k < atlas.entries.size(); ++k) atlas.label_names[static_cast<int>(k)] = atlas.entries[k].label;
  return atlas;
}

std::map<int, int> assign_gt_labels(const Universe& universe, const std::vector<Worm>& worms) {
  // Removing an assigned label from the other cliques only touches counts of
  // that label, so one pass over the sorted counts reproduces the iteration.
  std::vector<std::tuple<int, int, int>> counts;  // (count, label, clique)
  for (std::size_t k = 0; k < universe.cliques.size(); ++k) {
    std::map<int, int> c;
    for (const auto& [w, n] : universe.cliques[k])
      if (const auto l = worms[static_cast<std::size_t>(w)].label_of_index(static_cast<std::size_t>(n))) ++c[*l];
    for (const auto& [l, cnt] : c) counts.emplace_back(cnt, l, static_cast<int>(k));
  }
  std::sort(counts.begin(), counts.end(), [](const auto& x, const auto& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
    if (std::get<1>(x) != std::get<1>(y)) return std::get<1>(x) < std::get<1>(y);
    return std::get<2>(x) < std::get<2>(y);
  });
  std::map<int, int> out;
  std::map<int, char> used_label;
  for (const auto& [cnt, l, k] : counts) {
    if (out.count(k) || used_label.count(l)) continue;
    out[k] = l;
    used_label[l] = 1;
  }
  return out;
}

namespace {

Mat3 precision_of(const Mat3& cov) { return cov.ldlt().solve(Mat3::Identity()); }

class AtlasQuadratic final : public QuadraticModel {
 public:
  AtlasQuadratic(const Atlas& atlas, const Worm& worm, int k_neighbors)
      : right_(worm.centroids()), lambda_(atlas.weights.off) {
    neighbors_ = neighbor_graph(atlas.means(), k_neighbors);
    terms_.resize(neighbors_.size());
    for (std::size_t i = 0; i < neighbors_.size(); ++i)
      for (int j : neighbors_[i]) {
        const OffsetStats o = atlas.offset(static_cast<int>(i), j);
        terms_[i].push_back({o.mean, precision_of(o.cov)});
      }
  }

  double cost(int i, int s, int j, int t) const override {
    const auto& nb = neighbors_[static_cast<std::size_t>(i)];
    const auto pos = static_cast<std::size_t>(std::lower_bound(nb.begin(), nb.end(), j) - nb.begin());
    const Term& term = terms_[static_cast<std::size_t>(i)][pos];
    const Vec3 d = right_[static_cast<std::size_t>(s)] - right_[static_cast<std::size_t>(t)] - term.mean;
    return lambda_ * mahalanobis_precision(d, term.precision);
  }
  const std::vector<int>& neighbors(int i) const override { return neighbors_[static_cast<std::size_t>(i)]; }
  int n_left() const override { return static_cast<int>(neighbors_.size()); }

 private:
  struct Term {
    Vec3 mean;
    Mat3 precision;
  };
  std::vector<Vec3> right_;
  double lambda_;
  std::vector<std::vector<int>> neighbors_;
  std::vector<std::vector<Term>> terms_;
};

}  // namespace

GmInstance build_atlas_instance(const Atlas& atlas, const Worm& worm, const AtlasMatchOptions& opts) {
  const auto& sp = opts.sparsity;
  if (sp.k_min < 1) throw Error(ErrorKind::InvalidArgument, "k_min must be >= 1");
  GmInstance inst;
  inst.n_left = static_cast<int>(atlas.entries.size());
  inst.n_right = static_cast<int>(worm.size());
  inst.c0 = opts.c0;
  inst.allowed.resize(atlas.entries.size());
  const std::size_t nr = worm.size();
  std::vector<double> cost(nr);
  std::vector<char> keep(nr);
  std::vector<int> order(nr);
  for (std::size_t i = 0; i < atlas.entries.size(); ++i) {
    const AtlasEntry& e = atlas.entries[i];
    const Mat3 pc = precision_of(e.cov_cen), pr = precision_of(e.cov_rad);
    for (std::size_t s = 0; s < nr; ++s) {
      const Nucleus& n = worm.nuclei[s];
      const double dc = mahalanobis_precision(n.centroid - e.mean_cen, pc);
      const double dr = mahalanobis_precision(n.radii - e.mean_rad, pr);
      keep[s] = (dc <= sp.tau_cen && dr <= sp.tau_rad) ? 1 : 0;
      cost[s] = atlas.weights.cen * dc + atlas.weights.rad * dr;
    }
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(sp.k_min), nr);
    for (std::size_t s = 0; s < nr; ++s) order[s] = static_cast<int>(s);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), [&](int x, int y) {
      const double cx = cost[static_cast<std::size_t>(x)], cy = cost[static_cast<std::size_t>(y)];
      return cx != cy ? cx < cy : x < y;
    });
    for (std::size_t r = 0; r < k; ++r) keep[static_cast<std::size_t>(order[r])] = 1;
    for (std::size_t s = 0; s < nr; ++s)
      if (keep[s]) inst.allowed[i].push_back({static_cast<int>(s), cost[s] - opts.c0});
  }
  if (opts.quadratic && atlas.weights.off > 0.0 && atlas.entries.size() > 1)
    inst.quadratic = std::make_shared<AtlasQuadratic>(atlas, worm, opts.quad_neighbors);
  return inst;
}

Matching match_to_atlas(const Atlas& atlas, const Worm& worm, const AtlasMatchOptions& opts) {
  const GmInstance inst = build_atlas_instance(atlas, worm, opts);
  return solve_gm(inst, opts.gm).matching;
}

namespace {

void finish(AccuracyReport& r) { r.accuracy = r.total ? static_cast<double>(r.correct) / static_cast<double>(r.total) : 0.0; }

}  // namespace

AccuracyReport atlas_accuracy(const Matching& m, const Worm& worm, const std::map<int, int>& label_map) {
  AccuracyReport r;
  std::vector<int> entry_of(worm.size(), -1);
  for (const auto& [i, s] : m.pairs) entry_of[static_cast<std::size_t>(s)] = i;
  for (std::size_t n = 0; n < worm.size(); ++n) {
    const auto gt = worm.label_of_index(n);
    ++r.total;
    const int e = entry_of[n];
    if (e < 0) {
      ++r.unmatched;
      continue;
    }
    const auto it = label_map.find(e);
    if (gt && it != label_map.end() && it->second == *gt) ++r.correct;
  }
  finish(r);
  return r;
}

AccuracyReport pre_atlas_accuracy(const Universe& universe, const std::map<int, int>& label_map,
                                  const std::vector<Worm>& worms) {
  AccuracyReport r;
  std::vector<std::vector<int>> clique_of(worms.size());
  for (std::size_t w = 0; w < worms.size(); ++w) clique_of[w].assign(worms[w].size(), -1);
  for (std::size_t k = 0; k < universe.cliques.size(); ++k)
    for (const auto& [w, n] : universe.cliques[k])
      clique_of[static_cast<std::size_t>(w)][static_cast<std::size_t>(n)] = static_cast<int>(k);
  for (std::size_t w = 0; w < worms.size(); ++w)
    for (std::size_t n = 0; n < worms[w].size(); ++n) {
      const auto gt = worms[w].label_of_index(n);
      ++r.total;
      const auto it = label_map.find(clique_of[w][n]);
      if (it == label_map.end()) {
        ++r.unmatched;
        continue;
      }
      if (gt && it->second == *gt) ++r.correct;
    }
  finish(r);
  return r;
}

AccuracyReport combine(const std::vector<AccuracyReport>& parts) {
  AccuracyReport r;
  for (const auto& p : parts) {
    r.correct += p.correct;
    r.total += p.total;
    r.unmatched += p.unmatched;
  }
  finish(r);
  return r;
}

AffineTransform label_alignment(const Worm& worm, const Worm& base) {
  std::map<int, std::size_t> base_index;
  for (std::size_t n = 0; n < base.size(); ++n)
    if (const auto l = base.label_of_index(n)) base_index[*l] = n;
  std::vector<Vec3> src, dst;
  for (std::size_t n = 0; n < worm.size(); ++n) {
    const auto l = worm.label_of_index(n);
    if (!l) continue;
    const auto it = base_index.find(*l);
    if (it == base_index.end()) continue;
    src.push_back(worm.nuclei[n].centroid);
    dst.push_back(base.nuclei[it->second].centroid);
  }
  return least_squares_affine(src, dst);
}

BaseSelection select_supervised_base_worm(const std::vector<Worm>& worms, int workers) {
  if (worms.size() < 3) throw Error(ErrorKind::InvalidArgument, "base selection needs at least 3 worms");
  require_labels(worms);
  BaseSelection sel;
  sel.mean_distance.assign(worms.size(), 0.0);
  parallel_for(worms.size(), workers, [&](std::size_t b) {
    std::vector<Worm> aligned(worms.size());
    for (std::size_t w = 0; w < worms.size(); ++w)
      aligned[w] = w == b ? worms[w] : transform_worm(worms[w], label_alignment(worms[w], worms[b]));
    const Atlas atlas = build_supervised_atlas(aligned);
    std::map<int, std::pair<Vec3, Mat3>> by_label;
    for (const auto& e : atlas.entries) by_label[e.label] = {e.mean_cen, precision_of(e.cov_cen)};
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t w = 0; w < aligned.size(); ++w) {
      if (w == b) continue;
      for (std::size_t n = 0; n < aligned[w].size(); ++n) {
        const auto l = aligned[w].label_of_index(n);
        if (!l) continue;
        const auto& [mean, prec] = by_label.at(*l);
        sum += std::sqrt(mahalanobis_precision(aligned[w].nuclei[n].centroid - mean, prec));
        ++count;
      }
    }
    sel.mean_distance[b] = count ? sum / static_cast<double>(count) : 0.0;
  });
  sel.index = static_cast<int>(std::min_element(sel.mean_distance.begin(), sel.mean_distance.end()) -
                               sel.mean_distance.begin());
  return sel;
}

}  // namespace cellmatch
