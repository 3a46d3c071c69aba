#include "cellmatch/mgm.hpp"

#include "cellmatch/assignment.hpp"
#include "cellmatch/parallel.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <set>

namespace cellmatch {

const Matching* MultiMatching::find(int a, int b) const {
  const auto it = pairwise.find({a, b});
  return it == pairwise.end() ? nullptr : &it->second;
}

std::size_t MultiMatching::total_matches() const {
  std::size_t n = 0;
  for (const auto& [key, m] : pairwise) n += m.size();
  return n;
}

namespace {

// Map from worm x to worm y for any ordered (x, y), derived from the stored
// a<b matching.
std::vector<int> directed_map(const MultiMatching& mm, int x, int y, bool missing_is_error) {
  const bool forward = x < y;
  const Matching* m = forward ? mm.find(x, y) : mm.find(y, x);
  if (!m) {
    if (missing_is_error)
      throw Error(ErrorKind::MissingPair, "no matching for worms " + std::to_string(std::min(x, y)) + "," +
                                              std::to_string(std::max(x, y)));
    return std::vector<int>(static_cast<std::size_t>(mm.sizes[static_cast<std::size_t>(x)]), -1);
  }
  Matching sized = *m;
  sized.n_left = std::max(sized.n_left, mm.sizes[static_cast<std::size_t>(forward ? x : y)]);
  sized.n_right = std::max(sized.n_right, mm.sizes[static_cast<std::size_t>(forward ? y : x)]);
  return forward ? sized.left_to_right() : sized.right_to_left();
}

std::uint64_t broken_chains(const std::vector<int>& xy, const std::vector<int>& yz, const std::vector<int>& xz) {
  std::uint64_t broken = 0;
  for (std::size_t s = 0; s < xy.size(); ++s) {
    const int t = xy[s];
    if (t < 0) continue;
    const int u = yz[static_cast<std::size_t>(t)];
    if (u < 0) continue;
    if (xz[s] != u) ++broken;
  }
  return broken;
}

CycleReport cycle_report(const MultiMatching& mm, bool missing_is_error) {
  CycleReport rep;
  const int n = mm.n_worms();
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      for (int c = b + 1; c < n; ++c) {
        const auto ab = directed_map(mm, a, b, missing_is_error);
        const auto bc = directed_map(mm, b, c, missing_is_error);
        const auto ca = directed_map(mm, c, a, missing_is_error);
        const auto ac = directed_map(mm, a, c, missing_is_error);
        const auto ba = directed_map(mm, b, a, missing_is_error);
        const auto cb = directed_map(mm, c, b, missing_is_error);
        rep.inconsistent_triples += broken_chains(ab, bc, ac);  // a→b→c
        rep.inconsistent_triples += broken_chains(bc, ca, ba);  // b→c→a
        rep.inconsistent_triples += broken_chains(ca, ab, cb);  // c→a→b
        rep.total_triples_checked += 3;
      }
  return rep;
}

}  // namespace

CycleReport discrete_cycle_loss(const MultiMatching& mm) { return cycle_report(mm, true); }

bool is_cycle_consistent(const MultiMatching& mm) { return cycle_report(mm, false).inconsistent_triples == 0; }

MultiMatching induced_multimatching(const Universe& u, const std::vector<int>& sizes) {
  MultiMatching mm;
  mm.sizes = sizes;
  const int n = static_cast<int>(sizes.size());
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) {
      Matching& m = mm.pairwise[{a, b}];
      m.n_left = sizes[static_cast<std::size_t>(a)];
      m.n_right = sizes[static_cast<std::size_t>(b)];
    }
  for (const auto& clique : u.cliques)
    for (std::size_t x = 0; x < clique.size(); ++x)
      for (std::size_t y = x + 1; y < clique.size(); ++y) {
        const auto& [wa, na] = clique[x];
        const auto& [wb, nb] = clique[y];
        if (wa < wb)
          mm.pairwise[{wa, wb}].pairs.emplace_back(na, nb);
        else
          mm.pairwise[{wb, wa}].pairs.emplace_back(nb, na);
      }
  for (auto& [key, m] : mm.pairwise) m.normalize();
  return mm;
}

AllowedMask mask_of(const GmInstance& inst) {
  AllowedMask mask(static_cast<std::size_t>(inst.n_left));
  for (int i = 0; i < inst.n_left; ++i)
    for (const auto& c : inst.allowed[static_cast<std::size_t>(i)]) mask[static_cast<std::size_t>(i)].push_back(c.right);
  return mask;
}

namespace {

struct Edge {
  int u = 0, v = 0;  // global node ids
  double cost = 0.0;
};

// Global node numbering over all worms.
struct NodeIndex {
  std::vector<int> offset;
  std::vector<int> worm_of, nuc_of;

  explicit NodeIndex(const std::vector<int>& sizes) {
    offset.resize(sizes.size() + 1, 0);
    for (std::size_t w = 0; w < sizes.size(); ++w) offset[w + 1] = offset[w] + sizes[w];
    worm_of.resize(static_cast<std::size_t>(offset.back()));
    nuc_of.resize(worm_of.size());
    for (std::size_t w = 0; w < sizes.size(); ++w)
      for (int k = 0; k < sizes[w]; ++k) {
        const auto g = static_cast<std::size_t>(offset[w] + k);
        worm_of[g] = static_cast<int>(w);
        nuc_of[g] = k;
      }
  }
  int id(int worm, int nucleus) const { return offset[static_cast<std::size_t>(worm)] + nucleus; }
  int size() const { return offset.back(); }
};

class PairChecker {
 public:
  PairChecker(const NodeIndex& idx, SyncMode mode, const AllowedMasks* masks)
      : idx_(idx), active_(mode == SyncMode::Sparse && masks), masks_(masks) {}

  bool allowed(int g1, int g2) const {
    if (!active_) return true;
    int w1 = idx_.worm_of[static_cast<std::size_t>(g1)], w2 = idx_.worm_of[static_cast<std::size_t>(g2)];
    int n1 = idx_.nuc_of[static_cast<std::size_t>(g1)], n2 = idx_.nuc_of[static_cast<std::size_t>(g2)];
    if (w1 > w2) {
      std::swap(w1, w2);
      std::swap(n1, n2);
    }
    const auto it = masks_->find({w1, w2});
    if (it == masks_->end()) return true;
    if (static_cast<std::size_t>(n1) >= it->second.size()) return false;
    const auto& row = it->second[static_cast<std::size_t>(n1)];
    return std::binary_search(row.begin(), row.end(), n2);
  }

  // Every implied pair between g and `others` (except `skip`) is allowed.
  bool allowed_with(int g, const std::vector<int>& others, int skip = -1) const {
    if (!active_) return true;
    for (int o : others)
      if (o != skip && !allowed(g, o)) return false;
    return true;
  }

 private:
  const NodeIndex& idx_;
  bool active_;
  const AllowedMasks* masks_;
};

struct Link {
  int count = 0;
  double cost_sum = 0.0;
};

struct QueueEntry {
  int count;
  double mean_cost;
  int lo, hi;
};

struct QueueOrder {
  // Higher support first, then lower mean cost, then lower root ids.
  bool operator()(const QueueEntry& x, const QueueEntry& y) const {
    if (x.count != y.count) return x.count < y.count;
    if (x.mean_cost != y.mean_cost) return x.mean_cost > y.mean_cost;
    if (x.lo != y.lo) return x.lo > y.lo;
    return x.hi > y.hi;
  }
};

// Clique members as (worm, node), sorted by worm.
using Members = std::vector<std::pair<int, int>>;

bool worm_disjoint(const Members& a, const Members& b) {
  std::size_t x = 0, y = 0;
  while (x < a.size() && y < b.size()) {
    if (a[x].first == b[y].first) return false;
    if (a[x].first < b[y].first)
      ++x;
    else
      ++y;
  }
  return true;
}

// Union-find merging of cliques in order of support; returns the clique root
// of every node.
std::vector<int> greedy_cliques(const NodeIndex& idx, const std::vector<Edge>& edges, const PairChecker& check) {
  const int n = idx.size();
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<Members> members(static_cast<std::size_t>(n));
  for (int g = 0; g < n; ++g) members[static_cast<std::size_t>(g)] = {{idx.worm_of[static_cast<std::size_t>(g)], g}};
  std::vector<std::map<int, Link>> links(static_cast<std::size_t>(n));

  auto root = [&](int g) {
    while (parent[static_cast<std::size_t>(g)] != g) {
      parent[static_cast<std::size_t>(g)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(g)])];
      g = parent[static_cast<std::size_t>(g)];
    }
    return g;
  };

  std::priority_queue<QueueEntry, std::vector<QueueEntry>, QueueOrder> pq;
  auto push = [&](int a, int b, const Link& l) {
    pq.push({l.count, l.cost_sum / l.count, std::min(a, b), std::max(a, b)});
  };

  for (const auto& e : edges) {
    if (idx.worm_of[static_cast<std::size_t>(e.u)] == idx.worm_of[static_cast<std::size_t>(e.v)]) continue;
    auto& l = links[static_cast<std::size_t>(e.u)][e.v];
    l.count += 1;
    l.cost_sum += e.cost;
    links[static_cast<std::size_t>(e.v)][e.u] = l;
  }
  for (int a = 0; a < n; ++a)
    for (const auto& [b, l] : links[static_cast<std::size_t>(a)])
      if (a < b) push(a, b, l);

  auto drop_link = [&](int a, int b) {
    links[static_cast<std::size_t>(a)].erase(b);
    links[static_cast<std::size_t>(b)].erase(a);
  };

  while (!pq.empty()) {
    const QueueEntry top = pq.top();
    pq.pop();
    const int a = top.lo, b = top.hi;
    if (root(a) != a || root(b) != b) continue;
    const auto it = links[static_cast<std::size_t>(a)].find(b);
    if (it == links[static_cast<std::size_t>(a)].end()) continue;
    // Stale entry: the link was updated by a later merge.
    if (it->second.count != top.count || it->second.cost_sum / it->second.count != top.mean_cost) continue;

    const Members& ma = members[static_cast<std::size_t>(a)];
    const Members& mb = members[static_cast<std::size_t>(b)];
    bool ok = worm_disjoint(ma, mb);
    for (std::size_t x = 0; ok && x < ma.size(); ++x)
      for (std::size_t y = 0; ok && y < mb.size(); ++y) ok = check.allowed(ma[x].second, mb[y].second);
    if (!ok) {
      drop_link(a, b);
      continue;
    }

    // b joins a, so every root is the lowest node id of its clique.
    Members merged;
    merged.reserve(ma.size() + mb.size());
    std::merge(ma.begin(), ma.end(), mb.begin(), mb.end(), std::back_inserter(merged));
    members[static_cast<std::size_t>(a)] = std::move(merged);
    members[static_cast<std::size_t>(b)].clear();
    parent[static_cast<std::size_t>(b)] = a;
    drop_link(a, b);
    const auto b_links = std::move(links[static_cast<std::size_t>(b)]);
    links[static_cast<std::size_t>(b)].clear();
    for (const auto& [x, l] : b_links) {
      links[static_cast<std::size_t>(x)].erase(b);
      auto& la = links[static_cast<std::size_t>(a)][x];
      la.count += l.count;
      la.cost_sum += l.cost_sum;
      links[static_cast<std::size_t>(x)][a] = la;
      push(a, x, la);
    }
  }

  std::vector<int> clique(static_cast<std::size_t>(n));
  for (int g = 0; g < n; ++g) clique[static_cast<std::size_t>(g)] = root(g);
  return clique;
}

// Local improvement of a clique partition; every accepted move strictly
// increases the number of input edges inside cliques.
class CliqueSearch {
 public:
  CliqueSearch(const NodeIndex& idx, const std::vector<Edge>& edges, const PairChecker& check,
               const std::vector<int>& init)
      : idx_(idx), check_(check), adj_(static_cast<std::size_t>(idx.size())), clique_(init) {
    for (const auto& e : edges) {
      if (worm(e.u) == worm(e.v)) continue;
      adj_[static_cast<std::size_t>(e.u)].push_back(e.v);
      adj_[static_cast<std::size_t>(e.v)].push_back(e.u);
    }
    for (auto& a : adj_) {
      std::sort(a.begin(), a.end());
      a.erase(std::unique(a.begin(), a.end()), a.end());
    }
    // Clique ids live in [0, n); ids of emptied cliques are reused.
    by_worm_.resize(static_cast<std::size_t>(idx.size()));
    for (int g = 0; g < idx.size(); ++g) members(clique_[static_cast<std::size_t>(g)])[worm(g)] = g;
  }

  void run(int max_passes = 50) {
    for (int pass = 0; pass < max_passes; ++pass) {
      bool changed = false;
      for (int v = 0; v < idx_.size(); ++v) changed |= improve(v);
      if (!changed) break;
    }
  }

  const std::vector<int>& cliques() const { return clique_; }

 private:
  int worm(int g) const { return idx_.worm_of[static_cast<std::size_t>(g)]; }
  std::map<int, int>& members(int k) { return by_worm_[static_cast<std::size_t>(k)]; }

  // Input edges from v into clique k, ignoring node `skip`.
  int edges_into(int v, int k, int skip = -1) const {
    int c = 0;
    for (int u : adj_[static_cast<std::size_t>(v)])
      if (u != skip && clique_[static_cast<std::size_t>(u)] == k) ++c;
    return c;
  }

  std::vector<int> nodes_of(int k) const {
    std::vector<int> out;
    for (const auto& [w, g] : by_worm_[static_cast<std::size_t>(k)]) out.push_back(g);
    return out;
  }

  void place(int v, int k) {
    members(clique_[static_cast<std::size_t>(v)]).erase(worm(v));
    clique_[static_cast<std::size_t>(v)] = k;
    members(k)[worm(v)] = v;
  }

  bool worm_disjoint_cliques(int a, int b) const {
    const auto& mb = by_worm_[static_cast<std::size_t>(b)];
    for (const auto& [w, g] : by_worm_[static_cast<std::size_t>(a)])
      if (mb.count(w)) return false;
    return true;
  }

  int edges_between(int a, int b) const {
    int c = 0;
    for (const auto& [w, g] : by_worm_[static_cast<std::size_t>(a)]) c += edges_into(g, b);
    return c;
  }

  bool cliques_compatible(int a, int b) const {
    const auto nb = nodes_of(b);
    for (const auto& [w, g] : by_worm_[static_cast<std::size_t>(a)])
      if (!check_.allowed_with(g, nb)) return false;
    return true;
  }

  // Best clique for v outside {ex1, ex2} without a member of v's worm;
  // returns (edges, clique), clique -1 when v is best left alone.
  std::pair<int, int> best_target(int v, int ex1, int ex2) const {
    std::map<int, int> counts;
    for (int u : adj_[static_cast<std::size_t>(v)]) ++counts[clique_[static_cast<std::size_t>(u)]];
    std::pair<int, int> best{0, -1};
    for (const auto& [k, c] : counts) {
      if (k == ex1 || k == ex2 || c <= best.first) continue;
      if (by_worm_[static_cast<std::size_t>(k)].count(worm(v))) continue;
      if (!check_.allowed_with(v, nodes_of(k))) continue;
      best = {c, k};
    }
    return best;
  }

  // An unused clique id. One exists whenever a node leaves a clique of size
  // at least two, which is the only caller.
  int free_clique(int preferred) const {
    if (by_worm_[static_cast<std::size_t>(preferred)].empty()) return preferred;
    for (int k = 0; k < idx_.size(); ++k)
      if (by_worm_[static_cast<std::size_t>(k)].empty()) return k;
    throw Error(ErrorKind::InvalidArgument, "no free clique id");
  }

  bool improve(int v) {
    const int k1 = clique_[static_cast<std::size_t>(v)];
    const int w = worm(v);
    const int e1 = edges_into(v, k1);
    std::map<int, int> counts;
    for (int u : adj_[static_cast<std::size_t>(v)]) {
      const int k = clique_[static_cast<std::size_t>(u)];
      if (k != k1) ++counts[k];
    }

    enum class Kind { None, Relocate, Swap, Eject, Merge } kind = Kind::None;
    int best_gain = 0, best_k = -1, eject_target = -1;

    for (const auto& [k2, e2] : counts) {
      const auto& m2 = by_worm_[static_cast<std::size_t>(k2)];
      const auto occupant = m2.find(w);
      if (occupant == m2.end()) {
        const int gain = e2 - e1;
        if (gain > best_gain && check_.allowed_with(v, nodes_of(k2))) {
          best_gain = gain;
          kind = Kind::Relocate;
          best_k = k2;
        }
        if (worm_disjoint_cliques(k1, k2)) {
          const int gain_m = edges_between(k1, k2);
          if (gain_m > best_gain && cliques_compatible(k1, k2)) {
            best_gain = gain_m;
            kind = Kind::Merge;
            best_k = k2;
          }
        }
        continue;
      }
      // k2 already holds v2 from v's worm.
      const int v2 = occupant->second;
      const int e2_own = edges_into(v2, k2);
      const int to_k1 = edges_into(v2, k1, v);
      const int gain_swap = e2 - e2_own + to_k1 - e1;
      if (gain_swap > best_gain && check_.allowed_with(v, nodes_of(k2), v2) &&
          check_.allowed_with(v2, nodes_of(k1), v)) {
        best_gain = gain_swap;
        kind = Kind::Swap;
        best_k = k2;
      }
      // v takes v2's place; v2 moves to its best other clique.
      const int base = e2 - e2_own - e1;
      if (base + static_cast<int>(adj_[static_cast<std::size_t>(v2)].size()) > best_gain &&
          check_.allowed_with(v, nodes_of(k2), v2)) {
        const auto [e3, k3] = best_target(v2, k1, k2);
        if (base + e3 > best_gain) {
          best_gain = base + e3;
          kind = Kind::Eject;
          best_k = k2;
          eject_target = k3;
        }
      }
    }

    switch (kind) {
      case Kind::None:
        return false;
      case Kind::Relocate:
        place(v, best_k);
        return true;
      case Kind::Swap: {
        const int v2 = members(best_k).at(w);
        clique_[static_cast<std::size_t>(v)] = best_k;
        clique_[static_cast<std::size_t>(v2)] = k1;
        members(best_k)[w] = v;
        members(k1)[w] = v2;
        return true;
      }
      case Kind::Eject: {
        const int v2 = members(best_k).at(w);
        place(v2, eject_target >= 0 ? eject_target : free_clique(v2));
        place(v, best_k);
        return true;
      }
      case Kind::Merge:
        for (int g : nodes_of(best_k)) place(g, k1);
        return true;
    }
    return false;
  }

  const NodeIndex& idx_;
  const PairChecker& check_;
  std::vector<std::vector<int>> adj_;
  std::vector<int> clique_;
  std::vector<std::map<int, int>> by_worm_;  // clique -> worm -> node
};

}  // namespace

// Instances with at most this many nuclei in total are solved exactly.
constexpr int kExactSyncNodes = 12;

int retained_edges(const std::vector<Edge>& edges, const std::vector<int>& clique) {
  int n = 0;
  for (const auto& e : edges)
    if (clique[static_cast<std::size_t>(e.u)] == clique[static_cast<std::size_t>(e.v)]) ++n;
  return n;
}

// Branch and bound over clique partitions, nodes in id order; replaces
// `clique` only by a strictly better partition.
class ExactCliques {
 public:
  ExactCliques(const NodeIndex& idx, const std::vector<Edge>& edges, const PairChecker& check)
      : idx_(idx), check_(check), n_(idx.size()) {
    adj_.assign(static_cast<std::size_t>(n_ * n_), 0);
    remaining_.assign(static_cast<std::size_t>(n_ + 1), 0);
    for (const auto& e : edges) {
      adj_[static_cast<std::size_t>(e.u * n_ + e.v)] = adj_[static_cast<std::size_t>(e.v * n_ + e.u)] = 1;
      ++remaining_[static_cast<std::size_t>(std::max(e.u, e.v))];
    }
    // remaining_[k]: edges whose later endpoint is k or beyond.
    for (int k = n_ - 1; k >= 0; --k) remaining_[static_cast<std::size_t>(k)] += remaining_[static_cast<std::size_t>(k + 1)];
  }

  void improve(std::vector<int>& clique, int incumbent) {
    best_ = incumbent;
    block_of_.assign(static_cast<std::size_t>(n_), -1);
    blocks_.clear();
    found_ = false;
    search(0, 0);
    if (!found_) return;
    for (int g = 0; g < n_; ++g)
      clique[static_cast<std::size_t>(g)] = blocks_best_[static_cast<std::size_t>(best_block_of_[static_cast<std::size_t>(g)])].front();
  }

 private:
  void search(int k, int score) {
    if (k == n_) {
      if (score > best_) {
        best_ = score;
        found_ = true;
        best_block_of_ = block_of_;
        blocks_best_ = blocks_;
      }
      return;
    }
    if (score + remaining_[static_cast<std::size_t>(k)] <= best_) return;
    const int w = idx_.worm_of[static_cast<std::size_t>(k)];
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      int gain = 0;
      bool ok = true;
      for (int m : blocks_[b]) {
        if (idx_.worm_of[static_cast<std::size_t>(m)] == w || !check_.allowed(m, k)) {
          ok = false;
          break;
        }
        gain += adj_[static_cast<std::size_t>(m * n_ + k)];
      }
      if (!ok) continue;
      blocks_[b].push_back(k);
      block_of_[static_cast<std::size_t>(k)] = static_cast<int>(b);
      search(k + 1, score + gain);
      blocks_[b].pop_back();
    }
    blocks_.push_back({k});
    block_of_[static_cast<std::size_t>(k)] = static_cast<int>(blocks_.size() - 1);
    search(k + 1, score);
    blocks_.pop_back();
  }

  const NodeIndex& idx_;
  const PairChecker& check_;
  int n_;
  std::vector<char> adj_;
  std::vector<int> remaining_;
  std::vector<int> block_of_, best_block_of_;
  std::vector<std::vector<int>> blocks_, blocks_best_;
  int best_ = 0;
  bool found_ = false;
};

SyncResult synchronize(const MultiMatching& mm, SyncMode mode, const AllowedMasks* masks) {
  const NodeIndex idx(mm.sizes);
  std::vector<Edge> edges;
  for (const auto& [key, m] : mm.pairwise) {
    const auto [a, b] = key;
    for (std::size_t k = 0; k < m.pairs.size(); ++k) {
      const auto [i, s] = m.pairs[k];
      const double c = k < m.pair_costs.size() ? m.pair_costs[k] : 0.0;
      edges.push_back({idx.id(a, i), idx.id(b, s), c});
    }
  }
  const PairChecker check(idx, mode, masks);
  CliqueSearch search(idx, edges, check, greedy_cliques(idx, edges, check));
  search.run();
  std::vector<int> clique = search.cliques();
  if (idx.size() <= kExactSyncNodes) ExactCliques(idx, edges, check).improve(clique, retained_edges(edges, clique));

  std::map<int, std::vector<Member>> grouped;
  for (int g = 0; g < idx.size(); ++g)
    grouped[clique[static_cast<std::size_t>(g)]].emplace_back(idx.worm_of[static_cast<std::size_t>(g)],
                                                             idx.nuc_of[static_cast<std::size_t>(g)]);
  SyncResult out;
  for (auto& [k, members] : grouped) {
    std::sort(members.begin(), members.end());
    out.universe.cliques.push_back(std::move(members));
  }
  std::sort(out.universe.cliques.begin(), out.universe.cliques.end());
  out.consistent = induced_multimatching(out.universe, mm.sizes);
  for (const auto& e : edges)
    if (clique[static_cast<std::size_t>(e.u)] == clique[static_cast<std::size_t>(e.v)]) ++out.retained;
  return out;
}

double synchronization_loss(const MultiMatching& mm_in, const MultiMatching& mm_out) {
  if (!is_cycle_consistent(mm_out))
    throw Error(ErrorKind::InconsistentInput, "output multi-matching is not cycle consistent");
  std::size_t common = 0;
  for (const auto& [key, m_in] : mm_in.pairwise) {
    const Matching* m_out = mm_out.find(key.first, key.second);
    if (!m_out) continue;
    const std::set<std::pair<int, int>> out_pairs(m_out->pairs.begin(), m_out->pairs.end());
    for (const auto& p : m_in.pairs) common += out_pairs.count(p);
  }
  return -static_cast<double>(common);
}

ReferenceSelection select_reference_worm(const std::vector<Worm>& worms, int workers) {
  const int n = static_cast<int>(worms.size());
  if (n < 3) throw Error(ErrorKind::InvalidArgument, "reference selection needs at least 3 worms");
  std::vector<WormPair> keys;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) keys.emplace_back(a, b);

  const CostWeights w{1.0, 1.0, 0.0};
  const SharedCovariances sigmas;
  InstanceOptions opts;
  opts.quadratic = false;
  std::vector<Matching> solved(keys.size());
  parallel_for(keys.size(), workers, [&](std::size_t k) {
    const auto [a, b] = keys[k];
    const Worm& right = worms[static_cast<std::size_t>(b)];
    SparsityParams dense;
    dense.k_min = static_cast<int>(std::max<std::size_t>(1, right.size()));
    const GmInstance inst =
        build_pairwise_instance(worms[static_cast<std::size_t>(a)], right, w, sigmas, dense, kC0Learning, opts);
    solved[k] = lap_from_instance(inst).matching;
  });

  MultiMatching mm;
  for (const auto& worm : worms) mm.sizes.push_back(static_cast<int>(worm.size()));
  for (std::size_t k = 0; k < keys.size(); ++k) mm.pairwise[keys[k]] = std::move(solved[k]);

  const SyncResult sync = synchronize(mm, SyncMode::Dense);
  ReferenceSelection sel;
  sel.incident_retained.assign(static_cast<std::size_t>(n), 0);
  for (const auto& [key, m] : mm.pairwise) {
    const Matching* out = sync.consistent.find(key.first, key.second);
    const std::set<std::pair<int, int>> kept(out->pairs.begin(), out->pairs.end());
    std::size_t c = 0;
    for (const auto& p : m.pairs) c += kept.count(p);
    sel.incident_retained[static_cast<std::size_t>(key.first)] += c;
    sel.incident_retained[static_cast<std::size_t>(key.second)] += c;
  }
  sel.index = static_cast<int>(std::max_element(sel.incident_retained.begin(), sel.incident_retained.end()) -
                               sel.incident_retained.begin());
  return sel;
}

}  // namespace cellmatch
