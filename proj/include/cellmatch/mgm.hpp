#pragma once

#include "cellmatch/costs.hpp"

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

namespace cellmatch {

using WormPair = std::pair<int, int>;

// Pairwise matchings over a set of worms. Keys satisfy a < b; worm a is the
// left side of the stored Matching.
struct MultiMatching {
  std::vector<int> sizes;  // nuclei per worm
  std::map<WormPair, Matching> pairwise;

  int n_worms() const { return static_cast<int>(sizes.size()); }
  const Matching* find(int a, int b) const;
  std::size_t total_matches() const;
};

struct CycleReport {
  std::uint64_t inconsistent_triples = 0;
  std::uint64_t total_triples_checked = 0;
};

// Counts broken chains s→t→u (no s→u) over worm triples a<b<c in the three
// rotations (a,b,c), (b,c,a), (c,a,b). Throws MissingPair.
CycleReport discrete_cycle_loss(const MultiMatching& mm);

// Same count with absent pairs read as empty; zero iff consistent.
bool is_cycle_consistent(const MultiMatching& mm);

// (worm index, nucleus index)
using Member = std::pair<int, int>;

struct Universe {
  // Each clique sorted, at most one member per worm; cliques sorted by first
  // member. Unmatched nuclei appear as singletons.
  std::vector<std::vector<Member>> cliques;
};

MultiMatching induced_multimatching(const Universe& u, const std::vector<int>& sizes);

enum class SyncMode { Sparse, Dense };

// Allowed right nodes per left node of one worm pair (sorted).
using AllowedMask = std::vector<std::vector<int>>;
using AllowedMasks = std::map<WormPair, AllowedMask>;

AllowedMask mask_of(const GmInstance& inst);

struct SyncResult {
  Universe universe;
  MultiMatching consistent;
  // Input matches kept by the consistent output.
  std::size_t retained = 0;
};

// Greedy union-find clique merging by support, followed by node relocation /
// exchange moves that strictly increase the number of retained matches;
// instances of at most 12 nuclei in total are then solved exactly. In
// sparse mode no clique may imply a pair outside `masks` (absent masks allow
// everything for that worm pair).
SyncResult synchronize(const MultiMatching& mm, SyncMode mode, const AllowedMasks* masks = nullptr);

// −|{matches present in both}|; throws InconsistentInput if mm_out is not
// cycle consistent.
double synchronization_loss(const MultiMatching& mm_in, const MultiMatching& mm_out);

struct ReferenceSelection {
  int index = 0;
  std::vector<std::size_t> incident_retained;
};

// Dense unlearned linear matching of all pairs, dense synchronisation; the
// worm with most incident retained matches wins (lowest index on ties).
ReferenceSelection select_reference_worm(const std::vector<Worm>& worms, int workers = 1);

}  // namespace cellmatch
