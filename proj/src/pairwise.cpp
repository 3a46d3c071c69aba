#include "cellmatch/pairwise.hpp"

#include "cellmatch/assignment.hpp"
#include "cellmatch/parallel.hpp"
#include "cellmatch/synth.hpp"

namespace cellmatch {

std::uint64_t pair_seed(std::uint64_t seed, int a, int b) {
  return derive_seed(seed, static_cast<std::uint64_t>(a) + 1000, static_cast<std::uint64_t>(b));
}

PairwiseResult solve_all_pairs(const std::vector<Worm>& worms, const PairwiseConfig& cfg) {
  std::vector<WormPair> keys;
  for (int a = 0; a < static_cast<int>(worms.size()); ++a)
    for (int b = a + 1; b < static_cast<int>(worms.size()); ++b) keys.emplace_back(a, b);

  InstanceOptions opts;
  opts.quadratic = cfg.solver == PairSolver::Gm;
  std::vector<Matching> matchings(keys.size());
  std::vector<AllowedMask> masks(keys.size());
  std::vector<std::size_t> allowed(keys.size());
  parallel_for(keys.size(), cfg.workers, [&](std::size_t k) {
    const auto [a, b] = keys[k];
    const GmInstance inst =
        build_pairwise_instance(worms[static_cast<std::size_t>(a)], worms[static_cast<std::size_t>(b)], cfg.params, opts);
    if (cfg.solver == PairSolver::Lap) {
      matchings[k] = lap_from_instance(inst).matching;
    } else {
      GmConfig gm = cfg.gm;
      gm.seed = pair_seed(cfg.seed, a, b);
      matchings[k] = solve_gm(inst, gm).matching;
    }
    masks[k] = mask_of(inst);
    allowed[k] = inst.n_allowed();
  });

  PairwiseResult out;
  for (const auto& w : worms) out.mm.sizes.push_back(static_cast<int>(w.size()));
  double total = 0.0;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    out.mm.pairwise[keys[k]] = std::move(matchings[k]);
    out.masks[keys[k]] = std::move(masks[k]);
    total += static_cast<double>(allowed[k]);
  }
  out.mean_allowed = keys.empty() ? 0.0 : total / static_cast<double>(keys.size());
  return out;
}

}  // namespace cellmatch
