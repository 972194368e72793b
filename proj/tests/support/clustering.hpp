#pragma once

// Brute-force reference for clustering: connected components of the all-pairs
// equivalence graph, and a generator of sample sets rich in equivalences.

#include <algorithm>
#include <numeric>
#include <vector>

#include "rlp/common/rng.hpp"
#include "rlp/spg/spg.hpp"

namespace rlp::testing {

inline std::vector<std::vector<std::size_t>> components(const spg::PolicySampleSet& s, const spg::EquivalenceOracle& oracle) {
  const std::size_t n = s.ys.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (oracle.equivalent(s.x, s.ys[i], s.ys[j])) parent[find(j)] = find(i);
  std::vector<std::vector<std::size_t>> groups;
  std::vector<long> slot(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = find(i);
    if (slot[r] < 0) {
      slot[r] = static_cast<long>(groups.size());
      groups.emplace_back();
    }
    groups[static_cast<std::size_t>(slot[r])].push_back(i);
  }
  return groups;  // ordered by first member, members ascending
}

// Short responses over two content symbols plus fillers, so canonical
// collisions between different token strings are common.
inline spg::PolicySampleSet random_sample_set(Rng& rng, std::size_t n = 10) {
  spg::PolicySampleSet s;
  s.x.id = rng.next_u64() % 1000;
  s.x.args = {11, 12};
  for (std::size_t i = 0; i < n; ++i) {
    world::Response y;
    const std::size_t len = rng.below(4);
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t pick = rng.below(3);
      y.tokens.push_back(pick == 0 ? world::vocab::kFiller : (pick == 1 ? 11 : 12));
    }
    if (rng.uniform() < 0.7) y.tokens.push_back(world::vocab::kEos);
    s.ys.push_back(y);
  }
  return s;
}

}  // namespace rlp::testing
