#pragma once

// Brute-force reference implementations used by the tests. They work from the
// raw chemistry fields and never call the library's graph helpers.

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

#include "alchemy/chemistry.hpp"

namespace oracle {

using alchemy::Chemistry;

inline bool applicable(const Chemistry& c, int v, int potion) {
  const int axis = c.axis_of_pair[static_cast<std::size_t>(potion / 2)];
  return ((v >> axis) & 1) != c.direction_of_color[static_cast<std::size_t>(potion)];
}

inline int apply(const Chemistry& c, int v, int potion) {
  const int axis = c.axis_of_pair[static_cast<std::size_t>(potion / 2)];
  return (v & ~(1 << axis)) | (c.direction_of_color[static_cast<std::size_t>(potion)] << axis);
}

/// Endpoints of every applicable length-k potion sequence from v, minus v.
inline std::set<int> reachable(const Chemistry& c, int v, int k) {
  std::set<int> frontier{v};
  for (int step = 0; step < k; ++step) {
    std::set<int> next;
    for (int u : frontier) {
      for (int p = 0; p < 6; ++p) {
        if (applicable(c, u, p)) next.insert(apply(c, u, p));
      }
    }
    frontier = next;
  }
  frontier.erase(v);
  return frontier;
}

/// Number of applicable length-k sequences over all 8 start vertices.
inline long count_sequences(const Chemistry& c, int k, bool no_backtrack) {
  long total = 0;
  std::vector<int> seq;
  auto rec = [&](auto&& self, int v, int depth, int prev) -> void {
    if (depth == k) {
      ++total;
      return;
    }
    for (int p = 0; p < 6; ++p) {
      if (!applicable(c, v, p)) continue;
      if (no_backtrack && prev >= 0 && (p ^ 1) == prev) continue;
      self(self, apply(c, v, p), depth + 1, p);
    }
  };
  for (int v = 0; v < 8; ++v) rec(rec, v, 0, -1);
  return total;
}

/// Connected components of the cube graph using only potions whose pair is
/// not `removed_pair`.
inline std::vector<std::set<int>> components_without_pair(const Chemistry& c, int removed_pair) {
  std::vector<int> comp(8, -1);
  std::vector<std::set<int>> out;
  for (int s = 0; s < 8; ++s) {
    if (comp[static_cast<std::size_t>(s)] >= 0) continue;
    std::set<int> members{s};
    std::vector<int> stack{s};
    comp[static_cast<std::size_t>(s)] = static_cast<int>(out.size());
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int p = 0; p < 6; ++p) {
        if (p / 2 == removed_pair || !applicable(c, u, p)) continue;
        const int w = apply(c, u, p);
        if (comp[static_cast<std::size_t>(w)] < 0) {
          comp[static_cast<std::size_t>(w)] = comp[static_cast<std::size_t>(s)];
          members.insert(w);
          stack.push_back(w);
        }
      }
    }
    out.push_back(members);
  }
  return out;
}

inline int popcount(int x) { return __builtin_popcount(static_cast<unsigned>(x)); }

}  // namespace oracle
