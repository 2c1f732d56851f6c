#pragma once

#include <cstddef>
#include <cstdint>

#include "stare/parse_tree.hpp"

namespace stare {

struct EditCosts {
  double insertion = 1.0;
  double deletion = 1.0;
  double relabel = 1.0;  // charged only when labels differ
};

// Zhang-Shasha ordered tree edit distance (keyroot / left-most-leaf
// decomposition). O(|a||b| min(depth, leaves)^2) time, O(|a||b|) space.
double ted(const ParseTree& a, const ParseTree& b, const EditCosts& costs = {});

inline constexpr std::size_t kBruteforceMaxSize = 4;

// Exact edit distance by enumerating every valid ordered edit mapping.
// Throws TooLarge when either tree exceeds kBruteforceMaxSize nodes.
double ted_bruteforce(const ParseTree& a, const ParseTree& b, const EditCosts& costs = {});

// 1 - TED/max(|a|,|b|) under unit costs, before clamping. Lies in [-1, 1].
double sim_struct_unclamped(const ParseTree& a, const ParseTree& b);

// sim_struct_unclamped clamped to [0, 1]. Clamp events are counted process-wide.
double sim_struct(const ParseTree& a, const ParseTree& b);

struct SimStructStats {
  std::uint64_t calls = 0;
  std::uint64_t clamped = 0;
  double clamp_rate() const noexcept {
    return calls == 0 ? 0.0 : static_cast<double>(clamped) / static_cast<double>(calls);
  }
};

SimStructStats sim_struct_stats() noexcept;
void reset_sim_struct_stats() noexcept;

}  // namespace stare
