#include "stare/tree_distance.hpp"

#include <algorithm>
#include <atomic>
#include <string>
#include <vector>

#include "stare/error.hpp"

namespace stare {
namespace {

// Postorder view of a tree: labels, left-most leaf descendant and parent of
// every node, indexed by postorder position.
struct Postorder {
  std::vector<const std::string*> labels;
  std::vector<std::size_t> leftmost;
  std::vector<std::size_t> parent;
  std::vector<std::size_t> keyroots;

  explicit Postorder(const ParseTree& root) {
    labels.reserve(root.size());
    leftmost.reserve(root.size());
    parent.assign(root.size(), root.size());
    visit(root);
    parent.resize(labels.size());

    // A keyroot is the highest node sharing its left-most leaf.
    std::vector<bool> seen(labels.size(), false);
    for (std::size_t i = labels.size(); i-- > 0;) {
      if (!seen[leftmost[i]]) {
        seen[leftmost[i]] = true;
        keyroots.push_back(i);
      }
    }
    std::sort(keyroots.begin(), keyroots.end());
  }

  std::size_t visit(const ParseTree& node) {
    std::size_t first_leaf = SIZE_MAX;
    std::vector<std::size_t> kids;
    for (const auto& child : node.children()) {
      const std::size_t idx = visit(child);
      if (first_leaf == SIZE_MAX) first_leaf = leftmost[idx];
      kids.push_back(idx);
    }
    const std::size_t self = labels.size();
    labels.push_back(&node.label());
    leftmost.push_back(first_leaf == SIZE_MAX ? self : first_leaf);
    for (auto k : kids) parent[k] = self;
    return self;
  }

  std::size_t size() const { return labels.size(); }
};

std::atomic<std::uint64_t> g_sim_calls{0};
std::atomic<std::uint64_t> g_sim_clamped{0};

}  // namespace

double ted(const ParseTree& a, const ParseTree& b, const EditCosts& costs) {
  const Postorder ta(a);
  const Postorder tb(b);
  const std::size_t n = ta.size();
  const std::size_t m = tb.size();

  std::vector<double> treedist(n * m, 0.0);
  std::vector<double> forest((n + 1) * (m + 1), 0.0);
  auto td = [&](std::size_t i, std::size_t j) -> double& { return treedist[i * m + j]; };

  for (const std::size_t i : ta.keyroots) {
    for (const std::size_t j : tb.keyroots) {
      const std::size_t li = ta.leftmost[i];
      const std::size_t lj = tb.leftmost[j];
      const std::size_t rows = i - li + 2;
      const std::size_t cols = j - lj + 2;
      auto fd = [&](std::size_t x, std::size_t y) -> double& { return forest[x * cols + y]; };

      fd(0, 0) = 0.0;
      for (std::size_t x = 1; x < rows; ++x) fd(x, 0) = fd(x - 1, 0) + costs.deletion;
      for (std::size_t y = 1; y < cols; ++y) fd(0, y) = fd(0, y - 1) + costs.insertion;

      for (std::size_t di = li; di <= i; ++di) {
        const std::size_t x = di - li + 1;
        for (std::size_t dj = lj; dj <= j; ++dj) {
          const std::size_t y = dj - lj + 1;
          const double del = fd(x - 1, y) + costs.deletion;
          const double ins = fd(x, y - 1) + costs.insertion;
          if (ta.leftmost[di] == li && tb.leftmost[dj] == lj) {
            const double ren = *ta.labels[di] == *tb.labels[dj] ? 0.0 : costs.relabel;
            const double best = std::min({del, ins, fd(x - 1, y - 1) + ren});
            fd(x, y) = best;
            td(di, dj) = best;
          } else {
            const double sub = fd(ta.leftmost[di] - li, tb.leftmost[dj] - lj) + td(di, dj);
            fd(x, y) = std::min({del, ins, sub});
          }
        }
      }
    }
  }
  return td(n - 1, m - 1);
}

namespace {

struct Relations {
  std::vector<const std::string*> labels;
  // ancestor[i][j]: node i is a proper ancestor of node j (postorder ids).
  std::vector<std::vector<bool>> ancestor;

  explicit Relations(const Postorder& t) : labels(t.labels) {
    const std::size_t n = t.size();
    ancestor.assign(n, std::vector<bool>(n, false));
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = t.parent[j]; p < n; p = t.parent[p]) ancestor[p][j] = true;
    }
  }
};

class MappingSearch {
 public:
  MappingSearch(const Relations& a, const Relations& b, const EditCosts& costs)
      : a_(a), b_(b), costs_(costs), partner_(a.labels.size(), kUnmapped),
        used_(b.labels.size(), false) {}

  double run() {
    best_ = costs_.deletion * static_cast<double>(a_.labels.size()) +
            costs_.insertion * static_cast<double>(b_.labels.size());
    extend(0, 0.0, 0);
    return best_;
  }

 private:
  static constexpr std::size_t kUnmapped = SIZE_MAX;

  bool compatible(std::size_t i, std::size_t j) const {
    // Nodes are assigned in increasing postorder of a; earlier pairs (i0, j0)
    // need j0 < j and matching ancestry (i ancestor of i0 iff j of j0).
    for (std::size_t i0 = 0; i0 < i; ++i0) {
      const std::size_t j0 = partner_[i0];
      if (j0 == kUnmapped) continue;
      if (j0 >= j) return false;
      if (a_.ancestor[i][i0] != b_.ancestor[j][j0]) return false;
    }
    return true;
  }

  void extend(std::size_t i, double relabels, std::size_t mapped) {
    const std::size_t n = a_.labels.size();
    const std::size_t m = b_.labels.size();
    if (i == n) {
      const double total = relabels +
                           costs_.deletion * static_cast<double>(n - mapped) +
                           costs_.insertion * static_cast<double>(m - mapped);
      best_ = std::min(best_, total);
      return;
    }
    extend(i + 1, relabels, mapped);
    for (std::size_t j = 0; j < m; ++j) {
      if (used_[j] || !compatible(i, j)) continue;
      used_[j] = true;
      partner_[i] = j;
      const double ren = *a_.labels[i] == *b_.labels[j] ? 0.0 : costs_.relabel;
      extend(i + 1, relabels + ren, mapped + 1);
      partner_[i] = kUnmapped;
      used_[j] = false;
    }
  }

  const Relations& a_;
  const Relations& b_;
  const EditCosts& costs_;
  std::vector<std::size_t> partner_;
  std::vector<bool> used_;
  double best_ = 0.0;
};

}  // namespace

double ted_bruteforce(const ParseTree& a, const ParseTree& b, const EditCosts& costs) {
  if (a.size() > kBruteforceMaxSize || b.size() > kBruteforceMaxSize) {
    throw Error(ErrorCode::TooLarge, "brute-force edit distance supports at most " +
                                         std::to_string(kBruteforceMaxSize) + " nodes per tree");
  }
  const Relations ra{Postorder(a)};
  const Relations rb{Postorder(b)};
  return MappingSearch(ra, rb, costs).run();
}

double sim_struct_unclamped(const ParseTree& a, const ParseTree& b) {
  const double denom = static_cast<double>(std::max(a.size(), b.size()));
  return 1.0 - ted(a, b) / denom;
}

double sim_struct(const ParseTree& a, const ParseTree& b) {
  const double raw = sim_struct_unclamped(a, b);
  g_sim_calls.fetch_add(1, std::memory_order_relaxed);
  if (raw < 0.0 || raw > 1.0) {
    g_sim_clamped.fetch_add(1, std::memory_order_relaxed);
    return std::clamp(raw, 0.0, 1.0);
  }
  return raw;
}

SimStructStats sim_struct_stats() noexcept {
  return {g_sim_calls.load(std::memory_order_relaxed),
          g_sim_clamped.load(std::memory_order_relaxed)};
}

void reset_sim_struct_stats() noexcept {
  g_sim_calls.store(0, std::memory_order_relaxed);
  g_sim_clamped.store(0, std::memory_order_relaxed);
}

}  // namespace stare
