#include "dtr/beam_search.hpp"

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dtr {

std::vector<int> expand(const TreeIndex& tree, int parent_level,
                        std::span<const int> selected) {
  if (parent_level < 0 || parent_level >= tree.height()) {
    throw std::invalid_argument("expand: level " +
                                std::to_string(parent_level) +
                                " has no children");
  }
  std::vector<int> out;
  for (int parent : selected) {
    const auto [first, last] = tree.child_range({parent_level, parent});
    for (int c = first; c <= last; ++c) out.push_back(c);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> topk_select(std::span<const int> candidates,
                             std::span<const double> scores, int k) {
  if (candidates.empty()) {
    throw std::invalid_argument("topk_select: no candidates");
  }
  if (candidates.size() != scores.size()) {
    throw std::invalid_argument("topk_select: score count mismatch");
  }
  if (k < 1) throw std::invalid_argument("topk_select: k must be positive");
  std::vector<int> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return candidates[a] < candidates[b];
  });
  const std::size_t keep = std::min<std::size_t>(k, order.size());
  std::vector<int> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.push_back(candidates[order[i]]);
  std::sort(out.begin(), out.end());
  return out;
}

RetrievalResult retrieve_topk(const TreeIndex& tree,
                              const BatchNodeScoreFn& score, int k) {
  if (k < 1) throw std::invalid_argument("retrieve_topk: k must be positive");
  RetrievalResult result;
  if (tree.height() == 0) {
    const std::vector<NodeId> root = {tree.root()};
    result.scores = score(root);
    result.nodes_scored = 1;
    result.items = {tree.item_at_leaf(1)};
    return result;
  }
  std::vector<int> selected = {1};  // root
  std::vector<int> candidates;
  std::vector<double> cand_scores;
  for (int level = 1; level <= tree.height(); ++level) {
    candidates = expand(tree, level - 1, selected);
    std::vector<NodeId> nodes;
    nodes.reserve(candidates.size());
    for (int c : candidates) nodes.push_back({level, c});
    cand_scores = score(nodes);
    result.nodes_scored += static_cast<long long>(nodes.size());
    if (level < tree.height()) {
      selected = topk_select(candidates, cand_scores, k);
    }
  }
  // Rank every leaf reached at the bottom level; truncate to k at the end.
  std::vector<int> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (cand_scores[a] != cand_scores[b]) {
      return cand_scores[a] > cand_scores[b];
    }
    return candidates[a] < candidates[b];
  });
  const std::size_t keep = std::min<std::size_t>(k, order.size());
  for (std::size_t i = 0; i < keep; ++i) {
    result.items.push_back(tree.item_at_leaf(candidates[order[i]]));
    result.scores.push_back(cand_scores[order[i]]);
  }
  return result;
}

}  // namespace dtr
