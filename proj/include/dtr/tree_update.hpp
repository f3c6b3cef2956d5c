#pragma once

#include <map>
#include <span>
#include <vector>

#include "dtr/dataset.hpp"
#include "dtr/scorer.hpp"
#include "dtr/tree_index.hpp"

namespace dtr {

// Training histories grouped by target item; the per-item multiset backs
// the matching scores of the tree update.
using ItemContexts = std::map<int, std::vector<UserHistory>>;

ItemContexts group_by_item(std::span<const TrainInstance> train);

// Log-likelihood of placing each item at each candidate node: entry [i][j]
// sums, over the contexts of items[i], the log of the softmax over the
// candidates' preference scores evaluated at candidates[j].  An item with
// no contexts gets an all-zero row (a single candidate likewise scores 0).
std::vector<std::vector<double>> matching_scores(
    std::span<const int> items, const ItemContexts& contexts,
    std::span<const NodeId> candidates, const PreferenceScorer& scorer,
    const ScorerParams& params, const TreeIndex& tree);

// Capacity-respecting greedy assignment.  Items are processed in
// descending order of (best minus second-best) score margin — contextless
// items last, both groups tie-broken by ascending item id — and each takes
// its best-scoring candidate with remaining capacity, falling through in
// descending score order (equal scores prefer the smaller candidate
// index).  Returns the chosen candidate column per item.  Throws
// std::invalid_argument when the capacities cannot hold the items or the
// matrix shapes disagree.
std::vector<int> assign_items(std::span<const int> items,
                              const std::vector<std::vector<double>>& scores,
                              std::span<const int> capacities,
                              const std::vector<bool>& has_contexts);

// Re-learns the leaf <-> item mapping with the scorer frozen: starting from
// the root, items descend `stride` levels at a time (clamped to the leaf
// level), each hop solving one greedy assignment whose capacities are the
// candidates' leaf counts, recursing per candidate until every leaf holds
// one item.  The tree shape is untouched; only the mapping changes.
TreeIndex update_tree(const TreeIndex& tree,
                      std::span<const TrainInstance> train,
                      const PreferenceScorer& scorer,
                      const ScorerParams& params, int stride = 7);

}  // namespace dtr
