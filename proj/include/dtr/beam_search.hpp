#pragma once

#include <span>
#include <vector>

#include "dtr/scorer.hpp"
#include "dtr/tree_index.hpp"

namespace dtr {

// Children at level `parent_level + 1` of the selected parents, as 1-based
// indices, ascending and duplicate-free.
std::vector<int> expand(const TreeIndex& tree, int parent_level,
                        std::span<const int> selected);

// Indices of the k best-scoring candidates.  `scores[i]` belongs to
// `candidates[i]`.  Ties prefer the smaller candidate index; fewer than k
// candidates means all of them.  Returned ascending.
std::vector<int> topk_select(std::span<const int> candidates,
                             std::span<const double> scores, int k);

struct RetrievalResult {
  std::vector<int> items;       // best-first, at most k
  std::vector<double> scores;   // leaf scores aligned with items
  long long nodes_scored = 0;   // scorer invocations (complexity witness)
};

// Layer-wise beam search: keep the k best nodes per level, expand their
// children, and rank every leaf reached at the bottom level by score,
// descending; ties prefer the smaller leaf index.
RetrievalResult retrieve_topk(const TreeIndex& tree,
                              const BatchNodeScoreFn& score, int k);

}  // namespace dtr
