#include "dtr/tree_update.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace dtr {

ItemContexts group_by_item(std::span<const TrainInstance> train) {
  ItemContexts contexts;
  for (const TrainInstance& inst : train) {
    contexts[inst.target].push_back(inst.history);
  }
  return contexts;
}

std::vector<std::vector<double>> matching_scores(
    std::span<const int> items, const ItemContexts& contexts,
    std::span<const NodeId> candidates, const PreferenceScorer& scorer,
    const ScorerParams& params, const TreeIndex& tree) {
  if (candidates.empty()) {
    throw std::invalid_argument("matching needs at least one candidate");
  }
  std::vector<int> rows;
  rows.reserve(candidates.size());
  for (const NodeId& n : candidates) rows.push_back(tree.flat_index(n));

  std::vector<std::vector<double>> scores(
      items.size(), std::vector<double>(candidates.size(), 0.0));
  if (candidates.size() == 1) return scores;  // log softmax over one class

  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto it = contexts.find(items[i]);
    if (it == contexts.end()) continue;
    for (const UserHistory& history : it->second) {
      const std::vector<double> o = scorer.batch_score(params, history, rows);
      const double peak = *std::max_element(o.begin(), o.end());
      double sum = 0.0;
      for (double v : o) sum += std::exp(v - peak);
      const double lse = peak + std::log(sum);
      for (std::size_t j = 0; j < o.size(); ++j) {
        scores[i][j] += o[j] - lse;
      }
    }
  }
  return scores;
}

std::vector<int> assign_items(std::span<const int> items,
                              const std::vector<std::vector<double>>& scores,
                              std::span<const int> capacities,
                              const std::vector<bool>& has_contexts) {
  const std::size_t n = items.size();
  const std::size_t c = capacities.size();
  if (scores.size() != n || has_contexts.size() != n) {
    throw std::invalid_argument("assignment inputs disagree on item count");
  }
  long long slots = 0;
  for (int cap : capacities) {
    if (cap < 0) throw std::invalid_argument("negative candidate capacity");
    slots += cap;
  }
  if (slots != static_cast<long long>(n)) {
    throw std::invalid_argument("capacities must sum to the item count");
  }
  for (const auto& row : scores) {
    if (row.size() != c) {
      throw std::invalid_argument("score row width must match candidates");
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> margin(n, 0.0);
  if (c > 1) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      double second = best;
      for (double s : scores[i]) {
        if (s > best) {
          second = best;
          best = s;
        } else if (s > second) {
          second = s;
        }
      }
      margin[i] = best - second;
    }
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (has_contexts[a] != has_contexts[b]) return has_contexts[a];
    if (margin[a] != margin[b]) return margin[a] > margin[b];
    return items[a] < items[b];
  });

  std::vector<int> remaining(capacities.begin(), capacities.end());
  std::vector<int> choice(n, -1);
  std::vector<int> by_score(c);
  for (int i : order) {
    std::iota(by_score.begin(), by_score.end(), 0);
    std::sort(by_score.begin(), by_score.end(), [&](int a, int b) {
      if (scores[i][a] != scores[i][b]) return scores[i][a] > scores[i][b];
      return a < b;
    });
    for (int j : by_score) {
      if (remaining[j] > 0) {
        --remaining[j];
        choice[i] = j;
        break;
      }
    }
  }
  return choice;
}

namespace {

// Descendants of `node` at `level`, with their leaf counts.  Levels
// partition the leaves contiguously, so the descendants are the ancestors
// of the subtree's first and last leaves and everything between.
void descendants_at(const TreeIndex& tree, NodeId node, int level,
                    std::vector<NodeId>& nodes, std::vector<int>& loads) {
  const auto [first_leaf, last_leaf] = tree.leaf_range(node);
  const int first =
      tree.ancestor_at({tree.height(), first_leaf}, level).index;
  const int last = tree.ancestor_at({tree.height(), last_leaf}, level).index;
  nodes.clear();
  loads.clear();
  for (int i = first; i <= last; ++i) {
    const NodeId n{level, i};
    const auto [lf, ll] = tree.leaf_range(n);
    nodes.push_back(n);
    loads.push_back(ll - lf + 1);
  }
}

}  // namespace

TreeIndex update_tree(const TreeIndex& tree,
                      std::span<const TrainInstance> train,
                      const PreferenceScorer& scorer,
                      const ScorerParams& params, int stride) {
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  const ItemContexts contexts = group_by_item(train);
  for (const auto& [item, histories] : contexts) {
    tree.leaf_of_item(item);  // fail fast on targets outside the vocabulary
  }

  struct Task {
    NodeId node;
    std::vector<int> items;
  };
  std::vector<int> all_items;
  all_items.reserve(tree.num_items());
  for (int leaf = 1; leaf <= tree.num_items(); ++leaf) {
    all_items.push_back(tree.item_at_leaf(leaf));
  }
  std::sort(all_items.begin(), all_items.end());

  std::vector<int> new_leaf_items(tree.num_items(), 0);
  std::vector<Task> pending;
  pending.push_back({tree.root(), std::move(all_items)});

  std::vector<NodeId> candidates;
  std::vector<int> capacities;
  while (!pending.empty()) {
    Task task = std::move(pending.back());
    pending.pop_back();
    const int target = std::min(tree.height(), task.node.level + stride);
    descendants_at(tree, task.node, target, candidates, capacities);

    std::vector<bool> observed(task.items.size());
    for (std::size_t i = 0; i < task.items.size(); ++i) {
      observed[i] = contexts.count(task.items[i]) > 0;
    }
    const std::vector<std::vector<double>> scores = matching_scores(
        task.items, contexts, candidates, scorer, params, tree);
    const std::vector<int> choice =
        assign_items(task.items, scores, capacities, observed);

    std::vector<std::vector<int>> buckets(candidates.size());
    for (std::size_t i = 0; i < task.items.size(); ++i) {
      buckets[choice[i]].push_back(task.items[i]);
    }
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      std::sort(buckets[j].begin(), buckets[j].end());
      if (target == tree.height()) {
        new_leaf_items[candidates[j].index - 1] = buckets[j].front();
      } else {
        pending.push_back({candidates[j], std::move(buckets[j])});
      }
    }
  }

  TreeIndex updated = tree;
  updated.assign_items(std::move(new_leaf_items));
  return updated;
}

}  // namespace dtr
