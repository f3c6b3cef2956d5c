#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dtr/dataset.hpp"
#include "dtr/scorer.hpp"
#include "dtr/tree_index.hpp"

namespace dtr {

struct UserMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
};

// precision = |retrieved ∩ truth| / k, recall = |retrieved ∩ truth| /
// |truth|, f = harmonic mean (0 when both are 0).  `retrieved` must hold at
// most k distinct items; `ground_truth` must be non-empty.
UserMetrics precision_recall_f(std::span<const int> retrieved,
                               std::span<const int> ground_truth, int k);

// Scores every leaf and returns the k best items, ranked by score
// descending with ties preferring the smaller leaf index — the same order
// an unpruned beam produces.
std::vector<int> exhaustive_topk(const TreeIndex& tree,
                                 const BatchNodeScoreFn& score, int k);

// The k items with the largest probabilities; ties prefer the smaller item
// id.  `eta[i]` is the probability of item i + 1.
std::vector<int> bayes_topk(std::span<const double> eta, int k);

// weight * (softmax(scores) - onehot(pos)); `pos` is 1-based.
std::vector<double> full_softmax_gradient(std::span<const double> scores,
                                          int pos, double weight);

// Mean metrics over users, one row per cutoff.  Users with no labels are
// skipped and counted separately.
struct MetricReport {
  std::vector<int> ks;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f_measure;
  int users_evaluated = 0;
  int users_skipped = 0;
};

// `retrieve(user, k)` must return at most k items ranked best-first; it is
// invoked once per user with the largest cutoff and the prefixes serve the
// smaller ones.
using RetrieveFn =
    std::function<std::vector<int>(const EvalInstance&, int k)>;

MetricReport evaluate_users(std::span<const EvalInstance> users,
                            const RetrieveFn& retrieve,
                            std::span<const int> ks);

}  // namespace dtr
