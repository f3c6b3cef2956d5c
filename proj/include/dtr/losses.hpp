#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dtr/eta_estimator.hpp"
#include "dtr/tree_index.hpp"

namespace dtr {

// Softmax over one layer's scores, stabilised by max subtraction.
std::vector<double> layer_softmax(std::span<const double> scores);

// Cross entropy -log softmax(scores)_pos.  `pos` is 1-based, matching node
// indexing within a level.
double layer_softmax_ce(std::span<const double> scores, int pos);

// {0,1} target for (item, layer): 1 iff the item attains the largest
// preference under its own level-`layer` ancestor, ties broken by smallest
// item id.  `key` selects the user context in the preference table.
int rectified_weight(const TreeIndex& tree, const SubtreeMaxTable& eta_max,
                     std::int64_t key, int item, int layer);

// Sum over the layer's nodes of the largest preference below each node;
// normalises the expected rectified labels.  Diagnostic only.
double normalization_alpha(const TreeIndex& tree,
                           const SubtreeMaxTable& eta_max, std::int64_t key,
                           int layer);

// Weighted loss with soft target w in [0,1]:
//   -w log softmax(scores)_pos + w log w + w - 1     (w log w := 0 at w=0)
// w = 1 reduces to plain cross entropy; w = 0 gives the constant -1.
double modified_bregman_loss(double w, std::span<const double> scores,
                             int pos);

// Per-layer training loss z * CE with hard target z in {0,1}; the constant
// terms of the weighted loss drop here and are excluded from gradients.
double practical_layer_loss(int z, std::span<const double> scores, int pos);

// d(practical_layer_loss)/d(scores) = z * (softmax(scores) - onehot_pos).
std::vector<double> practical_layer_grad(int z, std::span<const double> scores,
                                         int pos);

// Importance-adjusted logits for sampled softmax.  Each negative occurrence
// i becomes o_i - ln(M q_i) where q_i is its sampling probability; the
// positive logit passes through unchanged.
struct AdjustedLogits {
  double positive = 0.0;
  std::vector<double> negatives;
};

AdjustedLogits adjust_logits(double positive_score,
                             std::span<const double> negative_scores,
                             std::span<const double> q, int num_samples);

// z * CE of the positive against {positive} ∪ sampled negatives.
double sampled_softmax_loss(const AdjustedLogits& logits, int z);

// Gradient w.r.t. the positive score and each negative occurrence's score.
// The adjustment term is constant, so these apply to the raw scores too.
struct SampledGrad {
  double positive = 0.0;
  std::vector<double> negatives;
};

SampledGrad sampled_softmax_grad(const AdjustedLogits& logits, int z);

}  // namespace dtr
