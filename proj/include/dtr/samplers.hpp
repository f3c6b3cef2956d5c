#pragma once

#include <random>
#include <span>
#include <vector>

#include "dtr/scorer.hpp"
#include "dtr/tree_index.hpp"

namespace dtr {

// Negative draws for one layer.  `negatives` is a multiset of 1-based node
// indices within the layer (draws are with replacement) and never contains
// the positive; `q[k]` is the sampling probability recorded for
// `negatives[k]`.  A layer that offers no negatives (single node) is
// represented by empty vectors and skipped by training.
struct LayerSample {
  int layer = 0;
  int positive = 0;
  std::vector<int> negatives;
  std::vector<double> q;
};

// One root-to-leaf walk.  Entry m holds the chosen index at level m and the
// product of expanding probabilities from the root down to that node; the
// root entry is (1, 1.0).
struct SampledPath {
  std::vector<int> node_per_level;
  std::vector<double> cumulative_q;
};

// M negatives drawn uniformly (with replacement) from the layer's nodes
// other than `positive`; each draw carries q = 1/(N_j - 1).  Throws
// std::invalid_argument when the layer has no negatives.
LayerSample uniform_layer_sample(const TreeIndex& tree, int layer,
                                 int positive, int num_samples,
                                 std::mt19937& rng);

// Local softmax over the children's preference scores; entry k corresponds
// to the k-th child in index order.  Single-child nodes yield {1.0}.
std::vector<double> expanding_probability(const TreeIndex& tree, NodeId node,
                                          const BatchNodeScoreFn& score);

// Walk from the root to a leaf, choosing one child per step with its
// expanding probability.
SampledPath sample_path(const TreeIndex& tree, const BatchNodeScoreFn& score,
                        std::mt19937& rng);

// Draw paths until every layer 1..H holds `num_samples` negative
// occurrences.  A path node equal to the layer's positive is discarded for
// that layer only; the recorded q stays the unconditioned path product.
// `positive_path` must contain the positive index for every level (the
// root-level entry is ignored).  Layers with a single node come back empty.
// Throws std::runtime_error if rejection makes no progress (degenerate
// scores concentrating all mass on the positive path).
std::vector<LayerSample> tree_sample_batch(const TreeIndex& tree,
                                           const BatchNodeScoreFn& score,
                                           std::span<const int> positive_path,
                                           int num_samples, std::mt19937& rng);

// Exact per-node sampling probability for one layer: the reach probability
// of each node under the path-product process, computed by a top-down pass.
// Diagnostic / test helper; sampling itself never enumerates a layer.
std::vector<double> layer_probability_vector(const TreeIndex& tree,
                                             const BatchNodeScoreFn& score,
                                             int layer);

// Sum q_i log(q_i / p_i) over matching supports.  Zero q entries contribute
// nothing; a positive q against a zero p returns +infinity.  Both vectors
// must have equal length and each must sum to 1 within 1e-6.
double kl_divergence(std::span<const double> q, std::span<const double> p);

}  // namespace dtr
