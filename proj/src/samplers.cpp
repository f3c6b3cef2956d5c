#include "dtr/samplers.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

#include "dtr/losses.hpp"

namespace dtr {
namespace {

// Draws an index into `probs` (values sum to 1).  Clamps the tail so
// floating-point slack cannot run past the last entry.
int draw_categorical(std::span<const double> probs, std::mt19937& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace

LayerSample uniform_layer_sample(const TreeIndex& tree, int layer,
                                 int positive, int num_samples,
                                 std::mt19937& rng) {
  const int n = tree.level_size(layer);
  if (positive < 1 || positive > n) {
    throw std::invalid_argument("uniform_layer_sample: positive index " +
                                std::to_string(positive) +
                                " outside layer of size " + std::to_string(n));
  }
  if (n < 2) {
    throw std::invalid_argument(
        "uniform_layer_sample: layer has no negatives");
  }
  if (num_samples < 1) {
    throw std::invalid_argument("uniform_layer_sample: num_samples must be "
                                "positive");
  }
  LayerSample out;
  out.layer = layer;
  out.positive = positive;
  out.negatives.reserve(num_samples);
  out.q.assign(num_samples, 1.0 / (n - 1));
  std::uniform_int_distribution<int> pick(1, n - 1);
  for (int s = 0; s < num_samples; ++s) {
    const int k = pick(rng);
    out.negatives.push_back(k < positive ? k : k + 1);
  }
  return out;
}

std::vector<double> expanding_probability(const TreeIndex& tree, NodeId node,
                                          const BatchNodeScoreFn& score) {
  const auto [first, last] = tree.child_range(node);
  if (first > last) {
    throw std::invalid_argument("expanding_probability: node has no children");
  }
  std::vector<NodeId> children;
  children.reserve(last - first + 1);
  for (int c = first; c <= last; ++c) {
    children.push_back({node.level + 1, c});
  }
  return layer_softmax(score(children));
}

SampledPath sample_path(const TreeIndex& tree, const BatchNodeScoreFn& score,
                        std::mt19937& rng) {
  SampledPath path;
  path.node_per_level.assign(tree.num_levels(), 1);
  path.cumulative_q.assign(tree.num_levels(), 1.0);
  NodeId node = tree.root();
  for (int level = 1; level <= tree.height(); ++level) {
    const auto probs = expanding_probability(tree, node, score);
    const int pick = draw_categorical(probs, rng);
    node = {level, tree.child_range(node).first + pick};
    path.node_per_level[level] = node.index;
    path.cumulative_q[level] = path.cumulative_q[level - 1] * probs[pick];
  }
  return path;
}

std::vector<LayerSample> tree_sample_batch(const TreeIndex& tree,
                                           const BatchNodeScoreFn& score,
                                           std::span<const int> positive_path,
                                           int num_samples, std::mt19937& rng) {
  if (num_samples < 1) {
    throw std::invalid_argument("tree_sample_batch: num_samples must be "
                                "positive");
  }
  if (static_cast<int>(positive_path.size()) != tree.num_levels()) {
    throw std::invalid_argument(
        "tree_sample_batch: positive_path must list one index per level");
  }
  std::vector<LayerSample> out(tree.height());
  int open_layers = 0;
  for (int j = 1; j <= tree.height(); ++j) {
    auto& sample = out[j - 1];
    sample.layer = j;
    sample.positive = positive_path[j];
    if (tree.level_size(j) >= 2) {
      sample.negatives.reserve(num_samples);
      sample.q.reserve(num_samples);
      ++open_layers;
    }
  }
  // Each accepted occurrence fills one slot; a path can fill at most one
  // slot per open layer.  The cap only trips when rejection keeps hitting
  // the positive, which finite scores make vanishingly rare.
  const long long max_paths =
      2000LL + 200LL * static_cast<long long>(num_samples) * tree.height();
  long long paths_drawn = 0;
  while (open_layers > 0) {
    if (++paths_drawn > max_paths) {
      throw std::runtime_error(
          "tree_sample_batch: sampling stalled; scores leave almost no mass "
          "off the positive path");
    }
    const SampledPath path = sample_path(tree, score, rng);
    for (int j = 1; j <= tree.height(); ++j) {
      auto& sample = out[j - 1];
      if (static_cast<int>(sample.negatives.size()) >= num_samples ||
          tree.level_size(j) < 2) {
        continue;
      }
      if (path.node_per_level[j] == sample.positive) continue;
      sample.negatives.push_back(path.node_per_level[j]);
      sample.q.push_back(path.cumulative_q[j]);
      if (static_cast<int>(sample.negatives.size()) == num_samples) {
        --open_layers;
      }
    }
  }
  return out;
}

std::vector<double> layer_probability_vector(const TreeIndex& tree,
                                             const BatchNodeScoreFn& score,
                                             int layer) {
  if (layer < 0 || layer > tree.height()) {
    throw std::invalid_argument("layer_probability_vector: bad layer " +
                                std::to_string(layer));
  }
  std::vector<double> reach = {1.0};
  for (int level = 0; level < layer; ++level) {
    std::vector<double> next(tree.level_size(level + 1), 0.0);
    for (int i = 1; i <= tree.level_size(level); ++i) {
      const NodeId node{level, i};
      const auto probs = expanding_probability(tree, node, score);
      const int first = tree.child_range(node).first;
      for (std::size_t k = 0; k < probs.size(); ++k) {
        next[first - 1 + k] = reach[i - 1] * probs[k];
      }
    }
    reach = std::move(next);
  }
  return reach;
}

double kl_divergence(std::span<const double> q, std::span<const double> p) {
  if (q.size() != p.size()) {
    throw std::invalid_argument("kl_divergence: length mismatch");
  }
  double sum_q = 0.0;
  double sum_p = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] < 0.0 || p[i] < 0.0) {
      throw std::invalid_argument("kl_divergence: negative probability");
    }
    sum_q += q[i];
    sum_p += p[i];
  }
  if (std::abs(sum_q - 1.0) > 1e-6 || std::abs(sum_p - 1.0) > 1e-6) {
    throw std::invalid_argument("kl_divergence: inputs must sum to 1");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] == 0.0) continue;
    if (p[i] == 0.0) return std::numeric_limits<double>::infinity();
    kl += q[i] * std::log(q[i] / p[i]);
  }
  return kl;
}

}  // namespace dtr
