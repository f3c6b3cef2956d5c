#include "dtr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dtr {
namespace {

void check_pos(std::span<const double> scores, int pos) {
  if (scores.empty()) {
    throw std::invalid_argument("layer scores must be non-empty");
  }
  if (pos < 1 || pos > static_cast<int>(scores.size())) {
    throw std::invalid_argument("positive position " + std::to_string(pos) +
                                " outside [1, " +
                                std::to_string(scores.size()) + "]");
  }
}

// log(sum_i exp(scores_i)) with max subtraction.
double log_sum_exp(std::span<const double> scores) {
  const double top = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - top);
  return top + std::log(sum);
}

}  // namespace

std::vector<double> layer_softmax(std::span<const double> scores) {
  if (scores.empty()) {
    throw std::invalid_argument("layer scores must be non-empty");
  }
  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp(scores[i] - top);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

double layer_softmax_ce(std::span<const double> scores, int pos) {
  check_pos(scores, pos);
  return log_sum_exp(scores) - scores[pos - 1];
}

int rectified_weight(const TreeIndex& tree, const SubtreeMaxTable& eta_max,
                     std::int64_t key, int item, int layer) {
  if (layer < 0 || layer > tree.height()) {
    throw std::out_of_range("layer " + std::to_string(layer) +
                            " outside [0, " + std::to_string(tree.height()) +
                            "]");
  }
  const NodeId leaf{tree.height(), tree.leaf_of_item(item)};
  const NodeId node = tree.ancestor_at(leaf, layer);
  return eta_max.is_subtree_max(key, item, node) ? 1 : 0;
}

double normalization_alpha(const TreeIndex& tree,
                           const SubtreeMaxTable& eta_max, std::int64_t key,
                           int layer) {
  if (layer < 0 || layer > tree.height()) {
    throw std::out_of_range("layer " + std::to_string(layer) +
                            " outside [0, " + std::to_string(tree.height()) +
                            "]");
  }
  double alpha = 0.0;
  for (int i = 1; i <= tree.level_size(layer); ++i) {
    alpha += eta_max.max_under(key, {layer, i});
  }
  return alpha;
}

double modified_bregman_loss(double w, std::span<const double> scores,
                             int pos) {
  check_pos(scores, pos);
  if (w < 0.0 || w > 1.0) {
    throw std::invalid_argument("weight must lie in [0, 1]");
  }
  const double entropy_term = w > 0.0 ? w * std::log(w) : 0.0;
  return -w * (scores[pos - 1] - log_sum_exp(scores)) + entropy_term + w - 1.0;
}

double practical_layer_loss(int z, std::span<const double> scores, int pos) {
  check_pos(scores, pos);
  if (z != 0 && z != 1) {
    throw std::invalid_argument("hard target must be 0 or 1");
  }
  return z == 0 ? 0.0 : layer_softmax_ce(scores, pos);
}

std::vector<double> practical_layer_grad(int z, std::span<const double> scores,
                                         int pos) {
  check_pos(scores, pos);
  if (z != 0 && z != 1) {
    throw std::invalid_argument("hard target must be 0 or 1");
  }
  if (z == 0) return std::vector<double>(scores.size(), 0.0);
  std::vector<double> g = layer_softmax(scores);
  g[pos - 1] -= 1.0;
  return g;
}

AdjustedLogits adjust_logits(double positive_score,
                             std::span<const double> negative_scores,
                             std::span<const double> q, int num_samples) {
  if (negative_scores.size() != q.size()) {
    throw std::invalid_argument(
        "each sampled negative needs exactly one sampling probability");
  }
  if (num_samples != static_cast<int>(negative_scores.size())) {
    throw std::invalid_argument(
        "sample count does not match the number of negatives");
  }
  AdjustedLogits out;
  out.positive = positive_score;
  out.negatives.reserve(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!(q[i] > 0.0)) {
      throw std::invalid_argument(
          "sampling probabilities must be strictly positive");
    }
    out.negatives.push_back(negative_scores[i] - std::log(num_samples * q[i]));
  }
  return out;
}

namespace {

std::vector<double> gather_logits(const AdjustedLogits& logits) {
  std::vector<double> all;
  all.reserve(logits.negatives.size() + 1);
  all.push_back(logits.positive);
  all.insert(all.end(), logits.negatives.begin(), logits.negatives.end());
  return all;
}

}  // namespace

double sampled_softmax_loss(const AdjustedLogits& logits, int z) {
  if (z != 0 && z != 1) {
    throw std::invalid_argument("hard target must be 0 or 1");
  }
  if (z == 0) return 0.0;
  const std::vector<double> all = gather_logits(logits);
  return layer_softmax_ce(all, 1);
}

SampledGrad sampled_softmax_grad(const AdjustedLogits& logits, int z) {
  if (z != 0 && z != 1) {
    throw std::invalid_argument("hard target must be 0 or 1");
  }
  SampledGrad g;
  g.negatives.assign(logits.negatives.size(), 0.0);
  if (z == 0) return g;
  const std::vector<double> all = gather_logits(logits);
  const std::vector<double> p = layer_softmax(all);
  g.positive = p[0] - 1.0;
  for (std::size_t i = 0; i < g.negatives.size(); ++i) g.negatives[i] = p[i + 1];
  return g;
}

}  // namespace dtr
