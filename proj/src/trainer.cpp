#include "dtr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "dtr/beam_search.hpp"
#include "dtr/losses.hpp"
#include "dtr/samplers.hpp"
#include "dtr/tree_update.hpp"

namespace dtr {

void TrainConfig::validate() const {
  if (negatives < 1) throw std::invalid_argument("negatives must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (alternations < 1) {
    throw std::invalid_argument("alternations must be >= 1");
  }
  if (tree_stride < 1) throw std::invalid_argument("tree_stride must be >= 1");
  if (beam_size < 1) throw std::invalid_argument("beam_size must be >= 1");
  if (eval_ks.empty()) throw std::invalid_argument("eval_ks must be set");
  for (int k : eval_ks) {
    if (k < 1) throw std::invalid_argument("eval cutoffs must be >= 1");
  }
  if (!(adam.lr > 0.0)) throw std::invalid_argument("learning rate <= 0");
}

std::vector<LayerPlan> prepare_instance(const TrainConfig& cfg,
                                        const TreeIndex& tree,
                                        const PreferenceScorer& scorer,
                                        const ScorerParams& params,
                                        const TrainInstance& inst,
                                        const EtaSource* eta,
                                        const SubtreeMaxTable* eta_max,
                                        std::mt19937& rng) {
  if (cfg.rectify == RectifyKind::kRectified && (!eta || !eta_max)) {
    throw std::invalid_argument(
        "rectified training needs a preference estimate");
  }
  const std::vector<int> path = tree.item_path(inst.target);

  std::vector<int> weights(tree.height() + 1, 1);
  if (cfg.rectify == RectifyKind::kRectified) {
    const std::int64_t key = eta->key_for(inst.user, inst.history.items);
    for (int layer = 1; layer <= tree.height(); ++layer) {
      weights[layer] =
          rectified_weight(tree, *eta_max, key, inst.target, layer);
    }
  }

  std::vector<LayerPlan> plans;
  plans.reserve(tree.height());
  const auto want_layer = [&](int layer) {
    return tree.level_size(layer) >= 2 && weights[layer] != 0;
  };

  switch (cfg.sampler) {
    case SamplerKind::kFull:
      for (int layer = 1; layer <= tree.height(); ++layer) {
        if (!want_layer(layer)) continue;
        LayerPlan plan;
        plan.layer = layer;
        plan.positive = path[layer];
        plan.weight = weights[layer];
        plan.full = true;
        plans.push_back(std::move(plan));
      }
      break;
    case SamplerKind::kUniform:
      for (int layer = 1; layer <= tree.height(); ++layer) {
        if (!want_layer(layer)) continue;
        LayerSample sample = uniform_layer_sample(tree, layer, path[layer],
                                                  cfg.negatives, rng);
        LayerPlan plan;
        plan.layer = layer;
        plan.positive = path[layer];
        plan.weight = weights[layer];
        plan.negatives = std::move(sample.negatives);
        plan.q = std::move(sample.q);
        plans.push_back(std::move(plan));
      }
      break;
    case SamplerKind::kTree: {
      const BatchNodeScoreFn score =
          bind_batch_score(scorer, params, tree, inst.history);
      std::vector<LayerSample> samples =
          tree_sample_batch(tree, score, path, cfg.negatives, rng);
      for (LayerSample& sample : samples) {
        if (sample.negatives.empty() || !want_layer(sample.layer)) continue;
        LayerPlan plan;
        plan.layer = sample.layer;
        plan.positive = sample.positive;
        plan.weight = weights[sample.layer];
        plan.negatives = std::move(sample.negatives);
        plan.q = std::move(sample.q);
        plans.push_back(std::move(plan));
      }
      break;
    }
  }
  return plans;
}

double apply_instance(const TreeIndex& tree, const PreferenceScorer& scorer,
                      const ScorerParams& params, const TrainInstance& inst,
                      std::span<const LayerPlan> plans,
                      GradientBundle& grads) {
  double loss = 0.0;
  std::vector<int> rows;
  for (const LayerPlan& plan : plans) {
    if (plan.weight == 0) continue;
    if (plan.full) {
      const int width = tree.level_size(plan.layer);
      rows.resize(width);
      const int offset = tree.level_offset(plan.layer);
      std::iota(rows.begin(), rows.end(), offset);
      const std::vector<double> scores =
          scorer.batch_score(params, inst.history, rows);
      loss += practical_layer_loss(plan.weight, scores, plan.positive);
      const std::vector<double> grad =
          practical_layer_grad(plan.weight, scores, plan.positive);
      for (int i = 0; i < width; ++i) {
        if (grad[i] != 0.0) {
          scorer.accumulate_grad(params, inst.history, rows[i], grad[i],
                                 grads);
        }
      }
    } else {
      rows.clear();
      rows.push_back(tree.flat_index({plan.layer, plan.positive}));
      for (int node : plan.negatives) {
        rows.push_back(tree.flat_index({plan.layer, node}));
      }
      const std::vector<double> scores =
          scorer.batch_score(params, inst.history, rows);
      const std::span<const double> negative_scores(scores.data() + 1,
                                                    scores.size() - 1);
      const AdjustedLogits logits =
          adjust_logits(scores[0], negative_scores, plan.q,
                        static_cast<int>(plan.negatives.size()));
      loss += sampled_softmax_loss(logits, plan.weight);
      const SampledGrad grad = sampled_softmax_grad(logits, plan.weight);

      // The same node can be drawn several times; fold the occurrences
      // into one backprop call per row.
      std::unordered_map<int, double> coef;
      coef[rows[0]] += grad.positive;
      for (std::size_t i = 0; i < plan.negatives.size(); ++i) {
        coef[rows[i + 1]] += grad.negatives[i];
      }
      for (const auto& [row, c] : coef) {
        if (c != 0.0) {
          scorer.accumulate_grad(params, inst.history, row, c, grads);
        }
      }
    }
  }
  return loss;
}

EpochStats train_epoch(const TrainConfig& cfg, const TreeIndex& tree,
                       const PreferenceScorer& scorer, ScorerParams& params,
                       AdamOptimizer& opt,
                       std::span<const TrainInstance> train,
                       const EtaSource* eta, const SubtreeMaxTable* eta_max,
                       std::mt19937& rng) {
  cfg.validate();
  EpochStats stats;
  if (train.empty()) return stats;

  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  double total_loss = 0.0;
  for (std::size_t start = 0; start < order.size();
       start += cfg.batch_size) {
    const std::size_t stop =
        std::min(order.size(), start + cfg.batch_size);
    GradientBundle grads = zeros_like(params);
    double batch_loss = 0.0;
    for (std::size_t i = start; i < stop; ++i) {
      const TrainInstance& inst = train[order[i]];
      const std::vector<LayerPlan> plans = prepare_instance(
          cfg, tree, scorer, params, inst, eta, eta_max, rng);
      batch_loss +=
          apply_instance(tree, scorer, params, inst, plans, grads);
      stats.layer_terms += static_cast<long long>(plans.size());
    }
    if (!std::isfinite(batch_loss)) {
      throw std::runtime_error(
          "non-finite training loss in batch " +
          std::to_string(stats.batches) + " (instances " +
          std::to_string(start) + ".." + std::to_string(stop - 1) + ")");
    }
    const double inv = 1.0 / static_cast<double>(stop - start);
    grads.for_each_tensor(
        [&](const std::string&, Mat& m) { m *= inv; });
    opt.step(params, grads);
    total_loss += batch_loss;
    ++stats.batches;
  }
  stats.instances = static_cast<long long>(order.size());
  stats.mean_loss = total_loss / static_cast<double>(stats.instances);
  return stats;
}

std::vector<int> beam_retrieve(const TreeIndex& tree,
                               const PreferenceScorer& scorer,
                               const ScorerParams& params,
                               const EvalInstance& user, int k,
                               int beam_size) {
  const UserHistory history =
      make_window(user.input, scorer.config().history_len());
  const BatchNodeScoreFn score =
      bind_batch_score(scorer, params, tree, history);
  const RetrievalResult result =
      retrieve_topk(tree, score, std::max(k, beam_size));
  std::vector<int> items = result.items;
  if (static_cast<int>(items.size()) > k) items.resize(k);
  return items;
}

AlternationResult alternate(const TrainConfig& cfg, const TreeIndex& tree,
                            const PreferenceScorer& scorer,
                            ScorerParams params, const DataSplit& data,
                            const EtaSource* eta) {
  cfg.validate();
  if (cfg.rectify == RectifyKind::kRectified && !eta) {
    throw std::invalid_argument(
        "rectified training needs a preference estimate");
  }

  AlternationResult result{tree, std::move(params), {}, {}};
  std::mt19937 rng(cfg.seed);
  AdamOptimizer opt(cfg.adam);

  const auto evaluate = [&]() {
    const RetrieveFn retrieve = [&](const EvalInstance& user, int k) {
      return beam_retrieve(result.tree, scorer, result.params, user, k,
                           cfg.beam_size);
    };
    result.history.push_back(
        evaluate_users(data.validation, retrieve, cfg.eval_ks));
  };

  evaluate();
  for (int round = 0; round < cfg.alternations; ++round) {
    std::unique_ptr<SubtreeMaxTable> eta_max;
    if (cfg.rectify == RectifyKind::kRectified) {
      eta_max = std::make_unique<SubtreeMaxTable>(*eta, result.tree);
    }
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      result.epochs.push_back(train_epoch(cfg, result.tree, scorer,
                                          result.params, opt, data.train,
                                          eta, eta_max.get(), rng));
    }
    result.tree = update_tree(result.tree, data.train, scorer,
                              result.params, cfg.tree_stride);
    evaluate();
  }
  return result;
}

}  // namespace dtr
