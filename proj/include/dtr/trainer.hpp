#pragma once

#include <random>
#include <span>
#include <vector>

#include "dtr/dataset.hpp"
#include "dtr/eta_estimator.hpp"
#include "dtr/eval.hpp"
#include "dtr/scorer.hpp"
#include "dtr/tree_index.hpp"

namespace dtr {

// How negatives are drawn per layer.  kFull is the exact reference mode:
// no sampling, softmax over the whole layer.
enum class SamplerKind { kUniform, kTree, kFull };

// kRectified replaces the raw per-layer target with the subtree-max label;
// kNone trains every layer with weight one.
enum class RectifyKind { kNone, kRectified };

struct TrainConfig {
  SamplerKind sampler = SamplerKind::kTree;
  RectifyKind rectify = RectifyKind::kRectified;
  int negatives = 10;  // per layer
  int batch_size = 32;
  int epochs = 1;  // per alternation
  int alternations = 12;
  int tree_stride = 7;
  int beam_size = 50;
  std::vector<int> eval_ks{20};
  AdamConfig adam{};
  unsigned seed = 1;

  void validate() const;
};

// One layer's ready-to-score work for one instance: the positive node, the
// hard target weight, and either sampled negatives with their proposal
// mass or a full-layer softmax.
struct LayerPlan {
  int layer = 0;
  int positive = 0;  // node index within the layer
  int weight = 1;
  bool full = false;
  std::vector<int> negatives;
  std::vector<double> q;
};

// Builds the layer plans for one instance: per-layer positives from the
// target's path, rectified weights when `eta` is given (layers whose
// weight is zero are dropped), negatives drawn per the config.  Layers
// with fewer than two nodes never appear.
std::vector<LayerPlan> prepare_instance(const TrainConfig& cfg,
                                        const TreeIndex& tree,
                                        const PreferenceScorer& scorer,
                                        const ScorerParams& params,
                                        const TrainInstance& inst,
                                        const EtaSource* eta,
                                        const SubtreeMaxTable* eta_max,
                                        std::mt19937& rng);

// Scores the plans, accumulates parameter gradients, and returns the
// summed layer losses for the instance.
double apply_instance(const TreeIndex& tree, const PreferenceScorer& scorer,
                      const ScorerParams& params, const TrainInstance& inst,
                      std::span<const LayerPlan> plans,
                      GradientBundle& grads);

struct EpochStats {
  double mean_loss = 0.0;
  long long instances = 0;
  long long layer_terms = 0;
  long long batches = 0;
};

// One pass over the training set in seeded-shuffle order: per batch, mean
// gradients over the batch's instances, then one optimizer step.  Throws
// std::runtime_error when the loss stops being finite.
EpochStats train_epoch(const TrainConfig& cfg, const TreeIndex& tree,
                       const PreferenceScorer& scorer, ScorerParams& params,
                       AdamOptimizer& opt,
                       std::span<const TrainInstance> train,
                       const EtaSource* eta, const SubtreeMaxTable* eta_max,
                       std::mt19937& rng);

struct AlternationResult {
  TreeIndex tree;
  ScorerParams params;
  // history[0] is the untouched starting point; one entry per alternation
  // follows, so the length is alternations + 1.
  std::vector<MetricReport> history;
  std::vector<EpochStats> epochs;
};

// The full alternating loop: (epochs of scorer training, then a tree
// update, then a validation evaluation) x alternations.  The subtree-max
// view backing rectification is rebuilt whenever the tree changes.  `eta`
// may be null only when the config does not rectify.
AlternationResult alternate(const TrainConfig& cfg, const TreeIndex& tree,
                            const PreferenceScorer& scorer,
                            ScorerParams params, const DataSplit& data,
                            const EtaSource* eta);

// Beam retrieval bound to one evaluation user: the input items become the
// scorer's history window, the beam is at least `beam_size` wide, and the
// best k items are returned.
std::vector<int> beam_retrieve(const TreeIndex& tree,
                               const PreferenceScorer& scorer,
                               const ScorerParams& params,
                               const EvalInstance& user, int k,
                               int beam_size);

}  // namespace dtr
