#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dtr/tree_index.hpp"

namespace dtr {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Fixed-length interaction history, oldest first, left-padded with the
// padding id 0 when the user has fewer interactions than the window.
struct UserHistory {
  std::vector<int> items;
};

enum class ScorerKind { kDot, kDin };

struct ScorerConfig {
  ScorerKind kind = ScorerKind::kDin;
  int num_items = 0;  // item ids run 1..num_items; 0 is padding
  int num_nodes = 0;  // dense tree-node rows, see TreeIndex::flat_index
  int embed_dim = 24;
  int attention_hidden = 24;
  std::vector<int> mlp_hidden = {128, 64};
  // Contiguous windows over the history, oldest first; their sum is the
  // history length.  Recent items get the finer (smaller) windows.
  std::vector<int> windows = {20, 20, 10, 10, 2, 2, 2, 1, 1, 1};

  int history_len() const;
  void validate() const;

  static ScorerConfig din_default(int num_items, int num_nodes);
  // Small preset for tests and quick experiments.
  static ScorerConfig din_desk(int num_items, int num_nodes);
  static ScorerConfig dot_default(int num_items, int num_nodes,
                                  int embed_dim = 8);
};

// Every learnable tensor of a scorer.  The dot scorer leaves the attention
// and MLP tensors empty.  Also used as the gradient accumulator, where each
// slot holds dLoss/dTensor.
struct ScorerParams {
  Mat item_embeddings;  // (num_items+1) x d, row 0 = padding, kept zero
  Mat node_embeddings;  // num_nodes x d
  Mat attn_w1;          // h x 3d
  Mat attn_w2;          // 1 x h
  Mat attn_slopes;      // 1 x 2, PReLU slopes of the two attention stages
  std::vector<Mat> mlp_w;  // hidden layers then the final 1 x h row
  Mat mlp_slopes;          // 1 x (#hidden), PReLU slope per hidden layer

  template <class F>
  void for_each_tensor(F&& f) {
    f(std::string("item_embeddings"), item_embeddings);
    f(std::string("node_embeddings"), node_embeddings);
    f(std::string("attn_w1"), attn_w1);
    f(std::string("attn_w2"), attn_w2);
    f(std::string("attn_slopes"), attn_slopes);
    for (std::size_t i = 0; i < mlp_w.size(); ++i) {
      f("mlp_w" + std::to_string(i), mlp_w[i]);
    }
    f(std::string("mlp_slopes"), mlp_slopes);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<ScorerParams*>(this)->for_each_tensor(
        [&](const std::string& name, Mat& m) { f(name, std::as_const(m)); });
  }
};

using GradientBundle = ScorerParams;

// Seeded uniform(-0.05, 0.05) weights, PReLU slopes 0.25, padding row zero.
ScorerParams init_params(const ScorerConfig& cfg, std::uint64_t seed);
GradientBundle zeros_like(const ScorerParams& p);

// Instrumentation collected during a forward pass; min |pre-activation|
// lets numeric-gradient tests stay away from PReLU kinks.
struct ForwardStats {
  double min_abs_preact = std::numeric_limits<double>::infinity();
};

// Preference model over tree nodes.  Parameters are handed in explicitly so
// the same immutable scorer can serve concurrent readers.
class PreferenceScorer {
 public:
  explicit PreferenceScorer(ScorerConfig cfg);
  virtual ~PreferenceScorer() = default;

  const ScorerConfig& config() const { return cfg_; }

  virtual double score(const ScorerParams& params, const UserHistory& history,
                       int node_row, ForwardStats* stats = nullptr) const = 0;

  // Scores many nodes for one user, reusing the user-side computation.
  virtual std::vector<double> batch_score(const ScorerParams& params,
                                          const UserHistory& history,
                                          std::span<const int> node_rows) const;

  // Accumulates coef * d(score)/d(params) into `grads`.  The padding
  // embedding row never receives gradient.
  virtual void accumulate_grad(const ScorerParams& params,
                               const UserHistory& history, int node_row,
                               double coef, GradientBundle& grads) const = 0;

 protected:
  void check_inputs(const ScorerParams& params, const UserHistory& history,
                    int node_row) const;

  ScorerConfig cfg_;
};

// Attention-over-history scorer: each history item is weighted by a small
// two-stage PReLU network fed with [a_k, a_k*w_n, w_n], the weighted items
// are pooled per window, and an MLP maps [pooled windows, w_n] to a scalar.
class DinScorer : public PreferenceScorer {
 public:
  explicit DinScorer(ScorerConfig cfg);

  double score(const ScorerParams& params, const UserHistory& history,
               int node_row, ForwardStats* stats = nullptr) const override;
  void accumulate_grad(const ScorerParams& params, const UserHistory& history,
                       int node_row, double coef,
                       GradientBundle& grads) const override;

  // Per-position attention weights, exposed for diagnostics and tests.
  std::vector<double> attention_weights(const ScorerParams& params,
                                        const UserHistory& history,
                                        int node_row) const;
};

// Mean of the non-padding history embeddings dotted with the node
// embedding; an empty history scores 0 everywhere.
class DotScorer : public PreferenceScorer {
 public:
  explicit DotScorer(ScorerConfig cfg);

  double score(const ScorerParams& params, const UserHistory& history,
               int node_row, ForwardStats* stats = nullptr) const override;
  std::vector<double> batch_score(const ScorerParams& params,
                                  const UserHistory& history,
                                  std::span<const int> node_rows) const override;
  void accumulate_grad(const ScorerParams& params, const UserHistory& history,
                       int node_row, double coef,
                       GradientBundle& grads) const override;
};

std::unique_ptr<PreferenceScorer> make_scorer(const ScorerConfig& cfg);

// Bound single-user views used by the samplers and beam search.  They
// capture the arguments by reference; keep them alive while scoring.
using NodeScoreFn = std::function<double(NodeId)>;
using BatchNodeScoreFn =
    std::function<std::vector<double>(std::span<const NodeId>)>;

NodeScoreFn bind_score(const PreferenceScorer& scorer,
                       const ScorerParams& params, const TreeIndex& tree,
                       const UserHistory& history);
BatchNodeScoreFn bind_batch_score(const PreferenceScorer& scorer,
                                  const ScorerParams& params,
                                  const TreeIndex& tree,
                                  const UserHistory& history);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction.  Keeps first/second moment state per tensor;
// re-zeroes the padding embedding row after every step.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {});

  void step(ScorerParams& params, const GradientBundle& grads);
  long long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long long t_ = 0;
  std::unique_ptr<ScorerParams> m_, v_;
};

// Plain SGD step, used as the optimizer oracle in tests.
void sgd_step(ScorerParams& params, const GradientBundle& grads, double lr);

// Binary checkpoint: header "DTRPARAMS v1\n" followed by length-prefixed
// named tensors (u32 name length, name bytes, u32 rank, u64 dims,
// little-endian f64 payload).  Re-saving loaded params is byte-identical.
void save_params(const std::string& path, const ScorerConfig& cfg,
                 const ScorerParams& params);
std::pair<ScorerConfig, ScorerParams> load_params(const std::string& path);

}  // namespace dtr
