#include "dtr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "dtr/losses.hpp"
#include "dtr/samplers.hpp"
#include "oracles.hpp"

namespace {

std::vector<int> iota_items(int n) {
  std::vector<int> items(n);
  std::iota(items.begin(), items.end(), 1);
  return items;
}

dtr::TrainInstance instance_for(int item, int history_len) {
  dtr::TrainInstance inst;
  inst.user = item;
  inst.target = item;
  inst.history = dtr::make_window(std::vector<int>{item}, history_len);
  return inst;
}

double max_tensor_diff(const dtr::ScorerParams& a,
                       const dtr::ScorerParams& b) {
  std::map<std::string, dtr::Mat> lhs;
  a.for_each_tensor(
      [&](const std::string& n, const dtr::Mat& m) { lhs[n] = m; });
  double worst = 0.0;
  b.for_each_tensor([&](const std::string& n, const dtr::Mat& m) {
    if (m.size() > 0 && lhs[n].size() > 0) {
      worst = std::max(worst, (lhs[n] - m).cwiseAbs().maxCoeff());
    }
  });
  return worst;
}

}  // namespace

TEST_CASE("training config validation rejects each bad field") {
  dtr::TrainConfig good;
  CHECK_NOTHROW(good.validate());

  dtr::TrainConfig cfg = good;
  cfg.negatives = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = good;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = good;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = good;
  cfg.alternations = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = good;
  cfg.tree_stride = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = good;
  cfg.beam_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = good;
  cfg.eval_ks.clear();
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = good;
  cfg.eval_ks = {5, 0};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = good;
  cfg.adam.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("plans cover every multi-node layer with weight one by default") {
  const dtr::TreeIndex tree(2, iota_items(8));
  dtr::ScorerConfig cfg_s =
      dtr::ScorerConfig::dot_default(8, tree.total_nodes(), 3);
  cfg_s.windows = {2};
  const auto scorer = dtr::make_scorer(cfg_s);
  const dtr::ScorerParams params = dtr::init_params(cfg_s, 5);
  const dtr::TrainInstance inst = instance_for(6, 2);
  const std::vector<int> path = tree.item_path(6);

  dtr::TrainConfig cfg;
  cfg.rectify = dtr::RectifyKind::kNone;
  cfg.negatives = 2;

  SUBCASE("full reference mode") {
    cfg.sampler = dtr::SamplerKind::kFull;
    std::mt19937 rng(1);
    const auto plans = dtr::prepare_instance(cfg, tree, *scorer, params,
                                             inst, nullptr, nullptr, rng);
    REQUIRE(plans.size() == 3u);
    for (std::size_t i = 0; i < plans.size(); ++i) {
      const int layer = static_cast<int>(i) + 1;
      CHECK(plans[i].layer == layer);
      CHECK(plans[i].positive == path[layer]);
      CHECK(plans[i].weight == 1);
      CHECK(plans[i].full);
      CHECK(plans[i].negatives.empty());
    }
  }

  SUBCASE("uniform negatives") {
    cfg.sampler = dtr::SamplerKind::kUniform;
    std::mt19937 rng(2);
    const auto plans = dtr::prepare_instance(cfg, tree, *scorer, params,
                                             inst, nullptr, nullptr, rng);
    REQUIRE(plans.size() == 3u);
    for (const dtr::LayerPlan& plan : plans) {
      CHECK_FALSE(plan.full);
      REQUIRE(plan.negatives.size() == 2u);
      REQUIRE(plan.q.size() == 2u);
      const int width = tree.level_size(plan.layer);
      for (std::size_t i = 0; i < plan.negatives.size(); ++i) {
        CHECK(plan.negatives[i] != plan.positive);
        CHECK(plan.negatives[i] >= 1);
        CHECK(plan.negatives[i] <= width);
        CHECK(plan.q[i] == doctest::Approx(1.0 / (width - 1)));
      }
    }
  }

  SUBCASE("tree-walk negatives are deterministic under a fixed seed") {
    cfg.sampler = dtr::SamplerKind::kTree;
    std::mt19937 rng_a(3);
    std::mt19937 rng_b(3);
    const auto plans = dtr::prepare_instance(cfg, tree, *scorer, params,
                                             inst, nullptr, nullptr, rng_a);
    const auto again = dtr::prepare_instance(cfg, tree, *scorer, params,
                                             inst, nullptr, nullptr, rng_b);
    REQUIRE(plans.size() == 3u);
    REQUIRE(again.size() == 3u);
    for (std::size_t i = 0; i < plans.size(); ++i) {
      CHECK(plans[i].negatives == again[i].negatives);
      CHECK(plans[i].q == again[i].q);
      REQUIRE(plans[i].negatives.size() == 2u);
      for (int node : plans[i].negatives) {
        CHECK(node != plans[i].positive);
      }
      for (double q : plans[i].q) CHECK(q > 0.0);
    }
  }

  SUBCASE("rectification without an estimate is rejected") {
    cfg.rectify = dtr::RectifyKind::kRectified;
    std::mt19937 rng(4);
    CHECK_THROWS_AS(dtr::prepare_instance(cfg, tree, *scorer, params, inst,
                                          nullptr, nullptr, rng),
                    std::invalid_argument);
  }
}

TEST_CASE("rectified weights drop layers the target cannot win") {
  const dtr::TreeIndex tree(2, iota_items(8));
  dtr::ScorerConfig cfg_s =
      dtr::ScorerConfig::dot_default(8, tree.total_nodes(), 3);
  cfg_s.windows = {2};
  const auto scorer = dtr::make_scorer(cfg_s);
  const dtr::ScorerParams params = dtr::init_params(cfg_s, 8);

  // Item 2 dominates everything, so target 1 only wins its own leaf.
  std::map<std::int64_t, std::vector<double>> table;
  table[1] = {0.05, 0.60, 0.05, 0.05, 0.05, 0.05, 0.05, 0.10};
  const dtr::EtaSource eta = dtr::EtaSource::oracle(table, 8);
  const dtr::SubtreeMaxTable eta_max(eta, tree);

  dtr::TrainConfig cfg;
  cfg.sampler = dtr::SamplerKind::kFull;
  cfg.rectify = dtr::RectifyKind::kRectified;

  const dtr::TrainInstance inst = instance_for(1, 2);
  std::mt19937 rng(5);
  const auto plans = dtr::prepare_instance(cfg, tree, *scorer, params, inst,
                                           &eta, &eta_max, rng);
  REQUIRE(plans.size() == 1u);
  CHECK(plans[0].layer == 3);
  CHECK(plans[0].weight == 1);

  SUBCASE("gradients equal a run that never saw the dropped layers") {
    dtr::GradientBundle rectified = dtr::zeros_like(params);
    const double loss_rect = dtr::apply_instance(tree, *scorer, params,
                                                 inst, plans, rectified);

    std::vector<dtr::LayerPlan> manual(1);
    manual[0].layer = 3;
    manual[0].positive = tree.item_path(1)[3];
    manual[0].weight = 1;
    manual[0].full = true;
    dtr::GradientBundle reference = dtr::zeros_like(params);
    const double loss_ref = dtr::apply_instance(tree, *scorer, params, inst,
                                                manual, reference);
    CHECK(loss_rect == loss_ref);
    CHECK(max_tensor_diff(rectified, reference) == 0.0);
  }

  SUBCASE("a dominating target keeps every layer") {
    dtr::TrainInstance winner = instance_for(2, 2);
    winner.user = 1;  // stay on the single tabulated context
    const auto full_plans = dtr::prepare_instance(
        cfg, tree, *scorer, params, winner, &eta, &eta_max, rng);
    CHECK(full_plans.size() == 3u);
  }

  SUBCASE("explicit zero-weight plans contribute nothing") {
    std::vector<dtr::LayerPlan> zeroed(1);
    zeroed[0].layer = 1;
    zeroed[0].positive = tree.item_path(1)[1];
    zeroed[0].weight = 0;
    zeroed[0].full = true;
    dtr::GradientBundle grads = dtr::zeros_like(params);
    CHECK(dtr::apply_instance(tree, *scorer, params, inst, zeroed, grads) ==
          0.0);
    CHECK(max_tensor_diff(grads, dtr::zeros_like(params)) == 0.0);
  }
}

TEST_CASE("sampling every negative reproduces the full-softmax epoch loss") {
  const dtr::TreeIndex tree(2, iota_items(8));
  dtr::ScorerConfig cfg_s =
      dtr::ScorerConfig::dot_default(8, tree.total_nodes(), 3);
  cfg_s.windows = {2};
  const auto scorer = dtr::make_scorer(cfg_s);
  const dtr::ScorerParams start = dtr::init_params(cfg_s, 21);

  std::vector<dtr::TrainInstance> train;
  for (int y = 1; y <= 8; ++y) train.push_back(instance_for(y, 2));

  dtr::TrainConfig cfg;
  cfg.rectify = dtr::RectifyKind::kNone;
  cfg.batch_size = static_cast<int>(train.size());
  cfg.negatives = 7;  // covers the widest layer

  const auto epoch_loss = [&](dtr::SamplerKind kind, unsigned seed) {
    cfg.sampler = kind;
    dtr::ScorerParams params = start;
    dtr::AdamOptimizer opt(cfg.adam);
    std::mt19937 rng(seed);
    const dtr::EpochStats stats = dtr::train_epoch(
        cfg, tree, *scorer, params, opt, train, nullptr, nullptr, rng);
    CHECK(stats.instances == 8);
    CHECK(stats.batches == 1);
    CHECK(max_tensor_diff(params, start) > 0.0);  // the step happened
    return stats.mean_loss;
  };

  const double full = epoch_loss(dtr::SamplerKind::kFull, 3);
  for (unsigned seed : {1u, 2u, 3u}) {
    const double sampled = epoch_loss(dtr::SamplerKind::kUniform, seed);
    CHECK(std::abs(sampled - full) / full < 0.02);
  }
}

TEST_CASE("identical seeds give identical loss trajectories") {
  const dtr::TreeIndex tree(3, iota_items(9));
  dtr::ScorerConfig cfg_s =
      dtr::ScorerConfig::dot_default(9, tree.total_nodes(), 3);
  cfg_s.windows = {2};
  const auto scorer = dtr::make_scorer(cfg_s);
  const dtr::ScorerParams start = dtr::init_params(cfg_s, 2);

  std::vector<dtr::TrainInstance> train;
  for (int y = 1; y <= 9; ++y) train.push_back(instance_for(y, 2));

  dtr::TrainConfig cfg;
  cfg.sampler = dtr::SamplerKind::kTree;
  cfg.rectify = dtr::RectifyKind::kNone;
  cfg.negatives = 3;
  cfg.batch_size = 4;

  const auto run = [&](unsigned seed) {
    dtr::ScorerParams params = start;
    dtr::AdamOptimizer opt(cfg.adam);
    std::mt19937 rng(seed);
    std::vector<double> losses;
    for (int epoch = 0; epoch < 3; ++epoch) {
      losses.push_back(dtr::train_epoch(cfg, tree, *scorer, params, opt,
                                        train, nullptr, nullptr, rng)
                           .mean_loss);
    }
    return std::make_pair(losses, params);
  };

  const auto [losses_a, params_a] = run(11);
  const auto [losses_b, params_b] = run(11);
  CHECK(losses_a == losses_b);
  CHECK(max_tensor_diff(params_a, params_b) == 0.0);

  const auto [losses_c, params_c] = run(12);
  CHECK(losses_a != losses_c);
}

TEST_CASE("tree-sampled proposal masses match the layer distribution") {
  std::mt19937 seeds(404);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 4 + static_cast<int>(seeds() % 9);
    const dtr::TreeIndex tree =
        dtr::TreeIndex::build_random(2, iota_items(n), seeds());
    dtr::ScorerConfig cfg_s =
        dtr::ScorerConfig::dot_default(n, tree.total_nodes(), 3);
    cfg_s.windows = {2};
    const auto scorer = dtr::make_scorer(cfg_s);
    const dtr::ScorerParams params = dtr::init_params(cfg_s, seeds());
    const int target = 1 + static_cast<int>(seeds() % n);
    const dtr::TrainInstance inst = instance_for(target, 2);

    dtr::TrainConfig cfg;
    cfg.sampler = dtr::SamplerKind::kTree;
    cfg.rectify = dtr::RectifyKind::kNone;
    cfg.negatives = 4;

    std::mt19937 rng(seeds());
    const auto plans = dtr::prepare_instance(cfg, tree, *scorer, params,
                                             inst, nullptr, nullptr, rng);
    const dtr::BatchNodeScoreFn score =
        dtr::bind_batch_score(*scorer, params, tree, inst.history);
    for (const dtr::LayerPlan& plan : plans) {
      const std::vector<double> layer_q =
          dtr::layer_probability_vector(tree, score, plan.layer);
      REQUIRE(plan.q.size() == plan.negatives.size());
      for (std::size_t i = 0; i < plan.negatives.size(); ++i) {
        CHECK(plan.q[i] ==
              doctest::Approx(layer_q[plan.negatives[i] - 1])
                  .epsilon(1e-15));
      }
    }
  }
}

TEST_CASE("beam retrieval honours the wider of beam size and cutoff") {
  const dtr::TreeIndex tree(2, iota_items(8));
  dtr::ScorerConfig cfg_s =
      dtr::ScorerConfig::dot_default(8, tree.total_nodes(), 4);
  cfg_s.windows = {2};
  const auto scorer = dtr::make_scorer(cfg_s);
  const dtr::ScorerParams params = dtr::init_params(cfg_s, 14);

  dtr::EvalInstance user;
  user.user = 1;
  user.input = {3, 5};
  user.labels = {2};

  // Beam as wide as the vocabulary: no pruning, so the top-3 equal the
  // exhaustive ranking under the same scorer.
  const dtr::UserHistory history = dtr::make_window(user.input, 2);
  const dtr::BatchNodeScoreFn score =
      dtr::bind_batch_score(*scorer, params, tree, history);
  const std::vector<int> brute = dtr::exhaustive_topk(tree, score, 3);
  CHECK(dtr::beam_retrieve(tree, *scorer, params, user, 3, 8) == brute);

  const std::vector<int> all =
      dtr::beam_retrieve(tree, *scorer, params, user, 20, 4);
  CHECK(all.size() <= 20u);
  std::vector<int> sorted_items = all;
  std::sort(sorted_items.begin(), sorted_items.end());
  CHECK(std::unique(sorted_items.begin(), sorted_items.end()) ==
        sorted_items.end());
}

TEST_CASE("alternation interleaves training, tree updates, and evaluation") {
  const dtr::SynthData synth = dtr::synth_generate(60, 16, 1.0, 31u, 4, 12);
  const dtr::DataSplit data = dtr::split_users(synth.log, 5u, 4);
  REQUIRE(data.train.size() == 48u);
  REQUIRE(data.validation.size() == 6u);

  const dtr::TreeIndex tree =
      dtr::TreeIndex::build_random(2, iota_items(16), 77);
  dtr::ScorerConfig cfg_s =
      dtr::ScorerConfig::dot_default(16, tree.total_nodes(), 4);
  cfg_s.windows = {2, 2};
  const auto scorer = dtr::make_scorer(cfg_s);
  dtr::ScorerParams params = dtr::init_params(cfg_s, 3);

  const dtr::EtaSource eta = dtr::EtaSource::oracle(
      synth.eta, 16, dtr::EtaKeyMode::kUserMod, 4);

  dtr::TrainConfig cfg;
  cfg.sampler = dtr::SamplerKind::kTree;
  cfg.rectify = dtr::RectifyKind::kRectified;
  cfg.negatives = 3;
  cfg.batch_size = 16;
  cfg.epochs = 1;
  cfg.alternations = 2;
  cfg.tree_stride = 2;
  cfg.beam_size = 8;
  cfg.eval_ks = {4};
  cfg.seed = 9;

  const dtr::AlternationResult result =
      dtr::alternate(cfg, tree, *scorer, params, data, &eta);

  CHECK(result.history.size() == 3u);  // initial + one per alternation
  for (const dtr::MetricReport& report : result.history) {
    CHECK(report.ks == std::vector<int>{4});
    CHECK(report.users_evaluated == 6);
    for (double r : report.recall) {
      CHECK(r >= 0.0);
      CHECK(r <= 1.0);
    }
  }
  CHECK(result.epochs.size() == 2u);
  for (const dtr::EpochStats& stats : result.epochs) {
    CHECK(std::isfinite(stats.mean_loss));
    CHECK(stats.instances == 48);
  }

  // The tree was relearned but stayed a bijection over the same items.
  std::vector<int> relabeled;
  for (int leaf = 1; leaf <= 16; ++leaf) {
    relabeled.push_back(result.tree.item_at_leaf(leaf));
  }
  std::sort(relabeled.begin(), relabeled.end());
  CHECK(relabeled == iota_items(16));

  SUBCASE("the whole loop is reproducible") {
    const dtr::AlternationResult again =
        dtr::alternate(cfg, tree, *scorer, params, data, &eta);
    CHECK(again.tree == result.tree);
    CHECK(max_tensor_diff(again.params, result.params) == 0.0);
    REQUIRE(again.history.size() == result.history.size());
    for (std::size_t i = 0; i < result.history.size(); ++i) {
      CHECK(again.history[i].recall == result.history[i].recall);
    }
  }

  SUBCASE("rectified alternation without an estimate is rejected") {
    CHECK_THROWS_AS(dtr::alternate(cfg, tree, *scorer, params, data,
                                   nullptr),
                    std::invalid_argument);
  }
}
