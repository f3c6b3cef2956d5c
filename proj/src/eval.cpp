#include "dtr/eval.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "dtr/losses.hpp"

namespace dtr {

UserMetrics precision_recall_f(std::span<const int> retrieved,
                               std::span<const int> ground_truth, int k) {
  if (k < 1) throw std::invalid_argument("metrics need k >= 1");
  if (ground_truth.empty()) {
    throw std::invalid_argument("metrics need a non-empty ground truth");
  }
  const std::unordered_set<int> truth(ground_truth.begin(),
                                      ground_truth.end());
  std::unordered_set<int> seen;
  int hits = 0;
  for (int item : retrieved) {
    if (seen.insert(item).second && truth.count(item)) ++hits;
  }
  if (static_cast<int>(seen.size()) > k) {
    throw std::invalid_argument("more than k distinct items retrieved");
  }
  UserMetrics m;
  m.precision = static_cast<double>(hits) / k;
  m.recall = static_cast<double>(hits) / truth.size();
  m.f_measure = m.precision + m.recall > 0.0
                    ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                    : 0.0;
  return m;
}

std::vector<int> exhaustive_topk(const TreeIndex& tree,
                                 const BatchNodeScoreFn& score, int k) {
  if (k < 1) throw std::invalid_argument("exhaustive_topk needs k >= 1");
  std::vector<NodeId> leaves;
  leaves.reserve(tree.num_items());
  for (int i = 1; i <= tree.num_items(); ++i) {
    leaves.push_back({tree.height(), i});
  }
  const std::vector<double> scores = score(leaves);
  std::vector<int> order(leaves.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<int> items;
  const int keep = std::min<int>(k, order.size());
  items.reserve(keep);
  for (int i = 0; i < keep; ++i) {
    items.push_back(tree.item_at_leaf(order[i] + 1));
  }
  return items;
}

std::vector<int> bayes_topk(std::span<const double> eta, int k) {
  if (k < 1) throw std::invalid_argument("bayes_topk needs k >= 1");
  if (eta.empty()) throw std::invalid_argument("bayes_topk needs items");
  std::vector<int> order(eta.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (eta[a] != eta[b]) return eta[a] > eta[b];
    return a < b;
  });
  std::vector<int> items;
  const int keep = std::min<int>(k, order.size());
  items.reserve(keep);
  for (int i = 0; i < keep; ++i) items.push_back(order[i] + 1);
  return items;
}

std::vector<double> full_softmax_gradient(std::span<const double> scores,
                                          int pos, double weight) {
  if (pos < 1 || pos > static_cast<int>(scores.size())) {
    throw std::invalid_argument("gradient position out of range");
  }
  std::vector<double> grad = layer_softmax(scores);
  grad[pos - 1] -= 1.0;
  for (double& g : grad) g *= weight;
  return grad;
}

MetricReport evaluate_users(std::span<const EvalInstance> users,
                            const RetrieveFn& retrieve,
                            std::span<const int> ks) {
  if (ks.empty()) throw std::invalid_argument("evaluation needs cutoffs");
  for (int k : ks) {
    if (k < 1) throw std::invalid_argument("evaluation cutoffs must be >= 1");
  }
  MetricReport report;
  report.ks.assign(ks.begin(), ks.end());
  report.precision.assign(ks.size(), 0.0);
  report.recall.assign(ks.size(), 0.0);
  report.f_measure.assign(ks.size(), 0.0);
  const int max_k = *std::max_element(ks.begin(), ks.end());

  for (const EvalInstance& user : users) {
    if (user.labels.empty()) {
      ++report.users_skipped;
      continue;
    }
    const std::vector<int> retrieved = retrieve(user, max_k);
    ++report.users_evaluated;
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
      const int k = report.ks[i];
      const std::size_t take = std::min<std::size_t>(k, retrieved.size());
      const UserMetrics m = precision_recall_f(
          std::span<const int>(retrieved.data(), take), user.labels, k);
      report.precision[i] += m.precision;
      report.recall[i] += m.recall;
      report.f_measure[i] += m.f_measure;
    }
  }
  if (report.users_evaluated > 0) {
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
      report.precision[i] /= report.users_evaluated;
      report.recall[i] /= report.users_evaluated;
      report.f_measure[i] /= report.users_evaluated;
    }
  }
  return report;
}

}  // namespace dtr
