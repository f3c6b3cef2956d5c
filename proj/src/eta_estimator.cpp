#include "dtr/eta_estimator.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dtr {

EtaSource EtaSource::oracle(std::map<std::int64_t, std::vector<double>> table,
                            int num_items, EtaKeyMode mode,
                            std::int64_t modulus) {
  if (num_items < 1) {
    throw std::invalid_argument("eta table needs num_items >= 1");
  }
  for (const auto& [key, probs] : table) {
    if (static_cast<int>(probs.size()) != num_items) {
      throw std::invalid_argument("eta table for key " + std::to_string(key) +
                                  " must cover every item");
    }
    for (double p : probs) {
      if (p < 0.0 || !std::isfinite(p)) {
        throw std::invalid_argument("eta probabilities must be finite and >= 0");
      }
    }
  }
  EtaSource src;
  src.mode_ = mode;
  src.modulus_ = modulus;
  src.num_items_ = num_items;
  src.strict_keys_ = true;
  src.table_ = std::move(table);
  return src;
}

EtaSource EtaSource::empirical(
    std::span<const std::pair<std::int64_t, int>> key_target_pairs,
    int num_items, double smoothing) {
  if (num_items < 1) {
    throw std::invalid_argument("eta estimate needs num_items >= 1");
  }
  if (smoothing < 0.0) {
    throw std::invalid_argument("smoothing must be >= 0");
  }
  std::map<std::int64_t, std::vector<double>> counts;
  for (const auto& [key, item] : key_target_pairs) {
    if (item < 1 || item > num_items) {
      throw std::out_of_range("target item " + std::to_string(item) +
                              " outside [1, " + std::to_string(num_items) +
                              "]");
    }
    auto& row = counts[key];
    if (row.empty()) row.assign(num_items, 0.0);
    row[item - 1] += 1.0;
  }
  for (auto& [key, row] : counts) {
    double total = 0.0;
    for (double c : row) total += c;
    const double denom = total + num_items * smoothing;
    for (double& c : row) {
      c = denom > 0.0 ? (c + smoothing) / denom : 1.0 / num_items;
    }
  }
  EtaSource src;
  src.mode_ = EtaKeyMode::kLastItem;
  src.num_items_ = num_items;
  src.strict_keys_ = false;
  src.uniform_fallback_ = 1.0 / num_items;  // unseen bucket -> uniform
  src.table_ = std::move(counts);
  return src;
}

EtaSource EtaSource::from_file(const std::string& path, int num_items,
                               EtaKeyMode mode, std::int64_t modulus) {
  if (num_items < 1) {
    throw std::invalid_argument("eta table needs num_items >= 1");
  }
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open eta file " + path);

  std::map<std::int64_t, std::vector<double>> table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    std::int64_t key = 0;
    int item = 0;
    double p = 0.0;
    if (!(row >> key >> item >> p)) {
      throw std::runtime_error("eta file " + path + ", line " +
                               std::to_string(line_no) +
                               ": expected 'user_key item_id probability'");
    }
    if (item < 1 || item > num_items) {
      throw std::runtime_error("eta file " + path + ", line " +
                               std::to_string(line_no) + ": item " +
                               std::to_string(item) + " outside [1, " +
                               std::to_string(num_items) + "]");
    }
    if (p < 0.0 || !std::isfinite(p)) {
      throw std::runtime_error("eta file " + path + ", line " +
                               std::to_string(line_no) +
                               ": probability must be finite and >= 0");
    }
    auto& dense = table[key];
    if (dense.empty()) dense.assign(num_items, 0.0);
    if (dense[item - 1] != 0.0) {
      throw std::runtime_error("eta file " + path + ", line " +
                               std::to_string(line_no) + ": duplicate pair (" +
                               std::to_string(key) + ", " +
                               std::to_string(item) + ")");
    }
    dense[item - 1] = p;
  }

  EtaSource src;
  src.mode_ = mode;
  src.modulus_ = modulus;
  src.num_items_ = num_items;
  src.strict_keys_ = false;
  src.uniform_fallback_ = 0.0;  // absent pairs score zero
  src.table_ = std::move(table);
  return src;
}

void EtaSource::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write eta file " + path);
  out.precision(17);
  for (const auto& [key, probs] : table_) {
    for (int item = 1; item <= num_items_; ++item) {
      const double p = probs[item - 1];
      if (p != 0.0) out << key << '\t' << item << '\t' << p << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed writing eta file " + path);
}

std::int64_t EtaSource::key_for(std::int64_t user_id,
                                std::span<const int> history_items) const {
  switch (mode_) {
    case EtaKeyMode::kUserId:
      return user_id;
    case EtaKeyMode::kUserMod:
      if (modulus_ < 1) {
        throw std::logic_error("user-mod eta keying needs a modulus >= 1");
      }
      return ((user_id % modulus_) + modulus_) % modulus_;
    case EtaKeyMode::kLastItem:
      for (auto it = history_items.rbegin(); it != history_items.rend(); ++it) {
        if (*it != 0) return *it;
      }
      return 0;
  }
  throw std::logic_error("unreachable eta key mode");
}

double EtaSource::prob(std::int64_t key, int item) const {
  if (item < 1 || item > num_items_) {
    throw std::out_of_range("item " + std::to_string(item) + " outside [1, " +
                            std::to_string(num_items_) + "]");
  }
  const auto it = table_.find(key);
  if (it == table_.end()) {
    if (strict_keys_) {
      throw std::invalid_argument("no eta entry for key " +
                                  std::to_string(key));
    }
    return uniform_fallback_;
  }
  return it->second[item - 1];
}

SubtreeMaxTable::SubtreeMaxTable(const EtaSource& eta, const TreeIndex& tree)
    : eta_(&eta), tree_(&tree) {
  if (eta.num_items() < tree.num_items()) {
    throw std::invalid_argument(
        "eta source covers fewer items than the tree holds");
  }
}

const std::vector<std::pair<double, int>>& SubtreeMaxTable::table_for(
    std::int64_t key) const {
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;

  // One bottom-up pass: leaves carry their own item, parents take the best
  // child, preferring the smaller item id on exact ties.
  const TreeIndex& tree = *tree_;
  std::vector<std::pair<double, int>> table(tree.total_nodes());
  const int H = tree.height();
  for (int leaf = 1; leaf <= tree.level_size(H); ++leaf) {
    const int item = tree.item_at_leaf(leaf);
    table[tree.flat_index({H, leaf})] = {eta_->prob(key, item), item};
  }
  for (int level = H - 1; level >= 0; --level) {
    for (int i = 1; i <= tree.level_size(level); ++i) {
      const auto [lo, hi] = tree.child_range({level, i});
      std::pair<double, int> best{0.0, 0};
      for (int c = lo; c <= hi; ++c) {
        const auto& cand = table[tree.flat_index({level + 1, c})];
        if (best.second == 0 || cand.first > best.first ||
            (cand.first == best.first && cand.second < best.second)) {
          best = cand;
        }
      }
      table[tree.flat_index({level, i})] = best;
    }
  }
  return cache_.emplace(key, std::move(table)).first->second;
}

double SubtreeMaxTable::max_under(std::int64_t key, NodeId node) const {
  return table_for(key)[tree_->flat_index(node)].first;
}

bool SubtreeMaxTable::is_subtree_max(std::int64_t key, int item,
                                     NodeId node) const {
  return table_for(key)[tree_->flat_index(node)].second == item;
}

}  // namespace dtr
