#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dtr/tree_index.hpp"

namespace dtr {

// How a preference estimate is keyed to a user context.
enum class EtaKeyMode {
  kUserId,    // key = the user id itself
  kUserMod,   // key = user id % modulus (synthetic cluster convention)
  kLastItem,  // key = most recent non-padding history item, 0 if none
};

// Per-context item preference estimates eta(item | key).  Three flavours
// share this container: exact tables (strict: unknown keys are an error),
// empirical last-item buckets with additive smoothing, and TSV-backed
// tables where missing entries default to probability zero.
class EtaSource {
 public:
  // Dense probability vector per key; vectors must have one entry per item.
  static EtaSource oracle(
      std::map<std::int64_t, std::vector<double>> table, int num_items,
      EtaKeyMode mode = EtaKeyMode::kUserId, std::int64_t modulus = 0);

  // Additive-smoothing estimate from (key, target item) pairs.  A key with
  // no observations falls back to the uniform distribution.
  static EtaSource empirical(
      std::span<const std::pair<std::int64_t, int>> key_target_pairs,
      int num_items, double smoothing);

  // TSV rows "user_key<TAB>item_id<TAB>probability".  Rows need not sum to
  // one per key; pairs absent from the file have probability zero.
  static EtaSource from_file(const std::string& path, int num_items,
                             EtaKeyMode mode = EtaKeyMode::kUserId,
                             std::int64_t modulus = 0);

  // Writes every non-zero entry as TSV, keys ascending, items ascending.
  void save(const std::string& path) const;

  std::int64_t key_for(std::int64_t user_id,
                       std::span<const int> history_items) const;

  // eta(item | key); item must lie in [1, num_items].
  double prob(std::int64_t key, int item) const;

  int num_items() const { return num_items_; }
  EtaKeyMode key_mode() const { return mode_; }

 private:
  EtaSource() = default;

  EtaKeyMode mode_ = EtaKeyMode::kUserId;
  std::int64_t modulus_ = 0;
  int num_items_ = 0;
  bool strict_keys_ = false;
  double uniform_fallback_ = -1.0;  // >= 0: value for unknown keys
  std::map<std::int64_t, std::vector<double>> table_;  // dense per key
};

// Per-tree view answering "largest eta under this node" queries from a
// bottom-up table, built lazily per key and cached.  Rebuild the view when
// the tree's leaf assignment changes.  Not safe for concurrent first use
// of the same key.
class SubtreeMaxTable {
 public:
  SubtreeMaxTable(const EtaSource& eta, const TreeIndex& tree);

  // Largest eta(item | key) over items below `node`.
  double max_under(std::int64_t key, NodeId node) const;

  // True iff `item` attains that maximum under `node`, ties broken by
  // smallest item id.
  bool is_subtree_max(std::int64_t key, int item, NodeId node) const;

 private:
  const std::vector<std::pair<double, int>>& table_for(std::int64_t key) const;

  const EtaSource* eta_;
  const TreeIndex* tree_;
  // Per key, per flat node index: (max eta, smallest item attaining it).
  mutable std::unordered_map<std::int64_t,
                             std::vector<std::pair<double, int>>> cache_;
};

}  // namespace dtr
