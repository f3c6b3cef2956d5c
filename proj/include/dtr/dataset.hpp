#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dtr/scorer.hpp"

namespace dtr {

struct Interaction {
  std::int64_t user = 0;
  int item = 0;
  std::int64_t timestamp = 0;
};

struct InteractionLog {
  std::vector<Interaction> rows;
};

// One training example: the items preceding the target, oldest first,
// left-padded with 0 to a fixed length, plus the next item consumed.
struct TrainInstance {
  std::int64_t user = 0;
  UserHistory history;
  int target = 0;
};

// One evaluation user: the first half of their interactions feeds the
// retriever; the remaining items (deduplicated, ascending) are the ground
// truth.
struct EvalInstance {
  std::int64_t user = 0;
  std::vector<int> input;
  std::vector<int> labels;
};

struct DataSplit {
  std::vector<TrainInstance> train;
  std::vector<EvalInstance> validation;
  std::vector<EvalInstance> test;
  int history_len = 0;
};

// Parses `user<TAB>item<TAB>timestamp` rows and drops every user with fewer
// than `min_interactions` rows.  Malformed rows and non-positive item ids
// raise std::runtime_error naming the line.
InteractionLog ingest(const std::string& path, int min_interactions = 15);

// Seeded 80/10/10 user-level split.  Train users contribute one instance
// each: their most recent `history_len + 1` interactions, the last being
// the target.  Validation/test users keep their first half (rounded down)
// as input and the rest as labels.
DataSplit split_users(const InteractionLog& log, unsigned seed,
                      int history_len = 69);

// The most recent `len` items of `items`, left-padded with 0.
UserHistory make_window(std::span<const int> items, int len);

// Synthetic corpus with known per-cluster item distributions.  Users are
// ids 1..num_users; user u follows the distribution of cluster u mod
// num_clusters.  Each distribution is drawn from a symmetric Dirichlet with
// the given concentration; each user interacts `per_user` times i.i.d. with
// timestamps 1..per_user.
struct SynthData {
  InteractionLog log;
  std::map<std::int64_t, std::vector<double>> eta;  // cluster -> distribution
  int num_clusters = 1;
};

SynthData synth_generate(int num_users, int num_items, double concentration,
                         unsigned seed, int num_clusters = 8,
                         int per_user = 30);

}  // namespace dtr
