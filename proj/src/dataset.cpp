#include "dtr/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace dtr {
namespace {

// Parses one integer field, advancing `cursor` past it and the following
// tab (or to end-of-line for the last field).
template <typename T>
T parse_field(const std::string& line, std::size_t& cursor, bool last,
              const std::string& path, std::size_t line_no) {
  const auto fail = [&](const char* what) {
    throw std::runtime_error("log file " + path + ", line " +
                             std::to_string(line_no) + ": " + what);
  };
  const std::size_t end =
      last ? line.size() : std::min(line.find('\t', cursor), line.size());
  T value{};
  const auto [ptr, ec] =
      std::from_chars(line.data() + cursor, line.data() + end, value);
  if (ec != std::errc() || ptr != line.data() + end || end == cursor) {
    fail("expected an integer field");
  }
  if (!last) {
    if (end >= line.size() || line[end] != '\t') fail("expected three fields");
    cursor = end + 1;
  } else {
    cursor = end;
  }
  return value;
}

}  // namespace

InteractionLog ingest(const std::string& path, int min_interactions) {
  if (min_interactions < 1) {
    throw std::invalid_argument("min_interactions must be >= 1");
  }
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open log file " + path);

  InteractionLog log;
  std::unordered_map<std::int64_t, int> counts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t cursor = 0;
    Interaction row;
    row.user = parse_field<std::int64_t>(line, cursor, false, path, line_no);
    row.item = parse_field<int>(line, cursor, false, path, line_no);
    row.timestamp =
        parse_field<std::int64_t>(line, cursor, true, path, line_no);
    if (row.item < 1) {
      throw std::runtime_error("log file " + path + ", line " +
                               std::to_string(line_no) +
                               ": item ids must be >= 1");
    }
    ++counts[row.user];
    log.rows.push_back(row);
  }

  InteractionLog kept;
  kept.rows.reserve(log.rows.size());
  for (const Interaction& row : log.rows) {
    if (counts[row.user] >= min_interactions) kept.rows.push_back(row);
  }
  return kept;
}

UserHistory make_window(std::span<const int> items, int len) {
  if (len < 0) throw std::invalid_argument("window length must be >= 0");
  UserHistory h;
  h.items.assign(len, 0);
  const int take = std::min<int>(len, items.size());
  for (int i = 0; i < take; ++i) {
    h.items[len - take + i] = items[items.size() - take + i];
  }
  return h;
}

DataSplit split_users(const InteractionLog& log, unsigned seed,
                      int history_len) {
  if (history_len < 1) {
    throw std::invalid_argument("history_len must be >= 1");
  }
  std::map<std::int64_t, std::vector<std::pair<std::int64_t, int>>> per_user;
  for (const Interaction& row : log.rows) {
    per_user[row.user].push_back({row.timestamp, row.item});
  }
  std::vector<std::int64_t> users;
  users.reserve(per_user.size());
  for (auto& [user, rows] : per_user) {
    users.push_back(user);
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) {
                       return a.first < b.first;
                     });
  }
  if (users.size() < 10) {
    throw std::invalid_argument("split needs at least 10 users");
  }
  std::shuffle(users.begin(), users.end(), std::mt19937(seed));
  const std::size_t n = users.size();
  const std::size_t n_test = n / 10;
  const std::size_t n_val = n / 10;
  const std::size_t n_train = n - n_val - n_test;

  DataSplit split;
  split.history_len = history_len;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rows = per_user[users[i]];
    std::vector<int> items;
    items.reserve(rows.size());
    for (const auto& [ts, item] : rows) items.push_back(item);

    if (i < n_train) {
      // Most recent history_len + 1 interactions; the last one is the
      // target, everything before it is context.
      const int take = std::min<int>(history_len + 1, items.size());
      std::span<const int> recent(items.data() + items.size() - take, take);
      TrainInstance inst;
      inst.user = users[i];
      inst.target = recent.back();
      inst.history = make_window(recent.first(recent.size() - 1), history_len);
      split.train.push_back(std::move(inst));
    } else {
      EvalInstance inst;
      inst.user = users[i];
      const std::size_t half = items.size() / 2;
      inst.input.assign(items.begin(), items.begin() + half);
      inst.labels.assign(items.begin() + half, items.end());
      std::sort(inst.labels.begin(), inst.labels.end());
      inst.labels.erase(
          std::unique(inst.labels.begin(), inst.labels.end()),
          inst.labels.end());
      auto& bucket = i < n_train + n_val ? split.validation : split.test;
      bucket.push_back(std::move(inst));
    }
  }
  return split;
}

SynthData synth_generate(int num_users, int num_items, double concentration,
                         unsigned seed, int num_clusters, int per_user) {
  if (num_users < 1 || num_items < 1 || num_clusters < 1 || per_user < 1) {
    throw std::invalid_argument("synth sizes must be >= 1");
  }
  if (!(concentration > 0.0)) {
    throw std::invalid_argument("concentration must be > 0");
  }
  std::mt19937 rng(seed);
  SynthData data;
  data.num_clusters = num_clusters;

  std::gamma_distribution<double> gamma(concentration, 1.0);
  for (int c = 0; c < num_clusters; ++c) {
    std::vector<double> eta(num_items);
    double sum = 0.0;
    for (double& v : eta) {
      v = gamma(rng);
      sum += v;
    }
    // A zero gamma draw is possible only by underflow; keep the
    // distribution strictly positive so every item stays reachable.
    for (double& v : eta) {
      v = std::max(v / sum, 1e-300);
    }
    data.eta[c] = std::move(eta);
  }

  std::vector<std::discrete_distribution<int>> pick;
  pick.reserve(num_clusters);
  for (int c = 0; c < num_clusters; ++c) {
    pick.emplace_back(data.eta[c].begin(), data.eta[c].end());
  }
  data.log.rows.reserve(static_cast<std::size_t>(num_users) * per_user);
  for (int u = 1; u <= num_users; ++u) {
    auto& cluster_pick = pick[u % num_clusters];
    for (int t = 1; t <= per_user; ++t) {
      data.log.rows.push_back({u, cluster_pick(rng) + 1, t});
    }
  }
  return data;
}

}  // namespace dtr
