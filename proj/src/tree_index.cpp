#include "dtr/tree_index.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace dtr {
namespace {

// Smallest h with base^h >= n.
int ceil_log(int base, int n) {
  int h = 0;
  long long cap = 1;
  while (cap < n) {
    cap *= base;
    ++h;
  }
  return h;
}

}  // namespace

TreeIndex::TreeIndex(int branch, std::vector<int> leaf_items) {
  if (branch < 2) {
    throw std::invalid_argument("tree branch factor must be >= 2");
  }
  if (leaf_items.empty()) {
    throw std::invalid_argument("tree needs at least one item");
  }
  branch_ = branch;
  leaf_items_ = std::move(leaf_items);
  item_leaf_.reserve(leaf_items_.size());
  for (std::size_t i = 0; i < leaf_items_.size(); ++i) {
    if (leaf_items_[i] < 1) {
      throw std::invalid_argument("item ids must be >= 1 (0 is the padding id)");
    }
    item_leaf_.emplace_back(leaf_items_[i], static_cast<int>(i + 1));
  }
  std::sort(item_leaf_.begin(), item_leaf_.end());
  for (std::size_t i = 1; i < item_leaf_.size(); ++i) {
    if (item_leaf_[i].first == item_leaf_[i - 1].first) {
      throw std::invalid_argument("duplicate item id " +
                                  std::to_string(item_leaf_[i].first));
    }
  }
  height_ = ceil_log(branch_, num_items());
  build_shape();
}

void TreeIndex::build_shape() {
  const int levels = height_ + 1;
  parent_.assign(levels, {});
  first_child_.assign(levels, {});
  child_count_.assign(levels, {});
  leaf_first_.assign(levels, {});
  leaf_last_.assign(levels, {});

  auto add_node = [&](int level, int parent_index) {
    parent_[level].push_back(parent_index);
    first_child_[level].push_back(0);
    child_count_[level].push_back(0);
    leaf_first_[level].push_back(0);
    leaf_last_[level].push_back(0);
    return static_cast<int>(parent_[level].size());
  };

  // Depth-first split of `count` leaf slots under node (level, idx).  Each
  // level is appended strictly left to right, so child ranges stay
  // contiguous.  A singleton above level H becomes a single-child chain.
  auto split = [&](auto&& self, int level, int idx, int count) -> void {
    if (level == height_) {
      leaf_first_[level][idx - 1] = idx;
      leaf_last_[level][idx - 1] = idx;
      return;
    }
    std::vector<int> parts;
    if (count == 1) {
      parts = {1};
    } else {
      const int per = count / branch_;
      const int extra = count % branch_;
      for (int b = 0; b < branch_; ++b) {
        const int size = per + (b < extra ? 1 : 0);
        if (size > 0) parts.push_back(size);
      }
    }
    int first = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const int kid = add_node(level + 1, idx);
      if (p == 0) first = kid;
      self(self, level + 1, kid, parts[p]);
    }
    const int last = first + static_cast<int>(parts.size()) - 1;
    first_child_[level][idx - 1] = first;
    child_count_[level][idx - 1] = static_cast<int>(parts.size());
    leaf_first_[level][idx - 1] = leaf_first_[level + 1][first - 1];
    leaf_last_[level][idx - 1] = leaf_last_[level + 1][last - 1];
  };

  add_node(0, 0);
  split(split, 0, 1, num_items());

  level_offsets_.assign(levels + 1, 0);
  for (int l = 0; l < levels; ++l) {
    level_offsets_[l + 1] =
        level_offsets_[l] + static_cast<int>(parent_[l].size());
  }
  total_nodes_ = level_offsets_[levels];

  if (static_cast<int>(parent_[height_].size()) != num_items()) {
    throw std::logic_error("tree shape construction lost leaves");
  }
}

TreeIndex TreeIndex::build_from_categories(
    int branch, const std::vector<std::pair<int, int>>& item_categories,
    std::uint64_t seed) {
  if (item_categories.empty()) {
    throw std::invalid_argument("tree needs at least one item");
  }
  std::mt19937_64 rng(seed);

  // Candidate categories per item, in ascending item order so the seeded
  // choice below is reproducible.
  std::map<int, std::vector<int>> candidates;
  for (const auto& [item, cat] : item_categories) {
    candidates[item].push_back(cat);
  }
  std::map<int, std::vector<int>> groups;  // category -> items
  std::vector<int> category_order;
  for (auto& [item, cats] : candidates) {
    std::sort(cats.begin(), cats.end());
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
    int chosen = cats.front();
    if (cats.size() > 1) {
      std::uniform_int_distribution<std::size_t> pick(0, cats.size() - 1);
      chosen = cats[pick(rng)];
    }
    if (groups.find(chosen) == groups.end()) category_order.push_back(chosen);
    groups[chosen].push_back(item);  // ascending, map iterates items in order
  }
  std::sort(category_order.begin(), category_order.end());
  std::shuffle(category_order.begin(), category_order.end(), rng);

  std::vector<int> layout;
  layout.reserve(candidates.size());
  for (int cat : category_order) {
    const auto& members = groups[cat];
    layout.insert(layout.end(), members.begin(), members.end());
  }
  return TreeIndex(branch, std::move(layout));
}

TreeIndex TreeIndex::build_random(int branch, std::vector<int> items,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(items.begin(), items.end(), rng);
  return TreeIndex(branch, std::move(items));
}

int TreeIndex::level_size(int level) const {
  if (level < 0 || level > height_) {
    throw std::out_of_range("level " + std::to_string(level) +
                            " outside [0, " + std::to_string(height_) + "]");
  }
  return static_cast<int>(parent_[level].size());
}

void TreeIndex::check_node(NodeId n) const {
  if (n.level < 0 || n.level > height_ || n.index < 1 ||
      n.index > level_size(n.level)) {
    throw std::out_of_range("no node at level " + std::to_string(n.level) +
                            ", index " + std::to_string(n.index));
  }
}

NodeId TreeIndex::parent(NodeId n) const {
  check_node(n);
  if (n.level == 0) {
    throw std::invalid_argument("root has no parent");
  }
  return {n.level - 1, parent_[n.level][n.index - 1]};
}

NodeId TreeIndex::ancestor_at(NodeId n, int level) const {
  check_node(n);
  if (level < 0 || level > n.level) {
    throw std::invalid_argument("ancestor level must lie in [0, node level]");
  }
  while (n.level > level) n = {n.level - 1, parent_[n.level][n.index - 1]};
  return n;
}

bool TreeIndex::ancestor_of(NodeId a, NodeId b) const {
  check_node(a);
  check_node(b);
  if (a.level >= b.level) return false;
  const auto [alo, ahi] = leaf_range(a);
  const auto [blo, bhi] = leaf_range(b);
  return alo <= blo && bhi <= ahi;
}

std::pair<int, int> TreeIndex::child_range(NodeId n) const {
  check_node(n);
  if (n.level == height_) return {1, 0};
  const int first = first_child_[n.level][n.index - 1];
  return {first, first + child_count_[n.level][n.index - 1] - 1};
}

std::pair<int, int> TreeIndex::leaf_range(NodeId n) const {
  check_node(n);
  return {leaf_first_[n.level][n.index - 1], leaf_last_[n.level][n.index - 1]};
}

std::vector<NodeId> TreeIndex::leaves_under(NodeId n) const {
  const auto [lo, hi] = leaf_range(n);
  std::vector<NodeId> leaves;
  leaves.reserve(hi - lo + 1);
  for (int i = lo; i <= hi; ++i) leaves.push_back({height_, i});
  return leaves;
}

std::vector<int> TreeIndex::item_path(int item) const {
  NodeId n{height_, leaf_of_item(item)};
  std::vector<int> path(height_ + 1);
  path[height_] = n.index;
  while (n.level > 0) {
    n = {n.level - 1, parent_[n.level][n.index - 1]};
    path[n.level] = n.index;
  }
  return path;
}

int TreeIndex::item_at_leaf(int leaf_index) const {
  check_node({height_, leaf_index});
  return leaf_items_[leaf_index - 1];
}

int TreeIndex::leaf_of_item(int item) const {
  const auto it = std::lower_bound(item_leaf_.begin(), item_leaf_.end(),
                                   std::make_pair(item, 0));
  if (it == item_leaf_.end() || it->first != item) {
    throw std::invalid_argument("unknown item id " + std::to_string(item));
  }
  return it->second;
}

void TreeIndex::assign_items(std::vector<int> leaf_items) {
  if (leaf_items.size() != leaf_items_.size()) {
    throw std::invalid_argument("assignment must cover every leaf exactly once");
  }
  std::vector<std::pair<int, int>> relabeled;
  relabeled.reserve(leaf_items.size());
  for (std::size_t i = 0; i < leaf_items.size(); ++i) {
    relabeled.emplace_back(leaf_items[i], static_cast<int>(i + 1));
  }
  std::sort(relabeled.begin(), relabeled.end());
  for (std::size_t i = 0; i < relabeled.size(); ++i) {
    if (relabeled[i].first != item_leaf_[i].first) {
      throw std::invalid_argument(
          "assignment must be a permutation of the existing item set");
    }
  }
  leaf_items_ = std::move(leaf_items);
  item_leaf_ = std::move(relabeled);
}

int TreeIndex::level_offset(int level) const {
  if (level < 0 || level > height_) {
    throw std::out_of_range("level " + std::to_string(level) +
                            " outside [0, " + std::to_string(height_) + "]");
  }
  return level_offsets_[level];
}

void TreeIndex::serialize(std::ostream& out) const {
  out << "TREE v1 " << branch_ << ' ' << height_ << ' ' << num_items() << '\n';
  for (std::size_t i = 0; i < leaf_items_.size(); ++i) {
    out << "LEAF " << i + 1 << ' ' << leaf_items_[i] << '\n';
  }
}

TreeIndex TreeIndex::deserialize(std::istream& in) {
  auto fail = [](int line, const std::string& what) -> std::runtime_error {
    return std::runtime_error("tree file, line " + std::to_string(line) +
                              ": " + what);
  };

  std::string line;
  if (!std::getline(in, line)) throw fail(1, "missing header");
  std::istringstream header(line);
  std::string magic, version;
  int branch = 0, height = 0, leaves = 0;
  if (!(header >> magic >> version >> branch >> height >> leaves) ||
      magic != "TREE") {
    throw fail(1, "expected 'TREE v1 <branch> <height> <leaves>'");
  }
  if (version != "v1") throw fail(1, "unsupported version '" + version + "'");
  if (branch < 2 || leaves < 1) throw fail(1, "bad branch factor or leaf count");
  if (height != ceil_log(branch, leaves)) {
    throw fail(1, "height " + std::to_string(height) +
                      " does not match ceil(log_" + std::to_string(branch) +
                      "(" + std::to_string(leaves) + "))");
  }

  std::vector<int> items(leaves, 0);
  std::vector<bool> seen(leaves, false);
  for (int i = 0; i < leaves; ++i) {
    const int line_no = i + 2;
    if (!std::getline(in, line)) throw fail(line_no, "unexpected end of file");
    std::istringstream row(line);
    std::string tag;
    int leaf_index = 0, item = 0;
    if (!(row >> tag >> leaf_index >> item) || tag != "LEAF") {
      throw fail(line_no, "expected 'LEAF <leaf_index> <item_id>'");
    }
    if (leaf_index < 1 || leaf_index > leaves) {
      throw fail(line_no, "leaf index " + std::to_string(leaf_index) +
                              " outside [1, " + std::to_string(leaves) + "]");
    }
    if (seen[leaf_index - 1]) {
      throw fail(line_no, "leaf " + std::to_string(leaf_index) +
                              " assigned twice");
    }
    seen[leaf_index - 1] = true;
    items[leaf_index - 1] = item;
  }
  int extra_line = leaves + 2;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      throw fail(extra_line, "unexpected trailing content");
    }
    ++extra_line;
  }
  try {
    return TreeIndex(branch, std::move(items));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("tree file: ") + e.what());
  }
}

void TreeIndex::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write tree file " + path);
  serialize(out);
  if (!out) throw std::runtime_error("failed writing tree file " + path);
}

TreeIndex TreeIndex::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open tree file " + path);
  return deserialize(in);
}

bool operator==(const TreeIndex& a, const TreeIndex& b) {
  return a.branch_ == b.branch_ && a.height_ == b.height_ &&
         a.leaf_items_ == b.leaf_items_;
}

}  // namespace dtr
