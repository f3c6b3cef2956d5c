#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace dtr {

// Address of a tree node.  Level 0 is the root; indices are 1-based within
// each level, counted left to right.
struct NodeId {
  int level = 0;
  int index = 1;

  friend bool operator==(const NodeId& a, const NodeId& b) = default;
};

// B-ary hierarchy over an item vocabulary.  All leaves sit at the deepest
// level H = ceil(log_B(num_items)) and each holds exactly one item, so
// leaf <-> item is a bijection.
//
// The shape is a pure function of (branch, num_items): the ordered leaf
// slots are split recursively into `branch` near-equal contiguous parts
// (earlier parts take the extra element) until singletons, and a singleton
// that lands above level H is pushed down through a chain of single-child
// internal nodes.  Consequently every node covers a contiguous range of
// leaves, and only the leaf -> item assignment differs between two trees
// with the same (branch, num_items).
class TreeIndex {
 public:
  // Builds the canonical shape for leaf_items.size() leaves and assigns
  // leaf_items[i] to leaf i+1.  Items must be unique and >= 1 (0 is the
  // padding id).  Throws std::invalid_argument on bad input.
  TreeIndex(int branch, std::vector<int> leaf_items);

  // Groups items by category and lays the groups out contiguously in a
  // seeded random category order; within a group items are laid out in
  // ascending id order.  An item listed under several categories is
  // assigned one of them uniformly at random (seeded).
  static TreeIndex build_from_categories(
      int branch, const std::vector<std::pair<int, int>>& item_categories,
      std::uint64_t seed);

  // Seeded uniform shuffle of the items, then the canonical shape.
  static TreeIndex build_random(int branch, std::vector<int> items,
                                std::uint64_t seed);

  int branch() const { return branch_; }
  int height() const { return height_; }
  int num_items() const { return static_cast<int>(leaf_items_.size()); }
  int num_levels() const { return height_ + 1; }
  int level_size(int level) const;
  int total_nodes() const { return total_nodes_; }

  NodeId root() const { return {0, 1}; }
  bool is_leaf(NodeId n) const { return n.level == height_; }

  // Parent of a non-root node.
  NodeId parent(NodeId n) const;

  // Ancestor of `n` at `level` (level <= n.level; level == n.level returns
  // n itself).  This is the rho-projection used to pick per-layer targets.
  NodeId ancestor_at(NodeId n, int level) const;

  // True iff `a` is a proper ancestor of `b`.
  bool ancestor_of(NodeId a, NodeId b) const;

  // Children of `n`, as the 1-based index range [first, last] at level
  // n.level + 1.  Leaves return an empty range (first > last).
  std::pair<int, int> child_range(NodeId n) const;

  // Leaves below `n`, as the 1-based index range [first, last] at level H.
  // A leaf covers itself.
  std::pair<int, int> leaf_range(NodeId n) const;
  std::vector<NodeId> leaves_under(NodeId n) const;

  // Root-to-leaf node indices for an item: entry j is the index of the
  // level-j ancestor of the item's leaf.  Throws if the item is unknown.
  std::vector<int> item_path(int item) const;

  int item_at_leaf(int leaf_index) const;  // pi(leaf)
  int leaf_of_item(int item) const;        // pi^{-1}(item)

  // Replaces the leaf -> item assignment, keeping the shape.  The new
  // assignment must be a permutation of the current item set.
  void assign_items(std::vector<int> leaf_items);

  // Dense row id for per-node tables: levels are laid out consecutively,
  // so flat_index({j,i}) = level_offset(j) + i - 1.
  int level_offset(int level) const;
  int flat_index(NodeId n) const { return level_offset(n.level) + n.index - 1; }

  // Line-oriented text format:
  //   TREE v1 <branch> <height> <num_leaves>
  //   LEAF <leaf_index> <item_id>     (one line per leaf)
  // The internal structure is not stored; it is reconstructed from
  // (branch, num_leaves) by the canonical shape rule.
  void serialize(std::ostream& out) const;
  static TreeIndex deserialize(std::istream& in);
  void save(const std::string& path) const;
  static TreeIndex load(const std::string& path);

  friend bool operator==(const TreeIndex& a, const TreeIndex& b);

 private:
  TreeIndex() = default;
  void build_shape();
  void check_node(NodeId n) const;

  int branch_ = 2;
  int height_ = 0;
  int total_nodes_ = 0;
  std::vector<int> leaf_items_;                 // leaf i+1 -> item
  std::vector<std::pair<int, int>> item_leaf_;  // sorted (item, leaf index)

  // Per level: parent index, first child index and child count, covered
  // leaf range.  All indices 1-based; vectors themselves 0-based.
  std::vector<std::vector<int>> parent_;
  std::vector<std::vector<int>> first_child_;
  std::vector<std::vector<int>> child_count_;
  std::vector<std::vector<int>> leaf_first_;
  std::vector<std::vector<int>> leaf_last_;
  std::vector<int> level_offsets_;
};

}  // namespace dtr
