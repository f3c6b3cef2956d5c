#include "dtr/tree_index.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"

using dtr::NodeId;
using dtr::TreeIndex;

namespace {

std::vector<int> iota_items(int n) {
  std::vector<int> items(n);
  for (int i = 0; i < n; ++i) items[i] = i + 1;
  return items;
}

}  // namespace

TEST_CASE("five items over branch 2: chain-deepened shape") {
  TreeIndex tree(2, iota_items(5));
  CHECK(tree.height() == 3);
  CHECK(tree.level_size(0) == 1);
  CHECK(tree.level_size(1) == 2);
  CHECK(tree.level_size(2) == 4);
  CHECK(tree.level_size(3) == 5);
  CHECK(tree.total_nodes() == 12);

  // 5 splits as (3,2); the 3 splits as (2,1) so leaf 3 hangs off a chain.
  CHECK(tree.child_range({0, 1}) == std::pair<int, int>{1, 2});
  CHECK(tree.child_range({1, 1}) == std::pair<int, int>{1, 2});
  CHECK(tree.child_range({2, 2}) == std::pair<int, int>{3, 3});
  CHECK(tree.parent({3, 3}) == NodeId{2, 2});
  CHECK(tree.leaf_range({1, 1}) == std::pair<int, int>{1, 3});
  CHECK(tree.leaf_range({1, 2}) == std::pair<int, int>{4, 5});
}

TEST_CASE("complete binary tree navigation") {
  TreeIndex tree(2, iota_items(8));
  CHECK(tree.height() == 3);
  CHECK(tree.parent({3, 5}) == NodeId{2, 3});
  CHECK(tree.ancestor_at({3, 5}, 2) == NodeId{2, 3});
  CHECK(tree.ancestor_at({3, 5}, 0) == tree.root());
  CHECK(tree.item_path(5) == std::vector<int>{1, 2, 3, 5});

  const auto leaves = tree.leaves_under({2, 2});
  REQUIRE(leaves.size() == 2);
  CHECK(leaves[0] == NodeId{3, 3});
  CHECK(leaves[1] == NodeId{3, 4});

  CHECK(tree.ancestor_of({1, 1}, {3, 4}));
  CHECK_FALSE(tree.ancestor_of({1, 2}, {3, 4}));
  CHECK_FALSE(tree.ancestor_of({3, 4}, {3, 4}));
}

TEST_CASE("shape invariants and navigation agree with parent-walk oracle") {
  std::mt19937_64 rng(7);
  for (int branch : {2, 3}) {
    for (int n : {1, 2, 3, 5, 7, 9, 16, 27, 31, 40}) {
      TreeIndex tree = TreeIndex::build_random(branch, iota_items(n),
                                               rng() & 0xffff);
      CAPTURE(branch);
      CAPTURE(n);

      // Every leaf sits at level H and the deepest level is exactly the
      // leaf set.
      CHECK(tree.level_size(tree.height()) == n);
      int total = 0;
      for (int l = 0; l <= tree.height(); ++l) {
        total += tree.level_size(l);
        if (l > 0) CHECK(tree.level_size(l) >= tree.level_size(l - 1));
      }
      CHECK(total == tree.total_nodes());

      // Child ranges partition the next level in order.
      for (int l = 0; l < tree.height(); ++l) {
        int next = 1;
        for (int i = 1; i <= tree.level_size(l); ++i) {
          const auto [lo, hi] = tree.child_range({l, i});
          CHECK(lo == next);
          CHECK(hi - lo + 1 <= branch);
          for (int c = lo; c <= hi; ++c) {
            CHECK(tree.parent({l + 1, c}) == NodeId{l, i});
          }
          next = hi + 1;
        }
        CHECK(next == tree.level_size(l + 1) + 1);
      }

      // ancestor_of matches the oracle on a sample of node pairs.
      std::uniform_int_distribution<int> pick_level(0, tree.height());
      for (int trial = 0; trial < 50; ++trial) {
        const int la = pick_level(rng), lb = pick_level(rng);
        std::uniform_int_distribution<int> pa(1, tree.level_size(la));
        std::uniform_int_distribution<int> pb(1, tree.level_size(lb));
        NodeId a{la, pa(rng)}, b{lb, pb(rng)};
        CHECK(tree.ancestor_of(a, b) ==
              dtr::oracle::ancestor_by_parent_walk(tree, a, b));
      }

      // leaves_under matches the scan oracle for every node.
      for (int l = 0; l <= tree.height(); ++l) {
        for (int i = 1; i <= tree.level_size(l); ++i) {
          CHECK(tree.leaves_under({l, i}) ==
                dtr::oracle::leaves_by_scan(tree, {l, i}));
        }
      }

      // item_path really is the ancestor chain of the item's leaf.
      for (int item = 1; item <= n; ++item) {
        const auto path = tree.item_path(item);
        REQUIRE(static_cast<int>(path.size()) == tree.height() + 1);
        const NodeId leaf{tree.height(), tree.leaf_of_item(item)};
        CHECK(tree.item_at_leaf(leaf.index) == item);
        for (int l = 0; l <= tree.height(); ++l) {
          CHECK(tree.ancestor_at(leaf, l).index == path[l]);
        }
      }
    }
  }
}

TEST_CASE("flat node indexing is dense and unique") {
  TreeIndex tree(3, iota_items(11));
  std::vector<int> seen;
  for (int l = 0; l <= tree.height(); ++l) {
    for (int i = 1; i <= tree.level_size(l); ++i) {
      seen.push_back(tree.flat_index({l, i}));
    }
  }
  std::sort(seen.begin(), seen.end());
  for (int i = 0; i < tree.total_nodes(); ++i) CHECK(seen[i] == i);
}

TEST_CASE("serialization round-trips and validates") {
  TreeIndex tree = TreeIndex::build_random(2, iota_items(13), 99);
  std::ostringstream out;
  tree.serialize(out);

  std::istringstream in(out.str());
  TreeIndex back = TreeIndex::deserialize(in);
  CHECK(back == tree);
  CHECK(back.height() == tree.height());
  for (int item = 1; item <= 13; ++item) {
    CHECK(back.leaf_of_item(item) == tree.leaf_of_item(item));
  }

  SUBCASE("malformed header") {
    std::istringstream bad("TREE v2 2 4 13\n");
    CHECK_THROWS_WITH_AS(TreeIndex::deserialize(bad),
                         doctest::Contains("line 1"), std::runtime_error);
  }
  SUBCASE("inconsistent height") {
    std::istringstream bad("TREE v1 2 3 13\n");
    CHECK_THROWS_WITH_AS(TreeIndex::deserialize(bad),
                         doctest::Contains("height"), std::runtime_error);
  }
  SUBCASE("duplicate leaf line") {
    std::istringstream bad("TREE v1 2 1 2\nLEAF 1 4\nLEAF 1 5\n");
    CHECK_THROWS_WITH_AS(TreeIndex::deserialize(bad),
                         doctest::Contains("line 3"), std::runtime_error);
  }
  SUBCASE("truncated file") {
    std::istringstream bad("TREE v1 2 1 2\nLEAF 1 4\n");
    CHECK_THROWS_WITH_AS(TreeIndex::deserialize(bad),
                         doctest::Contains("end of file"), std::runtime_error);
  }
  SUBCASE("trailing junk") {
    std::istringstream bad("TREE v1 2 1 2\nLEAF 1 4\nLEAF 2 5\nLEAF 3 6\n");
    CHECK_THROWS_AS(TreeIndex::deserialize(bad), std::runtime_error);
  }
}

TEST_CASE("random build is seeded and deterministic") {
  TreeIndex a = TreeIndex::build_random(2, iota_items(16), 5);
  TreeIndex b = TreeIndex::build_random(2, iota_items(16), 5);
  CHECK(a == b);

  std::vector<int> items;
  for (int i = 1; i <= 16; ++i) items.push_back(a.item_at_leaf(i));
  std::sort(items.begin(), items.end());
  CHECK(items == iota_items(16));
}

TEST_CASE("category build keeps categories contiguous") {
  // Three categories of sizes 4, 3, 2; one item (7) listed twice.
  std::vector<std::pair<int, int>> labeled = {
      {1, 10}, {2, 10}, {3, 10}, {4, 10}, {5, 20}, {6, 20},
      {7, 20}, {8, 30}, {9, 30}, {7, 30},
  };
  TreeIndex tree = TreeIndex::build_from_categories(2, labeled, 42);
  CHECK(tree.num_items() == 9);
  CHECK(tree == TreeIndex::build_from_categories(2, labeled, 42));

  // Category 10's members must occupy consecutive leaves.
  std::vector<int> cat10;
  for (int item : {1, 2, 3, 4}) cat10.push_back(tree.leaf_of_item(item));
  std::sort(cat10.begin(), cat10.end());
  CHECK(cat10.back() - cat10.front() == 3);
}

TEST_CASE("leaf assignment can be replaced but must stay a bijection") {
  TreeIndex tree(2, iota_items(4));
  tree.assign_items({4, 3, 2, 1});
  CHECK(tree.item_at_leaf(1) == 4);
  CHECK(tree.leaf_of_item(1) == 4);
  CHECK(tree.item_path(4) == std::vector<int>{1, 1, 1});

  CHECK_THROWS_AS(tree.assign_items({1, 2, 3, 3}), std::invalid_argument);
  CHECK_THROWS_AS(tree.assign_items({1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(tree.assign_items({1, 2, 3, 5}), std::invalid_argument);
}

TEST_CASE("construction rejects invalid input") {
  CHECK_THROWS_AS(TreeIndex(1, iota_items(4)), std::invalid_argument);
  CHECK_THROWS_AS(TreeIndex(2, {}), std::invalid_argument);
  CHECK_THROWS_AS(TreeIndex(2, {1, 2, 2}), std::invalid_argument);
  CHECK_THROWS_AS(TreeIndex(2, {0, 1}), std::invalid_argument);

  TreeIndex tree(2, iota_items(4));
  CHECK_THROWS_AS(tree.parent({0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(tree.leaf_of_item(99), std::invalid_argument);
  CHECK_THROWS_AS(tree.level_size(4), std::out_of_range);
  CHECK_THROWS_AS(tree.leaf_range({2, 9}), std::out_of_range);
}

TEST_CASE("single-item tree degenerates to a lone root leaf") {
  TreeIndex tree(2, {7});
  CHECK(tree.height() == 0);
  CHECK(tree.level_size(0) == 1);
  CHECK(tree.is_leaf(tree.root()));
  CHECK(tree.item_path(7) == std::vector<int>{1});
}
