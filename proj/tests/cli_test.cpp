#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "dtr/cli.hpp"
#include "dtr/dataset.hpp"
#include "dtr/eta_estimator.hpp"
#include "dtr/scorer.hpp"
#include "dtr/tree_index.hpp"

namespace {

namespace fs = std::filesystem;

int run(std::initializer_list<std::string> args) {
  std::vector<std::string> storage{"dtr"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(storage.size());
  for (const std::string& s : storage) argv.push_back(s.c_str());
  return dtr::run_cli(static_cast<int>(argv.size()), argv.data());
}

// Fresh per-test scratch directory under the system temp root.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& tag)
      : dir(fs::temp_directory_path() / ("dtr_cli_" + tag)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator()(const std::string& name) const {
    return (dir / name).string();
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::vector<std::string>> read_tsv(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    rows.push_back(fields);
  }
  return rows;
}

void make_synth(const Scratch& s, int items = 40, int users = 30) {
  REQUIRE(run({"synth", "--items", std::to_string(items), "--users",
               std::to_string(users), "--clusters", "4", "--per-user", "18",
               "--seed", "11", "--log", s("log.tsv"), "--eta",
               s("eta.tsv")}) == 0);
}

}  // namespace

TEST_CASE("synth emits a parseable log and distribution table") {
  const Scratch s("synth");
  make_synth(s);

  const dtr::InteractionLog log = dtr::ingest(s("log.tsv"), 1);
  CHECK(log.rows.size() == 30u * 18u);
  for (const dtr::Interaction& row : log.rows) {
    CHECK(row.user >= 1);
    CHECK(row.user <= 30);
    CHECK(row.item >= 1);
    CHECK(row.item <= 40);
  }

  const dtr::EtaSource eta =
      dtr::EtaSource::from_file(s("eta.tsv"), 40, dtr::EtaKeyMode::kUserMod,
                                4);
  double total = 0.0;
  for (int item = 1; item <= 40; ++item) total += eta.prob(2, item);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

  SUBCASE("an identical invocation is byte-identical") {
    REQUIRE(run({"synth", "--items", "40", "--users", "30", "--clusters",
                 "4", "--per-user", "18", "--seed", "11", "--log",
                 s("log2.tsv"), "--eta", s("eta2.tsv")}) == 0);
    CHECK(slurp(s("log2.tsv")) == slurp(s("log.tsv")));
    CHECK(slurp(s("eta2.tsv")) == slurp(s("eta.tsv")));
  }
  SUBCASE("a different seed changes the log") {
    REQUIRE(run({"synth", "--items", "40", "--users", "30", "--clusters",
                 "4", "--per-user", "18", "--seed", "12", "--log",
                 s("log3.tsv"), "--eta", s("eta3.tsv")}) == 0);
    CHECK(slurp(s("log3.tsv")) != slurp(s("log.tsv")));
  }
}

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}) == 1);
  CHECK(run({"frobnicate"}) == 1);
  CHECK(run({"train"}) == 1);                        // --data is required
  CHECK(run({"synth", "--items", "5"}) == 1);        // --users is required
  CHECK(run({"synth", "--items", "5", "--users", "4", "--bogus"}) == 1);
  CHECK(run({"synth", "--items", "-3", "--users", "4"}) == 1);
  CHECK(run({"train", "--data", "x.tsv", "--sampler", "magic"}) == 1);
  CHECK(run({"--help"}) == 0);
}

TEST_CASE("missing input files exit with 2") {
  const Scratch s("missing");
  CHECK(run({"train", "--data", s("absent.tsv")}) == 2);
  CHECK(run({"eval", "--data", s("absent.tsv"), "--tree", s("absent.txt"),
             "--params", s("absent.bin")}) == 2);
  CHECK(run({"diagnose", "--tree", s("absent.txt"), "--params",
             s("absent.bin")}) == 2);
}

TEST_CASE("train writes a loadable tree, checkpoint, and reports") {
  const Scratch s("train");
  make_synth(s);
  const auto train_run = [&](const std::string& out) {
    return run({"train", "--data", s("log.tsv"), "--out", s(out),
                "--scorer", "dot", "--windows", "2,2", "--embed-dim", "6",
                "--branch", "2", "--negatives", "4", "--batch-size", "8",
                "--epochs", "1", "--alternations", "2", "--stride", "2",
                "--beam", "12", "--ks", "5,10", "--min-interactions", "5",
                "--eta", s("eta.tsv"), "--eta-mode", "mod", "--eta-modulus",
                "4", "--seed", "3"});
  };
  REQUIRE(train_run("out") == 0);

  const dtr::TreeIndex tree = dtr::TreeIndex::load(s("out/tree.txt"));
  CHECK(tree.num_items() == 40);
  for (int item = 1; item <= 40; ++item) {
    CHECK(tree.item_at_leaf(tree.leaf_of_item(item)) == item);
  }

  const auto [cfg, params] = dtr::load_params(s("out/params.bin"));
  CHECK(cfg.kind == dtr::ScorerKind::kDot);
  CHECK(cfg.embed_dim == 6);
  CHECK(params.item_embeddings.rows() == 41);
  CHECK(params.node_embeddings.rows() == tree.total_nodes());

  const auto metrics = read_tsv(s("out/metrics.tsv"));
  REQUIRE(metrics.size() == 1u + 3u * 2u);  // header + (alternations+1) * ks
  CHECK(metrics[0] == std::vector<std::string>{"alternation", "k",
                                               "precision", "recall",
                                               "f_measure", "n_users"});
  CHECK(metrics[1][0] == "0");
  CHECK(metrics[1][1] == "5");
  CHECK(metrics.back()[0] == "2");
  CHECK(metrics.back()[1] == "10");

  const auto losses = read_tsv(s("out/losses.tsv"));
  REQUIRE(losses.size() == 3u);  // header + one epoch per alternation
  CHECK(losses[0][2] == "mean_loss");
  CHECK(std::stod(losses[1][2]) > 0.0);
  CHECK(std::stoi(losses[1][3]) > 0);

  SUBCASE("a rerun with the same seed is byte-identical") {
    REQUIRE(train_run("out2") == 0);
    CHECK(slurp(s("out2/tree.txt")) == slurp(s("out/tree.txt")));
    CHECK(slurp(s("out2/params.bin")) == slurp(s("out/params.bin")));
    CHECK(slurp(s("out2/metrics.tsv")) == slurp(s("out/metrics.tsv")));
    CHECK(slurp(s("out2/losses.tsv")) == slurp(s("out/losses.tsv")));
  }
  SUBCASE("eval reproduces the final validation row of the history") {
    REQUIRE(run({"eval", "--data", s("log.tsv"), "--tree", s("out/tree.txt"),
                 "--params", s("out/params.bin"), "--split", "validation",
                 "--ks", "5,10", "--beam", "12", "--min-interactions", "5",
                 "--seed", "3", "--out", s("val.tsv")}) == 0);
    const auto val = read_tsv(s("val.tsv"));
    REQUIRE(val.size() == 3u);
    const auto train_rows = read_tsv(s("out/metrics.tsv"));
    // The last two metric rows are the post-final-alternation validation.
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& expect = train_rows[train_rows.size() - 2 + i];
      for (std::size_t col = 0; col < 5; ++col) {
        CHECK(val[i + 1][col] == expect[col + 1]);
      }
    }
  }
  SUBCASE("eval is invariant to the thread count") {
    REQUIRE(run({"eval", "--data", s("log.tsv"), "--tree", s("out/tree.txt"),
                 "--params", s("out/params.bin"), "--ks", "5,10", "--beam",
                 "12", "--min-interactions", "5", "--threads", "1", "--seed",
                 "3", "--out", s("t1.tsv")}) == 0);
    REQUIRE(run({"eval", "--data", s("log.tsv"), "--tree", s("out/tree.txt"),
                 "--params", s("out/params.bin"), "--ks", "5,10", "--beam",
                 "12", "--min-interactions", "5", "--threads", "4", "--seed",
                 "3", "--out", s("t4.tsv")}) == 0);
    CHECK(slurp(s("t1.tsv")) == slurp(s("t4.tsv")));
    const auto rows = read_tsv(s("t1.tsv"));
    REQUIRE(rows.size() == 3u);
    CHECK(rows[0][0] == "k");
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const double precision = std::stod(rows[r][1]);
      const double recall = std::stod(rows[r][2]);
      CHECK(precision >= 0.0);
      CHECK(precision <= 1.0);
      CHECK(recall >= 0.0);
      CHECK(recall <= 1.0);
    }
  }
  SUBCASE("update-tree writes a loadable bijective tree") {
    REQUIRE(run({"update-tree", "--data", s("log.tsv"), "--tree",
                 s("out/tree.txt"), "--params", s("out/params.bin"), "--out",
                 s("tree2.txt"), "--stride", "3", "--min-interactions", "5",
                 "--seed", "3"}) == 0);
    const dtr::TreeIndex updated = dtr::TreeIndex::load(s("tree2.txt"));
    CHECK(updated.branch() == tree.branch());
    CHECK(updated.height() == tree.height());
    for (int item = 1; item <= 40; ++item) {
      CHECK(updated.item_at_leaf(updated.leaf_of_item(item)) == item);
    }
  }
  SUBCASE("diagnose reports unit mass per layer") {
    REQUIRE(run({"diagnose", "--tree", s("out/tree.txt"), "--params",
                 s("out/params.bin"), "--check", "sum", "--history", "3,9",
                 "--out", s("diag.tsv")}) == 0);
    const auto rows = read_tsv(s("diag.tsv"));
    REQUIRE(rows.size() == static_cast<std::size_t>(tree.height()) + 1);
    CHECK(rows[0] == std::vector<std::string>{"layer", "nodes", "sum_q"});
    for (std::size_t r = 1; r < rows.size(); ++r) {
      CHECK(std::stod(rows[r][2]) ==
            doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("train builds its own tree and estimates eta when none is given") {
  const Scratch s("selfsufficient");
  make_synth(s, 24, 24);
  REQUIRE(run({"train", "--data", s("log.tsv"), "--out", s("out"),
               "--scorer", "dot", "--windows", "2,1", "--embed-dim", "4",
               "--branch", "3", "--negatives", "3", "--batch-size", "8",
               "--epochs", "1", "--alternations", "1", "--stride", "2",
               "--beam", "9", "--ks", "5", "--min-interactions", "5",
               "--seed", "5"}) == 0);
  const dtr::TreeIndex tree = dtr::TreeIndex::load(s("out/tree.txt"));
  CHECK(tree.branch() == 3);
  CHECK(tree.num_items() == 24);

  SUBCASE("an explicit vocabulary override widens the tree") {
    REQUIRE(run({"train", "--data", s("log.tsv"), "--out", s("wide"),
                 "--scorer", "dot", "--windows", "2,1", "--embed-dim", "4",
                 "--items", "32", "--negatives", "3", "--batch-size", "8",
                 "--epochs", "1", "--alternations", "1", "--stride", "2",
                 "--beam", "8", "--ks", "5", "--min-interactions", "5",
                 "--rectify", "off", "--seed", "5"}) == 0);
    const dtr::TreeIndex wide = dtr::TreeIndex::load(s("wide/tree.txt"));
    CHECK(wide.num_items() == 32);
  }
  SUBCASE("a vocabulary smaller than the data is a runtime error") {
    CHECK(run({"train", "--data", s("log.tsv"), "--out", s("narrow"),
               "--items", "10"}) == 2);
  }
}

TEST_CASE("config files feed flags and the command line wins") {
  const Scratch s("config");
  {
    std::ofstream cfg(s("synth.cfg"));
    cfg << "items=12\n"
        << "users=9\n"
        << "clusters=3\n"
        << "per-user=7\n"
        << "seed=2\n"
        << "log=" << s("log.tsv") << "\n"
        << "eta=" << s("eta.tsv") << "\n";
  }
  REQUIRE(run({"synth", "--config", s("synth.cfg")}) == 0);
  const dtr::InteractionLog log = dtr::ingest(s("log.tsv"), 1);
  CHECK(log.rows.size() == 9u * 7u);
  int max_item = 0;
  for (const dtr::Interaction& row : log.rows) {
    max_item = std::max(max_item, row.item);
  }
  CHECK(max_item <= 12);

  // The same config with --items on the command line: the flag wins.
  REQUIRE(run({"synth", "--config", s("synth.cfg"), "--items", "100",
               "--log", s("log2.tsv"), "--eta", s("eta2.tsv")}) == 0);
  const dtr::InteractionLog log2 = dtr::ingest(s("log2.tsv"), 1);
  CHECK(log2.rows.size() == 9u * 7u);
  int max_item2 = 0;
  for (const dtr::Interaction& row : log2.rows) {
    max_item2 = std::max(max_item2, row.item);
  }
  CHECK(max_item2 > 12);  // 63 draws across 100 items clear 12 w.h.p.

  SUBCASE("config-file problems are usage errors") {
    CHECK(run({"synth", "--config", s("absent.cfg")}) == 1);
    {
      std::ofstream bad(s("bad.cfg"));
      bad << "items 12\n";  // no '='
    }
    CHECK(run({"synth", "--config", s("bad.cfg")}) == 1);
    {
      std::ofstream unknown(s("unknown.cfg"));
      unknown << "items=12\nusers=9\nwibble=3\n";
    }
    CHECK(run({"synth", "--config", s("unknown.cfg")}) == 1);
  }
}
