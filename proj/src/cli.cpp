#include "dtr/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "dtr/dataset.hpp"
#include "dtr/eta_estimator.hpp"
#include "dtr/eval.hpp"
#include "dtr/losses.hpp"
#include "dtr/samplers.hpp"
#include "dtr/scorer.hpp"
#include "dtr/trainer.hpp"
#include "dtr/tree_index.hpp"
#include "dtr/tree_update.hpp"

namespace dtr {
namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Expands `--config FILE` into `--key=value` tokens for every line of FILE
// whose flag is absent from the command line, so explicit flags always win.
// Throws CLI::FileError / CLI::ConfigError for bad files (usage errors).
std::vector<std::string> expand_config_args(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
  }
  if (path.empty()) return args;

  std::ifstream in(path);
  if (!in) throw CLI::FileError("cannot read config file " + path);
  const auto given = [&](const std::string& flag) {
    return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
  };
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string entry = trim(line);
    if (entry.empty() || entry[0] == '#') continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw CLI::ConfigError(path + " line " + std::to_string(line_no) +
                             ": expected key=value");
    }
    const std::string key = trim(entry.substr(0, eq));
    std::string value = trim(entry.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (!given("--" + key)) args.push_back("--" + key + "=" + value);
  }
  return args;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> values;
  std::stringstream ss(csv);
  std::string field;
  while (std::getline(ss, field, ',')) {
    if (field.empty()) continue;
    values.push_back(std::stoi(field));
  }
  return values;
}

void write_text(const std::string& out_path, const std::string& body) {
  if (out_path.empty()) {
    std::cout << body;
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << body;
}

void log_resolved_config(const CLI::App& sub) {
  std::cerr << "resolved configuration [" << sub.get_name() << "]\n";
  std::cerr << sub.config_to_str(true, false);
}

int max_item_id(const InteractionLog& log) {
  int max_item = 0;
  for (const Interaction& row : log.rows) {
    max_item = std::max(max_item, row.item);
  }
  return max_item;
}

int resolve_vocabulary(const InteractionLog& log, int requested) {
  const int seen = max_item_id(log);
  if (seen == 0) throw std::runtime_error("the interaction log is empty");
  if (requested == 0) return seen;
  if (requested < seen) {
    throw std::runtime_error(
        "--items " + std::to_string(requested) +
        " is smaller than the largest item id in the data (" +
        std::to_string(seen) + ")");
  }
  return requested;
}

std::vector<int> iota_items(int n) {
  std::vector<int> items(n);
  std::iota(items.begin(), items.end(), 1);
  return items;
}

EtaKeyMode parse_key_mode(const std::string& name) {
  if (name == "user") return EtaKeyMode::kUserId;
  if (name == "mod") return EtaKeyMode::kUserMod;
  if (name == "last") return EtaKeyMode::kLastItem;
  throw std::runtime_error("unknown eta key mode " + name);
}

// Estimate keyed by the most recent history item when no table is given.
EtaSource resolve_eta(const std::string& eta_path,
                      const std::string& mode_name, std::int64_t modulus,
                      double smoothing, int num_items,
                      std::span<const TrainInstance> train) {
  if (!eta_path.empty()) {
    return EtaSource::from_file(eta_path, num_items, parse_key_mode(mode_name),
                                modulus);
  }
  std::vector<std::pair<std::int64_t, int>> pairs;
  pairs.reserve(train.size());
  for (const TrainInstance& inst : train) {
    std::int64_t key = 0;
    for (auto it = inst.history.items.rbegin();
         it != inst.history.items.rend(); ++it) {
      if (*it != 0) {
        key = *it;
        break;
      }
    }
    pairs.push_back({key, inst.target});
  }
  return EtaSource::empirical(pairs, num_items, smoothing);
}

std::string metric_tsv_header() {
  return "k\tprecision\trecall\tf_measure\tn_users\n";
}

void append_metric_rows(std::string& body, const MetricReport& report,
                        const std::string& row_prefix) {
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    body += row_prefix + std::to_string(report.ks[i]) + "\t" +
            fmt(report.precision[i]) + "\t" + fmt(report.recall[i]) + "\t" +
            fmt(report.f_measure[i]) + "\t" +
            std::to_string(report.users_evaluated) + "\n";
  }
}

// Runs the beam retrievals in `threads` chunks; metric reduction stays in
// user order, so the report is independent of the thread count.
MetricReport threaded_evaluation(std::span<const EvalInstance> users,
                                 const TreeIndex& tree,
                                 const PreferenceScorer& scorer,
                                 const ScorerParams& params,
                                 std::span<const int> ks, int beam,
                                 int threads) {
  const int max_k = *std::max_element(ks.begin(), ks.end());
  std::vector<std::vector<int>> retrieved(users.size());
  const auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      if (users[i].labels.empty()) continue;
      retrieved[i] = beam_retrieve(tree, scorer, params, users[i], max_k,
                                   beam);
    }
  };
  if (threads <= 1 || users.size() < 2) {
    worker(0, users.size());
  } else {
    const std::size_t n_threads =
        std::min<std::size_t>(threads, users.size());
    std::vector<std::thread> pool;
    const std::size_t chunk = (users.size() + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(users.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(worker, begin, end);
    }
    for (std::thread& th : pool) th.join();
  }
  const RetrieveFn lookup = [&](const EvalInstance& user, int k) {
    std::vector<int> items = retrieved[&user - users.data()];
    if (static_cast<int>(items.size()) > k) items.resize(k);
    return items;
  };
  return evaluate_users(users, lookup, ks);
}

struct SynthArgs {
  int items = 0;
  int users = 0;
  double concentration = 1.0;
  int clusters = 8;
  int per_user = 30;
  unsigned seed = 1;
  std::string log_path = "synth_log.tsv";
  std::string eta_path = "synth_eta.tsv";
};

void run_synth(const SynthArgs& a) {
  const SynthData data = synth_generate(a.users, a.items, a.concentration,
                                        a.seed, a.clusters, a.per_user);
  std::string body;
  body.reserve(data.log.rows.size() * 12);
  for (const Interaction& row : data.log.rows) {
    body += std::to_string(row.user) + "\t" + std::to_string(row.item) +
            "\t" + std::to_string(row.timestamp) + "\n";
  }
  write_text(a.log_path, body);
  const EtaSource eta = EtaSource::oracle(data.eta, a.items,
                                          EtaKeyMode::kUserMod, a.clusters);
  eta.save(a.eta_path);
}

struct TrainArgs {
  std::string data_path;
  std::string tree_path;
  std::string out_dir = ".";
  std::string scorer_kind = "din";
  std::string sampler = "tree";
  std::string rectify = "on";
  std::string eta_path;
  std::string eta_mode = "user";
  std::int64_t eta_modulus = 0;
  double eta_smoothing = 1.0;
  std::string windows;
  int embed_dim = 0;
  int branch = 2;
  int items = 0;
  int negatives = 10;
  int batch_size = 32;
  double lr = 1e-3;
  int epochs = 1;
  int alternations = 12;
  int stride = 7;
  int beam = 50;
  std::string ks = "20";
  int min_interactions = 15;
  unsigned seed = 1;
};

ScorerConfig scorer_config_for(const std::string& kind, int items, int nodes,
                               const std::string& windows_csv,
                               int embed_dim) {
  ScorerConfig cfg = kind == "dot"
                         ? ScorerConfig::dot_default(items, nodes)
                         : ScorerConfig::din_default(items, nodes);
  if (!windows_csv.empty()) cfg.windows = parse_int_list(windows_csv);
  if (embed_dim > 0) {
    cfg.embed_dim = embed_dim;
    if (cfg.kind == ScorerKind::kDin) cfg.attention_hidden = embed_dim;
  }
  cfg.validate();
  return cfg;
}

void run_train(const TrainArgs& a) {
  const InteractionLog log = ingest(a.data_path, a.min_interactions);
  const int items = resolve_vocabulary(log, a.items);

  const TreeIndex tree =
      a.tree_path.empty()
          ? TreeIndex::build_random(a.branch, iota_items(items), a.seed)
          : TreeIndex::load(a.tree_path);
  if (tree.num_items() != items) {
    throw std::runtime_error("the tree holds " +
                             std::to_string(tree.num_items()) +
                             " items but the data needs " +
                             std::to_string(items));
  }

  const ScorerConfig cfg_s = scorer_config_for(
      a.scorer_kind, items, tree.total_nodes(), a.windows, a.embed_dim);
  const auto scorer = make_scorer(cfg_s);
  const DataSplit data = split_users(log, a.seed, cfg_s.history_len());

  TrainConfig cfg;
  cfg.sampler = a.sampler == "uniform" ? SamplerKind::kUniform
                : a.sampler == "full"  ? SamplerKind::kFull
                                       : SamplerKind::kTree;
  cfg.rectify =
      a.rectify == "on" ? RectifyKind::kRectified : RectifyKind::kNone;
  cfg.negatives = a.negatives;
  cfg.batch_size = a.batch_size;
  cfg.epochs = a.epochs;
  cfg.alternations = a.alternations;
  cfg.tree_stride = a.stride;
  cfg.beam_size = a.beam;
  cfg.eval_ks = parse_int_list(a.ks);
  cfg.adam.lr = a.lr;
  cfg.seed = a.seed;
  cfg.validate();

  std::unique_ptr<EtaSource> eta;
  if (cfg.rectify == RectifyKind::kRectified) {
    eta = std::make_unique<EtaSource>(
        resolve_eta(a.eta_path, a.eta_mode, a.eta_modulus, a.eta_smoothing,
                    items, data.train));
  }

  const ScorerParams params = init_params(cfg_s, a.seed);
  const AlternationResult result =
      alternate(cfg, tree, *scorer, params, data, eta.get());

  std::filesystem::create_directories(a.out_dir);
  const std::filesystem::path out(a.out_dir);
  result.tree.save((out / "tree.txt").string());
  save_params((out / "params.bin").string(), cfg_s, result.params);

  std::string metrics = "alternation\t" + metric_tsv_header();
  for (std::size_t alt = 0; alt < result.history.size(); ++alt) {
    append_metric_rows(metrics, result.history[alt],
                       std::to_string(alt) + "\t");
  }
  write_text((out / "metrics.tsv").string(), metrics);

  std::string losses =
      "alternation\tepoch\tmean_loss\tinstances\tlayer_terms\tbatches\n";
  for (std::size_t i = 0; i < result.epochs.size(); ++i) {
    const EpochStats& s = result.epochs[i];
    losses += std::to_string(i / cfg.epochs) + "\t" +
              std::to_string(i % cfg.epochs) + "\t" + fmt(s.mean_loss) +
              "\t" + std::to_string(s.instances) + "\t" +
              std::to_string(s.layer_terms) + "\t" +
              std::to_string(s.batches) + "\n";
  }
  write_text((out / "losses.tsv").string(), losses);
}

struct EvalArgs {
  std::string data_path;
  std::string tree_path;
  std::string params_path;
  std::string split = "test";
  std::string ks = "20";
  std::string out_path;
  int beam = 50;
  int min_interactions = 15;
  int threads = 1;
  unsigned seed = 1;
};

void run_eval(const EvalArgs& a) {
  const InteractionLog log = ingest(a.data_path, a.min_interactions);
  const TreeIndex tree = TreeIndex::load(a.tree_path);
  const auto [cfg_s, params] = load_params(a.params_path);
  const auto scorer = make_scorer(cfg_s);
  const DataSplit data = split_users(log, a.seed, cfg_s.history_len());
  const std::vector<EvalInstance>& users =
      a.split == "validation" ? data.validation : data.test;

  const std::vector<int> ks = parse_int_list(a.ks);
  const MetricReport report = threaded_evaluation(
      users, tree, *scorer, params, ks, a.beam, a.threads);

  std::string body = metric_tsv_header();
  append_metric_rows(body, report, "");
  write_text(a.out_path, body);
}

struct UpdateTreeArgs {
  std::string data_path;
  std::string tree_path;
  std::string params_path;
  std::string out_path;
  int stride = 7;
  int min_interactions = 15;
  unsigned seed = 1;
};

void run_update_tree(const UpdateTreeArgs& a) {
  const InteractionLog log = ingest(a.data_path, a.min_interactions);
  const TreeIndex tree = TreeIndex::load(a.tree_path);
  const auto [cfg_s, params] = load_params(a.params_path);
  const auto scorer = make_scorer(cfg_s);
  const DataSplit data = split_users(log, a.seed, cfg_s.history_len());
  const TreeIndex updated =
      update_tree(tree, data.train, *scorer, params, a.stride);
  updated.save(a.out_path);
}

struct DiagnoseArgs {
  std::string tree_path;
  std::string params_path;
  std::string check = "all";
  std::string history;
  std::string out_path;
};

void run_diagnose(const DiagnoseArgs& a) {
  const TreeIndex tree = TreeIndex::load(a.tree_path);
  const auto [cfg_s, params] = load_params(a.params_path);
  const auto scorer = make_scorer(cfg_s);
  const UserHistory history =
      make_window(parse_int_list(a.history), cfg_s.history_len());
  const BatchNodeScoreFn score =
      bind_batch_score(*scorer, params, tree, history);

  const bool want_sum = a.check == "all" || a.check == "sum";
  const bool want_gap = a.check == "all" || a.check == "gap";
  const bool want_kl = a.check == "all" || a.check == "kl";

  std::string body = "layer\tnodes";
  if (want_sum) body += "\tsum_q";
  if (want_gap) body += "\tmax_gap";
  if (want_kl) body += "\tkl";
  body += "\n";

  std::vector<NodeId> nodes;
  for (int layer = 1; layer <= tree.height(); ++layer) {
    const int width = tree.level_size(layer);
    const std::vector<double> q =
        layer_probability_vector(tree, score, layer);
    nodes.clear();
    for (int i = 1; i <= width; ++i) nodes.push_back({layer, i});
    const std::vector<double> p = layer_softmax(score(nodes));

    body += std::to_string(layer) + "\t" + std::to_string(width);
    if (want_sum) {
      body += "\t" + fmt(std::accumulate(q.begin(), q.end(), 0.0));
    }
    if (want_gap) {
      double gap = 0.0;
      for (int i = 0; i < width; ++i) {
        gap = std::max(gap, std::abs(q[i] - p[i]));
      }
      body += "\t" + fmt(gap);
    }
    if (want_kl) body += "\t" + fmt(kl_divergence(q, p));
    body += "\n";
  }
  write_text(a.out_path, body);
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{
      "Tree-based retriever: layer-wise softmax training, beam retrieval, "
      "and alternating tree updates"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::string config_file;
  const auto add_config = [&config_file](CLI::App* sub) {
    sub->add_option("--config", config_file,
                    "key=value defaults, one per line; explicit flags win");
  };

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand(
      "synth", "Generate a synthetic interaction log with a known "
               "per-cluster item distribution");
  synth->add_option("--items", synth_args.items, "vocabulary size")
      ->required()
      ->check(CLI::PositiveNumber);
  synth->add_option("--users", synth_args.users, "number of users")
      ->required()
      ->check(CLI::PositiveNumber);
  synth->add_option("--concentration", synth_args.concentration,
                    "Dirichlet concentration (large = near uniform)")
      ->check(CLI::PositiveNumber);
  synth->add_option("--clusters", synth_args.clusters,
                    "distinct user clusters")
      ->check(CLI::PositiveNumber);
  synth->add_option("--per-user", synth_args.per_user,
                    "interactions per user")
      ->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_args.seed, "random seed");
  synth->add_option("--log", synth_args.log_path, "output interaction TSV");
  synth->add_option("--eta", synth_args.eta_path,
                    "output item-probability TSV");
  add_config(synth);
  synth->callback([&] {
    log_resolved_config(*synth);
    run_synth(synth_args);
  });

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand(
      "train", "Alternate scorer training and tree updates on a TSV log");
  train->add_option("--data", train_args.data_path,
                    "interaction TSV (user, item, timestamp)")
      ->required();
  train->add_option("--tree", train_args.tree_path,
                    "initial tree file (omit to build a seeded random tree)");
  train->add_option("--out", train_args.out_dir,
                    "output directory for tree.txt, params.bin, "
                    "metrics.tsv, losses.tsv");
  train->add_option("--scorer", train_args.scorer_kind,
                    "preference model")
      ->check(CLI::IsMember({"din", "dot"}));
  train->add_option("--sampler", train_args.sampler, "negative sampler")
      ->check(CLI::IsMember({"uniform", "tree", "full"}));
  train->add_option("--rectify", train_args.rectify,
                    "subtree-max label rectification")
      ->check(CLI::IsMember({"on", "off"}));
  train->add_option("--eta", train_args.eta_path,
                    "item-probability TSV for rectification (omit to "
                    "estimate from the training split)");
  train->add_option("--eta-mode", train_args.eta_mode,
                    "how eta keys map to users")
      ->check(CLI::IsMember({"user", "mod", "last"}));
  train->add_option("--eta-modulus", train_args.eta_modulus,
                    "modulus for --eta-mode mod");
  train->add_option("--eta-smoothing", train_args.eta_smoothing,
                    "additive smoothing for the estimated eta")
      ->check(CLI::PositiveNumber);
  train->add_option("--windows", train_args.windows,
                    "history window sizes, e.g. 2,2,1");
  train->add_option("--embed-dim", train_args.embed_dim,
                    "embedding width (0 = scorer default)")
      ->check(CLI::NonNegativeNumber);
  train->add_option("--branch", train_args.branch, "tree arity")
      ->check(CLI::Range(2, 64));
  train->add_option("--items", train_args.items,
                    "vocabulary size (0 = largest item id in the data)")
      ->check(CLI::NonNegativeNumber);
  train->add_option("--negatives", train_args.negatives,
                    "negatives per layer")
      ->check(CLI::PositiveNumber);
  train->add_option("--batch-size", train_args.batch_size, "batch size")
      ->check(CLI::PositiveNumber);
  train->add_option("--lr", train_args.lr, "learning rate")
      ->check(CLI::PositiveNumber);
  train->add_option("--epochs", train_args.epochs,
                    "epochs per alternation")
      ->check(CLI::PositiveNumber);
  train->add_option("--alternations", train_args.alternations,
                    "train/update rounds")
      ->check(CLI::PositiveNumber);
  train->add_option("--stride", train_args.stride,
                    "levels per tree-update hop")
      ->check(CLI::PositiveNumber);
  train->add_option("--beam", train_args.beam, "beam width for evaluation")
      ->check(CLI::PositiveNumber);
  train->add_option("--ks", train_args.ks, "evaluation cutoffs, e.g. 10,20");
  train->add_option("--min-interactions", train_args.min_interactions,
                    "drop users with fewer interactions")
      ->check(CLI::PositiveNumber);
  train->add_option("--seed", train_args.seed, "random seed");
  add_config(train);
  train->callback([&] {
    log_resolved_config(*train);
    run_train(train_args);
  });

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand(
      "eval", "Beam-retrieval metrics of a trained scorer on held-out users");
  eval->add_option("--data", eval_args.data_path, "interaction TSV")
      ->required();
  eval->add_option("--tree", eval_args.tree_path, "tree file")->required();
  eval->add_option("--params", eval_args.params_path, "scorer checkpoint")
      ->required();
  eval->add_option("--split", eval_args.split, "user split to score")
      ->check(CLI::IsMember({"test", "validation"}));
  eval->add_option("--ks", eval_args.ks, "cutoffs, e.g. 1,10,20");
  eval->add_option("--beam", eval_args.beam, "beam width")
      ->check(CLI::PositiveNumber);
  eval->add_option("--min-interactions", eval_args.min_interactions,
                   "drop users with fewer interactions")
      ->check(CLI::PositiveNumber);
  eval->add_option("--threads", eval_args.threads,
                   "worker threads across users")
      ->check(CLI::PositiveNumber);
  eval->add_option("--seed", eval_args.seed,
                   "split seed (must match training)");
  eval->add_option("--out", eval_args.out_path,
                   "metrics TSV (default standard output)");
  add_config(eval);
  eval->callback([&] {
    log_resolved_config(*eval);
    run_eval(eval_args);
  });

  UpdateTreeArgs update_args;
  CLI::App* update = app.add_subcommand(
      "update-tree", "Re-learn the leaf-item mapping with a frozen scorer");
  update->add_option("--data", update_args.data_path, "interaction TSV")
      ->required();
  update->add_option("--tree", update_args.tree_path, "input tree file")
      ->required();
  update->add_option("--params", update_args.params_path,
                     "scorer checkpoint")
      ->required();
  update->add_option("--out", update_args.out_path, "output tree file")
      ->required();
  update->add_option("--stride", update_args.stride,
                     "levels per assignment hop")
      ->check(CLI::PositiveNumber);
  update->add_option("--min-interactions", update_args.min_interactions,
                     "drop users with fewer interactions")
      ->check(CLI::PositiveNumber);
  update->add_option("--seed", update_args.seed,
                     "split seed (must match training)");
  add_config(update);
  update->callback([&] {
    log_resolved_config(*update);
    run_update_tree(update_args);
  });

  DiagnoseArgs diag_args;
  CLI::App* diagnose = app.add_subcommand(
      "diagnose", "Per-layer sampling-distribution diagnostics: mass "
                  "totals, softmax gaps, and KL divergence");
  diagnose->add_option("--tree", diag_args.tree_path, "tree file")
      ->required();
  diagnose->add_option("--params", diag_args.params_path,
                       "scorer checkpoint")
      ->required();
  diagnose->add_option("--check", diag_args.check, "which columns to emit")
      ->check(CLI::IsMember({"all", "sum", "gap", "kl"}));
  diagnose->add_option("--history", diag_args.history,
                       "user history items, e.g. 3,5,7 (default empty)");
  diagnose->add_option("--out", diag_args.out_path,
                       "report TSV (default standard output)");
  add_config(diagnose);
  diagnose->callback([&] {
    log_resolved_config(*diagnose);
    run_diagnose(diag_args);
  });

  try {
    std::vector<std::string> args =
        expand_config_args({argv + 1, argv + argc});
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace dtr
