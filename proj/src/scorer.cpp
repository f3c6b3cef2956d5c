#include "dtr/scorer.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace dtr {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

double prelu(double x, double slope) { return x > 0 ? x : slope * x; }
double prelu_dx(double x, double slope) { return x > 0 ? 1.0 : slope; }
double prelu_dslope(double x) { return x > 0 ? 0.0 : x; }

void track(ForwardStats* stats, double preact) {
  if (stats && std::abs(preact) < stats->min_abs_preact) {
    stats->min_abs_preact = std::abs(preact);
  }
}

}  // namespace

int ScorerConfig::history_len() const {
  return std::accumulate(windows.begin(), windows.end(), 0);
}

void ScorerConfig::validate() const {
  if (num_items < 1) throw std::invalid_argument("scorer needs num_items >= 1");
  if (num_nodes < 1) throw std::invalid_argument("scorer needs num_nodes >= 1");
  if (embed_dim < 1) throw std::invalid_argument("scorer needs embed_dim >= 1");
  if (windows.empty()) throw std::invalid_argument("scorer needs >= 1 window");
  for (int w : windows) {
    if (w < 1) throw std::invalid_argument("window lengths must be >= 1");
  }
  if (kind == ScorerKind::kDin) {
    if (attention_hidden < 1) {
      throw std::invalid_argument("attention hidden size must be >= 1");
    }
    for (int h : mlp_hidden) {
      if (h < 1) throw std::invalid_argument("mlp hidden sizes must be >= 1");
    }
  }
}

ScorerConfig ScorerConfig::din_default(int num_items, int num_nodes) {
  ScorerConfig cfg;
  cfg.kind = ScorerKind::kDin;
  cfg.num_items = num_items;
  cfg.num_nodes = num_nodes;
  return cfg;
}

ScorerConfig ScorerConfig::din_desk(int num_items, int num_nodes) {
  ScorerConfig cfg;
  cfg.kind = ScorerKind::kDin;
  cfg.num_items = num_items;
  cfg.num_nodes = num_nodes;
  cfg.embed_dim = 4;
  cfg.attention_hidden = 4;
  cfg.mlp_hidden = {8, 4};
  cfg.windows = {3, 2, 1};
  return cfg;
}

ScorerConfig ScorerConfig::dot_default(int num_items, int num_nodes,
                                       int embed_dim) {
  ScorerConfig cfg;
  cfg.kind = ScorerKind::kDot;
  cfg.num_items = num_items;
  cfg.num_nodes = num_nodes;
  cfg.embed_dim = embed_dim;
  cfg.attention_hidden = 0;
  cfg.mlp_hidden.clear();
  return cfg;
}

ScorerParams init_params(const ScorerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ScorerParams p;
  const int d = cfg.embed_dim;
  p.item_embeddings.resize(cfg.num_items + 1, d);
  p.node_embeddings.resize(cfg.num_nodes, d);
  if (cfg.kind == ScorerKind::kDin) {
    const int h = cfg.attention_hidden;
    p.attn_w1.resize(h, 3 * d);
    p.attn_w2.resize(1, h);
    p.attn_slopes.resize(1, 2);
    int in = (static_cast<int>(cfg.windows.size()) + 1) * d;
    for (int hidden : cfg.mlp_hidden) {
      p.mlp_w.emplace_back(hidden, in);
      in = hidden;
    }
    p.mlp_w.emplace_back(1, in);
    p.mlp_slopes.resize(1, static_cast<int>(cfg.mlp_hidden.size()));
  } else {
    p.attn_w1.resize(0, 0);
    p.attn_w2.resize(0, 0);
    p.attn_slopes.resize(0, 0);
    p.mlp_slopes.resize(0, 0);
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-0.05, 0.05);
  p.for_each_tensor([&](const std::string&, Mat& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uni(rng);
  });
  if (p.attn_slopes.size() > 0) p.attn_slopes.setConstant(0.25);
  if (p.mlp_slopes.size() > 0) p.mlp_slopes.setConstant(0.25);
  p.item_embeddings.row(0).setZero();
  return p;
}

GradientBundle zeros_like(const ScorerParams& p) {
  GradientBundle g = p;
  g.for_each_tensor([](const std::string&, Mat& m) { m.setZero(); });
  return g;
}

PreferenceScorer::PreferenceScorer(ScorerConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
}

void PreferenceScorer::check_inputs(const ScorerParams& params,
                                    const UserHistory& history,
                                    int node_row) const {
  if (params.item_embeddings.rows() != cfg_.num_items + 1 ||
      params.item_embeddings.cols() != cfg_.embed_dim ||
      params.node_embeddings.rows() != cfg_.num_nodes ||
      params.node_embeddings.cols() != cfg_.embed_dim) {
    throw std::invalid_argument("scorer params do not match the config shape");
  }
  if (static_cast<int>(history.items.size()) != cfg_.history_len()) {
    throw std::invalid_argument(
        "history length " + std::to_string(history.items.size()) +
        " does not match the configured window total " +
        std::to_string(cfg_.history_len()));
  }
  for (int id : history.items) {
    if (id < 0 || id > cfg_.num_items) {
      throw std::out_of_range("history item id " + std::to_string(id) +
                              " outside [0, " + std::to_string(cfg_.num_items) +
                              "]");
    }
  }
  if (node_row < 0 || node_row >= cfg_.num_nodes) {
    throw std::out_of_range("node row " + std::to_string(node_row) +
                            " outside [0, " + std::to_string(cfg_.num_nodes) +
                            ")");
  }
}

std::vector<double> PreferenceScorer::batch_score(
    const ScorerParams& params, const UserHistory& history,
    std::span<const int> node_rows) const {
  std::vector<double> out;
  out.reserve(node_rows.size());
  for (int row : node_rows) out.push_back(score(params, history, row));
  return out;
}

// ---------------------------------------------------------------------------
// DinScorer

namespace {

// Saved intermediates of one attention-MLP forward pass.
struct DinTrace {
  std::vector<int> live;  // history positions with a real item
  Mat a;                  // d x L, item embedding per live position
  Mat x;                  // 3d x L, attention inputs
  Mat u;                  // h x L, first-stage pre-activations
  Mat v;                  // h x L, first-stage activations
  Vec s;                  // L, second-stage pre-activations
  Vec w;                  // L, attention weights
  Vec wn;                 // node embedding
  std::vector<Vec> act;   // act[0] = mlp input, then hidden activations
  std::vector<Vec> pre;   // hidden pre-activations
  double value = 0.0;
};

}  // namespace

DinScorer::DinScorer(ScorerConfig cfg) : PreferenceScorer(std::move(cfg)) {
  if (cfg_.kind != ScorerKind::kDin) {
    throw std::invalid_argument("DinScorer requires a din config");
  }
}

namespace {

DinTrace din_forward(const ScorerConfig& cfg, const ScorerParams& p,
                     const UserHistory& history, int node_row,
                     ForwardStats* stats) {
  const int d = cfg.embed_dim;
  const int windows = static_cast<int>(cfg.windows.size());
  DinTrace t;
  t.wn = p.node_embeddings.row(node_row).transpose();

  for (std::size_t k = 0; k < history.items.size(); ++k) {
    if (history.items[k] != 0) t.live.push_back(static_cast<int>(k));
  }
  const int n_live = static_cast<int>(t.live.size());
  t.a.resize(d, n_live);
  t.x.resize(3 * d, n_live);
  for (int c = 0; c < n_live; ++c) {
    t.a.col(c) = p.item_embeddings.row(history.items[t.live[c]]).transpose();
    t.x.col(c).segment(0, d) = t.a.col(c);
    t.x.col(c).segment(d, d) = t.a.col(c).cwiseProduct(t.wn);
    t.x.col(c).segment(2 * d, d) = t.wn;
  }

  const double slope1 = p.attn_slopes(0, 0);
  const double slope2 = p.attn_slopes(0, 1);
  t.u = p.attn_w1 * t.x;
  t.v = t.u;
  for (Eigen::Index i = 0; i < t.v.size(); ++i) {
    track(stats, t.v.data()[i]);
    t.v.data()[i] = prelu(t.v.data()[i], slope1);
  }
  t.s = (p.attn_w2 * t.v).row(0).transpose();
  t.w.resize(n_live);
  for (int c = 0; c < n_live; ++c) {
    track(stats, t.s[c]);
    t.w[c] = prelu(t.s[c], slope2);
  }

  // Window index of each history position.
  Vec input = Vec::Zero((windows + 1) * d);
  {
    int win = 0, remaining = cfg.windows[0];
    std::vector<int> window_of(history.items.size());
    for (std::size_t k = 0; k < history.items.size(); ++k) {
      window_of[k] = win;
      if (--remaining == 0 && win + 1 < windows) remaining = cfg.windows[++win];
    }
    for (int c = 0; c < n_live; ++c) {
      input.segment(window_of[t.live[c]] * d, d) += t.w[c] * t.a.col(c);
    }
  }
  input.segment(windows * d, d) = t.wn;

  t.act.push_back(std::move(input));
  const int n_hidden = static_cast<int>(cfg.mlp_hidden.size());
  for (int l = 0; l < n_hidden; ++l) {
    Vec pre = p.mlp_w[l] * t.act.back();
    Vec act = pre;
    const double slope = p.mlp_slopes(0, l);
    for (Eigen::Index i = 0; i < act.size(); ++i) {
      track(stats, act[i]);
      act[i] = prelu(act[i], slope);
    }
    t.pre.push_back(std::move(pre));
    t.act.push_back(std::move(act));
  }
  t.value = (p.mlp_w.back() * t.act.back())(0);
  return t;
}

}  // namespace

double DinScorer::score(const ScorerParams& params, const UserHistory& history,
                        int node_row, ForwardStats* stats) const {
  check_inputs(params, history, node_row);
  return din_forward(cfg_, params, history, node_row, stats).value;
}

std::vector<double> DinScorer::attention_weights(const ScorerParams& params,
                                                 const UserHistory& history,
                                                 int node_row) const {
  check_inputs(params, history, node_row);
  const DinTrace t = din_forward(cfg_, params, history, node_row, nullptr);
  std::vector<double> weights(history.items.size(), 0.0);
  for (std::size_t c = 0; c < t.live.size(); ++c) {
    weights[t.live[c]] = t.w[static_cast<int>(c)];
  }
  return weights;
}

void DinScorer::accumulate_grad(const ScorerParams& params,
                                const UserHistory& history, int node_row,
                                double coef, GradientBundle& grads) const {
  check_inputs(params, history, node_row);
  const int d = cfg_.embed_dim;
  const int windows = static_cast<int>(cfg_.windows.size());
  const DinTrace t = din_forward(cfg_, params, history, node_row, nullptr);

  // MLP backward.
  const int n_hidden = static_cast<int>(cfg_.mlp_hidden.size());
  grads.mlp_w.back() += coef * t.act.back().transpose();
  Vec gy = params.mlp_w.back().transpose() * coef;
  for (int l = n_hidden - 1; l >= 0; --l) {
    const double slope = params.mlp_slopes(0, l);
    Vec gpre = gy;
    for (Eigen::Index i = 0; i < gpre.size(); ++i) {
      grads.mlp_slopes(0, l) += gy[i] * prelu_dslope(t.pre[l][i]);
      gpre[i] *= prelu_dx(t.pre[l][i], slope);
    }
    grads.mlp_w[l] += gpre * t.act[l].transpose();
    gy = params.mlp_w[l].transpose() * gpre;
  }

  // gy is now the gradient w.r.t. the MLP input [z_1..z_W, w_n].
  Vec gwn = gy.segment(windows * d, d);

  std::vector<int> window_of(history.items.size());
  {
    int win = 0, remaining = cfg_.windows[0];
    for (std::size_t k = 0; k < history.items.size(); ++k) {
      window_of[k] = win;
      if (--remaining == 0 && win + 1 < windows) {
        remaining = cfg_.windows[++win];
      }
    }
  }

  const double slope1 = params.attn_slopes(0, 0);
  const double slope2 = params.attn_slopes(0, 1);
  for (std::size_t ci = 0; ci < t.live.size(); ++ci) {
    const int c = static_cast<int>(ci);
    const int item = history.items[t.live[ci]];
    const auto gz = gy.segment(window_of[t.live[ci]] * d, d);

    // z_t = sum_k w_k a_k: direct paths into the item embedding and w_k.
    grads.item_embeddings.row(item) += (t.w[c] * gz).transpose();
    const double gw = gz.dot(t.a.col(c));

    // Attention stage 2: w = prelu(s), s = attn_w2 . v.
    grads.attn_slopes(0, 1) += gw * prelu_dslope(t.s[c]);
    const double gs = gw * prelu_dx(t.s[c], slope2);
    grads.attn_w2 += gs * t.v.col(c).transpose();
    Vec gv = params.attn_w2.transpose() * gs;

    // Attention stage 1: v = prelu(u), u = attn_w1 . x.
    Vec gu = gv;
    for (Eigen::Index i = 0; i < gu.size(); ++i) {
      grads.attn_slopes(0, 0) += gv[i] * prelu_dslope(t.u(i, c));
      gu[i] *= prelu_dx(t.u(i, c), slope1);
    }
    grads.attn_w1 += gu * t.x.col(c).transpose();
    Vec gx = params.attn_w1.transpose() * gu;

    // x = [a, a*wn, wn] distributes back to both embeddings.
    grads.item_embeddings.row(item) +=
        (gx.segment(0, d) + gx.segment(d, d).cwiseProduct(t.wn)).transpose();
    gwn += gx.segment(d, d).cwiseProduct(t.a.col(c)) + gx.segment(2 * d, d);
  }
  grads.node_embeddings.row(node_row) += gwn.transpose();
}

// ---------------------------------------------------------------------------
// DotScorer

DotScorer::DotScorer(ScorerConfig cfg) : PreferenceScorer(std::move(cfg)) {
  if (cfg_.kind != ScorerKind::kDot) {
    throw std::invalid_argument("DotScorer requires a dot config");
  }
}

namespace {

// Mean embedding of the non-padding history items; false when empty.
bool history_mean(const ScorerConfig& cfg, const ScorerParams& p,
                  const UserHistory& history, Vec* mean) {
  int count = 0;
  mean->setZero(cfg.embed_dim);
  for (int id : history.items) {
    if (id == 0) continue;
    *mean += p.item_embeddings.row(id).transpose();
    ++count;
  }
  if (count == 0) return false;
  *mean /= static_cast<double>(count);
  return true;
}

}  // namespace

double DotScorer::score(const ScorerParams& params, const UserHistory& history,
                        int node_row, ForwardStats*) const {
  check_inputs(params, history, node_row);
  Vec mean;
  if (!history_mean(cfg_, params, history, &mean)) return 0.0;
  return mean.dot(params.node_embeddings.row(node_row).transpose());
}

std::vector<double> DotScorer::batch_score(const ScorerParams& params,
                                           const UserHistory& history,
                                           std::span<const int> node_rows) const {
  std::vector<double> out(node_rows.size(), 0.0);
  if (node_rows.empty()) return out;
  check_inputs(params, history, node_rows[0]);
  Vec mean;
  if (!history_mean(cfg_, params, history, &mean)) return out;
  for (std::size_t i = 0; i < node_rows.size(); ++i) {
    const int row = node_rows[i];
    if (row < 0 || row >= cfg_.num_nodes) {
      throw std::out_of_range("node row " + std::to_string(row) +
                              " outside [0, " +
                              std::to_string(cfg_.num_nodes) + ")");
    }
    out[i] = mean.dot(params.node_embeddings.row(row).transpose());
  }
  return out;
}

void DotScorer::accumulate_grad(const ScorerParams& params,
                                const UserHistory& history, int node_row,
                                double coef, GradientBundle& grads) const {
  check_inputs(params, history, node_row);
  Vec mean;
  if (!history_mean(cfg_, params, history, &mean)) return;
  int count = 0;
  for (int id : history.items) {
    if (id != 0) ++count;
  }
  grads.node_embeddings.row(node_row) += coef * mean.transpose();
  const Vec per_item =
      (coef / count) * params.node_embeddings.row(node_row).transpose();
  for (int id : history.items) {
    if (id != 0) grads.item_embeddings.row(id) += per_item.transpose();
  }
}

std::unique_ptr<PreferenceScorer> make_scorer(const ScorerConfig& cfg) {
  if (cfg.kind == ScorerKind::kDin) {
    return std::make_unique<DinScorer>(cfg);
  }
  return std::make_unique<DotScorer>(cfg);
}

NodeScoreFn bind_score(const PreferenceScorer& scorer,
                       const ScorerParams& params, const TreeIndex& tree,
                       const UserHistory& history) {
  return [&scorer, &params, &tree, &history](NodeId node) {
    return scorer.score(params, history, tree.flat_index(node));
  };
}

BatchNodeScoreFn bind_batch_score(const PreferenceScorer& scorer,
                                  const ScorerParams& params,
                                  const TreeIndex& tree,
                                  const UserHistory& history) {
  return [&scorer, &params, &tree, &history](std::span<const NodeId> nodes) {
    std::vector<int> rows;
    rows.reserve(nodes.size());
    for (const NodeId& n : nodes) rows.push_back(tree.flat_index(n));
    return scorer.batch_score(params, history, rows);
  };
}

// ---------------------------------------------------------------------------
// Optimizers

namespace {

std::vector<Mat*> tensor_ptrs(ScorerParams& p) {
  std::vector<Mat*> out;
  p.for_each_tensor([&](const std::string&, Mat& m) { out.push_back(&m); });
  return out;
}

std::vector<const Mat*> tensor_ptrs(const ScorerParams& p) {
  std::vector<const Mat*> out;
  p.for_each_tensor(
      [&](const std::string&, const Mat& m) { out.push_back(&m); });
  return out;
}

void check_same_shape(const ScorerParams& a, const ScorerParams& b,
                      const char* what) {
  const auto pa = tensor_ptrs(a);
  const auto pb = tensor_ptrs(b);
  bool ok = pa.size() == pb.size();
  for (std::size_t i = 0; ok && i < pa.size(); ++i) {
    ok = pa[i]->rows() == pb[i]->rows() && pa[i]->cols() == pb[i]->cols();
  }
  if (!ok) {
    throw std::invalid_argument(std::string(what) +
                                ": tensor shapes do not match the parameters");
  }
}

}  // namespace

AdamOptimizer::AdamOptimizer(AdamConfig cfg) : cfg_(cfg) {}

void AdamOptimizer::step(ScorerParams& params, const GradientBundle& grads) {
  check_same_shape(params, grads, "adam step");
  if (!m_) {
    m_ = std::make_unique<ScorerParams>(zeros_like(params));
    v_ = std::make_unique<ScorerParams>(zeros_like(params));
  }
  check_same_shape(params, *m_, "adam state");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

  auto pp = tensor_ptrs(params);
  auto pg = tensor_ptrs(static_cast<const ScorerParams&>(grads));
  auto pm = tensor_ptrs(*m_);
  auto pv = tensor_ptrs(*v_);
  for (std::size_t i = 0; i < pp.size(); ++i) {
    if (pp[i]->size() == 0) continue;
    auto& m = *pm[i];
    auto& v = *pv[i];
    const auto& g = *pg[i];
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = (cfg_.beta2 * v.array() + (1.0 - cfg_.beta2) * g.array().square())
            .matrix();
    pp[i]->array() -=
        cfg_.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
  }
  params.item_embeddings.row(0).setZero();
}

void sgd_step(ScorerParams& params, const GradientBundle& grads, double lr) {
  check_same_shape(params, grads, "sgd step");
  auto pp = tensor_ptrs(params);
  auto pg = tensor_ptrs(static_cast<const ScorerParams&>(grads));
  for (std::size_t i = 0; i < pp.size(); ++i) {
    if (pp[i]->size() == 0) continue;
    *pp[i] -= lr * *pg[i];
  }
  params.item_embeddings.row(0).setZero();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kParamsMagic[] = "DTRPARAMS v1\n";

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_tensor(std::ostream& out, const std::string& name, const Mat& m) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, 2);
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  // Row-major payload so the layout is independent of Eigen's default.
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
}

}  // namespace

void save_params(const std::string& path, const ScorerConfig& cfg,
                 const ScorerParams& params) {
  cfg.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kParamsMagic, sizeof(kParamsMagic) - 1);

  Mat meta(1, 1);
  meta(0, 0) = cfg.kind == ScorerKind::kDin ? 1.0 : 0.0;
  write_tensor(out, "meta/kind", meta);
  Mat windows(1, static_cast<int>(cfg.windows.size()));
  for (std::size_t i = 0; i < cfg.windows.size(); ++i) {
    windows(0, static_cast<int>(i)) = cfg.windows[i];
  }
  write_tensor(out, "meta/windows", windows);

  params.for_each_tensor([&](const std::string& name, const Mat& m) {
    if (m.size() > 0) write_tensor(out, name, m);
  });
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

namespace {

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw std::runtime_error("truncated checkpoint " + path);
  }
  return v;
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw std::runtime_error("truncated checkpoint " + path);
  }
  return v;
}

}  // namespace

std::pair<ScorerConfig, ScorerParams> load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);

  char magic[sizeof(kParamsMagic) - 1];
  if (!in.read(magic, sizeof magic) ||
      std::memcmp(magic, kParamsMagic, sizeof magic) != 0) {
    throw std::runtime_error("not a DTRPARAMS v1 checkpoint: " + path);
  }

  std::map<std::string, Mat> tensors;
  while (true) {
    std::uint32_t name_len = 0;
    if (!in.read(reinterpret_cast<char*>(&name_len), sizeof name_len)) break;
    if (name_len == 0 || name_len > 4096) {
      throw std::runtime_error("corrupt tensor name in checkpoint " + path);
    }
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) {
      throw std::runtime_error("truncated checkpoint " + path);
    }
    const std::uint32_t rank = read_u32(in, path);
    if (rank != 2) {
      throw std::runtime_error("unsupported tensor rank in checkpoint " + path);
    }
    const std::uint64_t rows = read_u64(in, path);
    const std::uint64_t cols = read_u64(in, path);
    if (rows > (1u << 30) || cols > (1u << 30) ||
        rows * cols > (1ull << 32)) {
      throw std::runtime_error("implausible tensor shape in checkpoint " +
                               path);
    }
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        double v = 0;
        if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
          throw std::runtime_error("truncated checkpoint " + path);
        }
        m(r, c) = v;
      }
    }
    if (!tensors.emplace(std::move(name), std::move(m)).second) {
      throw std::runtime_error("duplicate tensor in checkpoint " + path);
    }
  }

  auto take = [&](const std::string& name) -> Mat {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw std::runtime_error("checkpoint " + path + " is missing tensor '" +
                               name + "'");
    }
    Mat m = std::move(it->second);
    tensors.erase(it);
    return m;
  };

  const Mat kind = take("meta/kind");
  const Mat windows = take("meta/windows");

  ScorerConfig cfg;
  cfg.kind = kind(0, 0) == 1.0 ? ScorerKind::kDin : ScorerKind::kDot;
  cfg.windows.clear();
  for (Eigen::Index i = 0; i < windows.cols(); ++i) {
    cfg.windows.push_back(static_cast<int>(windows(0, i)));
  }

  ScorerParams p;
  p.item_embeddings = take("item_embeddings");
  p.node_embeddings = take("node_embeddings");
  cfg.num_items = static_cast<int>(p.item_embeddings.rows()) - 1;
  cfg.num_nodes = static_cast<int>(p.node_embeddings.rows());
  cfg.embed_dim = static_cast<int>(p.item_embeddings.cols());

  if (cfg.kind == ScorerKind::kDin) {
    p.attn_w1 = take("attn_w1");
    p.attn_w2 = take("attn_w2");
    p.attn_slopes = take("attn_slopes");
    cfg.attention_hidden = static_cast<int>(p.attn_w1.rows());
    while (tensors.count("mlp_w" + std::to_string(p.mlp_w.size()))) {
      p.mlp_w.push_back(take("mlp_w" + std::to_string(p.mlp_w.size())));
    }
    if (p.mlp_w.empty()) {
      throw std::runtime_error("checkpoint " + path +
                               " is missing the mlp tensors");
    }
    cfg.mlp_hidden.clear();
    for (std::size_t i = 0; i + 1 < p.mlp_w.size(); ++i) {
      cfg.mlp_hidden.push_back(static_cast<int>(p.mlp_w[i].rows()));
    }
    if (cfg.mlp_hidden.empty()) {
      p.mlp_slopes.resize(1, 0);
      tensors.erase("mlp_slopes");
    } else {
      p.mlp_slopes = take("mlp_slopes");
    }
  } else {
    cfg.attention_hidden = 0;
    cfg.mlp_hidden.clear();
    p.attn_w1.resize(0, 0);
    p.attn_w2.resize(0, 0);
    p.attn_slopes.resize(0, 0);
    p.mlp_slopes.resize(0, 0);
  }

  if (!tensors.empty()) {
    throw std::runtime_error("checkpoint " + path +
                             " holds an unexpected tensor '" +
                             tensors.begin()->first + "'");
  }
  cfg.validate();
  return {std::move(cfg), std::move(p)};
}

}  // namespace dtr
