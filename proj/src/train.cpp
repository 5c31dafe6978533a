#include "tslc/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "tslc/ops.hpp"
#include "tslc/registry.hpp"

namespace tslc::train {

using model::GraphSpec;
using model::SliceAdapter;

namespace {

Tensor batch_features(const data::Dataset& ds, const std::vector<std::size_t>& order,
                      std::size_t from, std::size_t to) {
  const std::size_t fd = static_cast<std::size_t>(ds.feature_dim);
  std::vector<float> buf;
  buf.reserve((to - from) * fd);
  for (std::size_t i = from; i < to; ++i) {
    const float* row = ds.features.data() + order[i] * fd;
    buf.insert(buf.end(), row, row + fd);
  }
  return Tensor::from_data({static_cast<std::int64_t>(to - from), ds.feature_dim},
                           std::move(buf));
}

Tensor batch_labels(const data::Dataset& ds, const std::vector<std::size_t>& order,
                    std::size_t from, std::size_t to) {
  std::vector<std::int64_t> buf;
  buf.reserve(to - from);
  for (std::size_t i = from; i < to; ++i) buf.push_back(ds.labels[order[i]]);
  return Tensor::from_labels({static_cast<std::int64_t>(to - from)}, std::move(buf));
}

// One pass over the data; returns the mean training loss (CE + penalties).
double run_epoch(GraphSpec& g, const data::Dataset& ds, std::vector<Tensor>& params,
                 int batch_size, float lr, float weight_decay, float lambda_alpha, Rng& rng) {
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);

  Tape tape;
  double loss_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t at = 0; at < ds.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t to = std::min(ds.size(), at + static_cast<std::size_t>(batch_size));
    tape.reset();
    Tensor x = batch_features(ds, order, at, to);
    Tensor y = batch_labels(ds, order, at, to);
    Tensor loss = ops::softmax_cross_entropy(tape, model::forward_with_taps(tape, g, x), y);
    backward(tape, loss);

    double penalty = 0.0;
    for (const auto& s : g.slices)
      if (s.alpha.requires_grad())
        penalty += lambda_alpha * std::abs(s.alpha.f32()[0]);
    ops::sgd_step(params, lr, weight_decay);
    if (lambda_alpha != 0.0f) {
      // Proximal step for the L1 gate penalty: shrink toward zero and stop
      // there, so even extreme lambdas pin gates at exactly 0.
      const float shrink = lr * lambda_alpha;
      for (auto& s : g.slices) {
        if (!s.alpha.requires_grad()) continue;
        float& a = s.alpha.f32()[0];
        a = a > 0.0f ? std::max(0.0f, a - shrink) : std::min(0.0f, a + shrink);
      }
    }
    ops::zero_grads(params);
    loss_sum += loss.item() + penalty;
    ++batches;
  }
  return batches == 0 ? 0.0 : loss_sum / static_cast<double>(batches);
}

double gate_sum(const GraphSpec& g) {
  double s = 0.0;
  for (const auto& a : g.slices) s += std::abs(static_cast<double>(a.alpha.f32()[0]));
  return s;
}

double magnitude_sum(const GraphSpec& g) {
  double s = 0.0;
  for (const auto& a : g.slices) s += a.weight_magnitude();
  return s;
}

// Removes the n lowest-ranked slices; ties break by ascending (source,
// target, tap) so identical seeds prune identical sets.
void prune_lowest(GraphSpec& g, int n, bool by_magnitude) {
  struct Ranked {
    double score;
    int source, target;
    std::string tap;
    std::size_t index;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(g.slices.size());
  for (std::size_t i = 0; i < g.slices.size(); ++i) {
    const auto& s = g.slices[i];
    const double score = by_magnitude ? s.weight_magnitude()
                                      : std::abs(static_cast<double>(s.alpha.f32()[0]));
    ranked.push_back({score, s.source, s.target, s.tap, i});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.source != b.source) return a.source < b.source;
    if (a.target != b.target) return a.target < b.target;
    return a.tap < b.tap;
  });
  std::vector<bool> drop(g.slices.size(), false);
  for (int i = 0; i < n && i < static_cast<int>(ranked.size()); ++i)
    drop[ranked[static_cast<std::size_t>(i)].index] = true;
  std::vector<SliceAdapter> kept;
  for (std::size_t i = 0; i < g.slices.size(); ++i)
    if (!drop[i]) kept.push_back(g.slices[i]);
  g.slices = std::move(kept);
}

PruneResult prune_loop(const GraphSpec& m_dense, const data::Dataset& train_ds,
                       const data::Dataset& eval_ds, double acc_vic, const PruneConfig& cfg,
                       bool by_magnitude) {
  cfg.validate();
  if (train_ds.size() == 0 || eval_ds.size() == 0) throw InputError("empty dataset");
  const auto budget = AccuracyBudget::from(acc_vic, cfg.delta);

  GraphSpec g = m_dense.deep_clone();
  g.role = model::Role::SPARSE;
  for (auto t : g.slice_trainables()) t.set_requires_grad(true);

  if (!by_magnitude) {
    // Setup phase: gates that never learned to matter go first.
    std::vector<SliceAdapter> kept;
    for (auto& s : g.slices)
      if (std::abs(s.alpha.f32()[0]) >= cfg.alpha_setup) kept.push_back(s);
    g.slices = std::move(kept);
  }

  Rng rng = Rng(cfg.seed).split(0xA1);
  auto params = g.slice_trainables();

  PruneResult res;
  res.acc_tol = budget.acc_tol;
  std::optional<GraphSpec> stored;
  double last_loss = 0.0;

  for (int r = 1; r <= cfg.rounds; ++r) {
    const double acc_r = model::accuracy(g, eval_ds.features_tensor(), eval_ds.labels_tensor());
    res.log.push_back({r, static_cast<int>(g.slices.size()), acc_r, last_loss,
                       by_magnitude ? magnitude_sum(g) : gate_sum(g)});
    if (acc_r > budget.acc_tol) {
      stored = g.deep_clone();
      prune_lowest(g, cfg.n, by_magnitude);
      params = g.slice_trainables();
    }
    for (int e = 0; e < cfg.epochs_per_round; ++e)
      last_loss = run_epoch(g, train_ds, params, cfg.batch_size, cfg.lr, 0.0f,
                            by_magnitude ? 0.0f : cfg.lambda_complexity, rng);
  }

  if (stored) {
    res.model = std::move(*stored);
  } else {
    res.model = std::move(g);  // post-setup model; caller sees the warning flag
    res.warned_below_tol = true;
  }
  res.model.role = model::Role::SPARSE;
  res.acc_final =
      model::accuracy(res.model, eval_ds.features_tensor(), eval_ds.labels_tensor());
  return res;
}

}  // namespace

void PruneConfig::validate() const {
  if (delta < 0.0 || delta >= 1.0) throw ConfigError("delta must be in [0, 1)");
  if (n < 1) throw ConfigError("n must be >= 1");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
}

GraphSpec train_dense(const GraphSpec& g, const data::Dataset& train_ds,
                      const TrainConfig& cfg) {
  if (train_ds.size() == 0) throw InputError("empty training dataset");
  for (const auto& l : g.layers)
    if (l.kind != model::LayerKind::Classifier)
      for (const auto& [_, t] : l.params)
        if (t.requires_grad()) throw ContractError("train_dense expects a frozen backbone");

  GraphSpec out = g.deep_clone();
  out.role = model::Role::DENSE;
  auto params = out.slice_trainables();
  for (auto t : params) t.set_requires_grad(true);
  Rng rng = Rng(cfg.seed).split(0xD5);
  for (int e = 0; e < cfg.epochs; ++e)
    run_epoch(out, train_ds, params, cfg.batch_size, cfg.lr, cfg.weight_decay,
              cfg.lambda_complexity, rng);
  return out;
}

GraphSpec train_full(const GraphSpec& g, const data::Dataset& train_ds,
                     const TrainConfig& cfg) {
  if (train_ds.size() == 0) throw InputError("empty training dataset");
  GraphSpec out = g.deep_clone();
  auto params = out.full_trainables();
  for (auto t : params) t.set_requires_grad(true);
  Rng rng = Rng(cfg.seed).split(0xF1);
  for (int e = 0; e < cfg.epochs; ++e)
    run_epoch(out, train_ds, params, cfg.batch_size, cfg.lr, cfg.weight_decay, 0.0f, rng);
  for (auto t : params) t.set_requires_grad(false);
  return out;
}

PruneResult iterative_prune(const GraphSpec& m_dense, const data::Dataset& train_ds,
                            const data::Dataset& eval_ds, double acc_vic,
                            const PruneConfig& cfg) {
  return prune_loop(m_dense, train_ds, eval_ds, acc_vic, cfg, false);
}

double lora_magnitude(const SliceAdapter& s) {
  if (s.kind != model::SliceKind::LowRankPair)
    throw ContractError("lora_magnitude expects a LowRankPair adapter");
  return s.weight_magnitude();
}

PruneResult magnitude_prune_lora(const GraphSpec& m_dense, const data::Dataset& train_ds,
                                 const data::Dataset& eval_ds, double acc_vic,
                                 const PruneConfig& cfg) {
  for (const auto& s : m_dense.slices)
    if (s.kind != model::SliceKind::LowRankPair)
      throw ContractError("magnitude pruning expects LoRA adapters");
  return prune_loop(m_dense, train_ds, eval_ds, acc_vic, cfg, true);
}

std::pair<GraphSpec, DynAttnReport> train_dynamic_attention(const GraphSpec& g_vit,
                                                            const data::Dataset& train_ds,
                                                            const data::Dataset& eval_ds,
                                                            const DynAttnConfig& cfg) {
  GraphSpec g = g_vit.deep_clone();
  Rng init_rng = Rng(cfg.seed).split(0xBE);
  int n_blocks = 0;
  for (auto& l : g.layers) {
    if (l.kind != model::LayerKind::AttentionBlock) continue;
    ++n_blocks;
    l.attn_mode = model::AttnMode::Dynamic;
    const int d = l.d_model;
    if (!l.has_param("lin_w1")) {
      const float bound = 1.0f / std::sqrt(static_cast<float>(2 * d));
      l.params["lin_w1"] = Tensor::uniform({2 * d, d}, bound, init_rng);
      l.params["lin_w2"] = Tensor::uniform({2 * d, d}, bound, init_rng);
    }
    l.params["beta"] = Tensor::scalar(cfg.beta_init);
    l.param("beta").set_requires_grad(cfg.train_beta);
    l.param("lin_w1").set_requires_grad(true);
    l.param("lin_w2").set_requires_grad(true);
  }
  if (n_blocks == 0) throw ContractError("graph has no attention blocks");

  DynAttnReport report;
  report.sum_beta_init = static_cast<double>(n_blocks) * cfg.beta_init;

  std::vector<Tensor> params = g.slice_trainables();
  for (auto t : params) t.set_requires_grad(true);
  std::vector<Tensor> betas;
  for (auto& l : g.layers)
    if (l.kind == model::LayerKind::AttentionBlock) {
      params.push_back(l.param("beta"));
      params.push_back(l.param("lin_w1"));
      params.push_back(l.param("lin_w2"));
      if (cfg.train_beta) betas.push_back(l.param("beta"));
    }

  Rng rng = Rng(cfg.seed).split(0xDA);
  Tape tape;
  std::vector<std::size_t> order(train_ds.size());
  for (int e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t at = 0; at < train_ds.size();
         at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t to =
          std::min(train_ds.size(), at + static_cast<std::size_t>(cfg.batch_size));
      tape.reset();
      Tensor x = batch_features(train_ds, order, at, to);
      Tensor y = batch_labels(train_ds, order, at, to);
      Tensor loss = ops::softmax_cross_entropy(tape, model::forward_with_taps(tape, g, x), y);
      backward(tape, loss);
      ops::sgd_step(params, cfg.lr, 0.0f);
      // Proximal step for the sum-of-betas regularizer: decay toward zero
      // with a floor there, so only the CE gradient can push a beta back up.
      const float shrink = cfg.lr * cfg.beta_reg;
      for (auto& b : betas) b.f32()[0] = std::max(0.0f, b.f32()[0] - shrink);
      ops::zero_grads(params);
    }
  }

  report.acc_pre = model::accuracy(g, eval_ds.features_tensor(), eval_ds.labels_tensor());
  for (auto& l : g.layers) {
    if (l.kind != model::LayerKind::AttentionBlock) continue;
    const float b = l.param("beta").f32()[0];
    report.sum_beta_final += static_cast<double>(b);
    report.beta_final.emplace_back(l.id, b);
    const bool linearize = b < cfg.tau_beta;
    report.substituted.emplace_back(l.id, linearize);
    l.attn_mode = linearize ? model::AttnMode::LinearAttn : model::AttnMode::Standard;
    l.param("beta").set_requires_grad(false);
    l.param("lin_w1").set_requires_grad(false);
    l.param("lin_w2").set_requires_grad(false);
  }
  report.acc_post = model::accuracy(g, eval_ds.features_tensor(), eval_ds.labels_tensor());
  return {std::move(g), std::move(report)};
}

void write_training_log_csv(const std::vector<RoundLog>& log, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InputError("cannot open " + path + " for writing");
  f << "round,live_slices,acc,loss,sum_alpha_or_mag\n";
  for (const auto& r : log)
    f << r.round << "," << r.live_slices << "," << r.acc << "," << r.loss << ","
      << r.score_sum << "\n";
}

}  // namespace tslc::train
