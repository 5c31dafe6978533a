#include "tslc/attack.hpp"

#include <algorithm>

#include "tslc/ops.hpp"
#include "tslc/train.hpp"

namespace tslc::attack {

using model::GraphSpec;
using model::LayerKind;
using model::Placement;

LabelOracle local_oracle(const GraphSpec& victim) {
  // Clone so concurrent sweep points cannot race on shared storage.
  auto held = std::make_shared<GraphSpec>(victim.deep_clone());
  return [held](const Tensor& xs) { return model::predict_labels(*held, xs); };
}

namespace {

std::uint64_t config_stream(const PartitionConfig& c) {
  std::uint64_t h = 1469598103934665603ull;
  for (char ch : c.name()) {
    h ^= static_cast<std::uint64_t>(ch);
    h *= 1099511628211ull;
  }
  return h;
}

void copy_layer_params(model::LayerSpec& dst, const model::LayerSpec& src) {
  for (auto& [name, t] : dst.params) {
    const Tensor& s = src.param(name);
    std::copy(s.f32().begin(), s.f32().end(), t.f32().begin());
  }
}

void copy_unmasked_params(model::LayerSpec& dst, const model::LayerSpec& src,
                          const std::vector<std::uint8_t>& mask) {
  std::size_t off = 0;
  for (auto& [name, t] : dst.params) {
    const Tensor& s = src.param(name);
    auto d = t.f32();
    auto sv = s.f32();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!mask[off + i]) d[i] = sv[i];  // hidden entries keep public values
    off += d.size();
  }
}

}  // namespace

GraphSpec init_surrogate(const GraphSpec& public_model, const PartitionPlan& plan,
                         const GraphSpec& victim, Rng& rng) {
  if (public_model.arch != victim.arch)
    throw ConfigError("surrogate architecture does not match the victim");
  if (plan.placement.size() != victim.layers.size())
    throw ConfigError("partition plan does not cover the victim");

  GraphSpec m_init = public_model.deep_clone();
  m_init.role = model::Role::SURROGATE;
  m_init.slices.clear();  // slices are never exposed

  if (plan.config.strategy == Strategy::TEESLICE) {
    // Only the public backbone leaks; the attacker re-initializes the head.
    for (auto& l : m_init.layers)
      if (l.kind == LayerKind::Classifier) {
        const float bound = 1.0f / std::sqrt(static_cast<float>(l.c_in));
        l.params["weight"] = Tensor::uniform({l.c_in, l.c_out}, bound, rng);
        l.params["bias"] = Tensor::uniform({l.c_out}, bound, rng);
      }
    return m_init;
  }

  for (std::size_t i = 0; i < victim.layers.size(); ++i) {
    if (plan.placement[i] != Placement::UNTRUSTED) continue;
    const auto& vl = victim.layers[i];
    auto& dl = m_init.layers[i];
    if (vl.params.empty()) continue;
    auto mask_it = plan.hidden_masks.find(vl.id);
    if (mask_it != plan.hidden_masks.end())
      copy_unmasked_params(dl, vl, mask_it->second);
    else
      copy_layer_params(dl, vl);
  }
  return m_init;
}

GraphSpec steal(const LabelOracle& oracle, const GraphSpec& m_init, const data::Dataset& query,
                const StealConfig& cfg) {
  const std::size_t budget =
      cfg.query_budget == 0 ? query.size() : std::min(cfg.query_budget, query.size());
  if (budget == 0) throw InputError("empty query set");
  data::Dataset q = query.subset(0, budget);

  const auto labels = oracle(q.features_tensor());
  for (std::size_t i = 0; i < q.size(); ++i)
    q.labels[i] = static_cast<std::uint8_t>(labels[i]);

  if (cfg.epochs == 0) {
    GraphSpec m_sur = m_init.deep_clone();
    m_sur.role = model::Role::SURROGATE;
    return m_sur;
  }

  // Full fine-tune on the (query, victim-label) pairs.
  train::TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.lr = cfg.lr;
  tc.seed = cfg.seed;
  GraphSpec m_sur = train::train_full(m_init, q, tc);
  m_sur.role = model::Role::SURROGATE;
  return m_sur;
}

StealReport evaluate_attack(const GraphSpec& m_sur, const GraphSpec& victim,
                            const data::Dataset& eval) {
  if (eval.size() == 0) throw InputError("empty eval split");
  StealReport r;
  const Tensor xs = eval.features_tensor();
  const auto sur = model::predict_labels(m_sur, xs);
  const auto vic = model::predict_labels(victim, xs);
  std::size_t acc = 0, fid = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    if (sur[i] == eval.labels[i]) ++acc;
    if (sur[i] == vic[i]) ++fid;
  }
  r.accuracy = static_cast<double>(acc) / static_cast<double>(eval.size());
  r.fidelity = static_cast<double>(fid) / static_cast<double>(eval.size());
  return r;
}

SweepCurve sweep(const SweepInputs& in, const std::vector<PartitionConfig>& configs,
                 const StealConfig& cfg, double delta) {
  const bool has_black = std::any_of(configs.begin(), configs.end(), [](const auto& c) {
    return c.strategy == Strategy::BLACK_BOX;
  });
  const bool has_none = std::any_of(configs.begin(), configs.end(), [](const auto& c) {
    return c.strategy == Strategy::NO_SHIELD;
  });
  // security_black anchors the sweet-spot constraint, so the black-box point
  // is mandatory; a missing no-shield endpoint only degrades the curve.
  if (!has_black) throw ConfigError("sweep configs must include the black-box baseline");

  SweepCurve curve;
  curve.delta = delta;
  if (!has_none) curve.status = "warning: no-shield endpoint missing; ";

  for (const auto& config : configs) {
    const bool teeslice = config.strategy == Strategy::TEESLICE;
    const GraphSpec& victim = teeslice ? in.victim_hybrid : in.victim_plain;
    PartitionPlan plan = make_partition(victim, config);

    StealConfig point_cfg = cfg;
    point_cfg.seed = cfg.seed ^ config_stream(config);
    Rng rng = Rng(point_cfg.seed).split(0x11);

    GraphSpec m_sur;
    std::size_t queries = 0;
    if (config.strategy == Strategy::NO_SHIELD) {
      // Everything is exposed: the offloaded victim IS the surrogate.
      m_sur = victim.deep_clone();
      m_sur.role = model::Role::SURROGATE;
    } else {
      GraphSpec m_init = init_surrogate(in.public_model, plan, victim, rng);
      m_sur = steal(local_oracle(victim), m_init, in.query, point_cfg);
      queries = point_cfg.query_budget == 0 ? in.query.size()
                                            : std::min(point_cfg.query_budget, in.query.size());
    }

    StealReport report = evaluate_attack(m_sur, victim, in.eval);
    report.config = config;
    report.query_count = queries;
    report.percent_tee = plan.flops(victim).percent_tee();

    SweepPoint pt;
    pt.config = config;
    pt.security = report.accuracy;
    pt.utility = report.percent_tee;
    pt.report = report;
    if (config.strategy == Strategy::BLACK_BOX) curve.security_black = report.accuracy;
    curve.points.push_back(std::move(pt));
  }

  const SweepPoint* best = nullptr;
  for (const auto& pt : curve.points)
    if (std::abs(pt.security - curve.security_black) < delta)
      if (!best || pt.utility < best->utility) best = &pt;
  if (best) {
    curve.sweet_spot = best->config;
    curve.status += "ok";
  } else {
    curve.status += "no configuration within delta of the black-box security";
  }
  return curve;
}

}  // namespace tslc::attack
