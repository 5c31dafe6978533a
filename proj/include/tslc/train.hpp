#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tslc/dataset.hpp"
#include "tslc/graph.hpp"

namespace tslc::train {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  float lr = 0.05f;
  float weight_decay = 0.0f;
  /// L1 pressure on the slice gates: loss = CE + lambda * sum |alpha|.
  float lambda_complexity = 1e-3f;
  std::uint64_t seed = 1;
};

struct PruneConfig {
  double delta = 0.01;        // tolerable relative accuracy loss
  double alpha_setup = 0.05;  // setup-phase gate threshold
  int n = 1;                  // slices pruned per passing round
  int rounds = 30;
  float lambda_complexity = 1e-3f;
  int epochs_per_round = 2;
  int batch_size = 32;
  float lr = 0.05f;
  std::uint64_t seed = 1;

  void validate() const;
};

struct AccuracyBudget {
  double acc_vic = 0.0;
  double acc_tol = 0.0;
  static AccuracyBudget from(double acc_vic, double delta) {
    return {acc_vic, (1.0 - delta) * acc_vic};
  }
};

struct RoundLog {
  int round = 0;
  int live_slices = 0;
  double acc = 0.0;
  double loss = 0.0;
  double score_sum = 0.0;  // sum of gates (alpha runs) or magnitudes (LoRA runs)
};

struct PruneResult {
  model::GraphSpec model;
  std::vector<RoundLog> log;
  bool warned_below_tol = false;  // no round ever beat acc_tol
  double acc_final = 0.0;
  double acc_tol = 0.0;
};

/// Trains slice weights, gates and the classifier head on a frozen backbone.
/// Loss is CE plus the L1 gate penalty; backbone bytes are untouched.
model::GraphSpec train_dense(const model::GraphSpec& g, const data::Dataset& train,
                             const TrainConfig& cfg);

/// Full fine-tune: every parameter trains (victim and surrogate models).
/// The result comes back frozen.
model::GraphSpec train_full(const model::GraphSpec& g, const data::Dataset& train,
                            const TrainConfig& cfg);

/// Gate-guided iterative pruning: a setup pass drops every slice with
/// alpha < alpha_setup, then each round evaluates, snapshots the model when
/// it beats acc_tol, prunes the n smallest-gate slices and retrains.
/// Returns the last snapshot (or the post-setup model with a warning when no
/// round ever passed). Ties in the ranking break by ascending (source,
/// target, tap).
PruneResult iterative_prune(const model::GraphSpec& m_dense, const data::Dataset& train,
                            const data::Dataset& eval, double acc_vic, const PruneConfig& cfg);

/// Sum of |w| over a low-rank adapter's weight matrices.
double lora_magnitude(const model::SliceAdapter& s);

/// Magnitude-guided variant of iterative_prune for LoRA slices: same round
/// structure, ranked by lora_magnitude, and no setup pass.
PruneResult magnitude_prune_lora(const model::GraphSpec& m_dense, const data::Dataset& train,
                                 const data::Dataset& eval, double acc_vic,
                                 const PruneConfig& cfg);

struct DynAttnConfig {
  int epochs = 20;
  int batch_size = 16;
  float lr = 0.05f;
  float beta_reg = 1.0f;   // weight on the sum-of-betas regularizer
  float tau_beta = 0.5f;   // substitution threshold
  float beta_init = 1.0f;  // interpolation starts fully standard
  bool train_beta = true;
  std::uint64_t seed = 1;
};

struct DynAttnReport {
  std::vector<std::pair<int, float>> beta_final;  // (layer id, beta)
  std::vector<std::pair<int, bool>> substituted;  // (layer id, linearized?)
  double sum_beta_init = 0.0;
  double sum_beta_final = 0.0;
  double acc_pre = 0.0;   // interpolated model, before substitution
  double acc_post = 0.0;  // after hard substitution
};

/// Trains each attention block as beta * standard + (1-beta) * linear
/// attention with a sum-of-betas regularizer, then hard-substitutes every
/// block: linear attention when beta < tau_beta, standard otherwise.
std::pair<model::GraphSpec, DynAttnReport> train_dynamic_attention(const model::GraphSpec& g_vit,
                                                                   const data::Dataset& train,
                                                                   const data::Dataset& eval,
                                                                   const DynAttnConfig& cfg);

void write_training_log_csv(const std::vector<RoundLog>& log, const std::string& path);

}  // namespace tslc::train
