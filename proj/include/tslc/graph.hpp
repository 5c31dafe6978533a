#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tslc/tape.hpp"
#include "tslc/tensor.hpp"

namespace tslc::model {

enum class Placement : std::uint8_t { ENCLAVE = 0, UNTRUSTED = 1 };

enum class LayerKind : std::uint8_t {
  Linear = 0,
  Conv2D = 1,
  BatchNorm = 2,
  ReLU = 3,
  AttentionBlock = 4,
  FFN = 5,
  Classifier = 6,
};

/// How an attention block computes its output after (or during) training.
enum class AttnMode : std::uint8_t { Standard = 0, LinearAttn = 1, Dynamic = 2 };

/// One backbone layer. Parameter tensors are keyed by name so checkpoints
/// and the secure runtime can address them uniformly.
struct LayerSpec {
  int id = 0;
  LayerKind kind = LayerKind::Linear;
  Placement placement = Placement::UNTRUSTED;
  // Linear / Conv2D / BatchNorm / Classifier dims.
  int c_in = 0, c_out = 0, k = 0, stride = 1, pad = 0;
  // AttentionBlock / FFN dims.
  int d_model = 0, n_heads = 0, d_hidden = 0;
  AttnMode attn_mode = AttnMode::Standard;
  std::map<std::string, Tensor> params;

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  bool has_param(const std::string& name) const { return params.count(name) != 0; }
  std::int64_t param_count() const;
};

enum class SliceKind : std::uint8_t { LowRankPair = 0, OneByOneConv = 1 };

/// Trainable adapter bridging backbone layer `source` to layer `target`
/// (1-based ordinals over the sliceable backbone layers). For LoRA slices
/// `tap` names the projection inside the target-1 attention block.
struct SliceAdapter {
  int source = 0;
  int target = 0;
  SliceKind kind = SliceKind::LowRankPair;
  int d_in = 0, rank = 0, d_out = 0;  // LowRankPair
  int c_in = 0, c_out = 0;            // OneByOneConv
  std::string tap;  // "" for layer-input taps, "wq"/"wv" for LoRA
  Tensor alpha;     // [1] importance gate
  Tensor down;      // LowRankPair: [d_in, rank]; OneByOneConv: [c_out, c_in, 1, 1]
  Tensor up;        // LowRankPair: [rank, d_out]; unused for OneByOneConv

  std::int64_t param_count() const;
  /// Sum of |w| over the adapter weights (gate excluded).
  double weight_magnitude() const;
  std::string name() const;
};

enum class Role : std::uint8_t {
  VICTIM = 0,
  BACKBONE = 1,
  DENSE = 2,
  SPARSE = 3,
  SURROGATE = 4,
};

struct InputSpec {
  int channels = 0, height = 0, width = 0;  // conv-style inputs
  int features = 0;                         // flat inputs
  int tokens = 0, token_dim = 0, patch = 0; // attention-style inputs
};

/// Ordered backbone layers plus tap-connected slice adapters.
struct GraphSpec {
  std::string arch;
  Role role = Role::BACKBONE;
  int n_classes = 0;
  InputSpec input;
  std::vector<LayerSpec> layers;
  std::vector<SliceAdapter> slices;

  LayerSpec& layer_by_id(int id);
  const LayerSpec& layer_by_id(int id) const;
  /// Ids of the sliceable backbone layers (conv/linear/attention/ffn,
  /// classifier excluded), in forward order. Slice endpoints are 1-based
  /// ordinals into this list.
  std::vector<int> backbone_layer_ids() const;
  const LayerSpec& classifier() const;

  /// All parameter tensors in a deterministic order, slices included.
  std::vector<Tensor> all_params();
  /// Tensors the slice trainer updates: slice weights, gates, classifier.
  std::vector<Tensor> slice_trainables();
  /// Everything except batchnorm running stats (full fine-tune).
  std::vector<Tensor> full_trainables();

  void freeze_all();
  GraphSpec deep_clone() const;
};

/// Names a tensor for checkpoints: "layer<id>.<param>" / "slice<p>_<i>[.tap].<part>".
std::string tensor_name(const LayerSpec& l, const std::string& param);
std::string tensor_name(const SliceAdapter& s, const std::string& part);

struct ForwardOptions {
  /// Drop zero-gated slice taps so a pruned slice and a zero gate are
  /// bit-identical; must stay off while training so gates keep gradients.
  bool skip_zero_alpha = false;
};

/// Runs the hybrid model: layer i's input is layer i-1's output plus every
/// live slice tap alpha * A(output of its source layer).
/// x is [n, features] (row per sample); returns logits [n, n_classes].
Tensor forward_with_taps(Tape& tape, const GraphSpec& g, const Tensor& x,
                         const ForwardOptions& opts = {});

/// Accuracy of argmax(logits) against labels over a dataset slice.
double accuracy(const GraphSpec& g, const Tensor& xs, const Tensor& labels);

std::vector<int> predict_labels(const GraphSpec& g, const Tensor& xs);

}  // namespace tslc::model
