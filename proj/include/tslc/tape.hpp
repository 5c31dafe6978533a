#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tslc/tensor.hpp"

namespace tslc {

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Conv2D,
  ReLU,
  BatchNorm,
  SoftmaxCE,
  Concat,
  ColSlice,
  Transpose2D,
  SoftmaxRows,
  SoftmaxCols,
  Scale,
  OneMinus,
  ConstMul,
  Add,
  BiasAdd,
  MeanRows,
  Permute,
};

/// One recorded operation: where its inputs live on the tape and how to
/// push gradients back through it. Saved forward values live in the
/// backward closure.
struct TapeNode {
  OpKind kind = OpKind::Leaf;
  std::vector<std::int64_t> inputs;
  std::function<void()> backward;
};

/// Append-only record of one forward pass. Nodes are pushed in execution
/// order, so the tape is a topologically ordered DAG by construction.
/// A tape is single-owner; it must not be mutated from two threads.
class Tape {
 public:
  Tape() = default;
  static Tape disabled() {
    Tape t;
    t.recording_ = false;
    return t;
  }

  bool recording() const { return recording_; }

  /// Drops all nodes and invalidates stale tensor registrations.
  void reset() {
    nodes_.clear();
    ++gen_;
  }

  std::size_t size() const { return nodes_.size(); }
  const TapeNode& node(std::size_t id) const { return nodes_.at(id); }
  std::uint64_t generation() const { return gen_; }

  /// Registers a grad-carrying tensor as a leaf if it is not yet on this tape.
  std::int64_t ensure_leaf(const Tensor& t) {
    std::int64_t id = t.tape_id(gen_);
    if (id >= 0) return id;
    id = static_cast<std::int64_t>(nodes_.size());
    nodes_.push_back(TapeNode{OpKind::Leaf, {}, {}});
    t.set_tape_id(gen_, id);
    return id;
  }

  std::int64_t push(OpKind kind, std::vector<std::int64_t> inputs,
                    std::function<void()> backward, const Tensor& out) {
    const auto id = static_cast<std::int64_t>(nodes_.size());
    nodes_.push_back(TapeNode{kind, std::move(inputs), std::move(backward)});
    out.set_tape_id(gen_, id);
    return id;
  }

  /// Reverse sweep from a scalar loss. Gradients accumulate into the grad
  /// buffers of every tracked tensor; leaves off the loss path stay zero.
  void run_backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ContractError("backward requires a scalar loss");
    const std::int64_t root = loss.tape_id(gen_);
    if (root < 0) throw ContractError("loss tensor is not on this tape");
    if (!loss.requires_grad()) throw ContractError("loss does not track gradients");
    Tensor seed = loss;  // shared storage, non-const view
    seed.grad()[0] += 1.0f;
    for (std::int64_t id = root; id >= 0; --id) {
      auto& bw = nodes_[static_cast<std::size_t>(id)].backward;
      if (bw) bw();
    }
  }

 private:
  std::vector<TapeNode> nodes_;
  std::uint64_t gen_ = 1;
  bool recording_ = true;
};

/// Populates grad buffers for everything reachable from `loss`.
inline void backward(Tape& tape, const Tensor& loss) { tape.run_backward(loss); }

}  // namespace tslc
