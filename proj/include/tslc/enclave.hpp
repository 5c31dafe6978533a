#pragma once

#include <memory>

#include "tslc/freivalds.hpp"
#include "tslc/pads.hpp"
#include "tslc/transport.hpp"

namespace tslc::secure {

struct SessionConfig {
  FieldSpec field;
  double verify_rate = 0.1;  // per-request Freivalds probability, fresh s each check
  std::uint64_t seed = 1;
};

struct SessionStats {
  std::size_t requests = 0;
  std::size_t checks = 0;
  std::size_t rejects = 0;
};

/// The trusted role. Holds the hybrid model (slices, gates, non-linear
/// layers, classifier and all scales stay here), masks every offloaded
/// activation with a single-use pad, and verifies worker responses at the
/// configured rate. A failed check aborts the session.
class EnclaveSession {
 public:
  EnclaveSession(model::GraphSpec hybrid, QuantModel qm, PadStore pads,
                 std::unique_ptr<proto::Transport> transport, SessionConfig cfg);
  ~EnclaveSession();

  /// Label-only inference; logits never leave the enclave role.
  int classify(std::span<const float> x);

  /// Full logits for equivalence tests and local tooling.
  Tensor infer_logits(const Tensor& batch);

  void bye();

  const SessionStats& stats() const { return stats_; }
  const QuantModel& quant_model() const { return qm_; }
  PadStore& pad_store() { return pads_; }

 private:
  void ensure_handshake();

  model::GraphSpec hybrid_;
  QuantModel qm_;
  PadStore pads_;
  std::unique_ptr<proto::Transport> transport_;
  SessionConfig cfg_;
  Rng rng_;
  std::uint64_t session_id_ = 0;
  std::uint64_t seq_ = 0;
  bool handshaken_ = false;
  bool aborted_ = false;
  SessionStats stats_;

  friend struct RemoteExecutor;
};

/// Single-process quantized reference on the same QuantModel (plain int64
/// matmuls, no masking, no transport); the split path must match it
/// bit-for-bit.
Tensor quantized_reference_forward(const model::GraphSpec& g, const QuantModel& qm,
                                   const Tensor& x);

}  // namespace tslc::secure
