#pragma once

#include <atomic>

#include "tslc/quant.hpp"
#include "tslc/transport.hpp"

namespace tslc::proto {

/// The untrusted role's state: field residues of the offloaded (UNTRUSTED)
/// linear layers only. It never sees scales, biases, slices or the head.
struct WorkerModel {
  secure::FieldSpec spec;
  std::map<int, secure::FieldLayer> layers;
  std::map<int, std::array<std::uint8_t, 32>> digests;
  std::array<std::uint8_t, 32> model_digest{};

  static WorkerModel from_quant(const secure::QuantModel& qm);
  void install_layer(secure::FieldLayer layer);  // MODEL_PUSH path
  void refresh_model_digest();
};

struct WorkerOptions {
  /// Probability of flipping one element of a response (test hook).
  double fault_rate = 0.0;
  std::uint64_t seed = 0;
};

/// Serves one session until BYE or transport close. For each LINEAR_REQ the
/// worker computes W * h_e over the field and answers LINEAR_RESP with the
/// same seq. Unknown layers and protocol violations get ERROR replies.
void worker_serve(Transport& t, WorkerModel model, const WorkerOptions& opts = {});

/// Accept loop: one thread per connection, each running worker_serve.
/// Returns when the listener shuts down.
void worker_serve_tcp(TcpListener& listener, const WorkerModel& model,
                      const WorkerOptions& opts = {}, std::atomic<bool>* stop = nullptr);

// MODEL_PUSH payload: u32 sequence
//   [kind, c_in, c_out, k, stride, pad, in_h, in_w, out_h, out_w, n, weights...]
std::vector<std::uint32_t> encode_field_layer(const secure::FieldLayer& l);
secure::FieldLayer decode_field_layer(std::uint32_t layer_id,
                                      std::span<const std::uint32_t> words);

}  // namespace tslc::proto
