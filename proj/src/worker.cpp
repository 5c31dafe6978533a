#include "tslc/worker.hpp"

#include <cstring>
#include <thread>

namespace tslc::proto {

using secure::FieldLayer;

WorkerModel WorkerModel::from_quant(const secure::QuantModel& qm) {
  WorkerModel w;
  w.spec = qm.spec;
  for (const auto& [id, ql] : qm.layers) {
    w.layers.emplace(id, ql.field);
    w.digests.emplace(id, ql.digest);
  }
  w.model_digest = qm.model_digest;
  return w;
}

void WorkerModel::install_layer(FieldLayer layer) {
  const int id = layer.layer_id;
  digests[id] = secure::sha256_bytes(layer.weights.data(), layer.weights.size() * 4);
  layers[id] = std::move(layer);
  refresh_model_digest();
}

void WorkerModel::refresh_model_digest() {
  std::vector<std::uint8_t> all;
  for (const auto& [id, d] : digests) {
    (void)id;
    all.insert(all.end(), d.begin(), d.end());
  }
  model_digest = secure::sha256_bytes(all.data(), all.size());
}

std::vector<std::uint32_t> encode_field_layer(const FieldLayer& l) {
  std::vector<std::uint32_t> w;
  w.reserve(11 + l.weights.size());
  w.push_back(static_cast<std::uint32_t>(l.kind));
  w.push_back(static_cast<std::uint32_t>(l.c_in));
  w.push_back(static_cast<std::uint32_t>(l.c_out));
  w.push_back(static_cast<std::uint32_t>(l.k));
  w.push_back(static_cast<std::uint32_t>(l.stride));
  w.push_back(static_cast<std::uint32_t>(l.pad));
  w.push_back(static_cast<std::uint32_t>(l.in_h));
  w.push_back(static_cast<std::uint32_t>(l.in_w));
  w.push_back(static_cast<std::uint32_t>(l.out_h));
  w.push_back(static_cast<std::uint32_t>(l.out_w));
  w.push_back(static_cast<std::uint32_t>(l.weights.size()));
  w.insert(w.end(), l.weights.begin(), l.weights.end());
  return w;
}

FieldLayer decode_field_layer(std::uint32_t layer_id, std::span<const std::uint32_t> words) {
  if (words.size() < 11) throw CodecError("model push payload too short", 0);
  FieldLayer l;
  l.layer_id = static_cast<int>(layer_id);
  l.kind = static_cast<model::LayerKind>(words[0]);
  if (l.kind != model::LayerKind::Linear && l.kind != model::LayerKind::Conv2D &&
      l.kind != model::LayerKind::BatchNorm)
    throw CodecError("model push names an unsupported layer kind", 0);
  l.c_in = static_cast<int>(words[1]);
  l.c_out = static_cast<int>(words[2]);
  l.k = static_cast<int>(words[3]);
  l.stride = static_cast<int>(words[4]);
  l.pad = static_cast<int>(words[5]);
  l.in_h = static_cast<int>(words[6]);
  l.in_w = static_cast<int>(words[7]);
  l.out_h = static_cast<int>(words[8]);
  l.out_w = static_cast<int>(words[9]);
  const std::size_t n = words[10];
  if (words.size() != 11 + n) throw CodecError("model push weight count mismatch", 0);
  l.weights.assign(words.begin() + 11, words.end());
  return l;
}

namespace {

enum ErrCode : std::uint32_t {
  kErrProtocol = 1,
  kErrHandshake = 2,
  kErrUnknownLayer = 3,
  kErrBadRequest = 4,
};

void reply_error(Transport& t, std::uint64_t session, std::uint64_t seq, std::uint32_t code,
                 const std::string& text) {
  try {
    t.send(Message::error(session, seq, code, text));
  } catch (const TransportError&) {
    // peer already gone
  }
}

}  // namespace

void worker_serve(Transport& t, WorkerModel model, const WorkerOptions& opts) {
  Rng rng = Rng(opts.seed).split(0xFA);
  bool hello_done = false;
  std::uint64_t session_id = 0;
  std::uint64_t last_req_seq = 0;
  std::uint64_t out_seq = 0;

  for (;;) {
    Message m;
    try {
      m = t.recv();
    } catch (const CodecError& e) {
      reply_error(t, session_id, out_seq, kErrProtocol, e.what());
      t.close();
      return;
    } catch (const TransportError&) {
      return;
    }

    switch (m.type) {
      case MsgType::HELLO: {
        if (hello_done) {
          reply_error(t, session_id, m.seq, kErrProtocol, "duplicate HELLO on live session");
          t.close();
          return;
        }
        if (m.payload.size() != 40) {
          reply_error(t, m.session_id, m.seq, kErrHandshake, "malformed HELLO payload");
          t.close();
          return;
        }
        std::uint64_t peer_p = 0;
        for (int i = 0; i < 8; ++i)
          peer_p |= static_cast<std::uint64_t>(m.payload[static_cast<std::size_t>(i)]) << (8 * i);
        if (peer_p != model.spec.p ||
            std::memcmp(m.payload.data() + 8, model.model_digest.data(), 32) != 0) {
          reply_error(t, m.session_id, m.seq, kErrHandshake,
                      "field or model digest mismatch");
          t.close();
          return;
        }
        hello_done = true;
        session_id = m.session_id;
        t.send(Message::blob(MsgType::HELLO, session_id, out_seq++, m.payload));
        break;
      }
      case MsgType::MODEL_PUSH: {
        try {
          model.install_layer(decode_field_layer(m.layer_id, m.payload_u32()));
        } catch (const Error& e) {
          reply_error(t, session_id, m.seq, kErrBadRequest, e.what());
        }
        break;
      }
      case MsgType::LINEAR_REQ: {
        if (!hello_done) {
          reply_error(t, session_id, m.seq, kErrProtocol, "LINEAR_REQ before HELLO");
          break;
        }
        if (m.seq <= last_req_seq) {
          reply_error(t, session_id, m.seq, kErrProtocol, "non-increasing request seq");
          break;
        }
        last_req_seq = m.seq;
        auto it = model.layers.find(static_cast<int>(m.layer_id));
        if (it == model.layers.end()) {
          // Enclave-placed layers have no weights here; that is the point.
          reply_error(t, session_id, m.seq, kErrUnknownLayer,
                      "no such offloaded layer " + std::to_string(m.layer_id));
          break;
        }
        const FieldLayer& fl = it->second;
        auto h_e = m.payload_u32();
        const bool row_ok = fl.kind == model::LayerKind::Linear
                                ? (!h_e.empty() && h_e.size() % fl.input_numel() == 0)
                                : h_e.size() == fl.input_numel();
        if (!row_ok) {
          reply_error(t, session_id, m.seq, kErrBadRequest, "request size mismatch");
          break;
        }
        bool in_field = true;
        for (auto v : h_e)
          if (v >= model.spec.p) {
            in_field = false;
            break;
          }
        if (!in_field) {
          reply_error(t, session_id, m.seq, kErrBadRequest, "residue out of field");
          break;
        }
        auto y = secure::field_apply(fl, h_e, model.spec.p);
        if (opts.fault_rate > 0.0 && rng.next_double() < opts.fault_rate) {
          const std::size_t at = static_cast<std::size_t>(rng.below(y.size()));
          y[at] = secure::add_mod(y[at], 1, model.spec.p);
        }
        std::vector<std::uint32_t> out_dims = fl.output_dims();
        if (fl.kind == model::LayerKind::Linear) {
          const std::uint32_t rows = static_cast<std::uint32_t>(h_e.size() / fl.input_numel());
          if (rows > 1) out_dims.insert(out_dims.begin(), rows);
        }
        t.send(Message::residues(MsgType::LINEAR_RESP, session_id, m.layer_id, m.seq,
                                 std::move(out_dims), y));
        break;
      }
      case MsgType::BYE:
        t.close();
        return;
      case MsgType::LINEAR_RESP:
      case MsgType::ERR:
      default:
        reply_error(t, session_id, m.seq, kErrProtocol, "unexpected message type");
        break;
    }
  }
}

void worker_serve_tcp(TcpListener& listener, const WorkerModel& model,
                      const WorkerOptions& opts, std::atomic<bool>* stop) {
  std::vector<std::thread> sessions;
  for (;;) {
    std::unique_ptr<Transport> conn;
    try {
      conn = listener.accept_one();
    } catch (const TransportError&) {
      break;  // listener shut down
    }
    if (stop && stop->load()) break;
    sessions.emplace_back(
        [t = std::shared_ptr<Transport>(std::move(conn)), model, opts]() mutable {
          try {
            worker_serve(*t, model, opts);
          } catch (const Error&) {
            t->close();
          }
        });
  }
  for (auto& s : sessions) s.join();
}

}  // namespace tslc::proto
