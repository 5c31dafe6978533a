#include "tslc/enclave.hpp"

#include <cstring>

namespace tslc::secure {

using proto::Message;
using proto::MsgType;

struct RemoteExecutor final : LinearExecutor {
  EnclaveSession& s;
  explicit RemoteExecutor(EnclaveSession& s) : s(s) {}

  std::vector<std::int64_t> run(const QuantLayer& l,
                                std::span<const std::int8_t> q_in) override {
    s.ensure_handshake();
    const std::uint64_t p = s.cfg_.field.p;

    std::vector<std::uint32_t> h_res(q_in.size());
    for (std::size_t i = 0; i < q_in.size(); ++i) h_res[i] = to_residue(q_in[i], p);

    Pad& pad = s.pads_.take(l.field.layer_id, l.digest);
    auto h_e = mask(h_res, pad, p);

    const std::uint64_t seq = ++s.seq_;
    s.transport_->send(Message::residues(MsgType::LINEAR_REQ, s.session_id_,
                                         static_cast<std::uint32_t>(l.field.layer_id), seq,
                                         l.field.input_dims(), h_e));
    ++s.stats_.requests;
    Message resp = s.transport_->recv();
    if (resp.type == MsgType::ERR)
      throw TransportError("worker error: " +
                           std::string(resp.payload.begin() + 4, resp.payload.end()));
    if (resp.type != MsgType::LINEAR_RESP || resp.seq != seq ||
        resp.layer_id != static_cast<std::uint32_t>(l.field.layer_id))
      throw TransportError("response does not pair with the outstanding request");
    auto y_e = resp.payload_u32();
    if (y_e.size() != l.field.output_numel())
      throw TransportError("response size mismatch");

    if (s.rng_.next_double() < s.cfg_.verify_rate) {
      ++s.stats_.checks;
      // Fresh key per check; s_tilde comes from the enclave's own residues.
      const FreivaldsKey key = make_freivalds_key(l.field, p, s.rng_);
      if (freivalds_check(h_e, y_e, key, p) == Verdict::REJECT) {
        ++s.stats_.rejects;
        s.aborted_ = true;
        s.transport_->close();
        throw IntegrityError("worker response failed verification on layer " +
                             std::to_string(l.field.layer_id));
      }
    }
    return unmask(y_e, pad, p);
  }
};

EnclaveSession::EnclaveSession(model::GraphSpec hybrid, QuantModel qm, PadStore pads,
                               std::unique_ptr<proto::Transport> transport, SessionConfig cfg)
    : hybrid_(std::move(hybrid)),
      qm_(std::move(qm)),
      pads_(std::move(pads)),
      transport_(std::move(transport)),
      cfg_(cfg),
      rng_(Rng(cfg.seed).split(0xE1)) {
  cfg_.field.validate();
  if (pads_.p != cfg_.field.p) throw SecurityError("pad store was minted for a different field");
}

EnclaveSession::~EnclaveSession() {
  try {
    bye();
  } catch (...) {
  }
}

void EnclaveSession::ensure_handshake() {
  if (handshaken_) return;
  if (aborted_) throw IntegrityError("session aborted");
  session_id_ = rng_.next_u64();
  std::vector<std::uint8_t> payload(40);
  for (int i = 0; i < 8; ++i)
    payload[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>((cfg_.field.p >> (8 * i)) & 0xff);
  std::memcpy(payload.data() + 8, qm_.model_digest.data(), 32);
  transport_->send(Message::blob(MsgType::HELLO, session_id_, 0, payload));
  Message resp = transport_->recv();
  if (resp.type == MsgType::ERR)
    throw TransportError("handshake rejected: " +
                         std::string(resp.payload.begin() + 4, resp.payload.end()));
  if (resp.type != MsgType::HELLO || resp.session_id != session_id_ ||
      resp.payload != payload)
    throw TransportError("handshake reply malformed");
  handshaken_ = true;
}

Tensor EnclaveSession::infer_logits(const Tensor& batch) {
  if (aborted_) throw IntegrityError("session aborted");
  RemoteExecutor ex(*this);
  return hybrid_forward(hybrid_, qm_, batch, ex);
}

int EnclaveSession::classify(std::span<const float> x) {
  Tensor batch =
      Tensor::from_data({1, static_cast<std::int64_t>(x.size())}, {x.begin(), x.end()});
  Tensor logits = infer_logits(batch);
  int best = 0;
  for (std::int64_t j = 1; j < logits.dim(1); ++j)
    if (logits.f32()[j] > logits.f32()[best]) best = static_cast<int>(j);
  return best;
}

void EnclaveSession::bye() {
  if (!handshaken_ || aborted_) return;
  transport_->send(Message::blob(MsgType::BYE, session_id_, ++seq_, {}));
  transport_->close();
  handshaken_ = false;
}

Tensor quantized_reference_forward(const model::GraphSpec& g, const QuantModel& qm,
                                   const Tensor& x) {
  LocalExecutor ex;
  return hybrid_forward(g, qm, x, ex);
}

}  // namespace tslc::secure
