#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cstring>
#include <thread>

#include "tslc/enclave.hpp"
#include "tslc/registry.hpp"
#include "tslc/worker.hpp"

using namespace tslc;
using namespace tslc::proto;
using namespace tslc::secure;

namespace {

Message random_valid_message(Rng& rng) {
  Message m;
  m.type = static_cast<MsgType>(1 + rng.below(6));
  m.session_id = rng.next_u64();
  m.layer_id = static_cast<std::uint32_t>(rng.below(1000));
  m.seq = rng.below(1 << 20);
  if (rng.below(2) == 0) {
    const std::size_t n = 1 + rng.below(64);
    std::vector<std::uint32_t> vals(n);
    for (auto& v : vals) v = static_cast<std::uint32_t>(rng.next_u64());
    std::vector<std::uint32_t> dims;
    if (n % 2 == 0 && rng.below(2) == 0)
      dims = {static_cast<std::uint32_t>(n / 2), 2};
    else
      dims = {static_cast<std::uint32_t>(n)};
    m = Message::residues(m.type, m.session_id, m.layer_id, m.seq, dims, vals);
  } else {
    std::vector<std::uint8_t> body(rng.below(128));
    for (auto& b : body) b = static_cast<std::uint8_t>(rng.below(256));
    m = Message::blob(m.type, m.session_id, m.seq, std::move(body));
  }
  return m;
}

struct HybridFixture {
  model::GraphSpec hybrid;
  QuantModel qm;
  Tensor calib;

  explicit HybridFixture(const char* arch, std::uint64_t seed) {
    Rng rng(seed);
    model::GraphSpec backbone = model::build_backbone(arch, rng);
    hybrid = model::attach_slices(backbone, model::SlicePolicy::DENSE_CNN, rng, 0.8f);
    // Give slices real weight so enclave-side work matters.
    for (auto& s : hybrid.slices) {
      for (auto& v : s.down.f32()) v = rng.uniform(-0.3f, 0.3f);
      if (s.up.defined())
        for (auto& v : s.up.f32()) v = rng.uniform(-0.3f, 0.3f);
    }
    hybrid.freeze_all();
    for (auto& s : hybrid.slices) {
      s.alpha.set_requires_grad(false);
      s.down.set_requires_grad(false);
      if (s.up.defined()) s.up.set_requires_grad(false);
    }
    calib = Tensor::zeros({16, 64});
    for (auto& v : calib.f32()) v = rng.uniform(-1.5f, 1.5f);
    qm = quantize_offloaded(hybrid, calib, FieldSpec{});
  }
};

}  // namespace

TEST_CASE("codec: BYE round-trips to identical bytes") {
  Message bye = Message::blob(MsgType::BYE, 42, 7, {});
  auto bytes = encode(bye);
  Message back = decode(bytes);
  CHECK(back == bye);
  CHECK(encode(back) == bytes);
}

TEST_CASE("codec: LINEAR_REQ header declares payload_len = product(dims) * 4") {
  std::vector<std::uint32_t> vals(32, 5);
  Message req = Message::residues(MsgType::LINEAR_REQ, 1, 2, 3, {4, 8}, vals);
  auto bytes = encode(req);
  // payload_len sits after the 29-byte prefix and the two dim words.
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i)
    len |= static_cast<std::uint64_t>(bytes[29 + 8 + i]) << (8 * i);
  CHECK(len == 128);
  CHECK(decode(bytes) == req);
}

TEST_CASE("codec fuzz: valid messages round trip, mutations always raise CodecError") {
  Rng rng(77);
  for (int i = 0; i < 1000; ++i) {
    Message m = random_valid_message(rng);
    CHECK(decode(encode(m)) == m);
  }
  for (int i = 0; i < 1000; ++i) {
    Message m = random_valid_message(rng);
    auto bytes = encode(m);
    switch (rng.below(3)) {
      case 0:  // flip bytes
        for (int k = 0; k < 3; ++k)
          bytes[rng.below(bytes.size())] ^= static_cast<std::uint8_t>(1 + rng.below(255));
        break;
      case 1:  // truncate
        bytes.resize(rng.below(bytes.size()));
        break;
      default:  // extend
        bytes.push_back(static_cast<std::uint8_t>(rng.below(256)));
        break;
    }
    try {
      Message back = decode(bytes);
      // A mutation may cancel out only if it reproduced a valid encoding.
      CHECK(encode(back).size() == bytes.size());
    } catch (const CodecError& e) {
      CHECK(e.offset <= bytes.size());
    }
  }
}

TEST_CASE("worker: honest responses equal the field oracle; faults always differ") {
  HybridFixture fx("mlp-s", 81);
  WorkerModel wm = WorkerModel::from_quant(fx.qm);

  auto run_once = [&](double fault_rate, std::vector<std::uint32_t> h_e,
                      int layer_id) -> std::vector<std::uint32_t> {
    auto [a, b] = make_inproc_pair();
    WorkerOptions opts;
    opts.fault_rate = fault_rate;
    opts.seed = 99;
    std::thread worker([&] { worker_serve(*b, wm, opts); });

    std::vector<std::uint8_t> hello(40);
    for (int i = 0; i < 8; ++i)
      hello[static_cast<std::size_t>(i)] =
          static_cast<std::uint8_t>((fx.qm.spec.p >> (8 * i)) & 0xff);
    std::memcpy(hello.data() + 8, fx.qm.model_digest.data(), 32);
    a->send(Message::blob(MsgType::HELLO, 5, 0, hello));
    REQUIRE(a->recv().type == MsgType::HELLO);

    const auto& fl = wm.layers.at(layer_id);
    a->send(Message::residues(MsgType::LINEAR_REQ, 5, static_cast<std::uint32_t>(layer_id), 1,
                              fl.input_dims(), h_e));
    Message resp = a->recv();
    REQUIRE(resp.type == MsgType::LINEAR_RESP);
    CHECK(resp.seq == 1);
    a->send(Message::blob(MsgType::BYE, 5, 2, {}));
    worker.join();
    return resp.payload_u32();
  };

  Rng rng(83);
  const int lid = fx.qm.layers.begin()->first;
  const auto& fl = fx.qm.layers.begin()->second.field;
  std::vector<std::uint32_t> h_e(fl.input_numel());
  for (auto& v : h_e) v = uniform_residue(rng, fx.qm.spec.p);

  auto honest = run_once(0.0, h_e, lid);
  CHECK(honest == field_apply(fl, h_e, fx.qm.spec.p));

  for (int trial = 0; trial < 5; ++trial) {
    auto faulty = run_once(1.0, h_e, lid);
    CHECK(faulty != honest);
  }
}

TEST_CASE("worker: protocol violations get ERROR replies") {
  HybridFixture fx("mlp-s", 85);
  WorkerModel wm = WorkerModel::from_quant(fx.qm);

  auto fresh = [&] {
    auto pair = make_inproc_pair();
    auto thread = std::make_shared<std::thread>(
        [t = std::shared_ptr<Transport>(std::move(pair.second)), wm] {
          worker_serve(*t, wm, {});
        });
    return std::pair{std::shared_ptr<Transport>(std::move(pair.first)), thread};
  };

  std::vector<std::uint8_t> hello(40);
  for (int i = 0; i < 8; ++i)
    hello[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>((fx.qm.spec.p >> (8 * i)) & 0xff);
  std::memcpy(hello.data() + 8, fx.qm.model_digest.data(), 32);

  SUBCASE("digest mismatch is rejected") {
    auto [t, th] = fresh();
    auto bad = hello;
    bad[20] ^= 0xff;
    t->send(Message::blob(MsgType::HELLO, 1, 0, bad));
    CHECK(t->recv().type == MsgType::ERR);
    th->join();
  }

  SUBCASE("version mismatch yields ERROR, no session") {
    auto [t, th] = fresh();
    Message v2 = Message::blob(MsgType::HELLO, 1, 0, hello);
    v2.version = 2;
    t->send(v2);
    CHECK(t->recv().type == MsgType::ERR);
    th->join();
  }

  SUBCASE("duplicate HELLO on a live session") {
    auto [t, th] = fresh();
    t->send(Message::blob(MsgType::HELLO, 1, 0, hello));
    REQUIRE(t->recv().type == MsgType::HELLO);
    t->send(Message::blob(MsgType::HELLO, 1, 1, hello));
    CHECK(t->recv().type == MsgType::ERR);
    th->join();
  }

  SUBCASE("requests for enclave-placed layers have no weights to serve") {
    auto [t, th] = fresh();
    t->send(Message::blob(MsgType::HELLO, 1, 0, hello));
    REQUIRE(t->recv().type == MsgType::HELLO);
    // The classifier's layer id is never offloaded.
    const std::uint32_t cls_id = static_cast<std::uint32_t>(fx.hybrid.classifier().id);
    t->send(Message::residues(MsgType::LINEAR_REQ, 1, cls_id, 1, {1}, std::vector<std::uint32_t>{0}));
    CHECK(t->recv().type == MsgType::ERR);
    t->send(Message::blob(MsgType::BYE, 1, 2, {}));
    th->join();
  }

  SUBCASE("non-increasing request seq is rejected") {
    auto [t, th] = fresh();
    t->send(Message::blob(MsgType::HELLO, 1, 0, hello));
    REQUIRE(t->recv().type == MsgType::HELLO);
    const int lid = fx.qm.layers.begin()->first;
    const auto& fl = fx.qm.layers.begin()->second.field;
    std::vector<std::uint32_t> h_e(fl.input_numel(), 1);
    t->send(Message::residues(MsgType::LINEAR_REQ, 1, static_cast<std::uint32_t>(lid), 3,
                              fl.input_dims(), h_e));
    REQUIRE(t->recv().type == MsgType::LINEAR_RESP);
    t->send(Message::residues(MsgType::LINEAR_REQ, 1, static_cast<std::uint32_t>(lid), 3,
                              fl.input_dims(), h_e));
    CHECK(t->recv().type == MsgType::ERR);
    t->send(Message::blob(MsgType::BYE, 1, 4, {}));
    th->join();
  }
}

TEST_CASE("model push installs layers the worker can then serve") {
  HybridFixture fx("mlp-s", 87);
  WorkerModel empty;
  empty.spec = fx.qm.spec;
  empty.refresh_model_digest();

  auto [a, b] = make_inproc_pair();
  std::thread worker([&] { worker_serve(*b, empty, {}); });

  std::uint64_t seq = 0;
  for (const auto& [id, ql] : fx.qm.layers)
    a->send(Message::residues(MsgType::MODEL_PUSH, 9, static_cast<std::uint32_t>(id), seq++,
                              {static_cast<std::uint32_t>(11 + ql.field.weights.size())},
                              encode_field_layer(ql.field)));

  std::vector<std::uint8_t> hello(40);
  for (int i = 0; i < 8; ++i)
    hello[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>((fx.qm.spec.p >> (8 * i)) & 0xff);
  std::memcpy(hello.data() + 8, fx.qm.model_digest.data(), 32);
  a->send(Message::blob(MsgType::HELLO, 9, seq++, hello));
  REQUIRE(a->recv().type == MsgType::HELLO);

  Rng rng(88);
  const int lid = fx.qm.layers.begin()->first;
  const auto& fl = fx.qm.layers.begin()->second.field;
  std::vector<std::uint32_t> h_e(fl.input_numel());
  for (auto& v : h_e) v = uniform_residue(rng, fx.qm.spec.p);
  a->send(Message::residues(MsgType::LINEAR_REQ, 9, static_cast<std::uint32_t>(lid), seq++,
                            fl.input_dims(), h_e));
  Message resp = a->recv();
  REQUIRE(resp.type == MsgType::LINEAR_RESP);
  CHECK(resp.payload_u32() == field_apply(fl, h_e, fx.qm.spec.p));
  a->send(Message::blob(MsgType::BYE, 9, seq++, {}));
  worker.join();
}

TEST_CASE("split inference is bit-identical to the local quantized reference") {
  for (const char* arch : {"mlp-s", "cnn-s"}) {
    HybridFixture fx(arch, 91);
    Rng rng(92);

    PadStore pads = precompute_pads(fx.qm, 30, rng);
    auto [a, b] = make_inproc_pair();
    WorkerModel wm = WorkerModel::from_quant(fx.qm);
    std::thread worker([&, t = std::move(b)]() mutable { worker_serve(*t, wm, {}); });

    SessionConfig cfg;
    cfg.verify_rate = 0.5;
    cfg.seed = 93;
    EnclaveSession session(fx.hybrid, fx.qm, std::move(pads), std::move(a), cfg);

    Tensor x = Tensor::zeros({5, 64});
    for (auto& v : x.f32()) v = rng.uniform(-1.5f, 1.5f);
    Tensor via_protocol = session.infer_logits(x);
    Tensor reference = quantized_reference_forward(fx.hybrid, fx.qm, x);
    REQUIRE(via_protocol.shape() == reference.shape());
    CHECK(std::memcmp(via_protocol.f32().data(), reference.f32().data(),
                      static_cast<std::size_t>(reference.numel()) * 4) == 0);
    CHECK(session.stats().checks > 0);
    CHECK(session.stats().rejects == 0);
    session.bye();
    worker.join();
  }
}

TEST_CASE("a tampering worker aborts the session with an integrity error") {
  HybridFixture fx("mlp-s", 95);
  Rng rng(96);
  PadStore pads = precompute_pads(fx.qm, 10, rng);
  auto [a, b] = make_inproc_pair();
  WorkerModel wm = WorkerModel::from_quant(fx.qm);
  WorkerOptions opts;
  opts.fault_rate = 1.0;
  opts.seed = 97;
  std::thread worker([&, t = std::move(b)]() mutable { worker_serve(*t, wm, opts); });

  SessionConfig cfg;
  cfg.verify_rate = 1.0;
  cfg.seed = 98;
  EnclaveSession session(fx.hybrid, fx.qm, std::move(pads), std::move(a), cfg);
  Tensor x = Tensor::zeros({1, 64});
  for (auto& v : x.f32()) v = rng.uniform(-1.0f, 1.0f);
  CHECK_THROWS_AS(session.infer_logits(x), IntegrityError);
  CHECK(session.stats().rejects == 1);
  worker.join();
}

TEST_CASE("pad exhaustion surfaces as a security error") {
  HybridFixture fx("mlp-s", 99);
  Rng rng(100);
  PadStore pads = precompute_pads(fx.qm, 1, rng);  // one inference's worth
  auto [a, b] = make_inproc_pair();
  WorkerModel wm = WorkerModel::from_quant(fx.qm);
  std::thread worker([&, t = std::move(b)]() mutable { worker_serve(*t, wm, {}); });

  SessionConfig cfg;
  cfg.verify_rate = 0.0;
  cfg.seed = 101;
  EnclaveSession session(fx.hybrid, fx.qm, std::move(pads), std::move(a), cfg);
  Tensor x = Tensor::zeros({1, 64});
  session.infer_logits(x);
  CHECK_THROWS_AS(session.infer_logits(x), SecurityError);
  session.bye();
  worker.join();
}

TEST_CASE("traffic carries no plaintext weights or float activations") {
  HybridFixture fx("mlp-s", 103);
  Rng rng(104);
  PadStore pads = precompute_pads(fx.qm, 20, rng);

  std::vector<std::uint8_t> captured;
  auto [a, b] = make_inproc_pair(&captured);
  WorkerModel wm = WorkerModel::from_quant(fx.qm);
  std::thread worker([&, t = std::move(b)]() mutable { worker_serve(*t, wm, {}); });

  SessionConfig cfg;
  cfg.verify_rate = 0.2;
  cfg.seed = 105;
  EnclaveSession session(fx.hybrid, fx.qm, std::move(pads), std::move(a), cfg);
  Tensor x = Tensor::zeros({4, 64});
  for (auto& v : x.f32()) v = rng.uniform(-1.5f, 1.5f);
  session.infer_logits(x);
  session.bye();
  worker.join();

  REQUIRE(!captured.empty());
  auto contains = [&](const std::uint8_t* pat, std::size_t len) {
    return std::search(captured.begin(), captured.end(), pat, pat + len) != captured.end();
  };

  // Enclave-held weights: slices, gates, classifier.
  for (const auto& s : fx.hybrid.slices) {
    CHECK(!contains(reinterpret_cast<const std::uint8_t*>(s.down.f32().data()),
                    static_cast<std::size_t>(s.down.numel()) * 4));
    if (s.up.defined())
      CHECK(!contains(reinterpret_cast<const std::uint8_t*>(s.up.f32().data()),
                      static_cast<std::size_t>(s.up.numel()) * 4));
  }
  const auto& cls = fx.hybrid.classifier();
  CHECK(!contains(reinterpret_cast<const std::uint8_t*>(cls.param("weight").f32().data()),
                  static_cast<std::size_t>(cls.param("weight").numel()) * 4));

  // Raw float inputs never appear.
  CHECK(!contains(reinterpret_cast<const std::uint8_t*>(x.f32().data()), 64 * 4));

  // No message on the wire carries a float dtype: every dtype byte is U32 or
  // BYTES by construction; replay the capture through the decoder.
  std::size_t at = 0;
  int messages = 0;
  while (at < captured.size()) {
    const std::uint8_t ndim = captured[at + 28];
    std::size_t dims_len = static_cast<std::size_t>(ndim) * 4;
    std::uint64_t payload_len = 0;
    for (int i = 0; i < 8; ++i)
      payload_len |= static_cast<std::uint64_t>(captured[at + 29 + dims_len + i]) << (8 * i);
    const std::size_t total = 29 + dims_len + 8 + static_cast<std::size_t>(payload_len);
    Message m = decode(std::span<const std::uint8_t>(captured.data() + at, total));
    CHECK((m.dtype == WireDType::U32 || m.dtype == WireDType::BYTES));
    at += total;
    ++messages;
  }
  CHECK(messages > 2);
}

TEST_CASE("tcp transport serves the same protocol") {
  HybridFixture fx("mlp-s", 107);
  Rng rng(108);
  PadStore pads = precompute_pads(fx.qm, 10, rng);

  TcpListener listener(0);
  WorkerModel wm = WorkerModel::from_quant(fx.qm);
  std::thread server([&] {
    auto conn = listener.accept_one();
    worker_serve(*conn, wm, {});
  });

  auto t = tcp_connect("127.0.0.1", listener.port());
  SessionConfig cfg;
  cfg.verify_rate = 1.0;
  cfg.seed = 109;
  EnclaveSession session(fx.hybrid, fx.qm, std::move(pads), std::move(t), cfg);
  Tensor x = Tensor::zeros({2, 64});
  for (auto& v : x.f32()) v = rng.uniform(-1.0f, 1.0f);
  Tensor via_tcp = session.infer_logits(x);
  Tensor reference = quantized_reference_forward(fx.hybrid, fx.qm, x);
  CHECK(std::memcmp(via_tcp.f32().data(), reference.f32().data(),
                    static_cast<std::size_t>(reference.numel()) * 4) == 0);
  session.bye();
  server.join();
  listener.shutdown();
}

TEST_CASE("a tcp worker serves two sessions with disjoint pad stores") {
  HybridFixture fx("mlp-s", 113);
  Rng rng(114);
  proto::TcpListener listener(0);
  proto::WorkerModel wm = proto::WorkerModel::from_quant(fx.qm);
  std::atomic<bool> stop{false};
  std::thread server([&] { proto::worker_serve_tcp(listener, wm, {}, &stop); });

  Tensor x = Tensor::zeros({2, 64});
  for (auto& v : x.f32()) v = rng.uniform(-1.0f, 1.0f);
  Tensor want = quantized_reference_forward(fx.hybrid, fx.qm, x);

  auto run_session = [&](std::uint64_t seed) {
    secure::PadStore pads = precompute_pads(fx.qm, 8, rng);
    SessionConfig cfg;
    cfg.verify_rate = 1.0;
    cfg.seed = seed;
    EnclaveSession s(fx.hybrid, fx.qm, std::move(pads), tcp_connect("127.0.0.1", listener.port()),
                     cfg);
    Tensor got = s.infer_logits(x);
    s.bye();
    return std::memcmp(got.f32().data(), want.f32().data(),
                       static_cast<std::size_t>(want.numel()) * 4) == 0;
  };

  bool ok_a = false, ok_b = false;
  std::thread ta([&] { ok_a = run_session(115); });
  std::thread tb([&] { ok_b = run_session(116); });
  ta.join();
  tb.join();
  CHECK(ok_a);
  CHECK(ok_b);
  stop = true;
  listener.shutdown();
  server.join();
}

TEST_CASE("a plan with no offloaded layers sends nothing") {
  Rng rng(111);
  model::GraphSpec g = model::build_backbone("mlp-s", rng);
  for (auto& l : g.layers) l.placement = model::Placement::ENCLAVE;  // black-box
  Tensor calib = Tensor::zeros({4, 64});
  QuantModel qm = quantize_offloaded(g, calib, FieldSpec{});
  CHECK(qm.layers.empty());

  std::vector<std::uint8_t> captured;
  auto [a, b] = make_inproc_pair(&captured);
  PadStore pads;
  pads.p = qm.spec.p;
  SessionConfig cfg;
  cfg.seed = 112;
  EnclaveSession session(g, qm, std::move(pads), std::move(a), cfg);
  Tensor x = Tensor::zeros({3, 64});
  for (auto& v : x.f32()) v = rng.uniform(-1.0f, 1.0f);
  Tensor logits = session.infer_logits(x);

  Tape off = Tape::disabled();
  Tensor local = model::forward_with_taps(off, g, x);
  CHECK(std::memcmp(logits.f32().data(), local.f32().data(),
                    static_cast<std::size_t>(local.numel()) * 4) == 0);
  CHECK(captured.empty());  // no handshake, no requests
  b->close();
}
