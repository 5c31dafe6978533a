// Command-line front end: dataset generation, victim/public training,
// slicing, pruning, split deployment (both roles), stealing, sweeping and
// reporting. Every subcommand reads an optional JSON run config, applies
// flag overrides, and writes the resolved config next to its outputs.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "tslc/attack.hpp"
#include "tslc/checkpoint.hpp"
#include "tslc/enclave.hpp"
#include "tslc/registry.hpp"
#include "tslc/train.hpp"
#include "tslc/worker.hpp"

using nlohmann::json;
using namespace tslc;

namespace {

struct RunConfig {
  std::uint64_t seed = 7;
  std::string arch = "mlp-s";

  // dataset
  std::string kind = "gauss10";
  std::size_t n_pretrain = 700;
  std::size_t n_victim_train = 1400;
  std::size_t n_victim_eval = 260;
  std::size_t n_attacker_query = 280;
  std::size_t n_attacker_eval = 260;
  double mean_scale = 1.2;
  double noise = 0.85;

  // training
  int public_epochs = 20;
  int victim_epochs = 25;
  int dense_epochs = 25;
  int batch_size = 32;
  double lr = 0.05;
  double lambda_complexity = 1e-3;

  // pruning
  double delta = 0.01;
  double alpha_setup = 0.05;
  int prune_n = 1;
  int rounds = 30;
  int epochs_per_round = 2;

  // field / deployment
  std::uint64_t field_p = 2147483647ull;
  double verify_rate = 0.1;
  std::size_t pad_count = 64;

  // attack
  int steal_epochs = 40;
  double query_budget_fraction = 0.1;
  double sweep_delta = 0.05;

  json to_json() const {
    json j;
    j["seed"] = seed;
    j["arch"] = arch;
    j["dataset"] = {{"kind", kind},
                    {"n_pretrain", n_pretrain},
                    {"n_victim_train", n_victim_train},
                    {"n_victim_eval", n_victim_eval},
                    {"n_attacker_query", n_attacker_query},
                    {"n_attacker_eval", n_attacker_eval},
                    {"mean_scale", mean_scale},
                    {"noise", noise}};
    j["train"] = {{"public_epochs", public_epochs}, {"victim_epochs", victim_epochs},
                  {"dense_epochs", dense_epochs},   {"batch_size", batch_size},
                  {"lr", lr},                       {"lambda_complexity", lambda_complexity}};
    j["prune"] = {{"delta", delta},
                  {"alpha_setup", alpha_setup},
                  {"n", prune_n},
                  {"rounds", rounds},
                  {"epochs_per_round", epochs_per_round}};
    j["field"] = {{"p", field_p}};
    j["deploy"] = {{"verify_rate", verify_rate}, {"pad_count", pad_count}};
    j["attack"] = {{"steal_epochs", steal_epochs},
                   {"query_budget_fraction", query_budget_fraction},
                   {"sweep_delta", sweep_delta}};
    return j;
  }

  void from_json(const json& j) {
    if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("arch")) arch = j.at("arch").get<std::string>();
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.contains("kind")) kind = d.at("kind").get<std::string>();
      if (d.contains("n_pretrain")) n_pretrain = d.at("n_pretrain").get<std::size_t>();
      if (d.contains("n_victim_train"))
        n_victim_train = d.at("n_victim_train").get<std::size_t>();
      if (d.contains("n_victim_eval")) n_victim_eval = d.at("n_victim_eval").get<std::size_t>();
      if (d.contains("n_attacker_query"))
        n_attacker_query = d.at("n_attacker_query").get<std::size_t>();
      if (d.contains("n_attacker_eval"))
        n_attacker_eval = d.at("n_attacker_eval").get<std::size_t>();
      if (d.contains("mean_scale")) mean_scale = d.at("mean_scale").get<double>();
      if (d.contains("noise")) noise = d.at("noise").get<double>();
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      if (t.contains("public_epochs")) public_epochs = t.at("public_epochs").get<int>();
      if (t.contains("victim_epochs")) victim_epochs = t.at("victim_epochs").get<int>();
      if (t.contains("dense_epochs")) dense_epochs = t.at("dense_epochs").get<int>();
      if (t.contains("batch_size")) batch_size = t.at("batch_size").get<int>();
      if (t.contains("lr")) lr = t.at("lr").get<double>();
      if (t.contains("lambda_complexity"))
        lambda_complexity = t.at("lambda_complexity").get<double>();
    }
    if (j.contains("prune")) {
      const auto& p = j.at("prune");
      if (p.contains("delta")) delta = p.at("delta").get<double>();
      if (p.contains("alpha_setup")) alpha_setup = p.at("alpha_setup").get<double>();
      if (p.contains("n")) prune_n = p.at("n").get<int>();
      if (p.contains("rounds")) rounds = p.at("rounds").get<int>();
      if (p.contains("epochs_per_round")) epochs_per_round = p.at("epochs_per_round").get<int>();
    }
    if (j.contains("field") && j.at("field").contains("p"))
      field_p = j.at("field").at("p").get<std::uint64_t>();
    if (j.contains("deploy")) {
      const auto& d = j.at("deploy");
      if (d.contains("verify_rate")) verify_rate = d.at("verify_rate").get<double>();
      if (d.contains("pad_count")) pad_count = d.at("pad_count").get<std::size_t>();
    }
    if (j.contains("attack")) {
      const auto& a = j.at("attack");
      if (a.contains("steal_epochs")) steal_epochs = a.at("steal_epochs").get<int>();
      if (a.contains("query_budget_fraction"))
        query_budget_fraction = a.at("query_budget_fraction").get<double>();
      if (a.contains("sweep_delta")) sweep_delta = a.at("sweep_delta").get<double>();
    }
  }
};

RunConfig load_config(const std::string& path) {
  RunConfig rc;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path);
    json j;
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    rc.from_json(j);
  }
  return rc;
}

void write_sidecar(const RunConfig& rc, const std::string& out_path) {
  std::ofstream f(out_path);
  if (!f) throw InputError("cannot write " + out_path);
  f << rc.to_json().dump(2) << "\n";
}

data::Dataset make_kind(const RunConfig& rc, std::size_t n, Rng& rng) {
  if (rc.kind == "gauss10")
    return data::make_gaussian_mixture(n, 10, 64, static_cast<float>(rc.mean_scale),
                                       static_cast<float>(rc.noise), rng);
  if (rc.kind == "spirals")
    return data::make_two_spirals(n, static_cast<float>(rc.noise), rng);
  if (rc.kind == "blobs2")
    return data::make_blobs2(n, 64, static_cast<float>(rc.mean_scale),
                             static_cast<float>(rc.noise), rng);
  throw ConfigError("unknown dataset kind '" + rc.kind + "'");
}

train::TrainConfig train_cfg(const RunConfig& rc, int epochs, std::uint64_t stream) {
  train::TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = rc.batch_size;
  tc.lr = static_cast<float>(rc.lr);
  tc.lambda_complexity = static_cast<float>(rc.lambda_complexity);
  tc.seed = Rng(rc.seed).split(stream).seed();
  return tc;
}

secure::QuantModel quantize_for(const model::GraphSpec& g, const data::Dataset& calib,
                                const RunConfig& rc) {
  secure::FieldSpec spec;
  spec.p = rc.field_p;
  const std::size_t n = std::min<std::size_t>(calib.size(), 128);
  return secure::quantize_offloaded(g, calib.subset(0, n).features_tensor(), spec);
}

double dataset_accuracy(const model::GraphSpec& g, const data::Dataset& ds) {
  return model::accuracy(g, ds.features_tensor(), ds.labels_tensor());
}

int cmd_gen_data(const RunConfig& rc, const std::string& out_dir) {
  Rng root(rc.seed);
  Rng pub_rng = root.split(2);
  data::Dataset pretrain = make_kind(rc, rc.n_pretrain, pub_rng);
  Rng vic_rng = root.split(1);
  data::Dataset pool = make_kind(
      rc, rc.n_victim_train + rc.n_victim_eval + rc.n_attacker_query + rc.n_attacker_eval,
      vic_rng);
  std::size_t at = 0;
  auto take = [&](std::size_t n) {
    auto d = pool.subset(at, n);
    at += n;
    return d;
  };
  data::save_dataset(pretrain, out_dir + "/pretrain.tsds");
  data::save_dataset(take(rc.n_victim_train), out_dir + "/victim_train.tsds");
  data::save_dataset(take(rc.n_victim_eval), out_dir + "/victim_eval.tsds");
  data::save_dataset(take(rc.n_attacker_query), out_dir + "/attacker_query.tsds");
  data::save_dataset(take(rc.n_attacker_eval), out_dir + "/attacker_eval.tsds");
  write_sidecar(rc, out_dir + "/runconfig.json");
  std::cout << "wrote 5 datasets to " << out_dir << "\n";
  return 0;
}

int cmd_train_victim(const RunConfig& rc, const std::string& data_dir,
                     const std::string& out_dir) {
  data::Dataset pretrain = data::load_dataset(data_dir + "/pretrain.tsds");
  data::Dataset vic_train = data::load_dataset(data_dir + "/victim_train.tsds");
  data::Dataset vic_eval = data::load_dataset(data_dir + "/victim_eval.tsds");

  Rng arch_rng = Rng(rc.seed).split(3);
  model::GraphSpec blank = model::build_backbone(rc.arch, arch_rng, pretrain.n_classes);
  model::GraphSpec pub = train::train_full(blank, pretrain, train_cfg(rc, rc.public_epochs, 4));
  pub.role = model::Role::BACKBONE;
  model::GraphSpec vic = train::train_full(pub, vic_train, train_cfg(rc, rc.victim_epochs, 5));
  vic.role = model::Role::VICTIM;

  model::save_checkpoint(pub, out_dir + "/public.tsmd");
  model::save_checkpoint(vic, out_dir + "/victim.tsmd");
  write_sidecar(rc, out_dir + "/runconfig.json");
  std::cout << "public acc " << dataset_accuracy(pub, vic_eval) << ", victim acc "
            << dataset_accuracy(vic, vic_eval) << "\n";
  return 0;
}

int cmd_slice(const RunConfig& rc, const std::string& public_path, const std::string& data_dir,
              const std::string& out, const std::string& policy, bool dynamic_attention) {
  model::GraphSpec pub = model::load_checkpoint(public_path);
  data::Dataset vic_train = data::load_dataset(data_dir + "/victim_train.tsds");
  data::Dataset vic_eval = data::load_dataset(data_dir + "/victim_eval.tsds");

  model::GraphSpec base = pub;
  if (dynamic_attention) {
    train::DynAttnConfig dc;
    dc.epochs = rc.dense_epochs;
    dc.batch_size = rc.batch_size;
    dc.lr = static_cast<float>(rc.lr);
    dc.seed = Rng(rc.seed).split(9).seed();
    auto [g, rep] = train::train_dynamic_attention(pub, vic_train, vic_eval, dc);
    std::cout << "dynamic attention: sum beta " << rep.sum_beta_init << " -> "
              << rep.sum_beta_final << ", acc " << rep.acc_pre << " -> " << rep.acc_post
              << "\n";
    base = g;
    base.freeze_all();
    base.role = model::Role::BACKBONE;
  }

  Rng slice_rng = Rng(rc.seed).split(6);
  const auto pol = policy == "lora" ? model::SlicePolicy::LORA_ALL
                                    : model::SlicePolicy::DENSE_CNN;
  model::GraphSpec dense_in = model::attach_slices(base, pol, slice_rng);
  model::GraphSpec dense =
      train::train_dense(dense_in, vic_train, train_cfg(rc, rc.dense_epochs, 7));
  model::save_checkpoint(dense, out);
  write_sidecar(rc, out + ".runconfig.json");
  std::cout << "dense model: " << dense.slices.size() << " slices, acc "
            << dataset_accuracy(dense, vic_eval) << "\n";
  return 0;
}

int cmd_prune(const RunConfig& rc, const std::string& dense_path,
              const std::string& victim_path, const std::string& data_dir,
              const std::string& out, const std::string& log_path, bool magnitude) {
  model::GraphSpec dense = model::load_checkpoint(dense_path);
  model::GraphSpec victim = model::load_checkpoint(victim_path);
  data::Dataset vic_train = data::load_dataset(data_dir + "/victim_train.tsds");
  data::Dataset vic_eval = data::load_dataset(data_dir + "/victim_eval.tsds");

  const double acc_vic = dataset_accuracy(victim, vic_eval);
  train::PruneConfig pc;
  pc.delta = rc.delta;
  pc.alpha_setup = rc.alpha_setup;
  pc.n = rc.prune_n;
  pc.rounds = rc.rounds;
  pc.epochs_per_round = rc.epochs_per_round;
  pc.batch_size = rc.batch_size;
  pc.lr = static_cast<float>(rc.lr);
  pc.lambda_complexity = static_cast<float>(rc.lambda_complexity);
  pc.seed = Rng(rc.seed).split(8).seed();

  train::PruneResult res =
      magnitude ? train::magnitude_prune_lora(dense, vic_train, vic_eval, acc_vic, pc)
                : train::iterative_prune(dense, vic_train, vic_eval, acc_vic, pc);
  model::save_checkpoint(res.model, out);
  if (!log_path.empty()) train::write_training_log_csv(res.log, log_path);
  write_sidecar(rc, out + ".runconfig.json");
  std::cout << "sparse model: " << res.model.slices.size() << "/" << dense.slices.size()
            << " slices live, acc " << res.acc_final << " (tol " << res.acc_tol << ")"
            << (res.warned_below_tol ? " [warning: budget never met]" : "") << "\n";
  return res.warned_below_tol ? 1 : 0;
}

int cmd_deploy_worker(const RunConfig& rc, const std::string& checkpoint, std::uint16_t port,
                      double fault_rate) {
  model::GraphSpec g = model::load_checkpoint(checkpoint);
  // Workers only ever need weight residues; activation scales never leave
  // the enclave role, so calibration data is irrelevant here.
  data::Dataset dummy;
  dummy.feature_dim = g.input.features;
  dummy.n_classes = static_cast<std::uint8_t>(g.n_classes);
  dummy.labels.assign(1, 0);
  dummy.features.assign(static_cast<std::size_t>(g.input.features), 0.0f);
  secure::QuantModel qm = quantize_for(g, dummy, rc);
  proto::WorkerModel wm = proto::WorkerModel::from_quant(qm);

  proto::WorkerOptions opts;
  opts.fault_rate = fault_rate;
  opts.seed = rc.seed;
  proto::TcpListener listener(port);
  std::cout << "worker serving " << wm.layers.size() << " offloaded layers on port "
            << listener.port() << std::endl;
  proto::worker_serve_tcp(listener, wm, opts);
  return 0;
}

int cmd_deploy_enclave(const RunConfig& rc, const std::string& checkpoint,
                       const std::string& connect, const std::string& data_path,
                       const std::string& calib_path, const std::string& pads_path,
                       const std::string& save_pads, const std::string& out) {
  model::GraphSpec g = model::load_checkpoint(checkpoint);
  data::Dataset eval = data::load_dataset(data_path);
  data::Dataset calib = calib_path.empty() ? eval : data::load_dataset(calib_path);
  secure::QuantModel qm = quantize_for(g, calib, rc);

  Rng pad_rng = Rng(rc.seed).split(21);
  secure::PadStore pads;
  if (!pads_path.empty()) {
    pads = secure::load_pad_store(pads_path, qm);
  } else {
    // Offline phase: mint enough single-use pads for the whole run.
    const std::size_t need = std::max(rc.pad_count, eval.size() + 8);
    pads = secure::precompute_pads(qm, need, pad_rng);
  }
  if (!save_pads.empty()) secure::save_pad_store(pads, save_pads);

  const auto colon = connect.rfind(':');
  if (colon == std::string::npos) throw ConfigError("--connect expects host:port");
  auto transport = proto::tcp_connect(connect.substr(0, colon),
                                      static_cast<std::uint16_t>(
                                          std::stoi(connect.substr(colon + 1))));

  secure::SessionConfig sc;
  sc.field.p = rc.field_p;
  sc.verify_rate = rc.verify_rate;
  sc.seed = Rng(rc.seed).split(22).seed();
  secure::EnclaveSession session(g, qm, std::move(pads), std::move(transport), sc);

  const auto t0 = std::chrono::steady_clock::now();
  std::size_t hits = 0;
  const std::size_t fd = static_cast<std::size_t>(eval.feature_dim);
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const int label = session.classify(
        std::span<const float>(eval.features.data() + i * fd, fd));
    if (label == eval.labels[i]) ++hits;
  }
  const auto t1 = std::chrono::steady_clock::now();
  session.bye();

  const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  const double avg_latency = ms / static_cast<double>(eval.size());
  json rep;
  rep["samples"] = eval.size();
  rep["accuracy"] = static_cast<double>(hits) / static_cast<double>(eval.size());
  rep["requests"] = session.stats().requests;
  rep["verified"] = session.stats().checks;
  rep["elapsed_ms"] = ms;
  rep["avg_latency_ms"] = avg_latency;
  rep["throughput_per_s"] = 1000.0 / avg_latency;  // informational only
  if (!out.empty()) {
    std::ofstream f(out);
    f << rep.dump(2) << "\n";
    write_sidecar(rc, out + ".runconfig.json");
  }
  std::cout << rep.dump(2) << std::endl;
  return 0;
}

int cmd_infer(const RunConfig& rc, const std::string& checkpoint, const std::string& data_path,
              bool quantized, const std::string& calib_path, const std::string& out) {
  model::GraphSpec g = model::load_checkpoint(checkpoint);
  data::Dataset eval = data::load_dataset(data_path);
  double acc;
  if (quantized) {
    data::Dataset calib = calib_path.empty() ? eval : data::load_dataset(calib_path);
    secure::QuantModel qm = quantize_for(g, calib, rc);
    Tensor logits = secure::quantized_reference_forward(g, qm, eval.features_tensor());
    std::size_t hits = 0;
    for (std::int64_t i = 0; i < logits.dim(0); ++i) {
      const float* row = logits.f32().data() + i * logits.dim(1);
      int best = 0;
      for (std::int64_t j = 1; j < logits.dim(1); ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
      if (best == eval.labels[static_cast<std::size_t>(i)]) ++hits;
    }
    acc = static_cast<double>(hits) / static_cast<double>(eval.size());
  } else {
    acc = dataset_accuracy(g, eval);
  }
  json rep;
  rep["samples"] = eval.size();
  rep["accuracy"] = acc;
  rep["quantized"] = quantized;
  if (!out.empty()) {
    std::ofstream f(out);
    f << rep.dump(2) << "\n";
    write_sidecar(rc, out + ".runconfig.json");
  }
  std::cout << rep.dump(2) << std::endl;
  return 0;
}

json report_to_json(const attack::StealReport& r) {
  json j;
  j["config"] = r.config.name();
  j["accuracy"] = r.accuracy;
  j["fidelity"] = r.fidelity;
  j["query_count"] = r.query_count;
  j["percent_tee"] = r.percent_tee;
  return j;
}

int cmd_steal(const RunConfig& rc, const std::string& victim_path,
              const std::string& public_path, const std::string& strategy,
              const std::string& data_dir, const std::string& out_model,
              const std::string& out_report) {
  model::GraphSpec victim = model::load_checkpoint(victim_path);
  model::GraphSpec pub = model::load_checkpoint(public_path);
  data::Dataset query = data::load_dataset(data_dir + "/attacker_query.tsds");
  data::Dataset eval = data::load_dataset(data_dir + "/attacker_eval.tsds");
  data::Dataset vic_train = data::load_dataset(data_dir + "/victim_train.tsds");

  attack::PartitionConfig config = attack::PartitionConfig::parse(strategy);
  attack::PartitionPlan plan = attack::make_partition(victim, config);

  attack::StealConfig sc;
  sc.epochs = rc.steal_epochs;
  sc.batch_size = rc.batch_size;
  sc.lr = static_cast<float>(rc.lr);
  sc.seed = Rng(rc.seed).split(30).seed();
  sc.query_budget = static_cast<std::size_t>(rc.query_budget_fraction *
                                             static_cast<double>(vic_train.size()));

  Rng rng = Rng(rc.seed).split(31);
  model::GraphSpec m_sur;
  std::size_t queries = 0;
  if (config.strategy == attack::Strategy::NO_SHIELD) {
    m_sur = victim.deep_clone();
    m_sur.role = model::Role::SURROGATE;
  } else {
    model::GraphSpec m_init = attack::init_surrogate(pub, plan, victim, rng);
    m_sur = attack::steal(attack::local_oracle(victim), m_init, query, sc);
    queries = std::min(sc.query_budget == 0 ? query.size() : sc.query_budget, query.size());
  }
  attack::StealReport rep = attack::evaluate_attack(m_sur, victim, eval);
  rep.config = config;
  rep.query_count = queries;
  rep.percent_tee = plan.flops(victim).percent_tee();

  if (!out_model.empty()) model::save_checkpoint(m_sur, out_model);
  if (!out_report.empty()) {
    std::ofstream f(out_report);
    f << report_to_json(rep).dump(2) << "\n";
    write_sidecar(rc, out_report + ".runconfig.json");
  }
  std::cout << report_to_json(rep).dump(2) << std::endl;
  return 0;
}

int cmd_sweep(const RunConfig& rc, const std::string& models_dir, const std::string& data_dir,
              const std::string& configs_arg, const std::string& out_json,
              const std::string& out_csv) {
  model::GraphSpec victim = model::load_checkpoint(models_dir + "/victim.tsmd");
  model::GraphSpec hybrid = model::load_checkpoint(models_dir + "/sparse.tsmd");
  model::GraphSpec pub = model::load_checkpoint(models_dir + "/public.tsmd");
  data::Dataset query = data::load_dataset(data_dir + "/attacker_query.tsds");
  data::Dataset eval = data::load_dataset(data_dir + "/attacker_eval.tsds");
  data::Dataset vic_train = data::load_dataset(data_dir + "/victim_train.tsds");

  std::vector<attack::PartitionConfig> configs;
  std::string item;
  for (std::size_t i = 0; i <= configs_arg.size(); ++i) {
    if (i == configs_arg.size() || configs_arg[i] == ',') {
      if (!item.empty()) configs.push_back(attack::PartitionConfig::parse(item));
      item.clear();
    } else {
      item += configs_arg[i];
    }
  }

  attack::StealConfig sc;
  sc.epochs = rc.steal_epochs;
  sc.batch_size = rc.batch_size;
  sc.lr = static_cast<float>(rc.lr);
  sc.seed = Rng(rc.seed).split(32).seed();
  sc.query_budget = static_cast<std::size_t>(rc.query_budget_fraction *
                                             static_cast<double>(vic_train.size()));

  attack::SweepInputs in{victim, hybrid, pub, query, eval};
  attack::SweepCurve curve = attack::sweep(in, configs, sc, rc.sweep_delta);

  json j;
  j["delta"] = curve.delta;
  j["security_black"] = curve.security_black;
  j["status"] = curve.status;
  if (curve.sweet_spot) j["sweet_spot"] = curve.sweet_spot->name();
  j["points"] = json::array();
  for (const auto& pt : curve.points) {
    json p = report_to_json(pt.report);
    p["security"] = pt.security;
    p["utility"] = pt.utility;
    j["points"].push_back(p);
  }
  if (!out_json.empty()) {
    std::ofstream f(out_json);
    f << j.dump(2) << "\n";
    write_sidecar(rc, out_json + ".runconfig.json");
  }
  if (!out_csv.empty()) {
    std::ofstream f(out_csv);
    f << "config,accuracy,fidelity,percent_tee\n";
    for (const auto& pt : curve.points)
      f << pt.config.name() << "," << pt.report.accuracy << "," << pt.report.fidelity << ","
        << pt.report.percent_tee << "\n";
  }
  std::cout << j.dump(2) << std::endl;
  return 0;
}

int cmd_report(const std::string& sweep_json, const std::string& out_csv) {
  std::ifstream f(sweep_json);
  if (!f) throw InputError("cannot open " + sweep_json);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("sweep file is not valid JSON: ") + e.what());
  }
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_csv.empty()) {
    file.open(out_csv);
    os = &file;
  }
  // Plot-ready table: utility on one axis, steal accuracy on the other.
  *os << "config,accuracy,fidelity,percent_tee\n";
  for (const auto& p : j.at("points"))
    *os << p.at("config").get<std::string>() << "," << p.at("accuracy").get<double>() << ","
        << p.at("fidelity").get<double>() << "," << p.at("percent_tee").get<double>() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TEE-shielded model partition workbench"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", data_dir = ".", models_dir = ".";
  std::string checkpoint, public_path, victim_path, dense_path, out, log_path;
  std::string connect, data_path, calib_path, pads_path, save_pads, strategy = "teeslice";
  std::string configs_arg = "black-box,no-shield,teeslice", out_csv, policy = "dense";
  std::uint64_t seed_flag = 0;
  bool magnitude = false, quantized = false, dynamic_attention = false;
  double fault_rate = 0.0;
  std::uint16_t port = 7731;

  app.add_option("--config", config_path, "JSON run config (flags override it)");
  auto* seed_opt = app.add_option("--seed", seed_flag, "global seed override");

  auto* gen = app.add_subcommand("gen-data", "generate the dataset splits");
  gen->add_option("--out-dir", out_dir);

  auto* tv = app.add_subcommand("train-victim", "train the public and victim models");
  tv->add_option("--data-dir", data_dir);
  tv->add_option("--out-dir", out_dir);

  auto* sl = app.add_subcommand("slice", "attach and train private slices");
  sl->add_option("--public", public_path)->required();
  sl->add_option("--data-dir", data_dir);
  sl->add_option("--out", out)->required();
  sl->add_option("--policy", policy, "dense|lora");
  sl->add_flag("--dynamic-attention", dynamic_attention,
               "train beta-interpolated attention first (vit backbones)");

  auto* pr = app.add_subcommand("prune", "iteratively prune a dense model");
  pr->add_option("--dense", dense_path)->required();
  pr->add_option("--victim", victim_path)->required();
  pr->add_option("--data-dir", data_dir);
  pr->add_option("--out", out)->required();
  pr->add_option("--log", log_path);
  pr->add_flag("--magnitude", magnitude, "rank by weight magnitude (LoRA slices)");

  auto* dw = app.add_subcommand("deploy-worker", "serve offloaded layers");
  dw->add_option("--listen", port, "TCP port (0 = ephemeral)");
  dw->add_option("--checkpoint", checkpoint)->required();
  dw->add_option("--fault-rate", fault_rate, "test hook: response tampering rate");

  auto* de = app.add_subcommand("deploy-enclave", "run split inference over a dataset");
  de->add_option("--connect", connect)->required();
  de->add_option("--checkpoint", checkpoint)->required();
  de->add_option("--data", data_path)->required();
  de->add_option("--calib", calib_path);
  de->add_option("--pads", pads_path, "load a pad store instead of minting");
  de->add_option("--save-pads", save_pads, "persist the (remaining) pad store");
  de->add_option("--out", out);

  auto* inf = app.add_subcommand("infer", "local inference (float or quantized)");
  inf->add_option("--checkpoint", checkpoint)->required();
  inf->add_option("--data", data_path)->required();
  inf->add_flag("--quantized", quantized);
  inf->add_option("--calib", calib_path);
  inf->add_option("--out", out);

  auto* st = app.add_subcommand("steal", "run the surrogate attack for one strategy");
  st->add_option("--victim", victim_path)->required();
  st->add_option("--public", public_path)->required();
  st->add_option("--strategy", strategy);
  st->add_option("--data-dir", data_dir);
  st->add_option("--out", out);
  st->add_option("--report", log_path);

  auto* sw = app.add_subcommand("sweep", "security/utility sweep over strategies");
  sw->add_option("--models-dir", models_dir);
  sw->add_option("--data-dir", data_dir);
  sw->add_option("--configs", configs_arg, "comma-separated strategy list");
  sw->add_option("--out", out);
  sw->add_option("--csv", out_csv);

  auto* rp = app.add_subcommand("report", "emit a plot-ready CSV from a sweep JSON");
  rp->add_option("--sweep", data_path)->required();
  rp->add_option("--csv", out_csv);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig rc = load_config(config_path);
    if (seed_opt->count() > 0) rc.seed = seed_flag;
    // The environment variable outranks everything.
    if (const char* env = std::getenv("TSLC_SEED")) rc.seed = std::strtoull(env, nullptr, 10);

    if (gen->parsed()) return cmd_gen_data(rc, out_dir);
    if (tv->parsed()) return cmd_train_victim(rc, data_dir, out_dir);
    if (sl->parsed()) return cmd_slice(rc, public_path, data_dir, out, policy, dynamic_attention);
    if (pr->parsed())
      return cmd_prune(rc, dense_path, victim_path, data_dir, out, log_path, magnitude);
    if (dw->parsed()) return cmd_deploy_worker(rc, checkpoint, port, fault_rate);
    if (de->parsed())
      return cmd_deploy_enclave(rc, checkpoint, connect, data_path, calib_path, pads_path,
                                save_pads, out);
    if (inf->parsed()) return cmd_infer(rc, checkpoint, data_path, quantized, calib_path, out);
    if (st->parsed())
      return cmd_steal(rc, victim_path, public_path, strategy, data_dir, out, log_path);
    if (sw->parsed()) return cmd_sweep(rc, models_dir, data_dir, configs_arg, out, out_csv);
    if (rp->parsed()) return cmd_report(data_path, out_csv);
    return static_cast<int>(ExitCode::Config);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Internal);
  }
}
