// SPDX-License-Identifier: Apache-2.0
#include "seqfuse/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "seqfuse/checkpoint.hpp"
#include "seqfuse/dataset.hpp"
#include "seqfuse/error.hpp"
#include "seqfuse/http_api.hpp"
#include "seqfuse/protocol.hpp"
#include "seqfuse/service.hpp"
#include "seqfuse/synthetic.hpp"
#include "seqfuse/training.hpp"

namespace seqfuse {
namespace {

namespace fs = std::filesystem;

/// Bad flag values or combinations detected after parsing.
class UsageError : public Error {
 public:
  using Error::Error;
};

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
  std::string out_dir;
  std::string spec_file;
  std::optional<int> train_ids, test_ids, distractors, cameras, dim;
  std::optional<double> noise, transform_scale, bias_scale, latent_scale;
  std::optional<std::uint64_t> seed;
  bool blob = false;
};

std::string dataset_summary(const Dataset& d) {
  std::ostringstream s;
  s << "records      train " << d.split_records(Split::train).size() << ", query "
    << d.split_records(Split::query).size() << ", gallery " << d.split_records(Split::gallery).size() << "\n";
  s << "identities   train " << d.identities(Split::train).size() << ", query " << d.identities(Split::query).size()
    << ", gallery " << d.identities(Split::gallery).size() << "\n";
  std::map<int, std::set<int>> cams_of;
  for (const FeatureRecord& r : d.records()) cams_of[r.pid].insert(r.cam);
  std::map<std::size_t, std::size_t> hist;
  for (const auto& [pid, cams] : cams_of) ++hist[cams.size()];
  s << "cameras per identity (" << cams_of.size() << " identities)\n";
  std::size_t peak = 1;
  for (const auto& [n, c] : hist) peak = std::max(peak, c);
  for (const auto& [n, c] : hist) {
    s << "  " << std::setw(2) << n << " | " << std::string((c * 40 + peak - 1) / peak, '#') << " " << c << "\n";
  }
  return s.str();
}

int cmd_gen(const GenArgs& a, std::ostream& out) {
  SyntheticSpec spec;
  if (!a.spec_file.empty()) spec = synthetic_spec_from_json(nlohmann::json::parse(read_file(a.spec_file), nullptr, true));
  if (a.train_ids) spec.train_identities = *a.train_ids;
  if (a.test_ids) spec.test_identities = *a.test_ids;
  if (a.distractors) spec.distractors = *a.distractors;
  if (a.cameras) spec.cameras = *a.cameras;
  if (a.dim) spec.dim = *a.dim;
  if (a.noise) spec.noise = *a.noise;
  if (a.transform_scale) spec.transform_scale = *a.transform_scale;
  if (a.bias_scale) spec.camera_bias_scale = *a.bias_scale;
  if (a.latent_scale) spec.latent_scale = *a.latent_scale;
  if (a.seed) spec.seed = *a.seed;
  try {
    spec.validate();
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  if (spec.cameras < 2 && spec.train_identities > 0) {
    throw UsageError("a train split needs at least 2 cameras to form query sequences");
  }

  const SyntheticDataset s = generate_synthetic(spec);
  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  ManifestOptions opts;
  if (a.blob) opts.blob = dir / "features.f32";
  save_manifest(s.dataset, dir / "manifest.jsonl", opts);
  write_file(dir / "spec.json", to_json(spec).dump(2) + "\n");
  out << "wrote " << (dir / "manifest.jsonl").string() << "\n" << dataset_summary(s.dataset);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string manifest;
  std::string checkpoint;
  std::string loss_log;
  bool full_scale = false;
  std::optional<std::size_t> iters, hidden, batch_ids, checkpoint_every;
  std::optional<double> lr, t0, t1, lambda0, margin;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> fc_activation, gru_input;
  bool hinge = false;
  bool no_mloss = false;
  bool cross_positive = false;
  bool shuffle_order = false;
  bool quiet = false;
};

TrainConfig train_config(const TrainArgs& a) {
  TrainConfig cfg = a.full_scale ? TrainConfig::full_scale() : TrainConfig{};
  if (a.iters) cfg.iterations = *a.iters;
  if (a.hidden) cfg.model.hidden = *a.hidden;
  if (a.batch_ids) cfg.batch.identities = *a.batch_ids;
  if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
  if (a.lr) cfg.lr.base = *a.lr;
  if (a.t0) cfg.lr.t0 = *a.t0;
  if (a.t1) cfg.lr.t1 = *a.t1;
  if (a.lambda0) cfg.lambda0 = *a.lambda0;
  if (a.margin) cfg.loss.margin = *a.margin;
  if (a.seed) cfg.seed = *a.seed;
  if (a.hinge) cfg.loss.soft_margin = false;
  if (a.no_mloss) cfg.loss.use_monotonicity = false;
  if (a.cross_positive) cfg.batch.cross_sequence_positive = true;
  if (a.shuffle_order) cfg.batch.shuffle_order = true;
  try {
    if (a.fc_activation) cfg.model.fc_activation = parse_fc_activation(*a.fc_activation);
    if (a.gru_input) cfg.model.gru_input = parse_gru_input(*a.gru_input);
    cfg.validate();
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const TrainConfig cfg = train_config(a);
  const fs::path ckpt = a.checkpoint;
  const fs::path loss_log = a.loss_log.empty() ? fs::path(a.checkpoint + ".loss.csv") : fs::path(a.loss_log);

  const Dataset d = load_manifest(a.manifest);
  TrainHooks hooks;
  const std::size_t every = std::max<std::size_t>(1, cfg.iterations / 10);
  if (!a.quiet) {
    hooks.on_iteration = [&](const LossRecord& r) {
      if ((r.iter + 1) % every == 0) err << "iter " << r.iter + 1 << "/" << cfg.iterations << "  loss " << r.total << "\n";
    };
  }
  hooks.on_checkpoint = [&](std::size_t iter, const FusionModel& m) {
    save_checkpoint(m, ckpt.string() + ".iter" + std::to_string(iter), cfg.to_json());
  };
  const TrainResult result = train(d, cfg, hooks);

  std::string log = "iter,lr,lambda,loss_total,loss_tri,loss_mon\n";
  for (const LossRecord& r : result.history) log += format_loss_line(r) + "\n";
  save_checkpoint(result.model, ckpt, cfg.to_json());
  write_file(loss_log, log);
  out << "wrote " << ckpt.string() << " (" << result.model.parameter_count() << " parameters, " << cfg.iterations
      << " iterations)\n";
  if (!result.history.empty()) out << "final loss " << result.history.back().total << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string manifest;
  std::string checkpoint;
  std::string report_dir;
  std::string protocol = "vsp";
  std::vector<int> gallery;
  std::vector<std::string> fusers;
  std::size_t order_check = 0;
  std::uint64_t order_seed = 1;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  Protocol protocol;
  std::vector<Fuser> fusers;
  try {
    protocol = parse_protocol(a.protocol);
    if (a.fusers.empty()) {
      fusers = {Fuser::gru, Fuser::mean, Fuser::max, Fuser::single_query};
      if (a.checkpoint.empty()) fusers.erase(fusers.begin());
    }
    for (const std::string& f : a.fusers) fusers.push_back(parse_fuser(f));
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  const bool needs_model = std::find(fusers.begin(), fusers.end(), Fuser::gru) != fusers.end();
  if (needs_model && a.checkpoint.empty()) throw UsageError("the gru fuser needs --checkpoint");
  if (protocol == Protocol::vsp && !a.gallery.empty()) throw UsageError("--gallery applies to --protocol fsp only");

  const Dataset d = load_manifest(a.manifest);
  std::optional<FusionModel> model;
  if (!a.checkpoint.empty()) {
    model = load_checkpoint(a.checkpoint).model;
    if (model->config.input_dim != d.dim()) {
      throw DimensionError("checkpoint expects " + std::to_string(model->config.input_dim) +
                           "-dimensional features, manifest has " + std::to_string(d.dim()));
    }
  }
  const int cameras = d.camera_count();

  std::vector<ProtocolPlan> plans;
  std::vector<std::vector<int>> galleries;
  if (protocol == Protocol::vsp) {
    plans = vsp_plans(cameras, d);
  } else {
    if (a.gallery.empty()) {
      for (int c = 1; c <= cameras; ++c) galleries.push_back({c});
    } else {
      galleries.push_back(a.gallery);
    }
    for (const auto& g : galleries) {
      for (ProtocolPlan p : fsp_plans(g, cameras, d)) {
        p.id = static_cast<int>(plans.size());
        plans.push_back(std::move(p));
      }
    }
  }
  if (plans.empty()) throw DataError("no evaluable plans for this dataset");

  const FusionModel* mp = model ? &*model : nullptr;
  nlohmann::json doc = {{"protocol", std::string(to_string(protocol))},
                        {"manifest_records", d.size()},
                        {"cameras", cameras},
                        {"fsp_galleries", galleries},
                        {"runs", nlohmann::json::array()}};
  std::string text;
  std::string csv = "fuser,plan,gallery,query,k,queries,rank1,map\n";
  auto cams = [](const std::vector<int>& v) {
    std::string s;
    for (int c : v) s += (s.empty() ? "" : " ") + std::to_string(c);
    return s;
  };
  for (Fuser f : fusers) {
    const EvalReport r = run_protocol(mp, d, plans, f);
    nlohmann::json run = to_json(r);
    text += format_summary(r) + "\n";
    for (const PlanResult& p : r.plans) {
      std::ostringstream row;
      row << to_string(f) << "," << p.plan_id << "," << cams(p.gallery_cams) << "," << cams(p.query_cams) << ","
          << p.query_size << "," << p.queries << "," << std::setprecision(17) << p.rank1 << "," << p.map << "\n";
      csv += row.str();
    }
    if (a.order_check > 0) {
      const OrderReport o = order_invariance_experiment(mp, d, plans, f, a.order_check, a.order_seed);
      run["order_check"] = to_json(o);
      std::ostringstream line;
      line << std::fixed << std::setprecision(2) << "order check (" << to_string(f) << ", " << a.order_check
           << " orderings): rank-1 spread " << 100.0 * o.rank1_spread << " pts, mAP spread " << 100.0 * o.map_spread
           << " pts\n\n";
      text += line.str();
    }
    doc["runs"].push_back(std::move(run));
  }

  const fs::path dir = a.report_dir;
  write_file(dir / "eval.json", doc.dump(2) + "\n");
  write_file(dir / "eval.txt", text);
  write_file(dir / "plans.csv", csv);
  out << text << "wrote " << (dir / "eval.json").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// serve

struct ServeArgs {
  std::string manifest;
  std::string checkpoint;
  std::string journal;
  std::string static_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t top = 20;
  bool study = false;
};

std::atomic<bool> g_stop_requested{false};

extern "C" void handle_stop_signal(int) { g_stop_requested.store(true); }

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  if (a.top == 0) throw UsageError("--top must be >= 1");
  if (a.port < 0 || a.port > 65535) throw UsageError("--port must be in 0..65535");
  auto dataset = std::make_shared<const Dataset>(load_manifest(a.manifest));
  std::optional<FusionModel> model;
  if (!a.checkpoint.empty()) model = load_checkpoint(a.checkpoint).model;
  ServiceConfig cfg;
  cfg.mode = a.study ? ServiceMode::study : ServiceMode::demo;
  cfg.default_top = a.top;
  if (!a.journal.empty()) cfg.journal = a.journal;
  OperatorService service(dataset, std::move(model), cfg);

  HttpOptions opts;
  opts.host = a.host;
  opts.port = a.port;
  if (!a.static_dir.empty()) opts.static_dir = a.static_dir;
  HttpServer server(service, opts);
  const int port = server.bind();

  g_stop_requested.store(false);
  auto prev_int = std::signal(SIGINT, handle_stop_signal);
  auto prev_term = std::signal(SIGTERM, handle_stop_signal);
  std::atomic<bool> finished{false};
  std::thread watcher([&] {
    while (!finished.load()) {
      if (g_stop_requested.load()) {
        server.stop();
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  });
  out << "listening on http://" << a.host << ":" << port << " (" << to_string(cfg.mode) << " mode)" << std::endl;
  server.run();
  finished.store(true);
  watcher.join();
  service.flush();
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
  out << "stopped" << std::endl;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"seqfuse: sequential multi-camera feature fusion for person re-identification", "seqfuse"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "seqfuse 0.1.0");

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic multi-camera feature dataset");
  g->add_option("--out", gen.out_dir, "Output directory for manifest.jsonl and spec.json")
      ->envname("SEQFUSE_DATA_DIR")
      ->required();
  g->add_option("--spec", gen.spec_file, "Synthetic spec JSON; flags override its fields");
  g->add_option("--train-ids", gen.train_ids, "Training identities (default 200)");
  g->add_option("--test-ids", gen.test_ids, "Test identities (default 100)");
  g->add_option("--distractors", gen.distractors, "Gallery-only distractor identities (default 0)");
  g->add_option("--cameras", gen.cameras, "Number of cameras (default 6)");
  g->add_option("--dim", gen.dim, "Feature dimension (default 32)");
  g->add_option("--noise", gen.noise, "Observation noise sigma (default 0.7)");
  g->add_option("--transform-scale", gen.transform_scale, "Camera transform perturbation (default 0.05)");
  g->add_option("--bias-scale", gen.bias_scale, "Camera bias scale (default 1.0)");
  g->add_option("--latent-scale", gen.latent_scale, "Identity latent scale (default 1.0)");
  g->add_option("--seed", gen.seed, "Generator seed (default 1)");
  g->add_flag("--blob", gen.blob, "Store features in a float32 sidecar file");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the fusion model on the train split of a manifest");
  t->add_option("--manifest", tr.manifest, "Feature manifest")->envname("SEQFUSE_MANIFEST")->required();
  t->add_option("--checkpoint", tr.checkpoint, "Output checkpoint path")->envname("SEQFUSE_CHECKPOINT")->required();
  t->add_option("--loss-log", tr.loss_log, "Loss log CSV (default <checkpoint>.loss.csv)");
  t->add_flag("--full-scale", tr.full_scale,
              "Start from the full-scale settings: hidden 512, lr 1e-4, t0 15000, t1 25000, 25000 iterations, "
              "lambda0 0.01");
  t->add_option("--iters", tr.iters, "Iterations (default 5000; full-scale 25000)");
  t->add_option("--hidden", tr.hidden, "Embedding and GRU width (default 64; full-scale 512)");
  t->add_option("--lr", tr.lr, "Initial learning rate (default 1e-3; full-scale 1e-4)");
  t->add_option("--t0", tr.t0, "Iteration where decay starts (default 3000; full-scale 15000)");
  t->add_option("--t1", tr.t1, "Iteration where decay ends (default 5000; full-scale 25000)");
  t->add_option("--lambda0", tr.lambda0, "Initial triplet weight (default 1.0; full-scale 0.01)");
  t->add_option("--margin", tr.margin, "Hinge margin with --hinge (default 0.3)");
  t->add_option("--batch-ids", tr.batch_ids, "Identities per batch (default 8)");
  t->add_option("--seed", tr.seed, "Training seed (default 7)");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Also save <checkpoint>.iterN every N iterations");
  t->add_option("--fc-activation", tr.fc_activation, "none or relu (default none)");
  t->add_option("--gru-input", tr.gru_input, "pooled or raw (default pooled)");
  t->add_flag("--hinge", tr.hinge, "Hinge triplet loss instead of soft margin");
  t->add_flag("--no-mloss", tr.no_mloss, "Drop the monotonicity loss (triplet-only ablation)");
  t->add_flag("--cross-positive", tr.cross_positive, "Draw positives from records outside the sequence");
  t->add_flag("--shuffle-order", tr.shuffle_order, "Shuffle camera order inside training sequences");
  t->add_flag("--quiet", tr.quiet, "No progress lines on stderr");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate fusers under the VSP or FSP protocol");
  e->add_option("--manifest", ev.manifest, "Feature manifest")->envname("SEQFUSE_MANIFEST")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Trained checkpoint (needed for the gru fuser)")
      ->envname("SEQFUSE_CHECKPOINT");
  e->add_option("--report-dir", ev.report_dir, "Directory for eval.json, eval.txt and plans.csv")
      ->envname("SEQFUSE_REPORT_DIR")
      ->required();
  e->add_option("--protocol", ev.protocol, "vsp or fsp (default vsp)");
  e->add_option("--gallery", ev.gallery, "FSP gallery cameras, comma separated (default: each single camera)")
      ->delimiter(',');
  e->add_option("--fuser", ev.fusers, "gru, mean, max, single-query; comma separated (default: all available)")
      ->delimiter(',');
  e->add_option("--order-check", ev.order_check, "Also measure spread over N random camera orderings");
  e->add_option("--order-seed", ev.order_seed, "Seed for --order-check (default 1)");

  ServeArgs sv;
  auto* s = app.add_subcommand("serve", "Run the operator service (HTTP+JSON under /v1)");
  s->add_option("--manifest", sv.manifest, "Feature manifest")->envname("SEQFUSE_MANIFEST")->required();
  s->add_option("--checkpoint", sv.checkpoint, "Trained checkpoint (enables the gru fuser)")
      ->envname("SEQFUSE_CHECKPOINT");
  s->add_option("--journal", sv.journal, "Append-only session journal, replayed at start")->envname("SEQFUSE_JOURNAL");
  s->add_option("--static-dir", sv.static_dir, "Serve a static UI bundle from this directory")
      ->envname("SEQFUSE_STATIC_DIR");
  s->add_option("--host", sv.host, "Bind address (default 127.0.0.1)");
  s->add_option("--port", sv.port, "Port, 0 for any free port (default 8080)");
  s->add_option("--top", sv.top, "Default ranked-list length (default 20)");
  s->add_flag("--study", sv.study, "Expose ground-truth identities and first-correct ranks");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_gen(gen, out);
    if (t->parsed()) return cmd_train(tr, out, err);
    if (e->parsed()) return cmd_eval(ev, out);
    if (s->parsed()) return cmd_serve(sv, out);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitDivergence;
  } catch (const NumericError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitDivergence;
  } catch (const ArgumentError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitData;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace seqfuse
