// flagrank: command-line driver for dataset utilities, single-shot baselines,
// simulated active-learning runs and the interactive labeling service.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "flagrank/adaen.hpp"
#include "flagrank/alloop.hpp"
#include "flagrank/baselines.hpp"
#include "flagrank/dataio.hpp"
#include "flagrank/error.hpp"
#include "flagrank/log.hpp"
#include "flagrank/ranking.hpp"
#include "flagrank/service.hpp"

namespace fs = std::filesystem;
using namespace flagrank;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

std::atomic<bool> g_interrupted{false};

BooleanDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open dataset '" + path + "'");
  try {
    return parse_fvs(in);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

GroundTruth load_truth(const std::string& path, const BooleanDataset& ds) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open truth file '" + path + "'");
  auto loaded = load_ground_truth(in, ds);
  for (const auto& w : loaded.warnings) logger().warn("{}: {}", path, w);
  return loaded.truth;
}

std::vector<al::LabelRecord> load_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open label file '" + path + "'");
  try {
    return al::parse_label_file(in);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

// Pending artifacts, written together once the command has succeeded.
class Artifacts {
 public:
  void add(std::string path, std::string content) { files_.emplace_back(std::move(path), std::move(content)); }

  void commit() const {
    for (const auto& [path, content] : files_) {
      const fs::path p(path);
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      std::ofstream out(p, std::ios::binary);
      require(static_cast<bool>(out), ErrorKind::io, "cannot open '" + path + "' for writing");
      out << content;
      require(static_cast<bool>(out), ErrorKind::io, "write failed for '" + path + "'");
    }
  }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

void print_stats(const DatasetStats& s) {
  std::cout << "rows " << s.num_rows << '\n'
            << "attributes " << s.num_attrs << '\n'
            << "attacks " << s.num_attacks << '\n'
            << "attack_percent " << format_attack_percent(s) << '\n';
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

struct AdaenFlags {
  std::size_t hidden = 0, latent = 0, batch = 64, epochs = 20;
  double alpha = 0.5, lambda = 0.1, lr = 1e-3;

  void attach(CLI::App* app) {
    app->add_option("--hidden", hidden, "Hidden width (0 = min(128, d))");
    app->add_option("--latent", latent, "Latent width (0 = min(32, max(2, d/4)))");
    app->add_option("--alpha", alpha, "Weight of AE1 in the blended error")->check(CLI::Range(0.0, 1.0));
    app->add_option("--lambda", lambda, "Adversarial loss weight")->check(CLI::NonNegativeNumber);
    app->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
    app->add_option("--batch", batch, "Minibatch size")->check(CLI::PositiveNumber);
    app->add_option("--epochs", epochs, "Epochs per training round");
  }

  adaen::Config config(std::size_t d, std::uint64_t seed) const {
    adaen::Config c;
    c.input_dim = d;
    c.hidden = hidden;
    c.latent = latent;
    c.alpha = alpha;
    c.lambda = lambda;
    c.lr = lr;
    c.batch = batch;
    c.epochs_per_iteration = epochs;
    c.seed = seed;
    return c;
  }
};

struct LoopFlags {
  al::RunConfig run;
  AdaenFlags ae;
  std::size_t gan_epochs = ganaug::Config{}.epochs;
  double gan_lr = ganaug::Config{}.lr;

  void attach(CLI::App* app) {
    app->add_option("--iterations", run.iterations, "Maximum active-learning iterations T")->check(CLI::PositiveNumber);
    app->add_option("--budget", run.budget, "Oracle label budget B");
    app->add_option("--k", run.k, "Queries per iteration")->check(CLI::PositiveNumber);
    app->add_option("--mix", run.query_mix, "Share of each batch chosen by uncertainty")->check(CLI::Range(0.0, 1.0));
    app->add_option("--percentile", run.percentile, "Threshold percentile p")->check(CLI::Range(0.0, 1.0));
    app->add_option("--rho", run.rho, "Synthetic rows per newly labeled normal")->check(CLI::NonNegativeNumber);
    app->add_option("--initial-fraction", run.initial_labeled_fraction, "Initial labeled share of normals")
        ->check(CLI::Range(0.0, 1.0));
    app->add_option("--holdout", run.holdout_fraction, "Share of rows held out for nDCG")->check(CLI::Range(0.0, 1.0));
    app->add_flag("--cold-start", [this](std::int64_t) { run.warm_start = false; }, "Rebuild the model every iteration");
    app->add_flag("--plateau-stop", run.plateau_stop, "Stop once nDCG plateaus");
    app->add_option("--gan-epochs", gan_epochs, "GAN training epochs");
    app->add_option("--gan-lr", gan_lr, "GAN learning rate")->check(CLI::PositiveNumber);
    app->add_option("--seed", run.seed, "Root seed");
    ae.attach(app);
  }

  al::RunConfig config(std::size_t d) const {
    al::RunConfig c = run;
    c.adaen = ae.config(d, 0);
    c.gan.epochs = gan_epochs;
    c.gan.lr = gan_lr;
    return c;
  }
};

int cmd_synth(std::size_t normal, std::size_t attack, std::size_t attrs, std::uint64_t seed, const std::string& out,
              std::string truth_out) {
  const auto syn = synth_planted(normal, attack, attrs, seed);
  if (truth_out.empty()) truth_out = fs::path(out).replace_extension(".truth").string();
  std::ostringstream data, truth;
  write_fvs(data, syn.dataset);
  write_ground_truth(truth, syn.truth);
  Artifacts art;
  art.add(out, data.str());
  art.add(truth_out, truth.str());
  art.commit();
  print_stats(stats(syn.dataset, syn.truth));
  return kOk;
}

int cmd_convert(const std::string& in_path, const std::string& out) {
  std::ifstream in(in_path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + in_path + "'");
  BooleanDataset ds = [&] {
    try {
      return convert_dense_csv(in);
    } catch (const Error& e) {
      throw Error(e.kind(), in_path + ": " + e.what());
    }
  }();
  std::ostringstream data;
  write_fvs(data, ds);
  Artifacts art;
  art.add(out, data.str());
  art.commit();
  std::cout << "rows " << ds.size() << '\n' << "attributes " << ds.num_attrs() << '\n';
  return kOk;
}

int cmd_stats(const std::string& data, const std::string& truth_path) {
  const auto ds = load_dataset(data);
  const GroundTruth truth = truth_path.empty() ? GroundTruth{} : load_truth(truth_path, ds);
  print_stats(stats(ds, truth));
  return kOk;
}

struct BaselineArgs {
  std::string method = "adaen";
  std::string data, truth, out_ranking = "ranking.csv", out_histogram = "histogram.json";
  std::uint64_t seed = 0;
  std::size_t trees = 100, subsample = 256, bins = 20;
  double percentile = 0.8;
  AdaenFlags ae;
};

int cmd_baseline(const BaselineArgs& a) {
  const auto ds = load_dataset(a.data);
  require(!ds.empty(), ErrorKind::precondition, a.data + ": dataset has no rows");
  std::optional<GroundTruth> truth;
  if (!a.truth.empty()) truth = load_truth(a.truth, ds);

  std::vector<ScoredProcess> scores;
  if (a.method == "avf") {
    scores = baselines::avf_scores(ds);
  } else if (a.method == "iforest") {
    const auto model = baselines::iforest_fit(ds, a.trees, a.subsample, a.seed);
    scores = baselines::iforest_scores(model, ds);
  } else {
    auto model = adaen::build(a.ae.config(ds.num_attrs(), a.seed));
    adaen::train(model, ds.dense());
    scores = adaen::anomaly_scores(model, ds);
  }
  const auto ranked = ranking::rank(scores);
  std::vector<double> values;
  values.reserve(scores.size());
  for (const auto& s : scores) values.push_back(s.error);
  const double tau = adaen::calibrate_threshold(values, a.percentile);
  const auto hist = ranking::error_histogram(values, a.bins, tau);

  std::ostringstream csv;
  ranking::write_ranking_csv(csv, ranked, truth ? &*truth : nullptr);
  Artifacts art;
  art.add(a.out_ranking, csv.str());
  art.add(a.out_histogram, ranking::histogram_to_json(hist).dump(2) + "\n");

  std::string report = "method " + a.method + " ndcg ";
  if (!truth) {
    report += "n/a (no truth file)";
  } else {
    try {
      report += fmt4(ranking::ndcg(ranked, *truth));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::undefined_metric) throw;
      report += "n/a (no attacks in dataset)";
    }
  }
  art.commit();
  std::cout << report << " flagged " << adaen::count_flagged(values, tau) << '/' << values.size() << '\n';
  return kOk;
}

struct AlRunArgs {
  std::string data, truth, oracle = "simulated", out_dir = "al-run";
  double noise = 0.0;
  LoopFlags loop;
};

int cmd_al_run(const AlRunArgs& a) {
  const auto ds = load_dataset(a.data);
  const auto truth = load_truth(a.truth, ds);
  al::RunConfig cfg = a.loop.config(ds.num_attrs());
  cfg.noise = a.noise;

  std::unique_ptr<al::Oracle> oracle;
  if (a.oracle == "simulated") {
    oracle = std::make_unique<al::SimulatedOracle>(truth, a.noise, derive_seed(cfg.seed, "oracle"));
  } else if (a.oracle.rfind("scripted:", 0) == 0) {
    oracle = std::make_unique<al::ScriptedOracle>(load_labels(a.oracle.substr(9)));
  } else {
    std::cerr << "error: --oracle must be 'simulated' or 'scripted:PATH'\n";
    return kUsage;
  }

  const auto result = al::run_loop(ds, &truth, *oracle, cfg);

  std::ostringstream jsonl, csv;
  al::write_metrics_jsonl(jsonl, result.metrics);
  ranking::write_ranking_csv(csv, result.ranking, &truth);
  const auto raw = al::ndcg_series(result.metrics);
  const auto smooth = ranking::smooth_centered(raw, 5);
  json summary{{"iterations", result.metrics.size()}, {"ndcg", raw}, {"ndcg_smoothed", smooth}};
  const auto agg = al::summarize(result.metrics);
  if (agg) summary["summary"] = json{{"max", agg->max}, {"mean", agg->mean}, {"median", agg->median}};

  const fs::path dir(a.out_dir);
  Artifacts art;
  art.add((dir / "metrics.jsonl").string(), jsonl.str());
  art.add((dir / "ranking.csv").string(), csv.str());
  art.add((dir / "summary.json").string(), summary.dump(2) + "\n");
  art.add((dir / "checkpoint.json").string(), result.checkpoint.dump() + "\n");
  art.commit();

  if (agg)
    std::cout << "nDCG max " << fmt4(agg->max) << " mean " << fmt4(agg->mean) << " median " << fmt4(agg->median)
              << " over " << agg->count << " iterations\n";
  else
    std::cout << "nDCG undefined (no attacks in dataset)\n";
  return kOk;
}

struct ServeArgs {
  std::string data, truth, seed_labels, resume, checkpoint = "session.json", static_dir, host = "127.0.0.1";
  int port = 8787;
  bool exit_when_done = false;
  LoopFlags loop;
};

int cmd_serve(const ServeArgs& a) {
  const auto ds = load_dataset(a.data);
  std::optional<GroundTruth> truth;
  if (!a.truth.empty()) truth = load_truth(a.truth, ds);
  const GroundTruth* truth_ptr = truth ? &*truth : nullptr;

  service::Options opts;
  opts.host = a.host;
  opts.port = a.port;
  opts.checkpoint_path = a.checkpoint;
  opts.static_dir = a.static_dir;

  std::unique_ptr<service::Service> svc;
  if (!a.resume.empty()) {
    svc = std::make_unique<service::Service>(ds, truth_ptr, read_json_file(a.resume), opts);
  } else {
    if (a.seed_labels.empty()) {
      std::cerr << "error: serve needs --seed-labels or --resume\n";
      return kUsage;
    }
    const auto labels = load_labels(a.seed_labels);
    bool any_normal = false;
    for (const auto& l : labels) {
      require(ds.index_of(l.process_id).has_value(), ErrorKind::precondition,
              a.seed_labels + ": unknown process id '" + l.process_id + "'");
      any_normal = any_normal || l.label == al::Label::normal;
    }
    require(any_normal, ErrorKind::precondition, a.seed_labels + ": no normal seed labels");
    svc = std::make_unique<service::Service>(ds, truth_ptr, a.loop.config(ds.num_attrs()), labels, opts);
  }

  const int port = svc->start();
  std::cout << "listening on http://" << a.host << ':' << port << std::endl;
  std::signal(SIGINT, [](int) { g_interrupted = true; });
  std::signal(SIGTERM, [](int) { g_interrupted = true; });
  while (!g_interrupted) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    const auto status = svc->snapshot()->status;
    if (status.contains("error")) {
      svc->stop();
      std::cerr << "error: " << status.at("error").get<std::string>() << '\n';
      return kData;
    }
    if (a.exit_when_done && status.at("phase") == "done") break;
  }
  svc->stop();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flagrank: active-learning anomaly ranking over Boolean process data"};
  app.require_subcommand(1);

  std::size_t n_normal = 0, n_attack = 0, n_attrs = 0;
  std::uint64_t synth_seed = 0;
  std::string synth_out, synth_truth;
  auto* synth = app.add_subcommand("synth", "Generate a planted synthetic dataset");
  synth->add_option("--normal", n_normal, "Normal rows")->required();
  synth->add_option("--attack", n_attack, "Attack rows")->required();
  synth->add_option("--attrs", n_attrs, "Attribute count")->required();
  synth->add_option("--seed", synth_seed, "Seed");
  synth->add_option("--out", synth_out, "Dataset path (.fvs)")->required();
  synth->add_option("--truth-out", synth_truth, "Ground-truth path (default: <out>.truth)");

  std::string conv_in, conv_out;
  auto* convert = app.add_subcommand("convert", "Convert a dense 0/1 CSV into .fvs");
  convert->add_option("--in", conv_in, "CSV path")->required();
  convert->add_option("--out", conv_out, "Dataset path (.fvs)")->required();

  std::string stats_data, stats_truth;
  auto* st = app.add_subcommand("stats", "Print dataset statistics");
  st->add_option("--data", stats_data, "Dataset path")->required();
  st->add_option("--truth", stats_truth, "Ground-truth path");

  BaselineArgs base;
  auto* baseline = app.add_subcommand("baseline", "Single-shot train, score, rank and evaluate");
  baseline->add_option("--method", base.method, "Detector")->check(CLI::IsMember({"adaen", "avf", "iforest"}));
  baseline->add_option("--data", base.data, "Dataset path")->required();
  baseline->add_option("--truth", base.truth, "Ground-truth path");
  baseline->add_option("--seed", base.seed, "Seed");
  baseline->add_option("--trees", base.trees, "Isolation forest trees")->check(CLI::PositiveNumber);
  baseline->add_option("--subsample", base.subsample, "Isolation forest subsample size");
  baseline->add_option("--bins", base.bins, "Histogram bins")->check(CLI::PositiveNumber);
  baseline->add_option("--percentile", base.percentile, "Threshold percentile")->check(CLI::Range(0.0, 1.0));
  baseline->add_option("--out-ranking", base.out_ranking, "Ranking CSV path");
  baseline->add_option("--out-histogram", base.out_histogram, "Histogram JSON path");
  base.ae.attach(baseline);

  AlRunArgs alr;
  auto* alrun = app.add_subcommand("al-run", "Active-learning run against a simulated or scripted oracle");
  alrun->add_option("--data", alr.data, "Dataset path")->required();
  alrun->add_option("--truth", alr.truth, "Ground-truth path")->required();
  alrun->add_option("--oracle", alr.oracle, "simulated | scripted:PATH");
  alrun->add_option("--noise", alr.noise, "Simulated label flip probability")->check(CLI::Range(0.0, 1.0));
  alrun->add_option("--out-dir", alr.out_dir, "Directory for metrics, ranking, summary and checkpoint");
  alr.loop.attach(alrun);

  ServeArgs srv;
  auto* serve = app.add_subcommand("serve", "Serve an interactive labeling session over HTTP");
  serve->add_option("--data,--dataset", srv.data, "Dataset path")->required();
  serve->add_option("--truth", srv.truth, "Ground-truth path (enables nDCG)");
  serve->add_option("--seed-labels", srv.seed_labels, "Initial labels: '<id> [normal|anomalous]' per line");
  serve->add_option("--resume", srv.resume, "Resume from a session checkpoint");
  serve->add_option("--checkpoint", srv.checkpoint, "Checkpoint path written on every state change");
  serve->add_option("--static", srv.static_dir, "Directory of console assets served at /");
  serve->add_option("--host", srv.host, "Bind address");
  serve->add_option("--port", srv.port, "Port")->check(CLI::Range(0, 65535));
  serve->add_flag("--exit-when-done", srv.exit_when_done, "Exit once the run is done");
  srv.loop.attach(serve);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(n_normal, n_attack, n_attrs, synth_seed, synth_out, synth_truth);
    if (*convert) return cmd_convert(conv_in, conv_out);
    if (*st) return cmd_stats(stats_data, stats_truth);
    if (*baseline) return cmd_baseline(base);
    if (*alrun) return cmd_al_run(alr);
    if (*serve) return cmd_serve(srv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::numeric ? kNumeric : kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
