#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "flagrank/adaen.hpp"
#include "flagrank/dataio.hpp"
#include "flagrank/error.hpp"
#include "flagrank/ganaug.hpp"
#include "flagrank/json_io.hpp"
#include "flagrank/log.hpp"
#include "flagrank/ranking.hpp"
#include "flagrank/rng.hpp"

// Feedback loop: score, pick uncertain and outlying samples, ask an oracle,
// grow the labeled normal pool (plus GAN samples), retrain, re-rank.
namespace flagrank::al {

enum class Label { normal, anomalous };

inline const char* to_string(Label l) { return l == Label::normal ? "normal" : "anomalous"; }

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "normal") return Label::normal;
  if (s == "anomalous") return Label::anomalous;
  return std::nullopt;
}

struct LabelRecord {
  std::string process_id;
  Label label = Label::normal;

  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

struct RunConfig {
  std::size_t iterations = 40;  // T
  std::size_t budget = 800;     // B
  std::size_t k = 20;
  double query_mix = 0.5;  // share of each batch chosen by uncertainty
  double initial_labeled_fraction = 0.05;
  double percentile = 0.8;
  double rho = 1.0;    // synthetic rows per newly labeled normal
  double noise = 0.0;  // simulated-oracle label flip probability
  double holdout_fraction = 0.0;
  bool warm_start = true;
  bool plateau_stop = false;
  std::size_t plateau_window = 5;
  double plateau_delta = 0.005;
  adaen::Config adaen;
  ganaug::Config gan;
  std::uint64_t seed = 0;

  void validate() const {
    require(iterations >= 1, ErrorKind::precondition, "run: iterations must be >= 1");
    require(k >= 1, ErrorKind::precondition, "run: k must be >= 1");
    require(query_mix >= 0.0 && query_mix <= 1.0, ErrorKind::precondition, "run: query mix must lie in [0,1]");
    require(initial_labeled_fraction >= 0.0 && initial_labeled_fraction <= 1.0, ErrorKind::precondition,
            "run: initial labeled fraction must lie in [0,1]");
    require(percentile > 0.0 && percentile < 1.0, ErrorKind::precondition, "run: percentile must lie in (0,1)");
    require(rho >= 0.0, ErrorKind::precondition, "run: rho must be >= 0");
    require(noise >= 0.0 && noise <= 1.0, ErrorKind::precondition, "run: noise must lie in [0,1]");
    require(holdout_fraction >= 0.0 && holdout_fraction < 1.0, ErrorKind::precondition,
            "run: holdout fraction must lie in [0,1)");
  }
};

// ---------------------------------------------------------------------------
// Uncertainty and query selection

inline double median_of(std::vector<double> v) {
  require(!v.empty(), ErrorKind::precondition, "median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median absolute deviation, floored at 1e-12.
inline double mad_scale(std::span<const double> errors) {
  const double med = median_of(std::vector<double>(errors.begin(), errors.end()));
  std::vector<double> dev;
  dev.reserve(errors.size());
  for (double e : errors) dev.push_back(std::abs(e - med));
  return std::max(median_of(std::move(dev)), 1e-12);
}

// U(x) = 1 - p(y|x) with p(y|x) = sigmoid(|e - tau| / MAD). Maximal (0.5) at e = tau.
inline std::vector<double> estimate_uncertainty(std::span<const double> errors, double tau) {
  require(!errors.empty(), ErrorKind::precondition, "estimate_uncertainty: no errors");
  const double s = mad_scale(errors);
  std::vector<double> u;
  u.reserve(errors.size());
  // 1 - sigmoid(m) == sigmoid(-m), evaluated directly to avoid cancellation.
  for (double e : errors) u.push_back(flagrank::sigmoid(-std::abs(e - tau) / s));
  return u;
}

struct QueryCandidate {
  std::string process_id;
  double error = 0.0;
  double uncertainty = 0.0;
  std::size_t rank = 0;

  friend bool operator==(const QueryCandidate&, const QueryCandidate&) = default;
};

struct QueryBatch {
  std::size_t iteration = 0;
  std::vector<QueryCandidate> items;

  bool empty() const noexcept { return items.empty(); }
  std::size_t size() const noexcept { return items.size(); }
};

// ceil(cap * mix) ids by descending uncertainty, the rest by descending error,
// where cap = min(k, remaining budget, candidates). Error picks that repeat an
// uncertainty pick are dropped and refilled from the uncertainty ordering.
inline std::vector<QueryCandidate> select_queries(std::span<const QueryCandidate> candidates, std::size_t k,
                                                  double mix, std::size_t remaining_budget) {
  require(mix >= 0.0 && mix <= 1.0, ErrorKind::precondition, "select_queries: mix must lie in [0,1]");
  const std::size_t cap = std::min({k, remaining_budget, candidates.size()});
  if (cap == 0) return {};
  std::vector<std::size_t> by_u(candidates.size()), by_e(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) by_u[i] = by_e[i] = i;
  std::sort(by_u.begin(), by_u.end(), [&](std::size_t a, std::size_t b) {
    const auto &x = candidates[a], &y = candidates[b];
    if (x.uncertainty != y.uncertainty) return x.uncertainty > y.uncertainty;
    return x.process_id < y.process_id;
  });
  std::sort(by_e.begin(), by_e.end(), [&](std::size_t a, std::size_t b) {
    const auto &x = candidates[a], &y = candidates[b];
    if (x.error != y.error) return x.error > y.error;
    return x.process_id < y.process_id;
  });

  const auto n_u = std::min(cap, static_cast<std::size_t>(std::ceil(static_cast<double>(cap) * mix - 1e-12)));
  std::vector<std::size_t> picked;
  std::unordered_set<std::size_t> taken;
  for (std::size_t i = 0; i < n_u; ++i) {
    picked.push_back(by_u[i]);
    taken.insert(by_u[i]);
  }
  for (std::size_t i = 0; i < cap - n_u; ++i)
    if (taken.insert(by_e[i]).second) picked.push_back(by_e[i]);
  for (std::size_t i = n_u; picked.size() < cap && i < by_u.size(); ++i)
    if (taken.insert(by_u[i]).second) picked.push_back(by_u[i]);

  std::vector<QueryCandidate> out;
  out.reserve(picked.size());
  for (auto i : picked) out.push_back(candidates[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Oracles

class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual std::vector<LabelRecord> label(const QueryBatch& batch) = 0;
};

// Ground-truth lookup with optional label flips of probability `noise`.
class SimulatedOracle final : public Oracle {
 public:
  SimulatedOracle(const GroundTruth& truth, double noise = 0.0, std::uint64_t seed = 0)
      : truth_(truth), noise_(noise), seed_(seed) {
    require(noise >= 0.0 && noise <= 1.0, ErrorKind::precondition, "oracle: noise must lie in [0,1]");
  }

  std::vector<LabelRecord> label(const QueryBatch& batch) override {
    Rng rng(derive_seed(seed_, "oracle.noise", batch.iteration));
    std::vector<LabelRecord> out;
    for (const auto& q : batch.items) {
      bool attack = truth_.contains(q.process_id);
      if (rng.bernoulli(noise_)) attack = !attack;
      out.push_back(LabelRecord{q.process_id, attack ? Label::anomalous : Label::normal});
    }
    return out;
  }

 private:
  const GroundTruth& truth_;
  double noise_;
  std::uint64_t seed_;
};

// Labels read from `<process_id> <normal|anomalous>` lines. A bare id means normal.
inline std::vector<LabelRecord> parse_label_file(std::istream& in) {
  std::vector<LabelRecord> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto toks = detail::split_ws(body);
    require(toks.size() <= 2, ErrorKind::format, "line " + std::to_string(lineno) + ": expected '<id> [label]'");
    Label l = Label::normal;
    if (toks.size() == 2) {
      auto parsed = parse_label(toks[1]);
      require(parsed.has_value(), ErrorKind::format,
              "line " + std::to_string(lineno) + ": label must be 'normal' or 'anomalous'");
      l = *parsed;
    }
    require(seen.emplace(toks[0]).second, ErrorKind::duplicate,
            "line " + std::to_string(lineno) + ": duplicate id '" + std::string(toks[0]) + "'");
    out.push_back(LabelRecord{std::string(toks[0]), l});
  }
  return out;
}

// Replays labels from a file; every queried id must be present.
class ScriptedOracle final : public Oracle {
 public:
  explicit ScriptedOracle(std::vector<LabelRecord> script) {
    for (auto& r : script) script_.emplace(std::move(r.process_id), r.label);
  }

  std::vector<LabelRecord> label(const QueryBatch& batch) override {
    std::vector<LabelRecord> out;
    for (const auto& q : batch.items) {
      auto it = script_.find(q.process_id);
      require(it != script_.end(), ErrorKind::precondition, "scripted oracle has no label for '" + q.process_id + "'");
      out.push_back(LabelRecord{q.process_id, it->second});
    }
    return out;
  }

 private:
  std::unordered_map<std::string, Label> script_;
};

// Every id of the batch labeled exactly once, in batch order.
inline std::vector<LabelRecord> resolve_labels(const QueryBatch& batch, Oracle& oracle) {
  auto labels = oracle.label(batch);
  require(labels.size() == batch.size(), ErrorKind::state, "oracle returned a different number of labels");
  for (std::size_t i = 0; i < labels.size(); ++i)
    require(labels[i].process_id == batch.items[i].process_id, ErrorKind::state, "oracle labels out of order");
  return labels;
}

// ---------------------------------------------------------------------------
// Labeled pool

struct LabeledPool {
  std::set<std::string> normal_ids;
  std::set<std::string> anomalous_ids;
  Matrix synthetic_rows;
  std::vector<std::string> synthetic_ids;

  bool is_labeled(const std::string& id) const { return normal_ids.contains(id) || anomalous_ids.contains(id); }
  std::size_t size() const { return normal_ids.size() + anomalous_ids.size() + synthetic_ids.size(); }
};

// Adds oracle labels and tagged synthetic rows. Relabeling an id is a conflict.
inline LabeledPool update_pool(LabeledPool pool, std::span<const LabelRecord> labels, const Matrix& synth,
                               std::span<const std::string> synth_ids) {
  require(synth.rows() == synth_ids.size(), ErrorKind::invalid_shape, "update_pool: synthetic id count mismatch");
  std::set<std::string> batch;
  for (const auto& l : labels) {
    require(batch.insert(l.process_id).second, ErrorKind::conflict,
            "update_pool: '" + l.process_id + "' labeled twice in one batch");
    require(!pool.is_labeled(l.process_id), ErrorKind::conflict, "update_pool: '" + l.process_id + "' already labeled");
  }
  for (const auto& l : labels) (l.label == Label::normal ? pool.normal_ids : pool.anomalous_ids).insert(l.process_id);
  if (synth.rows() > 0) {
    const std::size_t cols = synth.cols();
    if (pool.synthetic_rows.rows() == 0) pool.synthetic_rows = Matrix(0, cols);
    const Matrix* parts[] = {&pool.synthetic_rows, &synth};
    pool.synthetic_rows = vstack(parts, cols);
    pool.synthetic_ids.insert(pool.synthetic_ids.end(), synth_ids.begin(), synth_ids.end());
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Metrics

struct IterationRecord {
  std::size_t iteration = 0;
  std::optional<double> ndcg;
  double threshold = 0.0;
  std::size_t labels_spent = 0;
  std::size_t pool_normal = 0;
  std::size_t pool_anomalous = 0;
  std::size_t pool_synthetic = 0;
  std::optional<double> mean_loss;
  double wall_seconds = 0.0;  // not part of the JSONL record
};

using RunMetrics = std::vector<IterationRecord>;

inline json record_to_json(const IterationRecord& r) {
  json j;
  j["iteration"] = r.iteration;
  if (r.ndcg) j["ndcg"] = *r.ndcg;
  j["threshold"] = r.threshold;
  j["labels_spent"] = r.labels_spent;
  j["pool_normal"] = r.pool_normal;
  j["pool_anomalous"] = r.pool_anomalous;
  j["pool_synthetic"] = r.pool_synthetic;
  j["mean_loss"] = r.mean_loss ? json(*r.mean_loss) : json(nullptr);
  return j;
}

inline IterationRecord record_from_json(const json& j) {
  IterationRecord r;
  r.iteration = j.at("iteration").get<std::size_t>();
  if (j.contains("ndcg")) r.ndcg = j.at("ndcg").get<double>();
  r.threshold = j.at("threshold").get<double>();
  r.labels_spent = j.at("labels_spent").get<std::size_t>();
  r.pool_normal = j.at("pool_normal").get<std::size_t>();
  r.pool_anomalous = j.at("pool_anomalous").get<std::size_t>();
  r.pool_synthetic = j.at("pool_synthetic").get<std::size_t>();
  if (!j.at("mean_loss").is_null()) r.mean_loss = j.at("mean_loss").get<double>();
  return r;
}

inline void write_metrics_jsonl(std::ostream& out, const RunMetrics& metrics) {
  for (const auto& r : metrics) out << record_to_json(r).dump() << '\n';
}

struct NdcgSummary {
  double max = 0.0;
  double mean = 0.0;
  double median = 0.0;
  std::size_t count = 0;
};

// Max/mean/median over every record that carries an nDCG value.
inline std::optional<NdcgSummary> summarize(const RunMetrics& metrics) {
  std::vector<double> v;
  for (const auto& r : metrics)
    if (r.ndcg) v.push_back(*r.ndcg);
  if (v.empty()) return std::nullopt;
  NdcgSummary s;
  s.count = v.size();
  s.max = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  s.median = median_of(v);
  return s;
}

inline std::vector<double> ndcg_series(const RunMetrics& metrics) {
  std::vector<double> v;
  for (const auto& r : metrics)
    if (r.ndcg) v.push_back(*r.ndcg);
  return v;
}

// ---------------------------------------------------------------------------
// Session

enum class Phase { training, awaiting_labels, done };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::training: return "training";
    case Phase::awaiting_labels: return "awaiting_labels";
    case Phase::done: return "done";
  }
  return "unknown";
}

struct SubmitResult {
  enum class Status { accepted, stale, conflict, invalid };
  Status status = Status::accepted;
  std::size_t accepted = 0;
  std::vector<std::string> offenders;
  std::string message;
};

// Seeded sample of ceil(fraction * |normals|) ground-truth normals.
inline std::vector<LabelRecord> sample_initial_normals(const BooleanDataset& ds, const GroundTruth& truth,
                                                       double fraction, std::uint64_t seed,
                                                       const std::unordered_set<std::size_t>& excluded = {}) {
  std::vector<std::size_t> normals;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!truth.contains(ds.row(i).id) && !excluded.contains(i)) normals.push_back(i);
  const auto want = std::min(normals.size(),
                             static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(normals.size()) - 1e-9)));
  Rng rng(derive_seed(seed, "al.initial"));
  rng.shuffle(normals);
  normals.resize(want);
  std::sort(normals.begin(), normals.end());
  std::vector<LabelRecord> out;
  for (auto i : normals) out.push_back(LabelRecord{ds.row(i).id, Label::normal});
  return out;
}

// One active-learning run as an explicit state machine, so it can be driven
// synchronously by an oracle or parked while a human labels the batch.
class Session {
 public:
  Session(const BooleanDataset& ds, const GroundTruth* truth, RunConfig cfg) : ds_(ds), truth_(truth), cfg_(std::move(cfg)) {
    cfg_.validate();
    cfg_.adaen.input_dim = ds_.num_attrs();
    if (cfg_.holdout_fraction > 0.0) {
      std::vector<std::size_t> idx(ds_.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      Rng rng(derive_seed(cfg_.seed, "al.holdout"));
      rng.shuffle(idx);
      const auto n = static_cast<std::size_t>(std::floor(cfg_.holdout_fraction * static_cast<double>(ds_.size())));
      holdout_.insert(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
    }
  }

  // Initial pool from ground truth (simulated / scripted runs).
  std::vector<LabelRecord> initial_from_truth() const {
    require(truth_ != nullptr, ErrorKind::precondition, "initial pool sampling needs ground truth");
    return sample_initial_normals(ds_, *truth_, cfg_.initial_labeled_fraction, cfg_.seed, holdout_);
  }

  // Trains on the initial labels and records the iteration-0 baseline.
  void start(std::span<const LabelRecord> initial) {
    require(phase_ == Phase::training && iteration_ == 0 && metrics_.empty(), ErrorKind::state,
            "session already started");
    for (const auto& l : initial)
      require(ds_.index_of(l.process_id).has_value(), ErrorKind::precondition,
              "initial label for unknown process '" + l.process_id + "'");
    pool_ = update_pool(LabeledPool{}, initial, Matrix(0, ds_.num_attrs()), {});
    require(!pool_.normal_ids.empty(), ErrorKind::precondition, "initial pool contains no normal samples");
    auto clock = std::chrono::steady_clock::now();
    adaen::Config ac = cfg_.adaen;
    ac.seed = derive_seed(cfg_.seed, "adaen");
    model_ = adaen::build(ac);
    const auto trace = adaen::train(model_, training_matrix());
    refresh_scores();
    record(trace, clock);
  }

  // Selects the next query batch. Returns false (and enters `done`) when the
  // run is over: T iterations, budget spent, no candidates, or plateau.
  bool prepare_queries() {
    require(phase_ == Phase::training, ErrorKind::state, "prepare_queries: session is " + std::string(to_string(phase_)));
    require(!metrics_.empty(), ErrorKind::state, "prepare_queries: session not started");
    if (iteration_ >= cfg_.iterations || labels_spent_ >= cfg_.budget || plateaued()) {
      phase_ = Phase::done;
      return false;
    }
    auto cands = candidates();
    auto picked = select_queries(cands, cfg_.k, cfg_.query_mix, cfg_.budget - labels_spent_);
    if (picked.empty()) {
      phase_ = Phase::done;
      return false;
    }
    std::stable_sort(picked.begin(), picked.end(), [](const QueryCandidate& a, const QueryCandidate& b) {
      if (a.uncertainty != b.uncertainty) return a.uncertainty > b.uncertainty;
      return a.process_id < b.process_id;
    });
    pending_ = QueryBatch{iteration_ + 1, std::move(picked)};
    pending_labels_.clear();
    phase_ = Phase::awaiting_labels;
    return true;
  }

  // Accepts (possibly partial) labels for the pending batch. With
  // auto_complete the iteration completes once every pending id is labeled.
  SubmitResult submit(std::size_t iteration, std::span<const LabelRecord> labels, bool auto_complete = true) {
    SubmitResult res;
    if (phase_ != Phase::awaiting_labels || iteration != pending_.iteration) {
      if (replays_history(iteration, labels)) return res;
      res.status = SubmitResult::Status::stale;
      res.message = "iteration " + std::to_string(iteration) + " is not awaiting labels (current iteration " +
                    std::to_string(current_iteration()) + ", phase " + to_string(phase_) + ")";
      return res;
    }
    std::set<std::string> seen;
    std::unordered_set<std::string> pending_ids;
    for (const auto& q : pending_.items) pending_ids.insert(q.process_id);
    for (const auto& l : labels) {
      if (!seen.insert(l.process_id).second) res.offenders.push_back(l.process_id);
    }
    if (!res.offenders.empty()) {
      res.status = SubmitResult::Status::invalid;
      res.message = "duplicate ids in payload";
      return res;
    }
    for (const auto& l : labels)
      if (!pending_ids.contains(l.process_id)) res.offenders.push_back(l.process_id);
    if (!res.offenders.empty()) {
      res.status = SubmitResult::Status::invalid;
      res.message = "ids not in the pending batch";
      return res;
    }
    for (const auto& l : labels) {
      auto it = pending_labels_.find(l.process_id);
      if (it != pending_labels_.end() && it->second != l.label) res.offenders.push_back(l.process_id);
    }
    if (!res.offenders.empty()) {
      res.status = SubmitResult::Status::conflict;
      res.message = "ids already labeled differently in this iteration";
      return res;
    }
    for (const auto& l : labels)
      if (pending_labels_.emplace(l.process_id, l.label).second) ++res.accepted;
    if (auto_complete && batch_complete()) complete_pending();
    return res;
  }

  bool batch_complete() const noexcept {
    return phase_ == Phase::awaiting_labels && pending_labels_.size() == pending_.size();
  }

  // Completes the iteration from the labels gathered by submit().
  void complete_pending() {
    require(batch_complete(), ErrorKind::state, "complete_pending: batch not fully labeled");
    std::vector<LabelRecord> full;
    for (const auto& q : pending_.items) full.push_back(LabelRecord{q.process_id, pending_labels_.at(q.process_id)});
    complete_iteration(full);
  }

  // Applies a full label set for the pending batch: GAN augmentation,
  // retraining, re-ranking and the metrics record.
  void complete_iteration(std::span<const LabelRecord> labels) {
    require(phase_ == Phase::awaiting_labels, ErrorKind::state, "complete_iteration: no pending batch");
    require(labels.size() == pending_.size(), ErrorKind::state, "complete_iteration: batch not fully labeled");
    auto clock = std::chrono::steady_clock::now();
    phase_ = Phase::training;
    const std::size_t t = pending_.iteration;

    std::size_t new_normals = 0;
    for (const auto& l : labels) new_normals += l.label == Label::normal ? 1 : 0;
    LabeledPool next = update_pool(pool_, labels, Matrix(0, ds_.num_attrs()), {});

    Matrix synth(0, ds_.num_attrs());
    std::vector<std::string> synth_ids;
    const auto n_synth = static_cast<std::size_t>(std::ceil(cfg_.rho * static_cast<double>(new_normals) - 1e-9));
    if (n_synth > 0) {
      const Matrix real = dense_of(next.normal_ids);
      if (real.rows() < 2) {
        logger().info("iteration {}: GAN augmentation skipped ({} labeled normals)", t, real.rows());
      } else {
        ganaug::Config gc = cfg_.gan;
        gc.seed = derive_seed(cfg_.seed, "gan", t);
        const auto gan = ganaug::train_gan(real, gc);
        synth = ganaug::generate(gan, n_synth, derive_seed(cfg_.seed, "gan.sample", t));
        for (std::size_t i = 0; i < synth.rows(); ++i)
          synth_ids.push_back("synth:" + std::to_string(t) + ":" + std::to_string(i));
      }
    }
    pool_ = update_pool(std::move(next), {}, synth, synth_ids);
    labels_spent_ += labels.size();
    history_.emplace(t, std::vector<LabelRecord>(labels.begin(), labels.end()));
    iteration_ = t;
    pending_ = QueryBatch{};
    pending_labels_.clear();

    if (!cfg_.warm_start) {
      adaen::Config ac = model_.config;
      model_ = adaen::build(ac);
    }
    const auto trace = adaen::train(model_, training_matrix());
    refresh_scores();
    record(trace, clock);
  }

  // --- read access -------------------------------------------------------

  Phase phase() const noexcept { return phase_; }
  // Iteration currently being labeled, or the last completed one.
  std::size_t current_iteration() const noexcept {
    return phase_ == Phase::awaiting_labels ? pending_.iteration : iteration_;
  }
  std::size_t completed_iterations() const noexcept { return iteration_; }
  std::size_t labels_spent() const noexcept { return labels_spent_; }
  std::size_t budget_remaining() const noexcept { return cfg_.budget - std::min(cfg_.budget, labels_spent_); }
  const QueryBatch& pending() const noexcept { return pending_; }
  const std::map<std::string, Label>& pending_labels() const noexcept { return pending_labels_; }
  const LabeledPool& pool() const noexcept { return pool_; }
  const RunMetrics& metrics() const noexcept { return metrics_; }
  const adaen::Model& model() const noexcept { return model_; }
  const RunConfig& config() const noexcept { return cfg_; }
  const BooleanDataset& dataset() const noexcept { return ds_; }
  const std::vector<double>& scores() const noexcept { return scores_; }
  const std::unordered_set<std::size_t>& holdout() const noexcept { return holdout_; }

  // Ranking over every real row (synthetic rows are never ranked).
  ranking::RankedList ranking() const {
    std::vector<ScoredProcess> sp;
    sp.reserve(ds_.size());
    for (std::size_t i = 0; i < ds_.size(); ++i) sp.push_back(ScoredProcess{ds_.row(i).id, scores_[i]});
    return ranking::rank(sp);
  }

  // --- checkpoint --------------------------------------------------------

  json checkpoint() const {
    json hist = json::object();
    for (const auto& [t, ls] : history_) hist[std::to_string(t)] = labels_to_json(ls);
    json pending_items = json::array();
    for (const auto& q : pending_.items)
      pending_items.push_back(json{{"process_id", q.process_id}, {"error", q.error}, {"uncertainty", q.uncertainty},
                                   {"rank", q.rank}});
    json partial = json::object();
    for (const auto& [id, l] : pending_labels_) partial[id] = to_string(l);
    json metrics = json::array();
    for (const auto& r : metrics_) metrics.push_back(record_to_json(r));
    return json{{"format", "flagrank-session"},
                {"version", 1},
                {"config", config_to_json(cfg_)},
                {"phase", to_string(phase_)},
                {"iteration", iteration_},
                {"labels_spent", labels_spent_},
                {"pool",
                 {{"normal", pool_.normal_ids},
                  {"anomalous", pool_.anomalous_ids},
                  {"synthetic_ids", pool_.synthetic_ids},
                  {"synthetic_rows", matrix_to_json(pool_.synthetic_rows)}}},
                {"history", hist},
                {"pending", {{"iteration", pending_.iteration}, {"items", pending_items}}},
                {"pending_labels", partial},
                {"metrics", metrics},
                {"model", adaen::to_json(model_)}};
  }

  static Session restore(const BooleanDataset& ds, const GroundTruth* truth, const json& j) {
    require(j.value("format", "") == "flagrank-session" && j.value("version", 0) == 1, ErrorKind::format,
            "not a version-1 session checkpoint");
    try {
      const RunConfig cfg = config_from_json(j.at("config"));
      require(cfg.adaen.input_dim == ds.num_attrs(), ErrorKind::invalid_shape,
              "checkpoint was made for a dataset with a different attribute count");
      Session s(ds, truth, cfg);
      const auto phase = j.at("phase").get<std::string>();
      s.phase_ = phase == "awaiting_labels" ? Phase::awaiting_labels : phase == "done" ? Phase::done : Phase::training;
      s.iteration_ = j.at("iteration").get<std::size_t>();
      s.labels_spent_ = j.at("labels_spent").get<std::size_t>();
      const auto& p = j.at("pool");
      s.pool_.normal_ids = p.at("normal").get<std::set<std::string>>();
      s.pool_.anomalous_ids = p.at("anomalous").get<std::set<std::string>>();
      s.pool_.synthetic_ids = p.at("synthetic_ids").get<std::vector<std::string>>();
      s.pool_.synthetic_rows = matrix_from_json(p.at("synthetic_rows"));
      for (const auto& [t, ls] : j.at("history").items()) s.history_.emplace(std::stoul(t), labels_from_json(ls));
      s.pending_.iteration = j.at("pending").at("iteration").get<std::size_t>();
      for (const auto& q : j.at("pending").at("items"))
        s.pending_.items.push_back(QueryCandidate{q.at("process_id").get<std::string>(), q.at("error").get<double>(),
                                                  q.at("uncertainty").get<double>(), q.at("rank").get<std::size_t>()});
      for (const auto& [id, l] : j.at("pending_labels").items()) {
        auto parsed = parse_label(l.get<std::string>());
        require(parsed.has_value(), ErrorKind::format, "checkpoint: bad pending label");
        s.pending_labels_.emplace(id, *parsed);
      }
      for (const auto& r : j.at("metrics")) s.metrics_.push_back(record_from_json(r));
      s.model_ = adaen::from_json(j.at("model"));
      s.refresh_scores();
      return s;
    } catch (const json::exception& e) {
      throw Error(ErrorKind::format, std::string("session checkpoint: ") + e.what());
    }
  }

  static json config_to_json(const RunConfig& c) {
    return json{{"iterations", c.iterations},
                {"budget", c.budget},
                {"k", c.k},
                {"query_mix", c.query_mix},
                {"initial_labeled_fraction", c.initial_labeled_fraction},
                {"percentile", c.percentile},
                {"rho", c.rho},
                {"noise", c.noise},
                {"holdout_fraction", c.holdout_fraction},
                {"warm_start", c.warm_start},
                {"plateau_stop", c.plateau_stop},
                {"plateau_window", c.plateau_window},
                {"plateau_delta", c.plateau_delta},
                {"adaen", adaen::config_to_json(c.adaen)},
                {"gan",
                 {{"noise_dim", c.gan.noise_dim},
                  {"hidden", c.gan.hidden},
                  {"lr", c.gan.lr},
                  {"batch", c.gan.batch},
                  {"epochs", c.gan.epochs},
                  {"beta1", c.gan.beta1},
                  {"seed", c.gan.seed}}},
                {"seed", c.seed}};
  }

  static RunConfig config_from_json(const json& j) {
    RunConfig c;
    c.iterations = j.at("iterations").get<std::size_t>();
    c.budget = j.at("budget").get<std::size_t>();
    c.k = j.at("k").get<std::size_t>();
    c.query_mix = j.at("query_mix").get<double>();
    c.initial_labeled_fraction = j.at("initial_labeled_fraction").get<double>();
    c.percentile = j.at("percentile").get<double>();
    c.rho = j.at("rho").get<double>();
    c.noise = j.at("noise").get<double>();
    c.holdout_fraction = j.at("holdout_fraction").get<double>();
    c.warm_start = j.at("warm_start").get<bool>();
    c.plateau_stop = j.at("plateau_stop").get<bool>();
    c.plateau_window = j.at("plateau_window").get<std::size_t>();
    c.plateau_delta = j.at("plateau_delta").get<double>();
    c.adaen = adaen::config_from_json(j.at("adaen"));
    const auto& g = j.at("gan");
    c.gan.noise_dim = g.at("noise_dim").get<std::size_t>();
    c.gan.hidden = g.at("hidden").get<std::size_t>();
    c.gan.lr = g.at("lr").get<double>();
    c.gan.batch = g.at("batch").get<std::size_t>();
    c.gan.epochs = g.at("epochs").get<std::size_t>();
    c.gan.beta1 = g.at("beta1").get<double>();
    c.gan.seed = g.at("seed").get<std::uint64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }

 private:
  static json labels_to_json(const std::vector<LabelRecord>& ls) {
    json arr = json::array();
    for (const auto& l : ls) arr.push_back(json{{"process_id", l.process_id}, {"label", to_string(l.label)}});
    return arr;
  }

  static std::vector<LabelRecord> labels_from_json(const json& arr) {
    std::vector<LabelRecord> out;
    for (const auto& l : arr) {
      auto parsed = parse_label(l.at("label").get<std::string>());
      require(parsed.has_value(), ErrorKind::format, "checkpoint: bad label");
      out.push_back(LabelRecord{l.at("process_id").get<std::string>(), *parsed});
    }
    return out;
  }

  // A payload for an already completed iteration whose labels all match what
  // was recorded is an idempotent replay.
  bool replays_history(std::size_t iteration, std::span<const LabelRecord> labels) const {
    auto it = history_.find(iteration);
    if (it == history_.end() || labels.empty()) return false;
    std::unordered_map<std::string, Label> rec;
    for (const auto& l : it->second) rec.emplace(l.process_id, l.label);
    for (const auto& l : labels) {
      auto r = rec.find(l.process_id);
      if (r == rec.end() || r->second != l.label) return false;
    }
    return true;
  }

  Matrix dense_of(const std::set<std::string>& ids) const {
    std::vector<std::size_t> idx;
    idx.reserve(ids.size());
    for (const auto& id : ids) idx.push_back(*ds_.index_of(id));
    std::sort(idx.begin(), idx.end());
    return ds_.dense(idx);
  }

  // Labeled normal rows (dataset order) followed by synthetic rows.
  Matrix training_matrix() const {
    const Matrix real = dense_of(pool_.normal_ids);
    const Matrix* parts[] = {&real, &pool_.synthetic_rows};
    return vstack(parts, ds_.num_attrs());
  }

  std::vector<QueryCandidate> candidates() const {
    std::vector<std::size_t> idx;
    std::vector<double> errs;
    for (std::size_t i = 0; i < ds_.size(); ++i) {
      if (holdout_.contains(i) || pool_.is_labeled(ds_.row(i).id)) continue;
      idx.push_back(i);
      errs.push_back(scores_[i]);
    }
    if (idx.empty()) return {};
    const double tau = adaen::calibrate_threshold(errs, cfg_.percentile);
    const auto u = estimate_uncertainty(errs, tau);
    std::unordered_map<std::string_view, std::size_t> rank_of;
    const auto ranked = ranking();
    for (const auto& e : ranked) rank_of.emplace(e.process_id, e.rank);
    std::vector<QueryCandidate> out;
    out.reserve(idx.size());
    for (std::size_t c = 0; c < idx.size(); ++c) {
      const auto& id = ds_.row(idx[c]).id;
      out.push_back(QueryCandidate{id, errs[c], u[c], rank_of.at(id)});
    }
    return out;
  }

  void refresh_scores() {
    const auto sp = adaen::anomaly_scores(model_, ds_);
    scores_.resize(sp.size());
    for (std::size_t i = 0; i < sp.size(); ++i) scores_[i] = sp[i].error;
  }

  // Threshold over unlabeled, non-held-out rows (all rows when none remain).
  double current_threshold() const {
    std::vector<double> errs;
    for (std::size_t i = 0; i < ds_.size(); ++i)
      if (!holdout_.contains(i) && !pool_.is_labeled(ds_.row(i).id)) errs.push_back(scores_[i]);
    if (errs.empty()) errs = scores_;
    if (errs.empty()) return 0.0;
    return adaen::calibrate_threshold(errs, cfg_.percentile);
  }

  std::optional<double> evaluate_ndcg() const {
    if (!truth_) return std::nullopt;
    ranking::RankedList ranked;
    if (holdout_.empty()) {
      ranked = ranking();
    } else {
      std::vector<ScoredProcess> sp;
      for (auto i : holdout_) sp.push_back(ScoredProcess{ds_.row(i).id, scores_[i]});
      ranked = ranking::rank(sp);
    }
    try {
      return ranking::ndcg(ranked, *truth_);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::undefined_metric) throw;
      logger().warn("iteration {}: {}", iteration_, e.what());
      return std::nullopt;
    }
  }

  void record(const adaen::LossTrace& trace, std::chrono::steady_clock::time_point started) {
    IterationRecord r;
    r.iteration = iteration_;
    r.ndcg = evaluate_ndcg();
    r.threshold = current_threshold();
    r.labels_spent = labels_spent_;
    r.pool_normal = pool_.normal_ids.size();
    r.pool_anomalous = pool_.anomalous_ids.size();
    r.pool_synthetic = pool_.synthetic_ids.size();
    if (!trace.empty()) {
      double sum = 0.0;
      for (const auto& e : trace) sum += e.total;
      r.mean_loss = sum / static_cast<double>(trace.size());
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    metrics_.push_back(r);
    logger().info("iteration {}: ndcg={} threshold={:.6g} labels={}", r.iteration,
                  r.ndcg ? std::to_string(*r.ndcg) : std::string("n/a"), r.threshold, r.labels_spent);
  }

  // nDCG moved less than plateau_delta over the last plateau_window records.
  bool plateaued() const {
    if (!cfg_.plateau_stop) return false;
    const auto series = ndcg_series(metrics_);
    if (series.size() < cfg_.plateau_window + 1) return false;
    const auto tail = std::span(series).last(cfg_.plateau_window + 1);
    const auto [mn, mx] = std::minmax_element(tail.begin(), tail.end());
    return *mx - *mn < cfg_.plateau_delta;
  }

  const BooleanDataset& ds_;
  const GroundTruth* truth_ = nullptr;
  RunConfig cfg_;
  std::unordered_set<std::size_t> holdout_;

  Phase phase_ = Phase::training;
  std::size_t iteration_ = 0;
  std::size_t labels_spent_ = 0;
  LabeledPool pool_;
  QueryBatch pending_;
  std::map<std::string, Label> pending_labels_;
  std::map<std::size_t, std::vector<LabelRecord>> history_;
  RunMetrics metrics_;
  adaen::Model model_;
  std::vector<double> scores_;
};

struct RunResult {
  ranking::RankedList ranking;
  RunMetrics metrics;
  adaen::Model model;
  LabeledPool pool;
  json checkpoint;
};

// Runs the loop to completion against a synchronous oracle. The initial pool
// is sampled from ground truth when `initial` is empty.
inline RunResult run_loop(const BooleanDataset& ds, const GroundTruth* truth, Oracle& oracle, const RunConfig& cfg,
                          std::vector<LabelRecord> initial = {}) {
  Session s(ds, truth, cfg);
  if (initial.empty()) initial = s.initial_from_truth();
  s.start(initial);
  while (s.prepare_queries()) {
    try {
      s.complete_iteration(resolve_labels(s.pending(), oracle));
    } catch (const Error& e) {
      throw Error(e.kind(), "iteration " + std::to_string(s.current_iteration()) + ": " + e.what());
    }
  }
  return RunResult{s.ranking(), s.metrics(), s.model(), s.pool(), s.checkpoint()};
}

}  // namespace flagrank::al
