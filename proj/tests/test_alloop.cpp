#include <gtest/gtest.h>

#include <sstream>

#include "flagrank/alloop.hpp"

using namespace flagrank;
using namespace flagrank::al;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected flagrank::Error";
  return ErrorKind::state;
}

std::string pid(int i) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "p%02d", i);
  return buf;
}

// Candidates p01..p10 with error i and uncertainty around tau.
std::vector<QueryCandidate> ladder(double tau) {
  std::vector<double> e;
  for (int i = 1; i <= 10; ++i) e.push_back(i);
  const auto u = estimate_uncertainty(e, tau);
  std::vector<QueryCandidate> out;
  for (int i = 1; i <= 10; ++i) out.push_back(QueryCandidate{pid(i), e[i - 1], u[i - 1], std::size_t(11 - i)});
  return out;
}

std::vector<std::string> ids_of(const std::vector<QueryCandidate>& qs) {
  std::vector<std::string> out;
  for (const auto& q : qs) out.push_back(q.process_id);
  return out;
}

// Small, fast configuration on a planted dataset.
RunConfig quick_config(std::size_t iterations, std::size_t budget, std::size_t k) {
  RunConfig c;
  c.iterations = iterations;
  c.budget = budget;
  c.k = k;
  c.initial_labeled_fraction = 0.1;
  c.adaen.epochs_per_iteration = 3;
  c.adaen.batch = 32;
  c.gan.epochs = 5;
  c.seed = 3;
  return c;
}

struct Planted {
  SyntheticData syn = synth_planted(150, 4, 16, 21);
};

std::string jsonl(const RunMetrics& m) {
  std::ostringstream out;
  write_metrics_jsonl(out, m);
  return out.str();
}

}  // namespace

TEST(Uncertainty, PeaksAtThresholdAndDecaysWithDistance) {
  std::vector<double> e;
  for (int i = 1; i <= 10; ++i) e.push_back(i);
  EXPECT_EQ(mad_scale(e), 2.5);
  const auto u = estimate_uncertainty(e, 8.0);
  EXPECT_EQ(u[7], 0.5);
  EXPECT_NEAR(u[9], 1.0 / (1.0 + std::exp(0.8)), 1e-15);
  EXPECT_EQ(u[6], u[8]);
  for (int i = 0; i < 7; ++i) EXPECT_LT(u[i], u[i + 1]);
  for (double v : u) {
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 0.5);
  }
}

TEST(Uncertainty, ConstantErrorsUseFlooredScale) {
  const std::vector<double> flat(5, 2.0);
  EXPECT_EQ(mad_scale(flat), 1e-12);
  for (double v : estimate_uncertainty(flat, 2.0)) EXPECT_EQ(v, 0.5);
  EXPECT_EQ(kind_of([] { estimate_uncertainty(std::vector<double>{}, 0.0); }), ErrorKind::precondition);
}

TEST(SelectQueries, MixedBatch) {
  const auto c = ladder(8.0);
  EXPECT_EQ(ids_of(select_queries(c, 4, 0.5, 100)), (std::vector<std::string>{"p08", "p07", "p10", "p09"}));
  EXPECT_EQ(ids_of(select_queries(c, 4, 1.0, 100)), (std::vector<std::string>{"p08", "p07", "p09", "p06"}));
  EXPECT_EQ(ids_of(select_queries(c, 4, 0.0, 100)), (std::vector<std::string>{"p10", "p09", "p08", "p07"}));
}

TEST(SelectQueries, DuplicatePickRefilledFromUncertainty) {
  const auto c = ladder(10.0);
  EXPECT_EQ(ids_of(select_queries(c, 3, 0.5, 100)), (std::vector<std::string>{"p10", "p09", "p08"}));
}

TEST(SelectQueries, CappedByBudgetAndCandidates) {
  const auto c = ladder(8.0);
  EXPECT_EQ(select_queries(c, 4, 0.5, 1).size(), 1u);
  EXPECT_TRUE(select_queries(c, 4, 0.5, 0).empty());
  EXPECT_EQ(select_queries(c, 50, 0.5, 100).size(), 10u);
  EXPECT_TRUE(select_queries({}, 4, 0.5, 100).empty());
  EXPECT_EQ(kind_of([&] { select_queries(c, 4, 1.5, 100); }), ErrorKind::precondition);
}

TEST(SelectQueries, NoDuplicatesForAnyMix) {
  const auto c = ladder(5.0);
  for (double mix : {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0})
    for (std::size_t k = 1; k <= 10; ++k) {
      const auto ids = ids_of(select_queries(c, k, mix, 100));
      EXPECT_EQ(ids.size(), k);
      EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), k);
    }
}

TEST(Oracle, SimulatedNoiseExtremes) {
  const GroundTruth truth{{"p02", "p05"}};
  QueryBatch batch{1, ladder(8.0)};
  SimulatedOracle exact(truth, 0.0, 1);
  for (const auto& l : exact.label(batch))
    EXPECT_EQ(l.label == Label::anomalous, truth.contains(l.process_id)) << l.process_id;
  SimulatedOracle liar(truth, 1.0, 1);
  for (const auto& l : liar.label(batch)) EXPECT_NE(l.label == Label::anomalous, truth.contains(l.process_id));

  SimulatedOracle a(truth, 0.4, 9), b(truth, 0.4, 9);
  const auto la = a.label(batch), lb = b.label(batch);
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(la[i].label, lb[i].label);
  EXPECT_THROW(SimulatedOracle(truth, 1.5, 1), Error);
}

TEST(Oracle, LabelFileAndScript) {
  std::istringstream in("# labels\np01\np02 anomalous\n\np03 normal\n");
  const auto ls = parse_label_file(in);
  ASSERT_EQ(ls.size(), 3u);
  EXPECT_EQ(ls[0].label, Label::normal);
  EXPECT_EQ(ls[1].label, Label::anomalous);

  std::istringstream dup("p01\np01 anomalous\n");
  EXPECT_EQ(kind_of([&] { parse_label_file(dup); }), ErrorKind::duplicate);
  std::istringstream bad("p01 maybe\n");
  EXPECT_EQ(kind_of([&] { parse_label_file(bad); }), ErrorKind::format);

  ScriptedOracle oracle(ls);
  QueryBatch batch{1, {QueryCandidate{"p02", 1.0, 0.1, 1}, QueryCandidate{"p04", 1.0, 0.1, 2}}};
  try {
    oracle.label(batch);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::precondition);
    EXPECT_NE(std::string(e.what()).find("p04"), std::string::npos);
  }
}

TEST(Pool, ConflictsRejected) {
  const LabelRecord a{"a", Label::normal}, b{"b", Label::anomalous};
  const std::vector<LabelRecord> first{a, b};
  const auto pool = update_pool(LabeledPool{}, first, Matrix(0, 3), {});
  EXPECT_EQ(pool.normal_ids.size(), 1u);
  EXPECT_EQ(pool.anomalous_ids.size(), 1u);
  EXPECT_TRUE(pool.is_labeled("b"));

  const std::vector<LabelRecord> relabel{{"a", Label::anomalous}};
  EXPECT_EQ(kind_of([&] { update_pool(pool, relabel, Matrix(0, 3), {}); }), ErrorKind::conflict);
  const std::vector<LabelRecord> twice{{"c", Label::normal}, {"c", Label::normal}};
  EXPECT_EQ(kind_of([&] { update_pool(pool, twice, Matrix(0, 3), {}); }), ErrorKind::conflict);

  const std::vector<std::string> sid{"synth:1:0"};
  const auto grown = update_pool(pool, {}, Matrix(1, 3, 1.0), sid);
  EXPECT_EQ(grown.synthetic_rows.rows(), 1u);
  EXPECT_EQ(grown.size(), 3u);
  EXPECT_EQ(kind_of([&] { update_pool(pool, {}, Matrix(2, 3), sid); }), ErrorKind::invalid_shape);
}

TEST(Metrics, RecordJsonShape) {
  IterationRecord r;
  r.iteration = 2;
  r.threshold = 0.5;
  r.labels_spent = 40;
  r.wall_seconds = 3.0;
  const auto j = record_to_json(r);
  EXPECT_FALSE(j.contains("ndcg"));
  EXPECT_FALSE(j.contains("wall_seconds"));
  EXPECT_TRUE(j.at("mean_loss").is_null());
  r.ndcg = 0.75;
  r.mean_loss = 1.25;
  const auto back = record_from_json(record_to_json(r));
  EXPECT_EQ(back.ndcg, r.ndcg);
  EXPECT_EQ(back.mean_loss, r.mean_loss);
  EXPECT_EQ(back.labels_spent, 40u);
}

TEST(Metrics, Summary) {
  RunMetrics m(4);
  m[0].ndcg = 0.2;
  m[1].ndcg = 0.8;
  m[3].ndcg = 0.5;
  const auto s = summarize(m);
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(s->count, 3u);
  EXPECT_EQ(s->max, 0.8);
  EXPECT_DOUBLE_EQ(s->mean, 0.5);
  EXPECT_EQ(s->median, 0.5);
  EXPECT_FALSE(summarize(RunMetrics(2)).has_value());
}

TEST(InitialPool, CeilOfFractionOfNormals) {
  const Planted p;
  const auto init = sample_initial_normals(p.syn.dataset, p.syn.truth, 0.05, 1);
  EXPECT_EQ(init.size(), 8u);  // ceil(0.05 * 150)
  for (const auto& l : init) EXPECT_FALSE(p.syn.truth.contains(l.process_id));
  EXPECT_EQ(init.size(), sample_initial_normals(p.syn.dataset, p.syn.truth, 0.05, 1).size());
}

TEST(Loop, ZeroBudgetEmitsOnlyBaseline) {
  const Planted p;
  auto cfg = quick_config(5, 0, 10);
  SimulatedOracle oracle(p.syn.truth, 0.0, cfg.seed);
  const auto r = run_loop(p.syn.dataset, &p.syn.truth, oracle, cfg);
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_EQ(r.metrics[0].iteration, 0u);
  EXPECT_EQ(r.metrics[0].labels_spent, 0u);

  // Same model trained directly on the initial pool.
  Session s(p.syn.dataset, &p.syn.truth, cfg);
  adaen::Config ac = cfg.adaen;
  ac.input_dim = 16;
  ac.seed = derive_seed(cfg.seed, "adaen");
  auto direct = adaen::build(ac);
  std::vector<std::size_t> idx;
  for (const auto& l : s.initial_from_truth()) idx.push_back(*p.syn.dataset.index_of(l.process_id));
  std::sort(idx.begin(), idx.end());
  adaen::train(direct, p.syn.dataset.dense(idx));
  EXPECT_EQ(r.model, direct);
  EXPECT_EQ(*r.metrics[0].ndcg, ranking::ndcg(ranking::rank(adaen::anomaly_scores(direct, p.syn.dataset)), p.syn.truth));
}

TEST(Loop, DeterministicAndWithinBudget) {
  const Planted p;
  auto cfg = quick_config(3, 25, 10);
  SimulatedOracle o1(p.syn.truth, 0.1, cfg.seed), o2(p.syn.truth, 0.1, cfg.seed);
  const auto a = run_loop(p.syn.dataset, &p.syn.truth, o1, cfg);
  const auto b = run_loop(p.syn.dataset, &p.syn.truth, o2, cfg);
  EXPECT_EQ(jsonl(a.metrics), jsonl(b.metrics));
  EXPECT_EQ(a.ranking, b.ranking);
  ASSERT_EQ(a.metrics.size(), 4u);
  EXPECT_EQ(a.metrics.back().labels_spent, 25u);
  for (const auto& m : a.metrics) EXPECT_LE(m.labels_spent, 25u);
  EXPECT_EQ(a.metrics[3].labels_spent - a.metrics[2].labels_spent, 5u);
  EXPECT_EQ(a.pool.synthetic_ids.size(), a.metrics.back().pool_synthetic);
  EXPECT_EQ(a.pool.synthetic_ids.size() > 0, true);
  EXPECT_EQ(a.pool.synthetic_ids.front().rfind("synth:1:", 0), 0u);
}

TEST(Loop, HoldoutNeverQueried) {
  const Planted p;
  auto cfg = quick_config(2, 20, 10);
  cfg.holdout_fraction = 0.3;
  Session s(p.syn.dataset, &p.syn.truth, cfg);
  EXPECT_EQ(s.holdout().size(), 46u);
  s.start(s.initial_from_truth());
  for (const auto& l : s.pool().normal_ids) EXPECT_FALSE(s.holdout().contains(*p.syn.dataset.index_of(l)));
  while (s.prepare_queries()) {
    for (const auto& q : s.pending().items) EXPECT_FALSE(s.holdout().contains(*p.syn.dataset.index_of(q.process_id)));
    SimulatedOracle o(p.syn.truth);
    s.complete_iteration(resolve_labels(s.pending(), o));
  }
}

TEST(Loop, WithoutTruthHasNoNdcg) {
  const Planted p;
  auto cfg = quick_config(1, 5, 5);
  Session s(p.syn.dataset, nullptr, cfg);
  EXPECT_THROW(s.initial_from_truth(), Error);
  s.start(sample_initial_normals(p.syn.dataset, p.syn.truth, 0.1, 1));
  EXPECT_FALSE(s.metrics()[0].ndcg.has_value());
  EXPECT_TRUE(s.metrics()[0].mean_loss.has_value());
}

TEST(Session, StartPreconditions) {
  const Planted p;
  Session s(p.syn.dataset, &p.syn.truth, quick_config(1, 5, 5));
  const std::vector<LabelRecord> unknown{{"nope", Label::normal}};
  EXPECT_EQ(kind_of([&] { s.start(unknown); }), ErrorKind::precondition);
  const std::vector<LabelRecord> only_attack{{*p.syn.truth.attack_ids.begin(), Label::anomalous}};
  EXPECT_EQ(kind_of([&] { s.start(only_attack); }), ErrorKind::precondition);
  EXPECT_EQ(kind_of([&] { s.prepare_queries(); }), ErrorKind::state);
  EXPECT_THROW(Session(p.syn.dataset, &p.syn.truth, quick_config(1, 5, 0)), Error);
}

TEST(Session, SubmitSemantics) {
  const Planted p;
  Session s(p.syn.dataset, &p.syn.truth, quick_config(3, 30, 4));
  s.start(s.initial_from_truth());
  ASSERT_TRUE(s.prepare_queries());
  EXPECT_EQ(s.phase(), Phase::awaiting_labels);
  EXPECT_EQ(s.current_iteration(), 1u);
  const auto items = s.pending().items;
  ASSERT_EQ(items.size(), 4u);
  for (std::size_t i = 1; i < items.size(); ++i) EXPECT_GE(items[i - 1].uncertainty, items[i].uncertainty);

  EXPECT_EQ(s.submit(2, std::vector<LabelRecord>{{items[0].process_id, Label::normal}}).status,
            SubmitResult::Status::stale);
  const auto not_pending = s.submit(1, std::vector<LabelRecord>{{"zzz", Label::normal}});
  EXPECT_EQ(not_pending.status, SubmitResult::Status::invalid);
  EXPECT_EQ(not_pending.offenders, std::vector<std::string>{"zzz"});
  const std::vector<LabelRecord> dup{{items[0].process_id, Label::normal}, {items[0].process_id, Label::normal}};
  EXPECT_EQ(s.submit(1, dup).status, SubmitResult::Status::invalid);

  const std::vector<LabelRecord> part{{items[0].process_id, Label::normal}, {items[1].process_id, Label::anomalous}};
  auto r = s.submit(1, part);
  EXPECT_EQ(r.status, SubmitResult::Status::accepted);
  EXPECT_EQ(r.accepted, 2u);
  EXPECT_EQ(s.submit(1, part).accepted, 0u);
  const std::vector<LabelRecord> flip{{items[0].process_id, Label::anomalous}};
  const auto c = s.submit(1, flip);
  EXPECT_EQ(c.status, SubmitResult::Status::conflict);
  EXPECT_EQ(c.offenders, std::vector<std::string>{items[0].process_id});
  EXPECT_EQ(s.phase(), Phase::awaiting_labels);
  EXPECT_EQ(s.labels_spent(), 0u);

  const std::vector<LabelRecord> rest{{items[2].process_id, Label::normal}, {items[3].process_id, Label::normal}};
  r = s.submit(1, rest);
  EXPECT_EQ(r.accepted, 2u);
  EXPECT_EQ(s.completed_iterations(), 1u);
  EXPECT_EQ(s.labels_spent(), 4u);
  EXPECT_EQ(s.phase(), Phase::training);
  EXPECT_EQ(s.metrics().size(), 2u);

  // Replaying a completed iteration is a no-op; a changed replay is stale.
  const auto replay = s.submit(1, part);
  EXPECT_EQ(replay.status, SubmitResult::Status::accepted);
  EXPECT_EQ(replay.accepted, 0u);
  EXPECT_EQ(s.submit(1, flip).status, SubmitResult::Status::stale);
}

TEST(Session, ManualCompletion) {
  const Planted p;
  Session s(p.syn.dataset, &p.syn.truth, quick_config(2, 30, 3));
  s.start(s.initial_from_truth());
  ASSERT_TRUE(s.prepare_queries());
  std::vector<LabelRecord> all;
  for (const auto& q : s.pending().items) all.push_back({q.process_id, Label::normal});
  EXPECT_EQ(s.submit(1, all, false).accepted, 3u);
  EXPECT_TRUE(s.batch_complete());
  EXPECT_EQ(s.phase(), Phase::awaiting_labels);
  s.complete_pending();
  EXPECT_EQ(s.completed_iterations(), 1u);
  EXPECT_EQ(kind_of([&] { s.complete_pending(); }), ErrorKind::state);
}

TEST(Session, StopsAtIterationLimit) {
  const Planted p;
  Session s(p.syn.dataset, &p.syn.truth, quick_config(1, 30, 3));
  s.start(s.initial_from_truth());
  SimulatedOracle o(p.syn.truth);
  ASSERT_TRUE(s.prepare_queries());
  s.complete_iteration(resolve_labels(s.pending(), o));
  EXPECT_FALSE(s.prepare_queries());
  EXPECT_EQ(s.phase(), Phase::done);
  EXPECT_EQ(s.budget_remaining(), 27u);
}

TEST(Session, CheckpointRestoreContinuesIdentically) {
  const Planted p;
  const auto cfg = quick_config(3, 30, 4);
  SimulatedOracle oracle(p.syn.truth);

  Session straight(p.syn.dataset, &p.syn.truth, cfg);
  straight.start(straight.initial_from_truth());
  while (straight.prepare_queries()) straight.complete_iteration(resolve_labels(straight.pending(), oracle));

  Session first(p.syn.dataset, &p.syn.truth, cfg);
  first.start(first.initial_from_truth());
  ASSERT_TRUE(first.prepare_queries());
  first.complete_iteration(resolve_labels(first.pending(), oracle));
  ASSERT_TRUE(first.prepare_queries());
  const auto labels = resolve_labels(first.pending(), oracle);
  first.submit(2, std::span(labels).first(1));
  const json saved = json::parse(first.checkpoint().dump());

  Session resumed = Session::restore(p.syn.dataset, &p.syn.truth, saved);
  EXPECT_EQ(resumed.phase(), Phase::awaiting_labels);
  EXPECT_EQ(resumed.current_iteration(), 2u);
  EXPECT_EQ(resumed.pending_labels().size(), 1u);
  EXPECT_EQ(resumed.submit(2, labels).accepted, labels.size() - 1);
  while (resumed.prepare_queries()) resumed.complete_iteration(resolve_labels(resumed.pending(), oracle));

  EXPECT_EQ(jsonl(resumed.metrics()), jsonl(straight.metrics()));
  EXPECT_EQ(resumed.ranking(), straight.ranking());
  EXPECT_EQ(resumed.model(), straight.model());

  EXPECT_EQ(kind_of([&] { Session::restore(p.syn.dataset, &p.syn.truth, json{{"format", "x"}}); }), ErrorKind::format);
  const auto narrow = synth_planted(20, 1, 12, 1);
  EXPECT_EQ(kind_of([&] { Session::restore(narrow.dataset, &narrow.truth, saved); }), ErrorKind::invalid_shape);
}

TEST(Session, ColdStartRebuildsModel) {
  const Planted p;
  auto cfg = quick_config(1, 10, 5);
  cfg.warm_start = false;
  Session s(p.syn.dataset, &p.syn.truth, cfg);
  s.start(s.initial_from_truth());
  SimulatedOracle o(p.syn.truth);
  ASSERT_TRUE(s.prepare_queries());
  s.complete_iteration(resolve_labels(s.pending(), o));
  EXPECT_EQ(s.model().epochs_done, cfg.adaen.epochs_per_iteration);
}

TEST(Session, PlateauStop) {
  const Planted p;
  auto cfg = quick_config(10, 100, 5);
  cfg.plateau_stop = true;
  cfg.plateau_window = 1;
  cfg.plateau_delta = 2.0;  // any two records count as flat
  Session s(p.syn.dataset, &p.syn.truth, cfg);
  s.start(s.initial_from_truth());
  SimulatedOracle o(p.syn.truth);
  ASSERT_TRUE(s.prepare_queries());
  s.complete_iteration(resolve_labels(s.pending(), o));
  EXPECT_FALSE(s.prepare_queries());
  EXPECT_EQ(s.completed_iterations(), 1u);
}
