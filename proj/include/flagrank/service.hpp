#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "flagrank/alloop.hpp"
#include "flagrank/dataio.hpp"
#include "flagrank/error.hpp"
#include "flagrank/json_io.hpp"
#include "flagrank/log.hpp"
#include "flagrank/ranking.hpp"

// HTTP facade for interactive runs. One loop thread owns the Session; request
// handlers read published snapshots and send label submissions as messages.
namespace flagrank::service {

struct Options {
  std::string host = "127.0.0.1";
  int port = 8787;  // 0 binds an ephemeral port
  std::string checkpoint_path;  // empty disables checkpointing
  std::string static_dir;       // optional console assets mounted at /
  std::size_t top_attributes = 10;
};

struct HttpReply {
  int status = 200;
  json body;
};

// Immutable view published by the loop thread after every state change.
struct Snapshot {
  json status;
  std::optional<json> queries;  // present iff awaiting labels
  ranking::RankedList ranking;  // empty until iteration 0 completes
  json metrics = json::array();
};

class Service {
 public:
  // Fresh interactive run seeded with the given labels.
  Service(const BooleanDataset& ds, const GroundTruth* truth, al::RunConfig cfg, std::vector<al::LabelRecord> seed_labels,
          Options opts)
      : ds_(ds), opts_(std::move(opts)), seed_labels_(std::move(seed_labels)) {
    session_ = std::make_unique<al::Session>(ds, truth, std::move(cfg));
    init_common();
  }

  // Resumes a parked run from a session checkpoint.
  Service(const BooleanDataset& ds, const GroundTruth* truth, const json& checkpoint, Options opts)
      : ds_(ds), opts_(std::move(opts)), resumed_(true) {
    session_ = std::make_unique<al::Session>(al::Session::restore(ds, truth, checkpoint));
    init_common();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  ~Service() { stop(); }

  // Binds the socket and starts the loop and HTTP threads. Returns the port.
  int start() {
    require(!started_, ErrorKind::state, "service already started");
    install_routes();
    // SO_REUSEADDR only: with SO_REUSEPORT a second server would share the port.
    http_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
    });
    if (opts_.port == 0) {
      port_ = http_.bind_to_any_port(opts_.host);
      require(port_ > 0, ErrorKind::io, "cannot bind " + opts_.host + " to an ephemeral port");
    } else {
      require(http_.bind_to_port(opts_.host, opts_.port), ErrorKind::io,
              "cannot bind " + opts_.host + ":" + std::to_string(opts_.port));
      port_ = opts_.port;
    }
    started_ = true;
    loop_thread_ = std::thread([this] { loop_main(); });
    http_thread_ = std::thread([this] { http_.listen_after_bind(); });
    // stop() is a no-op until the listener runs.
    http_.wait_until_ready();
    logger().info("service listening on {}:{}", opts_.host, port_);
    return port_;
  }

  void stop() {
    if (!started_) return;
    {
      std::lock_guard lock(queue_mu_);
      stopping_ = true;
    }
    queue_cv_.notify_all();
    http_.stop();
    if (http_thread_.joinable()) http_thread_.join();
    if (loop_thread_.joinable()) loop_thread_.join();
    started_ = false;
  }

  int port() const noexcept { return port_; }

  std::shared_ptr<const Snapshot> snapshot() const {
    std::lock_guard lock(snap_mu_);
    return snapshot_;
  }

  // Blocks until the published phase equals `phase` or the timeout expires.
  bool wait_for_phase(al::Phase phase, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(snap_mu_);
    return snap_cv_.wait_for(lock, timeout, [&] {
      return snapshot_->status.at("phase").get<std::string>() == al::to_string(phase) || snapshot_->status.contains("error");
    });
  }

  // --- request handling (also usable without the HTTP layer) ---------------

  HttpReply get_status() const { return {200, snapshot()->status}; }

  HttpReply get_queries() const {
    const auto snap = snapshot();
    if (!snap->queries)
      return {409, json{{"error", "no pending query batch"}, {"phase", snap->status.at("phase")},
                        {"iteration", snap->status.at("iteration")}}};
    return {200, *snap->queries};
  }

  HttpReply get_ranking(std::optional<std::string> limit_param) const {
    const auto snap = snapshot();
    std::size_t limit = snap->ranking.size();
    if (limit_param) {
      long long n = 0;
      try {
        std::size_t used = 0;
        n = std::stoll(*limit_param, &used);
        if (used != limit_param->size()) return {422, json{{"error", "limit must be an integer"}}};
      } catch (const std::exception&) {
        return {422, json{{"error", "limit must be an integer"}}};
      }
      if (n <= 0) return {422, json{{"error", "limit must be positive"}}};
      limit = std::min(limit, static_cast<std::size_t>(n));
    }
    if (snap->ranking.empty()) return {409, json{{"error", "iteration 0 has not completed"}}};
    json items = json::array();
    for (std::size_t i = 0; i < limit; ++i) {
      const auto& e = snap->ranking[i];
      items.push_back(json{{"rank", e.rank}, {"process_id", e.process_id}, {"score", e.score}});
    }
    return {200, json{{"iteration", snap->status.at("completed_iterations")}, {"items", items}}};
  }

  HttpReply get_metrics() const { return {200, snapshot()->metrics}; }

  HttpReply post_labels(const std::string& body) {
    json payload;
    try {
      payload = json::parse(body);
    } catch (const json::exception& e) {
      return {400, json{{"error", std::string("malformed JSON: ") + e.what()}}};
    }
    if (!payload.is_object() || !payload.contains("iteration") || !payload.at("iteration").is_number_unsigned() ||
        !payload.contains("labels") || !payload.at("labels").is_array())
      return {422, json{{"error", "expected {\"iteration\": n, \"labels\": [{\"process_id\", \"label\"}]}"}}};
    const auto iteration = payload.at("iteration").get<std::size_t>();
    std::vector<al::LabelRecord> labels;
    std::vector<std::string> bad;
    for (const auto& item : payload.at("labels")) {
      if (!item.is_object() || !item.contains("process_id") || !item.at("process_id").is_string() ||
          !item.contains("label") || !item.at("label").is_string()) {
        bad.push_back(item.dump());
        continue;
      }
      const auto parsed = al::parse_label(item.at("label").get<std::string>());
      if (!parsed) {
        bad.push_back(item.at("process_id").get<std::string>());
        continue;
      }
      labels.push_back(al::LabelRecord{item.at("process_id").get<std::string>(), *parsed});
    }
    if (!bad.empty())
      return {422, json{{"error", "labels must be 'normal' or 'anomalous' with a string process_id"}, {"offenders", bad}}};

    auto done = std::make_shared<std::promise<HttpReply>>();
    auto reply = done->get_future();
    const bool queued = post([this, iteration, labels = std::move(labels), done] {
      if (failed_) {
        done->set_value({503, json{{"error", "run stopped: " + failure_}}});
        return;
      }
      try {
        done->set_value(apply_labels(iteration, labels));
      } catch (const std::exception& e) {
        done->set_value({500, json{{"error", e.what()}}});
        throw;
      }
    });
    if (!queued) return {503, json{{"error", "service is shutting down"}}};
    return reply.get();
  }

 private:
  void init_common() {
    std::vector<double> freq(ds_.num_attrs(), 0.0);
    for (const auto& r : ds_.rows())
      for (auto a : r.attrs) freq[a] += 1.0;
    attr_frequency_ = std::move(freq);
    publish();
  }

  bool post(std::function<void()> msg) {
    {
      std::lock_guard lock(queue_mu_);
      if (stopping_ || failed_) return false;
      queue_.push_back(std::move(msg));
    }
    queue_cv_.notify_all();
    return true;
  }

  // Runs on the loop thread.
  HttpReply apply_labels(std::size_t iteration, const std::vector<al::LabelRecord>& labels) {
    const auto res = session_->submit(iteration, labels, false);
    using S = al::SubmitResult::Status;
    const auto rejected = [&](int code, bool offenders) {
      json body{{"error", res.message},
                {"iteration", session_->current_iteration()},
                {"phase", al::to_string(session_->phase())}};
      if (offenders) body["offenders"] = res.offenders;
      return HttpReply{code, std::move(body)};
    };
    switch (res.status) {
      case S::stale: return rejected(409, false);
      case S::conflict: return rejected(409, true);
      case S::invalid: return rejected(422, true);
      case S::accepted: break;
    }
    if (res.accepted > 0) save_checkpoint();
    const bool complete = session_->batch_complete();
    publish(complete);
    return {200, json{{"accepted", res.accepted},
                      {"iteration", session_->current_iteration()},
                      {"phase", complete ? "training" : al::to_string(session_->phase())},
                      {"remaining", session_->phase() == al::Phase::awaiting_labels
                                        ? session_->pending().size() - session_->pending_labels().size()
                                        : 0}}};
  }

  // Drives the session until it needs labels or is done.
  void advance() {
    for (;;) {
      if (session_->batch_complete()) {
        publish(true);
        session_->complete_pending();
        continue;
      }
      if (session_->phase() != al::Phase::training) break;
      session_->prepare_queries();
      save_checkpoint();
      publish();
    }
    publish();
  }

  void loop_main() {
    try {
      if (!resumed_) {
        session_->start(seed_labels_);
        publish();
      }
      advance();
      for (;;) {
        std::function<void()> msg;
        {
          std::unique_lock lock(queue_mu_);
          queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
          if (stopping_ && queue_.empty()) return;
          msg = std::move(queue_.front());
          queue_.pop_front();
        }
        msg();
        advance();
      }
    } catch (const std::exception& e) {
      logger().error("service loop stopped: {}", e.what());
      std::deque<std::function<void()>> orphaned;
      {
        std::lock_guard lock(queue_mu_);
        failed_ = true;
        orphaned.swap(queue_);
      }
      failure_ = e.what();
      publish();
      // Queued handlers still hold promises; answering them keeps clients from hanging.
      for (auto& m : orphaned) m();
    }
  }

  void save_checkpoint() const {
    if (opts_.checkpoint_path.empty()) return;
    const std::string tmp = opts_.checkpoint_path + ".tmp";
    write_json_file(tmp, session_->checkpoint());
    std::filesystem::rename(tmp, opts_.checkpoint_path);
  }

  // Active attribute names, rarest first, capped at top_attributes.
  json attribute_names(const std::string& id) const {
    const auto idx = ds_.index_of(id);
    json out = json::array();
    if (!idx) return out;
    std::vector<std::uint32_t> attrs = ds_.row(*idx).attrs;
    std::stable_sort(attrs.begin(), attrs.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return attr_frequency_[a] < attr_frequency_[b]; });
    for (std::size_t i = 0; i < attrs.size() && i < opts_.top_attributes; ++i) out.push_back(ds_.attr_name(attrs[i]));
    return out;
  }

  // Loop thread only. `retraining` reports a fully labeled batch as training.
  void publish(bool retraining = false) {
    auto snap = std::make_shared<Snapshot>();
    const auto& s = *session_;
    const auto phase = retraining ? al::Phase::training : s.phase();
    snap->status = json{{"phase", al::to_string(phase)},
                        {"iteration", s.current_iteration()},
                        {"completed_iterations", s.completed_iterations()},
                        {"labels_spent", s.labels_spent()},
                        {"budget", s.config().budget},
                        {"budget_remaining", s.budget_remaining()},
                        {"pending", phase == al::Phase::awaiting_labels ? s.pending().size() : 0},
                        {"pending_labeled", phase == al::Phase::awaiting_labels ? s.pending_labels().size() : 0}};
    if (!failure_.empty()) snap->status["error"] = failure_;
    if (phase == al::Phase::awaiting_labels) {
      json items = json::array();
      for (const auto& q : s.pending().items) {
        json item{{"process_id", q.process_id},
                  {"score", q.error},
                  {"rank", q.rank},
                  {"uncertainty", q.uncertainty},
                  {"attributes", attribute_names(q.process_id)}};
        if (auto it = s.pending_labels().find(q.process_id); it != s.pending_labels().end())
          item["label"] = al::to_string(it->second);
        items.push_back(std::move(item));
      }
      snap->queries = json{{"iteration", s.pending().iteration}, {"items", items}};
    }
    if (!s.metrics().empty()) snap->ranking = s.ranking();
    for (const auto& r : s.metrics()) snap->metrics.push_back(al::record_to_json(r));
    {
      std::lock_guard lock(snap_mu_);
      snapshot_ = std::move(snap);
    }
    snap_cv_.notify_all();
  }

  static void send(httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  }

  void install_routes() {
    http_.Get("/api/status", [this](const httplib::Request&, httplib::Response& res) { send(res, get_status()); });
    http_.Get("/api/queries", [this](const httplib::Request&, httplib::Response& res) { send(res, get_queries()); });
    http_.Get("/api/metrics", [this](const httplib::Request&, httplib::Response& res) { send(res, get_metrics()); });
    http_.Get("/api/ranking", [this](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::string> limit;
      if (req.has_param("limit")) limit = req.get_param_value("limit");
      send(res, get_ranking(limit));
    });
    http_.Post("/api/labels",
               [this](const httplib::Request& req, httplib::Response& res) { send(res, post_labels(req.body)); });
    if (!opts_.static_dir.empty() && !http_.set_mount_point("/", opts_.static_dir))
      logger().warn("static directory '{}' not found; console assets not served", opts_.static_dir);
  }

  const BooleanDataset& ds_;
  Options opts_;
  std::vector<al::LabelRecord> seed_labels_;
  bool resumed_ = false;
  std::unique_ptr<al::Session> session_;
  std::vector<double> attr_frequency_;
  std::string failure_;

  httplib::Server http_;
  std::thread http_thread_;
  std::thread loop_thread_;
  bool started_ = false;
  int port_ = 0;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<std::function<void()>> queue_;
  bool stopping_ = false;
  bool failed_ = false;

  mutable std::mutex snap_mu_;
  mutable std::condition_variable snap_cv_;
  std::shared_ptr<const Snapshot> snapshot_;
};

}  // namespace flagrank::service
