#pragma once

// HTTP face of the engine.
//
// Pull side: JSON endpoints for the current state, the Q-table and the run
// status. Push side: an append-only event log streamed to any number of
// subscribers, who may start from any sequence number. Human feedback for the
// collaborative oracle arrives through POST /api/feedback.
//
// The engine is owned by one worker thread. HTTP handlers never touch it
// directly: they read snapshots taken at step boundaries and hand mutating
// requests (start, manual step, feedback) to the worker.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "qsmash/engine.hpp"
#include "qsmash/errors.hpp"
#include "qsmash/learning.hpp"
#include "qsmash/persistence.hpp"
#include "qsmash/scenario.hpp"

namespace qsmash {

// Append-only, gapless, 0-based event log with blocking reads.
class EventBus {
 public:
  std::uint64_t publish(EventKind kind, json payload) {
    std::uint64_t seq = 0;
    {
      std::lock_guard lock(mutex_);
      seq = log_.size();
      log_.push_back({{"seq", seq}, {"kind", to_string(kind)}, {"payload", std::move(payload)}});
    }
    cv_.notify_all();
    return seq;
  }

  std::uint64_t size() const {
    std::lock_guard lock(mutex_);
    return log_.size();
  }

  std::vector<json> range(std::uint64_t from, std::uint64_t to) const {
    std::lock_guard lock(mutex_);
    to = std::min<std::uint64_t>(to, log_.size());
    std::vector<json> out;
    for (auto i = from; i < to; ++i) {
      out.push_back(log_[i]);
    }
    return out;
  }

  // Events from `from` onward, waiting up to `timeout` if none exist yet.
  std::vector<json> wait_from(std::uint64_t from, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    cv_.wait_for(lock, timeout, [&] { return log_.size() > from || woken_; });
    std::vector<json> out;
    for (auto i = from; i < log_.size(); ++i) {
      out.push_back(log_[i]);
    }
    return out;
  }

  void wake_all() {
    {
      std::lock_guard lock(mutex_);
      woken_ = true;
    }
    cv_.notify_all();
  }

 private:
  mutable std::mutex mutex_;
  mutable std::condition_variable cv_;
  std::deque<json> log_;
  bool woken_ = false;
};

inline std::int64_t unix_millis(std::chrono::system_clock::time_point t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

// Feedback channel backed by HTTP: the engine thread blocks in ask() until
// resolve() supplies an answer or the deadline passes.
class HttpFeedbackChannel : public FeedbackChannel {
 public:
  enum class Resolution { Accepted, NotFound, Gone, Invalid };

  explicit HttpFeedbackChannel(EventBus& bus) : bus_(bus) {}

  std::optional<ActionRecord> ask(const JointState& state, const ActionRecord& plan_action,
                                  const ActionVocabulary& vocab, std::chrono::milliseconds timeout) override {
    std::unique_lock lock(mutex_);
    Pending p;
    p.id = next_id_++;
    p.deadline = std::chrono::system_clock::now() + timeout;
    p.offered = vocab.actions();
    json actions = json::array();
    for (const auto& a : p.offered) {
      actions.push_back(a.name());
    }
    p.request = {{"request_id", p.id},
                 {"state", to_json(state)},
                 {"plan_action", plan_action.name()},
                 {"actions", std::move(actions)},
                 {"deadline", unix_millis(p.deadline)},
                 {"timeout_ms", timeout.count()}};
    pending_ = std::move(p);
    bus_.publish(EventKind::FeedbackRequested, {{"request", pending_->request}});

    cv_.wait_until(lock, pending_->deadline, [&] { return pending_->answer.has_value() || cancelled_; });
    auto answer = std::move(pending_->answer);
    const auto id = pending_->id;
    closed_.insert(id);
    pending_.reset();
    bus_.publish(EventKind::FeedbackResolved, {{"request_id", id},
                                               {"action", answer ? json(answer->name()) : json(nullptr)},
                                               {"timed_out", !answer.has_value()}});
    return answer;
  }

  Resolution resolve(std::uint64_t id, const std::string& action_name) {
    std::lock_guard lock(mutex_);
    if (!pending_ || pending_->id != id || pending_->answer) {
      return (closed_.contains(id) || (pending_ && pending_->id == id)) ? Resolution::Gone : Resolution::NotFound;
    }
    if (std::chrono::system_clock::now() >= pending_->deadline) {
      return Resolution::Gone;
    }
    std::optional<ActionRecord> action;
    try {
      action = ActionRecord::parse(action_name);
    } catch (const ValidationError&) {
      return Resolution::Invalid;
    }
    if (std::find(pending_->offered.begin(), pending_->offered.end(), *action) == pending_->offered.end()) {
      return Resolution::Invalid;
    }
    pending_->answer = std::move(action);
    cv_.notify_all();
    return Resolution::Accepted;
  }

  std::optional<json> pending_request() const {
    std::lock_guard lock(mutex_);
    if (pending_ && !pending_->answer) {
      return pending_->request;
    }
    return std::nullopt;
  }

  void cancel() {
    std::lock_guard lock(mutex_);
    cancelled_ = true;
    cv_.notify_all();
  }

 private:
  struct Pending {
    std::uint64_t id = 0;
    std::chrono::system_clock::time_point deadline;
    std::vector<ActionRecord> offered;
    json request;
    std::optional<ActionRecord> answer;
  };

  EventBus& bus_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::optional<Pending> pending_;
  std::set<std::uint64_t> closed_;
  std::uint64_t next_id_ = 0;
  bool cancelled_ = false;
};

class Gateway {
 public:
  enum class Phase { Idle, Running, Done };

  explicit Gateway(std::shared_ptr<const Scenario> scenario)
      : scenario_(std::move(scenario)), channel_(std::make_shared<HttpFeedbackChannel>(bus_)) {
    const bool collaborative = std::holds_alternative<CollaborativeOracle>(scenario_->oracle);
    engine_ = std::make_unique<Engine>(scenario_, collaborative ? channel_ : nullptr,
                                       [this](EventKind kind, json payload) { bus_.publish(kind, std::move(payload)); });
    take_snapshot();
    server_.new_task_queue = [] { return new httplib::ThreadPool(32); };
    // httplib's default also sets SO_REUSEPORT, which lets a second server
    // share the port silently; a taken port must be a bind error.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    routes();
  }

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  ~Gateway() { stop(); }

  // Binds to host:port (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) {
      throw RuntimeError("cannot bind " + host + ":" + std::to_string(port));
    }
    port_ = bound;
    return bound;
  }

  void start_background() {
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    if (stopping_.exchange(true)) {
      return;
    }
    channel_->cancel();
    {
      std::lock_guard lock(control_mutex_);
      commands_cv_.notify_all();
    }
    if (worker_.joinable()) {
      worker_.join();
    }
    bus_.wake_all();
    server_.stop();
    if (listener_.joinable()) {
      listener_.join();
    }
  }

  int port() const { return port_; }
  const EventBus& events() const { return bus_; }

 private:
  struct Snapshot {
    json state;
    int episode = 0;
    int step = 0;
    double epsilon = 0.0;
    std::vector<double> values;
  };

  struct StepCommand {
    std::promise<json> result;
  };

  void take_snapshot() {
    Snapshot s;
    s.state = to_json(engine_->state());
    s.episode = engine_->episode();
    s.step = engine_->step_index();
    s.epsilon = engine_->epsilon();
    const auto values = engine_->qtable().values();
    s.values.assign(values.begin(), values.end());
    std::lock_guard lock(snapshot_mutex_);
    snapshot_ = std::move(s);
  }

  // Runs one engine step on the worker thread; returns the events it produced.
  json do_step() {
    const auto first = bus_.size();
    try {
      engine_->step();
    } catch (const std::exception& e) {
      take_snapshot();
      fail(e.what());
      throw;
    }
    take_snapshot();
    if (engine_->finished()) {
      set_phase(Phase::Done);
    }
    json events = json::array();
    for (auto& e : bus_.range(first, bus_.size())) {
      events.push_back(std::move(e));
    }
    return events;
  }

  void fail(const std::string& message) {
    std::lock_guard lock(control_mutex_);
    error_ = message;
    phase_ = Phase::Done;
  }

  void set_phase(Phase phase) {
    std::lock_guard lock(control_mutex_);
    phase_ = phase;
  }

  void run_auto() {
    while (!stopping_ && !engine_->finished()) {
      try {
        do_step();
      } catch (const std::exception&) {
        return;
      }
    }
  }

  void run_manual() {
    while (true) {
      std::unique_ptr<StepCommand> cmd;
      {
        std::unique_lock lock(control_mutex_);
        commands_cv_.wait(lock, [&] { return stopping_ || !commands_.empty(); });
        if (stopping_) {
          for (auto& c : commands_) {
            c->result.set_exception(std::make_exception_ptr(RuntimeError("gateway stopping")));
          }
          commands_.clear();
          return;
        }
        cmd = std::move(commands_.front());
        commands_.pop_front();
      }
      if (engine_->finished()) {
        cmd->result.set_exception(std::make_exception_ptr(RuntimeError("run already completed")));
        continue;
      }
      try {
        cmd->result.set_value(do_step());
      } catch (...) {
        cmd->result.set_exception(std::current_exception());
      }
    }
  }

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void error(httplib::Response& res, int status, const std::string& message) {
    reply(res, status, {{"error", message}});
  }

  void routes() {
    server_.Get("/api/state", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(snapshot_mutex_);
      reply(res, 200,
            {{"state", snapshot_.state},
             {"step", snapshot_.step},
             {"episode", snapshot_.episode},
             {"epsilon", snapshot_.epsilon}});
    });

    server_.Get("/api/qtable", [this](const httplib::Request&, httplib::Response& res) {
      const auto& space = scenario_->space;
      json states = json::array();
      for (std::size_t i = 0; i < space.cardinality(); ++i) {
        states.push_back(state_key(decode_state(space, i)));
      }
      const auto cols = scenario_->vocabulary.size();
      json rows = json::array();
      {
        std::lock_guard lock(snapshot_mutex_);
        for (std::size_t r = 0; r < space.cardinality(); ++r) {
          rows.push_back(std::vector<double>(snapshot_.values.begin() + static_cast<std::ptrdiff_t>(r * cols),
                                             snapshot_.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols)));
        }
      }
      reply(res, 200,
            {{"states", std::move(states)}, {"actions", vocabulary_to_json(scenario_->vocabulary)}, {"values", rows}});
    });

    server_.Get("/api/run/status", [this](const httplib::Request&, httplib::Response& res) {
      json body;
      std::lock_guard lock(control_mutex_);
      const auto pending = channel_->pending_request();
      switch (phase_) {
        case Phase::Idle:
          body["phase"] = "idle";
          break;
        case Phase::Running:
          body["phase"] = pending ? "waiting_feedback" : "running";
          break;
        case Phase::Done:
          body["phase"] = "done";
          break;
      }
      if (pending && phase_ == Phase::Running) {
        body["pending_feedback"] = *pending;
      }
      if (mode_) {
        body["mode"] = *mode_;
      }
      if (error_) {
        body["error"] = *error_;
      }
      reply(res, 200, body);
    });

    server_.Post("/api/run/start", [this](const httplib::Request& req, httplib::Response& res) {
      std::string mode = "auto";
      if (!req.body.empty()) {
        const auto body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) {
          return error(res, 400, "body must be a JSON object");
        }
        if (body.contains("mode")) {
          if (!body["mode"].is_string()) {
            return error(res, 422, "mode must be \"auto\" or \"manual\"");
          }
          mode = body["mode"].get<std::string>();
        }
      }
      if (mode != "auto" && mode != "manual") {
        return error(res, 422, "mode must be \"auto\" or \"manual\"");
      }
      std::lock_guard lock(control_mutex_);
      if (phase_ != Phase::Idle || stopping_) {
        return error(res, 409, "a run has already been started");
      }
      phase_ = Phase::Running;
      mode_ = mode;
      worker_ = std::thread([this, manual = mode == "manual"] { manual ? run_manual() : run_auto(); });
      reply(res, 200, {{"phase", "running"}, {"mode", mode}});
    });

    server_.Post("/api/run/step", [this](const httplib::Request&, httplib::Response& res) {
      std::future<json> result;
      {
        std::lock_guard lock(control_mutex_);
        if (phase_ != Phase::Running || mode_ != "manual") {
          return error(res, 409, "manual stepping requires a running manual-mode run");
        }
        auto cmd = std::make_unique<StepCommand>();
        result = cmd->result.get_future();
        commands_.push_back(std::move(cmd));
      }
      commands_cv_.notify_all();
      try {
        reply(res, 200, result.get());
      } catch (const std::exception& e) {
        const std::string message = e.what();
        error(res, message == "run already completed" ? 409 : 500, message);
      }
    });

    server_.Post("/api/feedback", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object() || !body.contains("request_id") || !body.contains("action") ||
          !body["request_id"].is_number_unsigned() || !body["action"].is_string()) {
        return error(res, 400, "expected {\"request_id\": <id>, \"action\": <name>}");
      }
      const auto id = body["request_id"].get<std::uint64_t>();
      switch (channel_->resolve(id, body["action"].get<std::string>())) {
        case HttpFeedbackChannel::Resolution::Accepted:
          return reply(res, 200, {{"request_id", id}, {"status", "accepted"}});
        case HttpFeedbackChannel::Resolution::NotFound:
          return error(res, 404, "no feedback request with id " + std::to_string(id));
        case HttpFeedbackChannel::Resolution::Gone:
          return error(res, 410, "feedback request " + std::to_string(id) + " is no longer open");
        case HttpFeedbackChannel::Resolution::Invalid:
          return error(res, 422, "action '" + body["action"].get<std::string>() + "' was not offered");
      }
    });

    server_.Get("/api/events", [this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t from = 0;
      if (req.has_param("from")) {
        try {
          from = std::stoull(req.get_param_value("from"));
        } catch (const std::exception&) {
          return error(res, 400, "from must be a nonnegative integer");
        }
      }
      const bool follow = req.get_param_value("follow") != "false";
      const bool sse = req.get_header_value("Accept").find("text/event-stream") != std::string::npos;
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          sse ? "text/event-stream" : "application/x-ndjson",
          [this, cursor = from, follow, sse](std::size_t, httplib::DataSink& sink) mutable {
            if (!sink.is_writable()) {
              return false;
            }
            const auto batch = follow ? bus_.wait_from(cursor, std::chrono::milliseconds(250))
                                      : bus_.range(cursor, bus_.size());
            bool completed = false;
            for (const auto& e : batch) {
              std::string text = sse ? "id: " + e["seq"].dump() + "\nevent: " + e["kind"].get<std::string>() +
                                           "\ndata: " + e.dump() + "\n\n"
                                     : e.dump() + "\n";
              if (!sink.write(text.data(), text.size())) {
                return false;
              }
              cursor = e["seq"].get<std::uint64_t>() + 1;
              completed |= e["kind"] == "run_completed";
            }
            if (completed || !follow || stopping_) {
              sink.done();
            }
            return true;
          });
    });
  }

  std::shared_ptr<const Scenario> scenario_;
  EventBus bus_;
  std::shared_ptr<HttpFeedbackChannel> channel_;
  std::unique_ptr<Engine> engine_;

  mutable std::mutex snapshot_mutex_;
  Snapshot snapshot_;

  mutable std::mutex control_mutex_;
  std::condition_variable commands_cv_;
  std::deque<std::unique_ptr<StepCommand>> commands_;
  Phase phase_ = Phase::Idle;
  std::optional<std::string> mode_;
  std::optional<std::string> error_;

  std::atomic<bool> stopping_{false};
  httplib::Server server_;
  std::thread worker_;
  std::thread listener_;
  int port_ = -1;
};

}  // namespace qsmash
