#pragma once

// Q-table and trace files.
//
// Both carry a manifest (devices with their labels, action names in column
// order) so they can be read back without the scenario and checked against it.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "qsmash/engine.hpp"
#include "qsmash/errors.hpp"
#include "qsmash/learning.hpp"
#include "qsmash/scenario.hpp"
#include "qsmash/world.hpp"

namespace qsmash {

inline constexpr const char* kQTableFormat = "qsmash-qtable/1";
inline constexpr const char* kTraceFormat = "qsmash-trace/1";

namespace detail {

inline ActionVocabulary vocabulary_from_json(const json& names, const StateSpace& space) {
  require(names.is_array() && !names.empty(), "actions manifest must be a nonempty array");
  ActionVocabulary vocab;
  for (const auto& n : names) {
    vocab.add(action_in_space(n, space, "actions manifest"));
  }
  require(vocab.size() == names.size(), "actions manifest contains duplicates");
  for (std::size_t i = 0; i < names.size(); ++i) {
    require(vocab.actions()[i].name() == names[i].get<std::string>(),
            "actions manifest is not in canonical order (noop first, then sorted)");
  }
  return vocab;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw RuntimeError("cannot write '" + path + "'");
  }
  out << text;
  if (!out) {
    throw RuntimeError("failed writing '" + path + "'");
  }
}

inline void check_manifest(const StateSpace& space, const ActionVocabulary& vocab, const StateSpace& expected_space,
                           const ActionVocabulary& expected_vocab, const std::string& what) {
  if (space != expected_space) {
    throw ValidationError(what + ": device manifest does not match the scenario");
  }
  if (vocab != expected_vocab) {
    throw ValidationError(what + ": action manifest does not match the scenario");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Q-table
// ---------------------------------------------------------------------------

inline json qtable_to_json(const QTable& q) {
  return {{"format", kQTableFormat},
          {"devices", space_to_json(q.space())},
          {"actions", vocabulary_to_json(q.vocabulary())},
          {"terminal_states", q.terminal_rows()},
          {"rows", q.rows()},
          {"cols", q.cols()},
          {"values", q.values()}};
}

inline QTable qtable_from_json(const json& j) {
  using detail::require;
  require(j.is_object() && j.value("format", "") == kQTableFormat,
          std::string("not a Q-table file (expected format '") + kQTableFormat + "')");
  auto space = space_from_json(detail::field(j, "devices", "qtable"));
  auto vocab = detail::vocabulary_from_json(detail::field(j, "actions", "qtable"), space);
  QTable q(std::move(space), std::move(vocab));
  const auto& rows = detail::field(j, "rows", "qtable");
  const auto& cols = detail::field(j, "cols", "qtable");
  require(rows.is_number_unsigned() && rows.get<std::size_t>() == q.rows() && cols.is_number_unsigned() &&
              cols.get<std::size_t>() == q.cols(),
          "qtable: dimensions do not match the manifest");
  const auto& values = detail::field(j, "values", "qtable");
  require(values.is_array() && values.size() == q.rows() * q.cols(), "qtable: value count does not match dimensions");
  for (std::size_t i = 0; i < values.size(); ++i) {
    require(values[i].is_number() && std::isfinite(values[i].get<double>()),
            "qtable: value " + std::to_string(i) + " is not a finite number");
    q.set(i / q.cols(), i % q.cols(), values[i].get<double>());
  }
  if (j.contains("terminal_states")) {
    for (const auto& t : j["terminal_states"]) {
      require(t.is_number_unsigned() && t.get<std::size_t>() < q.rows(), "qtable: bad terminal state index");
      for (const double v : q.row(t.get<std::size_t>())) {
        require(v == 0.0, "qtable: terminal state row must be zero");
      }
      q.mark_terminal(t.get<std::size_t>());
    }
  }
  return q;
}

inline void save_qtable(const QTable& q, const std::string& path) {
  detail::write_text(path, qtable_to_json(q).dump(2) + "\n");
}

inline QTable load_qtable(const std::string& path) {
  try {
    return qtable_from_json(read_json_file(path));
  } catch (const ValidationError& e) {
    const std::string message = e.what();
    throw ValidationError(message.rfind(path, 0) == 0 ? message : path + ": " + message);
  }
}

// Loads and checks the manifest against `scenario`.
inline QTable load_qtable(const std::string& path, const Scenario& scenario) {
  auto q = load_qtable(path);
  detail::check_manifest(q.space(), q.vocabulary(), scenario.space, scenario.vocabulary, path);
  return q;
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

struct TraceFile {
  std::string scenario;
  std::uint64_t seed = 0;
  LearningParams params;
  StateSpace space;
  ActionVocabulary vocabulary;
  std::set<std::size_t> terminal_states;
  json episodes;  // as written by trace_to_json
};

inline json step_to_json(const StepRecord& s, const QTable& q) {
  json updates = json::array();
  for (const auto& u : s.updates) {
    updates.push_back(to_json(u, q));
  }
  const auto& d = s.decision;
  return {{"step", s.step},
          {"state", to_json(d.state)},
          {"plan_action", d.plan_action.name()},
          {"source", to_string(d.source)},
          {"draw", d.draw},
          {"fell_back", d.fell_back},
          {"chosen_action", d.chosen_action.name()},
          {"updates", std::move(updates)},
          {"next_state", to_json(s.next_state)}};
}

inline json trace_to_json(const Scenario& scenario, const std::vector<EpisodeTrace>& traces) {
  const QTable shape(scenario.space, scenario.vocabulary);
  json episodes = json::array();
  for (const auto& t : traces) {
    json steps = json::array();
    for (const auto& s : t.steps) {
      steps.push_back(step_to_json(s, shape));
    }
    episodes.push_back({{"episode", t.episode},
                        {"epsilon", t.epsilon},
                        {"cumulative_reward", t.cumulative_reward()},
                        {"steps", std::move(steps)}});
  }
  return {{"format", kTraceFormat},
          {"scenario", scenario.name},
          {"seed", scenario.seed},
          {"params", to_json(scenario.params)},
          {"devices", space_to_json(scenario.space)},
          {"actions", vocabulary_to_json(scenario.vocabulary)},
          {"terminal_states", scenario.terminal_states},
          {"episodes", std::move(episodes)}};
}

inline void save_trace(const Scenario& scenario, const std::vector<EpisodeTrace>& traces, const std::string& path) {
  detail::write_text(path, trace_to_json(scenario, traces).dump(2) + "\n");
}

inline TraceFile trace_from_json(const json& j) {
  using detail::field;
  using detail::require;
  require(j.is_object() && j.value("format", "") == kTraceFormat,
          std::string("not a trace file (expected format '") + kTraceFormat + "')");
  TraceFile t;
  require(field(j, "scenario", "trace").is_string(), "trace: scenario must be a string");
  t.scenario = j["scenario"].get<std::string>();
  require(field(j, "seed", "trace").is_number_unsigned(), "trace: seed must be a nonnegative integer");
  t.seed = j["seed"].get<std::uint64_t>();
  t.params = params_from_json(field(j, "params", "trace"));
  t.space = space_from_json(field(j, "devices", "trace"));
  t.vocabulary = detail::vocabulary_from_json(field(j, "actions", "trace"), t.space);
  for (const auto& i : j.value("terminal_states", json::array())) {
    require(i.is_number_unsigned() && i.get<std::size_t>() < t.space.cardinality(), "trace: bad terminal state");
    t.terminal_states.insert(i.get<std::size_t>());
  }
  t.episodes = field(j, "episodes", "trace");
  require(t.episodes.is_array(), "trace: episodes must be an array");
  return t;
}

inline TraceFile load_trace(const std::string& path) { return trace_from_json(read_json_file(path)); }

struct ReplayResult {
  QTable qtable;
  std::size_t updates = 0;
  std::vector<std::string> mismatches;
};

// Re-applies every recorded cell update through q_update from a zero table
// and compares the recomputed before/after values with the recorded ones.
inline ReplayResult replay_trace(const TraceFile& trace) {
  using detail::field;
  using detail::require;
  QTable q(trace.space, trace.vocabulary);
  for (const auto t : trace.terminal_states) {
    q.mark_terminal(t);
  }
  ReplayResult result{q, 0, {}};
  auto& table = result.qtable;
  for (const auto& ep : trace.episodes) {
    for (const auto& step : field(ep, "steps", "trace episode")) {
      for (const auto& u : field(step, "updates", "trace step")) {
        const auto where = "episode " + ep.value("episode", json(-1)).dump() + " step " +
                           step.value("step", json(-1)).dump() + " update " + std::to_string(result.updates);
        RewardEvent ev{state_from_json(field(u, "state", where), trace.space, where),
                       detail::action_in_space(field(u, "action", where), trace.space, where),
                       detail::number(field(u, "reward", where), where + " reward")};
        const auto got = q_update(table, ev, trace.params);
        const double before = detail::number(field(u, "before", where), where + " before");
        const double after = detail::number(field(u, "after", where), where + " after");
        if (got.before != before || got.after != after) {
          result.mismatches.push_back(where + ": recorded " + json(before).dump() + " -> " + json(after).dump() +
                                      ", recomputed " + json(got.before).dump() + " -> " +
                                      json(got.after).dump());
        }
        ++result.updates;
      }
    }
  }
  return result;
}

inline void save_report(const TrainingReport& report, const std::string& path) {
  detail::write_text(path, to_json(report).dump(2) + "\n");
}

}  // namespace qsmash
