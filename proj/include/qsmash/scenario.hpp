#pragma once

// Scenario files: devices, plan rules, user oracle, episode budget and
// learning parameters, loaded from JSON and fully validated.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qsmash/errors.hpp"
#include "qsmash/learning.hpp"
#include "qsmash/planner.hpp"
#include "qsmash/world.hpp"

namespace qsmash {

using nlohmann::json;

struct Scenario {
  std::string name;
  StateSpace space;
  ActionVocabulary vocabulary;
  std::vector<PlanRule> rules;
  UserOracle oracle;
  JointState initial_state;
  std::set<std::size_t> terminal_states;
  int steps_per_episode = 1;
  int episodes = 1;
  LearningParams params;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// JSON helpers shared by scenario, trace and Q-table files
// ---------------------------------------------------------------------------

inline json to_json(const JointState& s) {
  json j = json::object();
  for (const auto& [device, label] : s.assignment) {
    j[device] = label;
  }
  return j;
}

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) {
    throw ValidationError(message);
  }
}

inline const json& field(const json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  require(it != j.end(), where + ": missing key '" + key + "'");
  return *it;
}

inline Assignment assignment_from_json(const json& j, const std::string& where) {
  require(j.is_object(), where + " must be an object of device -> label");
  Assignment a;
  for (const auto& [device, label] : j.items()) {
    require(label.is_string(), where + ": label for '" + device + "' must be a string");
    a.emplace(device, label.get<std::string>());
  }
  return a;
}

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) {
      ok |= key == k;
    }
    require(ok, where + ": unknown key '" + key + "'");
  }
}

inline double number(const json& j, const std::string& what) {
  require(j.is_number(), what + " must be a number");
  return j.get<double>();
}

inline int positive_int(const json& j, const std::string& what) {
  require(j.is_number_integer() && j.get<std::int64_t>() >= 1 && j.get<std::int64_t>() <= 1'000'000'000,
          what + " must be an integer >= 1");
  return j.get<int>();
}

}  // namespace detail

inline JointState state_from_json(const json& j, const StateSpace& space, const std::string& where) {
  JointState s{detail::assignment_from_json(j, where)};
  try {
    space.check(s);
  } catch (const ValidationError& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return s;
}

inline json to_json(const LearningParams& p) {
  return {{"alpha", p.alpha},
          {"gamma", p.gamma},
          {"epsilon0", p.epsilon0},
          {"rho", p.rho},
          {"rewards",
           {{"r_plan", p.rewards.r_plan},
            {"r_match", p.rewards.r_match},
            {"r_override_pos", p.rewards.r_override_pos},
            {"r_override_neg", p.rewards.r_override_neg}}}};
}

inline LearningParams params_from_json(const json& j) {
  using detail::number;
  detail::require(j.is_object(), "params must be an object");
  detail::reject_unknown_keys(j, {"alpha", "gamma", "epsilon0", "rho", "rewards"}, "params");
  LearningParams p;
  if (j.contains("alpha")) p.alpha = number(j["alpha"], "params.alpha");
  if (j.contains("gamma")) p.gamma = number(j["gamma"], "params.gamma");
  if (j.contains("epsilon0")) p.epsilon0 = number(j["epsilon0"], "params.epsilon0");
  if (j.contains("rho")) p.rho = number(j["rho"], "params.rho");
  if (j.contains("rewards")) {
    const auto& r = j["rewards"];
    detail::require(r.is_object(), "params.rewards must be an object");
    detail::reject_unknown_keys(r, {"r_plan", "r_match", "r_override_pos", "r_override_neg"}, "params.rewards");
    if (r.contains("r_plan")) p.rewards.r_plan = number(r["r_plan"], "params.rewards.r_plan");
    if (r.contains("r_match")) p.rewards.r_match = number(r["r_match"], "params.rewards.r_match");
    if (r.contains("r_override_pos")) {
      p.rewards.r_override_pos = number(r["r_override_pos"], "params.rewards.r_override_pos");
    }
    if (r.contains("r_override_neg")) {
      p.rewards.r_override_neg = number(r["r_override_neg"], "params.rewards.r_override_neg");
    }
  }
  p.validate();
  return p;
}

inline json space_to_json(const StateSpace& space) {
  json devices = json::array();
  for (const auto& d : space.devices()) {
    devices.push_back({{"id", d.id}, {"states", d.states}});
  }
  return devices;
}

inline StateSpace space_from_json(const json& j) {
  detail::require(j.is_array(), "devices manifest must be an array");
  std::vector<DeviceSpec> specs;
  for (const auto& d : j) {
    detail::require(d.is_object() && d.contains("id") && d.contains("states") && d["id"].is_string() &&
                        d["states"].is_array(),
                    "device manifest entries need string 'id' and array 'states'");
    DeviceSpec spec{d["id"].get<std::string>(), {}};
    for (const auto& label : d["states"]) {
      detail::require(label.is_string(), "state labels must be strings");
      spec.states.push_back(label.get<std::string>());
    }
    specs.push_back(std::move(spec));
  }
  return build_state_space(std::move(specs));
}

inline json vocabulary_to_json(const ActionVocabulary& vocab) {
  json names = json::array();
  for (const auto& a : vocab.actions()) {
    names.push_back(a.name());
  }
  return names;
}

// ---------------------------------------------------------------------------
// Scenario parsing
// ---------------------------------------------------------------------------

namespace detail {

inline ActionRecord action_in_space(const json& j, const StateSpace& space, const std::string& where) {
  require(j.is_string(), where + " must be an action name string");
  ActionRecord a;
  try {
    a = ActionRecord::parse(j.get<std::string>());
    space.check_partial(a.targets(), "action '" + a.name() + "'");
  } catch (const ValidationError& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return a;
}

struct OraclePlan {
  json spec;
  std::vector<std::pair<Assignment, ActionRecord>> preferences;
  bool default_to_plan = false;
  std::optional<ActionRecord> default_action;
};

}  // namespace detail

// Builds a scenario from parsed JSON. `origin` prefixes error messages.
inline Scenario parse_scenario(const json& root, const std::string& origin = "scenario") {
  using detail::field;
  using detail::reject_unknown_keys;
  using detail::require;
  require(root.is_object(), origin + ": top level must be an object");
  reject_unknown_keys(root,
                      {"name", "devices", "rules", "actions", "oracle", "initial_state", "terminal_states",
                               "steps_per_episode", "episodes", "params", "seed"},
                              origin);
  Scenario sc;

  const auto& name = field(root, "name", origin);
  require(name.is_string(), origin + ": name must be a string");
  sc.name = name.get<std::string>();

  const auto& devices = field(root, "devices", origin);
  require(devices.is_object() && !devices.empty(), origin + ": devices must be a nonempty object of id -> labels");
  std::vector<DeviceSpec> specs;
  for (const auto& [id, labels] : devices.items()) {
    require(labels.is_array(), origin + ": states of device '" + id + "' must be an array");
    DeviceSpec spec{id, {}};
    for (const auto& label : labels) {
      require(label.is_string(), origin + ": states of device '" + id + "' must be strings");
      spec.states.push_back(label.get<std::string>());
    }
    specs.push_back(std::move(spec));
  }
  try {
    sc.space = build_state_space(std::move(specs));
  } catch (const ValidationError& e) {
    throw ValidationError(origin + ": " + e.what());
  }

  if (root.contains("rules")) {
    const auto& rules = root["rules"];
    require(rules.is_array(), origin + ": rules must be an array");
    for (std::size_t i = 0; i < rules.size(); ++i) {
      const auto& r = rules[i];
      const auto where = origin + ": rules[" + std::to_string(i) + "]";
      require(r.is_object(), where + " must be an object");
      reject_unknown_keys(r, {"name", "match", "next", "priority"}, where);
      PlanRule rule;
      if (r.contains("name")) {
        require(r["name"].is_string(), where + ".name must be a string");
        rule.name = r["name"].get<std::string>();
      }
      rule.match = detail::assignment_from_json(r.value("match", json::object()), where + ".match");
      rule.next = detail::assignment_from_json(field(r, "next", where), where + ".next");
      if (r.contains("priority")) {
        require(r["priority"].is_number_integer(), where + ".priority must be an integer");
        rule.priority = r["priority"].get<int>();
      }
      sc.rules.push_back(std::move(rule));
    }
  }
  auto report = validate_rules(sc.rules, sc.space, ActionVocabulary{});
  if (!report.ok()) {
    std::string message = origin + ": invalid rules:";
    for (const auto& f : report.findings) {
      message += "\n  " + std::string(to_string(f.kind)) + ": " + f.message;
    }
    throw ValidationError(message);
  }
  sc.vocabulary = std::move(report.vocabulary);

  if (root.contains("actions")) {
    const auto& extra = root["actions"];
    require(extra.is_array(), origin + ": actions must be an array of action names");
    for (std::size_t i = 0; i < extra.size(); ++i) {
      sc.vocabulary.add(detail::action_in_space(extra[i], sc.space, origin + ": actions[" + std::to_string(i) + "]"));
    }
  }

  // Oracle: preference actions join the vocabulary before it is closed.
  const auto& oracle = field(root, "oracle", origin);
  require(oracle.is_object(), origin + ": oracle must be an object");
  const auto& type_field = field(oracle, "type", origin + ": oracle");
  require(type_field.is_string(), origin + ": oracle.type must be a string");
  const auto type = type_field.get<std::string>();
  detail::OraclePlan scripted;
  if (type == "scripted") {
    reject_unknown_keys(oracle, {"type", "preferences", "default"}, origin + ": oracle");
    if (oracle.contains("preferences")) {
      const auto& prefs = oracle["preferences"];
      require(prefs.is_array(), origin + ": oracle.preferences must be an array");
      for (std::size_t i = 0; i < prefs.size(); ++i) {
        const auto where = origin + ": oracle.preferences[" + std::to_string(i) + "]";
        const auto& p = prefs[i];
        require(p.is_object(), where + " must be an object");
        reject_unknown_keys(p, {"match", "action"}, where);
        auto match = detail::assignment_from_json(p.value("match", json::object()), where + ".match");
        sc.space.check_partial(match, where + ".match");
        auto action = detail::action_in_space(field(p, "action", where), sc.space, where + ".action");
        sc.vocabulary.add(action);
        scripted.preferences.emplace_back(std::move(match), std::move(action));
      }
    }
    if (oracle.contains("default")) {
      const auto& d = oracle["default"];
      require(d.is_string(), origin + ": oracle.default must be \"plan\" or an action name");
      if (d.get<std::string>() == "plan") {
        scripted.default_to_plan = true;
      } else {
        scripted.default_action = detail::action_in_space(d, sc.space, origin + ": oracle.default");
        sc.vocabulary.add(*scripted.default_action);
      }
    }
  } else if (type == "greedy") {
    reject_unknown_keys(oracle, {"type"}, origin + ": oracle");
    sc.oracle = GreedyOracle{};
  } else if (type == "random") {
    reject_unknown_keys(oracle, {"type"}, origin + ": oracle");
    sc.oracle = RandomOracle{};
  } else if (type == "collaborative") {
    reject_unknown_keys(oracle, {"type", "timeout_ms"}, origin + ": oracle");
    CollaborativeOracle collab;
    if (oracle.contains("timeout_ms")) {
      require(oracle["timeout_ms"].is_number_integer() && oracle["timeout_ms"].get<std::int64_t>() > 0,
              origin + ": oracle.timeout_ms must be a positive integer");
      collab.timeout = std::chrono::milliseconds(oracle["timeout_ms"].get<std::int64_t>());
    }
    sc.oracle = collab;
  } else {
    throw ValidationError(origin + ": unknown oracle type '" + type + "'");
  }

  if (type == "scripted") {
    ScriptedOracle compiled;
    compiled.preferences.resize(sc.space.cardinality());
    for (std::size_t index = 0; index < sc.space.cardinality(); ++index) {
      const auto state = decode_state(sc.space, index);
      auto& slot = compiled.preferences[index];
      for (const auto& [match, action] : scripted.preferences) {
        if (rule_matches(PlanRule{{}, match, {}, 0}, state)) {
          slot = action;
          break;
        }
      }
      if (!slot && scripted.default_to_plan) {
        slot = plan_for(sc.space, state, sc.rules).action;
      } else if (!slot && scripted.default_action) {
        slot = scripted.default_action;
      }
    }
    sc.oracle = std::move(compiled);
  }

  sc.initial_state = state_from_json(field(root, "initial_state", origin), sc.space, origin + ": initial_state");
  if (root.contains("terminal_states")) {
    const auto& terminals = root["terminal_states"];
    require(terminals.is_array(), origin + ": terminal_states must be an array");
    for (std::size_t i = 0; i < terminals.size(); ++i) {
      sc.terminal_states.insert(encode_state(
          sc.space,
          state_from_json(terminals[i], sc.space, origin + ": terminal_states[" + std::to_string(i) + "]")));
    }
    require(!sc.terminal_states.contains(encode_state(sc.space, sc.initial_state)),
            origin + ": initial_state must not be terminal");
  }

  sc.steps_per_episode = detail::positive_int(field(root, "steps_per_episode", origin), origin + ": steps_per_episode");
  sc.episodes = detail::positive_int(field(root, "episodes", origin), origin + ": episodes");
  if (root.contains("params")) {
    try {
      sc.params = params_from_json(root["params"]);
    } catch (const ValidationError& e) {
      throw ValidationError(origin + ": " + e.what());
    }
  }
  if (root.contains("seed")) {
    require(root["seed"].is_number_unsigned() || (root["seed"].is_number_integer() && root["seed"].get<std::int64_t>() >= 0),
            origin + ": seed must be a nonnegative integer");
    sc.seed = root["seed"].get<std::uint64_t>();
  }
  return sc;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open '" + path + "'");
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path + ": parse error: " + e.what());
  }
}

inline Scenario load_scenario(const std::string& path) {
  return parse_scenario(read_json_file(path), path);
}

}  // namespace qsmash
