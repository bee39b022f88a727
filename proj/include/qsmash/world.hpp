#pragma once

// Devices, joint states, actions and their integer codecs.
//
// A joint state assigns every registered device one of its labels. An action
// is an idempotent target assignment over a subset of devices; the empty
// assignment is "noop". States map to Q-table rows through a mixed-radix
// encoding over the devices in lexicographic id order, actions map to columns
// through a closed vocabulary with "noop" pinned at index 0.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qsmash/errors.hpp"

namespace qsmash {

using DeviceId = std::string;
using Label = std::string;
using Assignment = std::map<DeviceId, Label>;

inline constexpr std::string_view kNoopName = "noop";

namespace detail {

// ':' '+' '=' ',' are separators in canonical action names and state keys.
inline void check_token(std::string_view what, std::string_view token) {
  if (token.empty()) {
    throw ValidationError(std::string(what) + " must be nonempty");
  }
  if (token.find_first_of(":+=,") != std::string_view::npos) {
    throw ValidationError(std::string(what) + " '" + std::string(token) +
                          "' contains a reserved character (one of : + = ,)");
  }
}

inline std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

struct DeviceSpec {
  DeviceId id;
  std::vector<Label> states;

  friend bool operator==(const DeviceSpec&, const DeviceSpec&) = default;
};

struct JointState {
  Assignment assignment;

  const Label& at(const DeviceId& device) const {
    const auto it = assignment.find(device);
    if (it == assignment.end()) {
      throw ValidationError("state has no device '" + device + "'");
    }
    return it->second;
  }

  friend bool operator==(const JointState&, const JointState&) = default;
  friend auto operator<=>(const JointState&, const JointState&) = default;
};

// "lamp=on,tv=mute" in device-id order.
inline std::string state_key(const JointState& s) {
  std::string key;
  for (const auto& [device, label] : s.assignment) {
    if (!key.empty()) {
      key += ',';
    }
    key += device;
    key += '=';
    key += label;
  }
  return key;
}

inline JointState parse_state_key(std::string_view key) {
  JointState s;
  if (key.empty()) {
    return s;
  }
  for (auto token : detail::split(key, ',')) {
    const auto eq = token.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("malformed state token '" + std::string(token) + "', expected DEVICE=LABEL");
    }
    auto device = std::string(token.substr(0, eq));
    auto label = std::string(token.substr(eq + 1));
    detail::check_token("device id", device);
    detail::check_token("state label", label);
    if (!s.assignment.emplace(device, label).second) {
      throw ValidationError("device '" + device + "' assigned twice in '" + std::string(key) + "'");
    }
  }
  return s;
}

class ActionRecord {
 public:
  ActionRecord() : name_(kNoopName) {}

  static ActionRecord noop() { return {}; }

  static ActionRecord from_targets(Assignment targets) {
    ActionRecord a;
    a.targets_ = std::move(targets);
    if (a.targets_.empty()) {
      return a;
    }
    a.name_.clear();
    for (const auto& [device, label] : a.targets_) {
      detail::check_token("device id", device);
      detail::check_token("state label", label);
      if (!a.name_.empty()) {
        a.name_ += '+';
      }
      a.name_ += device;
      a.name_ += ':';
      a.name_ += label;
    }
    return a;
  }

  // Accepts "noop" or "dev:label+dev:label" in any token order.
  static ActionRecord parse(std::string_view name) {
    if (name == kNoopName) {
      return noop();
    }
    Assignment targets;
    for (auto token : detail::split(name, '+')) {
      const auto colon = token.find(':');
      if (colon == std::string_view::npos) {
        throw ValidationError("malformed action '" + std::string(name) + "', expected DEVICE:LABEL tokens");
      }
      auto device = std::string(token.substr(0, colon));
      if (!targets.emplace(device, std::string(token.substr(colon + 1))).second) {
        throw ValidationError("action '" + std::string(name) + "' targets device '" + device + "' twice");
      }
    }
    return from_targets(std::move(targets));
  }

  const Assignment& targets() const { return targets_; }
  const std::string& name() const { return name_; }
  bool is_noop() const { return targets_.empty(); }

  friend bool operator==(const ActionRecord& a, const ActionRecord& b) { return a.name_ == b.name_; }
  friend auto operator<=>(const ActionRecord& a, const ActionRecord& b) { return a.name_ <=> b.name_; }

 private:
  Assignment targets_;
  std::string name_;
};

class StateSpace {
 public:
  StateSpace() = default;

  const std::vector<DeviceSpec>& devices() const { return devices_; }
  std::size_t cardinality() const { return cardinality_; }

  const DeviceSpec* find(std::string_view id) const {
    const auto it = std::lower_bound(devices_.begin(), devices_.end(), id,
                                     [](const DeviceSpec& d, std::string_view key) { return d.id < key; });
    return (it != devices_.end() && it->id == id) ? &*it : nullptr;
  }

  std::optional<std::size_t> label_index(const DeviceSpec& device, std::string_view label) const {
    const auto it = std::find(device.states.begin(), device.states.end(), label);
    if (it == device.states.end()) {
      return std::nullopt;
    }
    return static_cast<std::size_t>(it - device.states.begin());
  }

  // Throws unless `s` assigns every device exactly one valid label.
  void check(const JointState& s) const {
    check_partial(s.assignment, "state");
    if (s.assignment.size() != devices_.size()) {
      for (const auto& d : devices_) {
        if (!s.assignment.contains(d.id)) {
          throw ValidationError("state is missing device '" + d.id + "'");
        }
      }
    }
  }

  // Throws unless every (device, label) pair in `partial` is registered.
  void check_partial(const Assignment& partial, std::string_view context) const {
    for (const auto& [device, label] : partial) {
      const auto* spec = find(device);
      if (spec == nullptr) {
        throw ValidationError(std::string(context) + ": unknown device '" + device + "'");
      }
      if (!label_index(*spec, label)) {
        throw ValidationError(std::string(context) + ": unknown label '" + label + "' for device '" + device + "'");
      }
    }
  }

  friend bool operator==(const StateSpace&, const StateSpace&) = default;

 private:
  friend StateSpace build_state_space(std::vector<DeviceSpec> specs);

  std::vector<DeviceSpec> devices_;
  std::size_t cardinality_ = 0;
};

inline StateSpace build_state_space(std::vector<DeviceSpec> specs) {
  if (specs.empty()) {
    throw ValidationError("at least one device is required");
  }
  std::sort(specs.begin(), specs.end(), [](const DeviceSpec& a, const DeviceSpec& b) { return a.id < b.id; });
  std::size_t cardinality = 1;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& d = specs[i];
    detail::check_token("device id", d.id);
    if (i > 0 && specs[i - 1].id == d.id) {
      throw ValidationError("duplicate device id '" + d.id + "'");
    }
    if (d.states.empty()) {
      throw ValidationError("device '" + d.id + "' has no states");
    }
    for (std::size_t j = 0; j < d.states.size(); ++j) {
      detail::check_token("state label of '" + d.id + "'", d.states[j]);
      if (std::find(d.states.begin(), d.states.begin() + static_cast<std::ptrdiff_t>(j), d.states[j]) !=
          d.states.begin() + static_cast<std::ptrdiff_t>(j)) {
        throw ValidationError("device '" + d.id + "' lists state '" + d.states[j] + "' twice");
      }
    }
    if (cardinality > std::numeric_limits<std::size_t>::max() / d.states.size()) {
      throw ValidationError("state space cardinality overflows");
    }
    cardinality *= d.states.size();
  }
  StateSpace space;
  space.devices_ = std::move(specs);
  space.cardinality_ = cardinality;
  return space;
}

// Mixed-radix index; the first device in id order is the most significant digit.
inline std::size_t encode_state(const StateSpace& space, const JointState& s) {
  space.check(s);
  std::size_t index = 0;
  for (const auto& d : space.devices()) {
    index = index * d.states.size() + *space.label_index(d, s.assignment.at(d.id));
  }
  return index;
}

inline JointState decode_state(const StateSpace& space, std::size_t index) {
  if (index >= space.cardinality()) {
    throw ValidationError("state index " + std::to_string(index) + " out of range [0, " +
                          std::to_string(space.cardinality()) + ")");
  }
  JointState s;
  const auto& devices = space.devices();
  for (auto it = devices.rbegin(); it != devices.rend(); ++it) {
    const auto radix = it->states.size();
    s.assignment.emplace(it->id, it->states[index % radix]);
    index /= radix;
  }
  return s;
}

inline ActionRecord derive_action(const JointState& current, const JointState& next) {
  if (current.assignment.size() != next.assignment.size()) {
    throw ValidationError("cannot derive an action between states from different spaces");
  }
  Assignment targets;
  auto it = next.assignment.begin();
  for (const auto& [device, label] : current.assignment) {
    if (it->first != device) {
      throw ValidationError("cannot derive an action between states from different spaces");
    }
    if (it->second != label) {
      targets.emplace(device, it->second);
    }
    ++it;
  }
  return ActionRecord::from_targets(std::move(targets));
}

inline JointState apply_action(const StateSpace& space, JointState s, const ActionRecord& a) {
  space.check_partial(a.targets(), "action '" + a.name() + "'");
  for (const auto& [device, label] : a.targets()) {
    const auto it = s.assignment.find(device);
    if (it == s.assignment.end()) {
      throw ValidationError("action '" + a.name() + "' targets device '" + device + "' absent from state");
    }
    it->second = label;
  }
  return s;
}

// Closed set of Q-table columns: "noop" at 0, the rest sorted by name.
class ActionVocabulary {
 public:
  ActionVocabulary() : actions_{ActionRecord::noop()} {}

  std::size_t size() const { return actions_.size(); }
  const std::vector<ActionRecord>& actions() const { return actions_; }

  std::optional<std::size_t> find(const ActionRecord& a) const {
    if (a.is_noop()) {
      return 0;
    }
    const auto it = std::lower_bound(actions_.begin() + 1, actions_.end(), a);
    if (it == actions_.end() || *it != a) {
      return std::nullopt;
    }
    return static_cast<std::size_t>(it - actions_.begin());
  }

  bool contains(const ActionRecord& a) const { return find(a).has_value(); }

  void add(const ActionRecord& a) {
    if (a.is_noop()) {
      return;
    }
    const auto it = std::lower_bound(actions_.begin() + 1, actions_.end(), a);
    if (it == actions_.end() || *it != a) {
      actions_.insert(it, a);
    }
  }

  friend bool operator==(const ActionVocabulary&, const ActionVocabulary&) = default;

 private:
  std::vector<ActionRecord> actions_;
};

inline ActionVocabulary register_action(ActionVocabulary vocab, const ActionRecord& a) {
  vocab.add(a);
  return vocab;
}

inline std::size_t encode_action(const ActionVocabulary& vocab, const ActionRecord& a) {
  if (const auto index = vocab.find(a)) {
    return *index;
  }
  throw ValidationError("action '" + a.name() + "' is not in the vocabulary");
}

inline const ActionRecord& decode_action(const ActionVocabulary& vocab, std::size_t index) {
  if (index >= vocab.size()) {
    throw ValidationError("action index " + std::to_string(index) + " out of range [0, " +
                          std::to_string(vocab.size()) + ")");
  }
  return vocab.actions()[index];
}

}  // namespace qsmash
