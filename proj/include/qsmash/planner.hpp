#pragma once

// Rule-based stand-in for the value-aligned planning layer. Each rule maps a
// partial state condition to partial target assignments; the highest-priority
// matching rule decides the plan step for a state.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qsmash/errors.hpp"
#include "qsmash/world.hpp"

namespace qsmash {

struct PlanRule {
  std::string name;  // optional; diagnostics fall back to "rules[i]"
  Assignment match;
  Assignment next;
  int priority = 0;
};

struct PlanStep {
  JointState state;
  ActionRecord action;
  JointState next_state;
};

class AmbiguousPlanError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

inline std::string rule_label(const PlanRule& rule, std::size_t index) {
  return rule.name.empty() ? "rules[" + std::to_string(index) + "]" : "rule '" + rule.name + "'";
}

inline bool rule_matches(const PlanRule& rule, const JointState& s) {
  for (const auto& [device, label] : rule.match) {
    const auto it = s.assignment.find(device);
    if (it == s.assignment.end() || it->second != label) {
      return false;
    }
  }
  return true;
}

namespace detail {

// Index of the single top-priority matching rule, nullopt when nothing
// matches. `tied` receives the runner-up index when the top priority is shared.
inline std::optional<std::size_t> top_rule(const JointState& s, std::span<const PlanRule> rules,
                                           std::optional<std::size_t>* tied = nullptr) {
  std::optional<std::size_t> best;
  std::optional<std::size_t> tie;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    if (!rule_matches(rules[i], s)) {
      continue;
    }
    if (!best || rules[i].priority > rules[*best].priority) {
      best = i;
      tie.reset();
    } else if (rules[i].priority == rules[*best].priority && !tie) {
      tie = i;
    }
  }
  if (tied != nullptr) {
    *tied = tie;
  }
  return best;
}

}  // namespace detail

inline PlanStep plan_for(const StateSpace& space, const JointState& state, std::span<const PlanRule> rules) {
  std::optional<std::size_t> tie;
  const auto best = detail::top_rule(state, rules, &tie);
  if (!best) {
    return {state, ActionRecord::noop(), state};
  }
  if (tie) {
    throw AmbiguousPlanError("ambiguous plan at " + state_key(state) + ": " + rule_label(rules[*best], *best) +
                             " and " + rule_label(rules[*tie], *tie) + " share priority " +
                             std::to_string(rules[*best].priority));
  }
  auto next = apply_action(space, state, ActionRecord::from_targets(rules[*best].next));
  auto action = derive_action(state, next);
  return {state, std::move(action), std::move(next)};
}

struct Finding {
  enum class Kind { UnknownDevice, UnknownLabel, Ambiguous };
  Kind kind;
  std::string message;
};

inline const char* to_string(Finding::Kind kind) {
  switch (kind) {
    case Finding::Kind::UnknownDevice:
      return "unknown device";
    case Finding::Kind::UnknownLabel:
      return "unknown label";
    case Finding::Kind::Ambiguous:
      return "ambiguous";
  }
  return "?";
}

struct ValidationReport {
  std::vector<Finding> findings;
  ActionVocabulary vocabulary;

  bool ok() const { return findings.empty(); }
};

// Checks references, scans the whole state space for equal-priority overlaps
// and registers every action the rules can induce.
inline ValidationReport validate_rules(std::span<const PlanRule> rules, const StateSpace& space,
                                       ActionVocabulary vocab) {
  ValidationReport report;
  auto check = [&](const Assignment& part, const std::string& where) {
    bool clean = true;
    for (const auto& [device, label] : part) {
      const auto* spec = space.find(device);
      if (spec == nullptr) {
        report.findings.push_back({Finding::Kind::UnknownDevice, where + ": unknown device '" + device + "'"});
        clean = false;
      } else if (!space.label_index(*spec, label)) {
        report.findings.push_back(
            {Finding::Kind::UnknownLabel, where + ": unknown label '" + label + "' for device '" + device + "'"});
        clean = false;
      }
    }
    return clean;
  };
  bool references_ok = true;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    const auto label = rule_label(rules[i], i);
    references_ok &= check(rules[i].match, label + " match");
    references_ok &= check(rules[i].next, label + " next");
  }
  if (!references_ok) {
    report.vocabulary = std::move(vocab);
    return report;
  }

  // Each unordered pair is reported once, at the first state where it collides.
  std::vector<std::pair<std::size_t, std::size_t>> reported;
  for (std::size_t index = 0; index < space.cardinality(); ++index) {
    const auto state = decode_state(space, index);
    std::optional<std::size_t> tie;
    const auto best = detail::top_rule(state, rules, &tie);
    if (!best) {
      continue;
    }
    if (tie) {
      const auto pair = std::make_pair(*best, *tie);
      if (std::find(reported.begin(), reported.end(), pair) == reported.end()) {
        reported.push_back(pair);
        report.findings.push_back({Finding::Kind::Ambiguous, rule_label(rules[*best], *best) + " and " +
                                                                 rule_label(rules[*tie], *tie) +
                                                                 " both match " + state_key(state) +
                                                                 " at priority " +
                                                                 std::to_string(rules[*best].priority)});
      }
      continue;
    }
    vocab.add(plan_for(space, state, rules).action);
  }
  report.vocabulary = std::move(vocab);
  return report;
}

}  // namespace qsmash
