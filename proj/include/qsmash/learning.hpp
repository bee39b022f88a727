#pragma once

// The learning layer: decision maker, state-action prediction, reward
// function and Q-update over a dense tabular Q-table.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "qsmash/errors.hpp"
#include "qsmash/planner.hpp"
#include "qsmash/rng.hpp"
#include "qsmash/world.hpp"

namespace qsmash {

struct RewardParams {
  double r_plan = 1.0;
  double r_match = 5.0;
  double r_override_pos = 5.0;
  double r_override_neg = -5.0;

  friend bool operator==(const RewardParams&, const RewardParams&) = default;
};

struct LearningParams {
  double alpha = 0.5;     // learning rate, (0, 1]
  double gamma = 0.9;     // discount rate, [0, 1]
  double epsilon0 = 0.1;  // initial prediction probability, [0, 1]
  double rho = 0.9;       // per-episode shrink factor of (1 - epsilon), (0, 1)
  RewardParams rewards;

  void validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!(alpha > 0.0 && alpha <= 1.0)) {
      throw ValidationError("alpha must lie in (0, 1], got " + std::to_string(alpha));
    }
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
      throw ValidationError("gamma must lie in [0, 1], got " + std::to_string(gamma));
    }
    if (!(epsilon0 >= 0.0 && epsilon0 <= 1.0)) {
      throw ValidationError("epsilon0 must lie in [0, 1], got " + std::to_string(epsilon0));
    }
    if (!(rho > 0.0 && rho < 1.0)) {
      throw ValidationError("rho must lie in (0, 1), got " + std::to_string(rho));
    }
    if (!finite(rewards.r_plan) || !finite(rewards.r_match) || !finite(rewards.r_override_pos) ||
        !finite(rewards.r_override_neg)) {
      throw ValidationError("rewards must be finite");
    }
  }

  friend bool operator==(const LearningParams&, const LearningParams&) = default;
};

// Rows are joint states, columns are vocabulary actions. Terminal rows stay 0.
class QTable {
 public:
  QTable(StateSpace space, ActionVocabulary vocab)
      : space_(std::move(space)),
        vocab_(std::move(vocab)),
        values_(space_.cardinality() * vocab_.size(), 0.0) {}

  const StateSpace& space() const { return space_; }
  const ActionVocabulary& vocabulary() const { return vocab_; }
  std::size_t rows() const { return space_.cardinality(); }
  std::size_t cols() const { return vocab_.size(); }

  double at(std::size_t row, std::size_t col) const { return values_.at(offset(row, col)); }

  std::span<const double> row(std::size_t r) const {
    check_row(r);
    return {values_.data() + r * cols(), cols()};
  }

  std::span<const double> values() const { return values_; }

  void set(std::size_t row, std::size_t col, double value) {
    if (!std::isfinite(value)) {
      throw RuntimeError("Q-values must be finite");
    }
    if (is_terminal(row)) {
      throw RuntimeError("terminal state row " + std::to_string(row) + " cannot be updated");
    }
    values_[offset(row, col)] = value;
  }

  void mark_terminal(std::size_t row) {
    check_row(row);
    terminal_.insert(row);
    std::fill_n(values_.begin() + static_cast<std::ptrdiff_t>(row * cols()), cols(), 0.0);
  }

  bool is_terminal(std::size_t row) const { return terminal_.contains(row); }
  const std::set<std::size_t>& terminal_rows() const { return terminal_; }

  friend bool operator==(const QTable&, const QTable&) = default;

 private:
  void check_row(std::size_t r) const {
    if (r >= rows()) {
      throw RuntimeError("Q-table row " + std::to_string(r) + " out of range");
    }
  }

  std::size_t offset(std::size_t row, std::size_t col) const {
    check_row(row);
    if (col >= cols()) {
      throw RuntimeError("Q-table column " + std::to_string(col) + " out of range");
    }
    return row * cols() + col;
  }

  StateSpace space_;
  ActionVocabulary vocab_;
  std::vector<double> values_;
  std::set<std::size_t> terminal_;
};

enum class DecisionSource { Plan, Prediction };

inline const char* to_string(DecisionSource source) {
  return source == DecisionSource::Plan ? "plan" : "prediction";
}

struct Decision {
  DecisionSource source = DecisionSource::Plan;
  JointState state;
  ActionRecord plan_action;
  ActionRecord chosen_action;
  double draw = 0.0;
  // Prediction branch was drawn but the oracle gave no answer (collaborative
  // timeout); the step degraded to the plan action.
  bool fell_back = false;
};

struct RewardEvent {
  JointState state;
  ActionRecord action;
  double reward = 0.0;
};

// ---------------------------------------------------------------------------
// User oracles
// ---------------------------------------------------------------------------

// Preferred action per state index; unset entries are configuration gaps.
struct ScriptedOracle {
  std::vector<std::optional<ActionRecord>> preferences;

  const std::optional<ActionRecord>& preference(std::size_t state_index) const {
    static const std::optional<ActionRecord> none;
    return state_index < preferences.size() ? preferences[state_index] : none;
  }
};

struct GreedyOracle {};

struct RandomOracle {};

// Blocking request to a human for their preferred action. Returning nullopt
// means no usable answer arrived before the timeout.
class FeedbackChannel {
 public:
  virtual ~FeedbackChannel() = default;
  virtual std::optional<ActionRecord> ask(const JointState& state, const ActionRecord& plan_action,
                                          const ActionVocabulary& vocab, std::chrono::milliseconds timeout) = 0;
};

struct CollaborativeOracle {
  std::shared_ptr<FeedbackChannel> channel;
  std::chrono::milliseconds timeout{30000};
};

using UserOracle = std::variant<ScriptedOracle, GreedyOracle, RandomOracle, CollaborativeOracle>;

inline const char* oracle_type(const UserOracle& oracle) {
  constexpr const char* names[] = {"scripted", "greedy", "random", "collaborative"};
  return names[oracle.index()];
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Highest-valued action index in `row`; ties go to the lowest index.
inline std::size_t greedy_index(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

inline const ActionRecord& greedy_action(const QTable& q, const JointState& state) {
  return q.vocabulary().actions()[greedy_index(q.row(encode_state(q.space(), state)))];
}

// nullopt is the plan-fallback sentinel (collaborative timeout).
inline std::optional<ActionRecord> predict(const UserOracle& oracle, const JointState& state, const QTable& q,
                                           Rng& rng, const ActionRecord& plan_action) {
  return std::visit(
      [&](const auto& o) -> std::optional<ActionRecord> {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, ScriptedOracle>) {
          const auto& pref = o.preference(encode_state(q.space(), state));
          if (!pref) {
            throw RuntimeError("scripted oracle has no preference for state " + state_key(state));
          }
          return *pref;
        } else if constexpr (std::is_same_v<T, GreedyOracle>) {
          return greedy_action(q, state);
        } else if constexpr (std::is_same_v<T, RandomOracle>) {
          return q.vocabulary().actions()[rng.below(q.vocabulary().size())];
        } else {
          if (!o.channel) {
            throw RuntimeError("collaborative oracle has no feedback channel attached");
          }
          auto answer = o.channel->ask(state, plan_action, q.vocabulary(), o.timeout);
          if (answer && !q.vocabulary().contains(*answer)) {
            throw RuntimeError("feedback action '" + answer->name() + "' is not in the vocabulary");
          }
          return answer;
        }
      },
      oracle);
}

// Called once the branch is drawn, before the oracle is consulted.
using BranchHook = std::function<void(DecisionSource, double draw)>;

inline Decision decide(double epsilon, Rng& rng, const PlanStep& plan, const UserOracle& oracle,
                       const JointState& state, const QTable& q, const BranchHook& on_branch = {}) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw RuntimeError("epsilon must lie in [0, 1]");
  }
  if (plan.state != state) {
    throw RuntimeError("plan step was computed for a different state");
  }
  Decision d;
  d.state = state;
  d.plan_action = plan.action;
  d.draw = rng.uniform01();
  d.source = d.draw < epsilon ? DecisionSource::Prediction : DecisionSource::Plan;
  if (on_branch) {
    on_branch(d.source, d.draw);
  }
  if (d.source == DecisionSource::Plan) {
    d.chosen_action = plan.action;
    return d;
  }
  if (auto predicted = predict(oracle, state, q, rng, plan.action)) {
    d.chosen_action = std::move(*predicted);
  } else {
    d.source = DecisionSource::Plan;
    d.chosen_action = plan.action;
    d.fell_back = true;
  }
  return d;
}

// Divergent predictions penalize the plan action first, then reward the
// user's choice.
inline std::vector<RewardEvent> reward(const Decision& d, const LearningParams& params) {
  const auto& r = params.rewards;
  if (d.source == DecisionSource::Plan) {
    return {{d.state, d.plan_action, r.r_plan}};
  }
  if (d.chosen_action == d.plan_action) {
    return {{d.state, d.chosen_action, r.r_match}};
  }
  return {{d.state, d.plan_action, r.r_override_neg}, {d.state, d.chosen_action, r.r_override_pos}};
}

struct QUpdate {
  std::size_t state_index = 0;
  std::size_t action_index = 0;
  JointState next_state;
  std::size_t next_index = 0;
  double reward = 0.0;
  double max_next = 0.0;
  double before = 0.0;
  double after = 0.0;
};

// Q(s,a) += alpha * (R + gamma * max_a' Q(s',a') - Q(s,a)), s' = apply(s, a).
inline QUpdate q_update(QTable& q, const RewardEvent& ev, const LearningParams& params) {
  QUpdate u;
  u.state_index = encode_state(q.space(), ev.state);
  u.action_index = encode_action(q.vocabulary(), ev.action);
  if (q.is_terminal(u.state_index)) {
    throw RuntimeError("refusing to update terminal state " + state_key(ev.state));
  }
  u.next_state = apply_action(q.space(), ev.state, ev.action);
  u.next_index = encode_state(q.space(), u.next_state);
  u.reward = ev.reward;
  const auto next_row = q.row(u.next_index);
  u.max_next = *std::max_element(next_row.begin(), next_row.end());
  u.before = q.at(u.state_index, u.action_index);
  u.after = u.before + params.alpha * (ev.reward + params.gamma * u.max_next - u.before);
  q.set(u.state_index, u.action_index, u.after);
  return u;
}

inline double update_epsilon(double epsilon, const LearningParams& params) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw RuntimeError("epsilon must lie in [0, 1]");
  }
  return 1.0 - (1.0 - epsilon) * params.rho;
}

}  // namespace qsmash
