// qsmash: train, inspect, serve and replay learning-layer runs.
//
//   qsmash run <scenario.json> [--episodes N] [--seed S] [--out DIR]
//   qsmash inspect <qtable.json> [--state KEY=VAL,...]
//   qsmash serve <scenario.json> --port P [--host H]
//   qsmash replay <trace.json> [--qtable FILE]
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <csignal>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <pthread.h>

#include "CLI11.hpp"
#include "qsmash.hpp"
#include "qsmash/gateway.hpp"

namespace fs = std::filesystem;
using namespace qsmash;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

int cmd_run(const std::string& path, std::optional<int> episodes, std::optional<std::uint64_t> seed,
            const std::string& out_dir) {
  auto scenario = load_scenario(path);
  if (episodes) {
    scenario.episodes = *episodes;
  }
  if (seed) {
    scenario.seed = *seed;
  }
  const auto result = run_training(scenario);
  const auto& report = result.report;

  std::cout << "scenario " << scenario.name << ": " << scenario.space.cardinality() << " states x "
            << scenario.vocabulary.size() << " actions, oracle " << oracle_type(scenario.oracle) << ", seed "
            << scenario.seed << "\n\n";
  std::cout << std::setw(8) << "episode" << std::setw(10) << "epsilon" << std::setw(12) << "reward" << std::setw(12)
            << "alignment" << "\n";
  for (std::size_t i = 0; i < result.traces.size(); ++i) {
    std::cout << std::setw(8) << i << std::setw(10) << std::fixed << std::setprecision(4) << result.traces[i].epsilon
              << std::setw(12) << std::setprecision(2) << report.cumulative_reward[i] << std::setw(12);
    if (report.alignment_rate[i]) {
      std::cout << std::setprecision(3) << *report.alignment_rate[i];
    } else {
      std::cout << "-";
    }
    std::cout << "\n";
  }
  std::cout << "\nconvergence episode: ";
  if (report.convergence_episode) {
    std::cout << *report.convergence_episode;
  } else {
    std::cout << "none";
  }
  std::cout << "\nfinal epsilon: " << std::setprecision(6) << report.final_epsilon << "\n";

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const auto dir = fs::path(out_dir);
    save_qtable(result.qtable, (dir / "qtable.json").string());
    save_trace(scenario, result.traces, (dir / "trace.json").string());
    save_report(report, (dir / "report.json").string());
    std::cout << "wrote " << (dir / "qtable.json").string() << ", " << (dir / "trace.json").string() << ", "
              << (dir / "report.json").string() << "\n";
  }
  return kOk;
}

void print_row(const QTable& q, std::size_t row) {
  const auto values = q.row(row);
  const auto best = greedy_index(values);
  std::cout << state_key(decode_state(q.space(), row)) << (q.is_terminal(row) ? "  [terminal]" : "") << "\n";
  for (std::size_t c = 0; c < q.cols(); ++c) {
    std::cout << (c == best ? "  * " : "    ") << std::left << std::setw(32) << q.vocabulary().actions()[c].name()
              << std::right << std::setw(14) << std::setprecision(6) << values[c] << "\n";
  }
}

int cmd_inspect(const std::string& path, const std::string& state) {
  const auto q = load_qtable(path);
  std::cout << path << ": " << q.rows() << " states x " << q.cols() << " actions\n";
  if (!state.empty()) {
    const auto s = parse_state_key(state);
    print_row(q, encode_state(q.space(), s));
    return kOk;
  }
  for (std::size_t r = 0; r < q.rows(); ++r) {
    print_row(q, r);
  }
  return kOk;
}

int cmd_replay(const std::string& path, std::string qtable_path) {
  const auto trace = load_trace(path);
  const auto result = replay_trace(trace);
  std::cout << "replayed " << result.updates << " Q-updates from " << path << "\n";
  for (const auto& m : result.mismatches) {
    std::cerr << "mismatch: " << m << "\n";
  }
  if (!result.mismatches.empty()) {
    return kValidation;
  }
  if (qtable_path.empty()) {
    const auto sibling = fs::path(path).parent_path() / "qtable.json";
    if (fs::exists(sibling)) {
      qtable_path = sibling.string();
    }
  }
  if (!qtable_path.empty()) {
    const auto saved = load_qtable(qtable_path);
    if (saved != result.qtable) {
      std::cerr << "replayed Q-table differs from " << qtable_path << "\n";
      return kValidation;
    }
    std::cout << "final Q-table matches " << qtable_path << "\n";
  }
  return kOk;
}

int cmd_serve(const std::string& path, const std::string& host, int port) {
  auto scenario = std::make_shared<const Scenario>(load_scenario(path));

  // Handle SIGINT/SIGTERM synchronously on this thread; block them before any
  // server thread starts so they inherit the mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Gateway gateway(scenario);
  const int bound = gateway.bind(host, port);
  gateway.start_background();
  std::cout << "serving " << scenario->name << " on http://" << host << ":" << bound << " (Ctrl-C to stop)"
            << std::endl;
  int received = 0;
  sigwait(&signals, &received);
  std::cout << "stopping" << std::endl;
  gateway.stop();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning-layer engine: plan-first Q-learning over user feedback"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::optional<int> episodes;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  auto* run = app.add_subcommand("run", "Train on a scenario and report per-episode metrics");
  run->add_option("scenario", scenario_path, "Scenario JSON file")->required();
  run->add_option("--episodes", episodes, "Override the episode budget")->check(CLI::PositiveNumber);
  run->add_option("--seed", seed, "Override the random seed");
  run->add_option("--out", out_dir, "Directory for qtable.json, trace.json and report.json");

  std::string qtable_path;
  std::string state;
  auto* inspect = app.add_subcommand("inspect", "Print a saved Q-table or one of its rows");
  inspect->add_option("qtable", qtable_path, "Q-table JSON file")->required();
  inspect->add_option("--state", state, "Joint state as DEVICE=LABEL,...");

  std::string host = "127.0.0.1";
  int port = 0;
  auto* serve = app.add_subcommand("serve", "Expose a scenario over HTTP with a live event stream");
  serve->add_option("scenario", scenario_path, "Scenario JSON file")->required();
  serve->add_option("--port", port, "TCP port")->required()->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "Bind address");

  std::string trace_path;
  std::string replay_qtable;
  auto* replay = app.add_subcommand("replay", "Recompute a saved trace and check it against the saved Q-table");
  replay->add_option("trace", trace_path, "Trace JSON file")->required();
  replay->add_option("--qtable", replay_qtable, "Q-table to compare with (default: qtable.json next to the trace)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*run) {
      return cmd_run(scenario_path, episodes, seed, out_dir);
    }
    if (*inspect) {
      return cmd_inspect(qtable_path, state);
    }
    if (*serve) {
      return cmd_serve(scenario_path, host, port);
    }
    if (*replay) {
      return cmd_replay(trace_path, replay_qtable);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
