#include <CLI11.hpp>
#include <Eigen/Core>
#include <charconv>
#include <cstdlib>
#include <iostream>

#include "commands.hpp"
#include "ttm/error.hpp"

namespace ttm::cli {

namespace {

// TTM_LAB_THREADS: unset or 0 leaves Eigen's default, a positive integer pins the count.
int thread_override() {
  const char* raw = std::getenv("TTM_LAB_THREADS");
  if (raw == nullptr || *raw == '\0') return 0;
  const std::string_view text(raw);
  int n = -1;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
  if (ec != std::errc() || end != text.data() + text.size() || n < 0) {
    throw ConfigError("TTM_LAB_THREADS must be a non-negative integer, got '" + std::string(text) + "'");
  }
  return n;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"ttm_lab: temperature-modulated attention experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string filter;
  app.add_option("--config", config_path, "JSON run config (defaults when omitted)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override every seed except the task data seeds");
  app.add_option("--out", out_dir, "output directory (overrides output_dir)");
  app.add_option("--filter", filter, "check: module, module/name or name; gradcheck: module");

  GradcheckFlags grad;
  auto* check = app.add_subcommand("check", "run the invariant property registry");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--eps", grad.eps, "central-difference step")->check(CLI::Range(1e-7, 1e-3));
  gradcheck->add_option("--inject-fault", grad.inject_fault, "corrupt the backward rule of one op")
      ->group("");  // hidden
  auto* train = app.add_subcommand("train", "train on the configured task");
  auto* sweep = app.add_subcommand("sweep", "loss over a uniform temperature grid");
  auto* gsot = app.add_subcommand("gsot", "run the hidden-token reasoning pipeline");
  auto* bench = app.add_subcommand("bench", "op-count scaling and fixed-point convergence");
  auto* stats = app.add_subcommand("stats", "confidence interval, significance, memory estimate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    const int threads = thread_override();
    RunConfig cfg = config_path.empty() ? default_run_config() : load_run_config(config_path);
    if (seed) apply_seed(cfg, *seed);
    if (!out_dir.empty()) cfg.output_dir = out_dir;

    const std::string command = app.get_subcommands().front()->get_name();
    Session session(std::move(cfg), command);
    if (threads > 0) Eigen::setNbThreads(threads);
    session.log("threads " + (threads > 0 ? std::to_string(threads) : std::string("default")));

    if (*check) return cmd_check(session, filter);
    if (*gradcheck) return cmd_gradcheck(session, filter, grad);
    if (*train) return cmd_train(session);
    if (*sweep) return cmd_sweep(session);
    if (*gsot) return cmd_gsot(session);
    if (*bench) return cmd_bench(session);
    if (*stats) return cmd_stats(session);
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "unexpected failure: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace ttm::cli
