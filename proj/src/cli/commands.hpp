#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "ttm/cli.hpp"

namespace ttm::cli {

// Everything a command needs: the resolved config, its output directory and the run log.
class Session {
 public:
  Session(RunConfig cfg, std::string command);

  const RunConfig& config() const { return cfg_; }
  const std::filesystem::path& out_dir() const { return out_; }

  /// Prints to stdout and appends a timestamped copy to run.log.
  void say(const std::string& line);
  /// Logged only.
  void log(const std::string& line);
  void write(const std::string& file, const std::string& contents) const;

 private:
  RunConfig cfg_;
  std::filesystem::path out_;
  std::ofstream log_;
};

struct GradcheckFlags {
  double eps = 1e-5;
  std::string inject_fault;
};

int cmd_check(Session& s, const std::string& filter);
int cmd_gradcheck(Session& s, const std::string& filter, const GradcheckFlags& flags);
int cmd_train(Session& s);
int cmd_sweep(Session& s);
int cmd_gsot(Session& s);
int cmd_bench(Session& s);
int cmd_stats(Session& s);

}  // namespace ttm::cli
