#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ttm/dynamics.hpp"
#include "ttm/gsot.hpp"
#include "ttm/model.hpp"
#include "ttm/training.hpp"

namespace ttm::cli {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

struct TrainBlock {
  TrainConfig train;
  TaskSpec task;
  int eval_count = 0;  // held-out examples for exact accuracy; 0 skips the evaluation
};

struct SweepBlock {
  double t_min = 0.1;
  double t_max = 1.0;
  std::size_t steps = 10;
  GridSpacing spacing = GridSpacing::linear;
  TaskSpec task;
  std::optional<std::string> checkpoint;  // default: freshly initialized model
};

struct GsotBlock {
  GsotConfig gsot;
  std::vector<int> tokens{3, 1, 4, 1, 5, 9, 2, 6};
  Index hidden_count = 8;
  std::optional<std::string> checkpoint;
};

struct BenchBlock {
  std::vector<Index> lengths{64, 128, 256, 512, 1024};
  Index hidden_count = 8;
};

struct StatsBlock {
  std::vector<double> samples;
  std::optional<std::string> input;  // one number per line, '#' comments; replaces samples
  double level = 0.95;
  std::optional<double> p_value;
  std::uint64_t memory_seq_len = 2048;
  std::uint64_t memory_heads = 12;
  std::uint64_t memory_batch = 128;
  std::uint64_t memory_bytes = 4;
  double quoted_memory_gb = 16.0;  // externally quoted figure printed beside the computed one
};

/// Blocks absent from a config file stay empty; commands that need one exit with usage error.
struct RunConfig {
  std::string output_dir = "ttm_out";
  std::uint64_t seed = 0;
  ModelConfig model;
  EvolutionConfig evolution;
  std::optional<TrainBlock> train;
  std::optional<SweepBlock> sweep;
  std::optional<GsotBlock> gsot;
  std::optional<BenchBlock> bench;
  std::optional<StatsBlock> stats;
};

/// Every block present, each filled with its documented defaults.
RunConfig default_run_config();

/// Unknown keys anywhere are a ConfigError; missing keys take the defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Pretty-printed, all keys explicit; parse_run_config(to_json(c)) round-trips.
std::string to_json(const RunConfig& cfg);

/// Overrides the top-level seed and every per-block seed except the task data seeds.
void apply_seed(RunConfig& cfg, std::uint64_t seed);

/// Entry point of ttm_lab; returns the process exit code.
int run(int argc, char** argv);

}  // namespace ttm::cli
