#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace pegnn {

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitDivergence = 4;
inline constexpr int kExitCompatibility = 5;

/// Writes train.bin, val.bin, test.bin and manifest.json into out_dir.
int cmd_generate(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
                 std::ostream& out, std::ostream& err);

struct TrainOptions {
  std::filesystem::path config_path;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  /// Continue from out_dir/train_state.bin when present.
  bool resume = false;
  /// Stop after this many further epochs; the state file allows resuming.
  std::optional<int> max_epochs_this_run;
};

/// Outputs in out_dir: train_state.bin, manifest.json and, for single-model
/// modes, model.ckpt and log.csv; in ensemble mode ensemble/member_<m>.ckpt
/// and log_member_<m>.csv.
int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err);

struct EvaluateOptions {
  /// Checkpoint files, or directories whose *.ckpt files form one ensemble.
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path test_path;
  int k = 100;
  std::vector<std::uint64_t> seeds{0};
  /// When given, every checkpoint must match this configuration's layout.
  std::optional<std::filesystem::path> config_path;
  std::optional<std::filesystem::path> out_csv;
};

/// One metrics row per (checkpoint, seed) plus an aggregate row. Noise-free
/// checkpoints are scored with K = 1; ensemble directories with one sample
/// per member.
int cmd_evaluate(const EvaluateOptions& options, std::ostream& out, std::ostream& err);

int cmd_params(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err);

struct SweepOptions {
  std::filesystem::path config_path;
  std::filesystem::path out_dir;
  std::optional<std::vector<std::size_t>> sizes;
  std::optional<std::vector<std::uint64_t>> seeds;
};

/// Trains and scores EGNN, the deep ensemble and P-EGNN for every
/// (training size, seed) pair and writes out_dir/sweep.csv.
int cmd_sweep(const SweepOptions& options, std::ostream& out, std::ostream& err);

}  // namespace pegnn
