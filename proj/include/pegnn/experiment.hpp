#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pegnn/config.hpp"
#include "pegnn/egnn.hpp"
#include "pegnn/metrics.hpp"
#include "pegnn/nbody.hpp"
#include "pegnn/training.hpp"

namespace pegnn {

const char* version_string();

// Run configuration
//
// Flat `key = value` file, config_version = 1. Recognized keys (defaults in
// parentheses):
//   sim.n_particles (5)  sim.charges (-1,1)  sim.dt (0.001)  sim.n_steps (1000)
//   sim.softening (0.01)  sim.box_init_scale (1)  sim.vel_init_scale (1)
//   sim.min_pair_distance (0.1)  sim.seed (0)
//   data.n_train (1000)  data.n_val, data.n_test (from n_train)
//   model.n_layers (4)  model.hidden (64)  model.noise_dim (32)  model.activation (silu)
//   train.mode (crps)  train.k_train (10)  train.k_val (50)  train.batch_size (100)
//   train.epochs (1000)  train.learning_rate (5e-4)  train.final_learning_rate (1e-5)
//   train.beta1 (0.9)  train.beta2 (0.999)  train.adam_eps (1e-8)
//   train.weight_decay (0)  train.ensemble_size (3)  train.grad_clip_norm (5, or none)
//   train.seed (0)  train.patience (50)  train.divergence_factor (10)
//   train.chunk_size (8)  train.log_wall_time (true)
//   eval.k (100)  eval.seed (0)
//   sweep.sizes (1000,3000,10000)  sweep.seeds (0,1,2,3)
// model.noise_dim only applies in crps mode; the baselines run the bare
// backbone. Unknown keys are rejected.

struct RunConfig {
  SimConfig sim;
  SplitSizes sizes = default_split_sizes(1000);
  EgnnConfig model{.noise_dim = 32};
  TrainConfig train;
  int k_eval = 100;
  std::uint64_t eval_seed = 0;
  std::vector<std::size_t> sweep_sizes{1000, 3000, 10000};
  std::vector<std::uint64_t> sweep_seeds{0, 1, 2, 3};

  /// Backbone configuration for `mode`: noise channel only in crps mode.
  EgnnConfig model_for(TrainMode mode) const;
  void validate() const;
};

RunConfig load_run_config(const KeyValueConfig& kv);
RunConfig load_run_config(const std::filesystem::path& path);

/// Resolved configuration as `key = value` text, loadable by load_run_config.
std::string dump_run_config(const RunConfig& config);

// Run manifest: JSON written to <out_dir>/manifest.json before the long work
// starts and rewritten when the command ends.

struct RunManifest {
  std::string command;
  std::string config_path;
  std::string resolved_config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string status = "running";
  std::string started_at;
  std::string finished_at;
  std::optional<std::string> divergence_json;

  void write(const std::filesystem::path& path) const;
};

std::string utc_timestamp();

/// Trained artifacts of one model kind for one seed.
struct TrainedModel {
  TrainMode mode = TrainMode::kDeterministic;
  EgnnConfig config;
  std::vector<ad::ParamVector> members;
  std::vector<std::vector<LogRow>> logs;
};

TrainedModel train_model(const RunConfig& config, TrainMode mode, std::uint64_t seed,
                         const std::vector<GraphSample>& train_data, const std::vector<GraphSample>& val_data,
                         const EpochCallback& on_epoch = {});

/// Deterministic models are scored with a single sample, ensembles with their
/// members, P-EGNN with k_eval draws keyed by eval_seed.
MetricsReport evaluate_model(const TrainedModel& model, const std::vector<GraphSample>& test_data, int k_eval,
                             std::uint64_t eval_seed);

struct SweepRow {
  std::size_t n = 0;
  std::string model;
  std::uint64_t seed = 0;
  double mse = 0.0;
  double crps = 0.0;
  std::optional<double> ssr;
};

/// CSV: n,model,seed,mse,crps,ssr (ssr empty when absent).
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace pegnn
