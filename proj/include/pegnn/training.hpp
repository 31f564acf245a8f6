#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pegnn/autodiff.hpp"
#include "pegnn/egnn.hpp"
#include "pegnn/errors.hpp"
#include "pegnn/nbody.hpp"

namespace pegnn {

enum class TrainMode { kDeterministic, kEnsemble, kCrps };

const char* mode_name(TrainMode mode);
TrainMode parse_mode(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::kCrps;
  int k_train = 10;
  int k_val = 50;
  int batch_size = 100;
  int epochs = 1000;
  double learning_rate = 5e-4;
  double final_learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  int ensemble_size = 3;
  std::optional<double> grad_clip_norm = 5.0;
  std::uint64_t seed = 0;
  int patience = 50;
  /// Validation worse than this multiple of the best value so far aborts.
  double divergence_factor = 10.0;
  /// Structures per tape; fixes the gradient summation order.
  int chunk_size = 8;
  bool log_wall_time = true;
  NoiseGeneratorInit wz_init = NoiseGeneratorInit::kFanIn;

  void validate(const EgnnConfig& model) const;
};

struct LossGrad {
  double loss = 0.0;
  double reliability = 0.0;
  double spread = 0.0;
  ad::ParamVector grad;
};

/// Identifies one optimizer step for noise keying.
struct StepKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t batch = 0;
};

/// Fair-CRPS loss averaged over the batch: each structure gets K draws
/// eps ~ N(0, I) keyed by (seed, epoch, batch, position-in-batch, k), the
/// reparameterized z = W_z eps feeds K forward passes, and crps_multi scores the
/// K predicted position sets against the target. The gradient flows through
/// all passes, including the draws.
LossGrad loss_step_crps(const ad::ParamVector& params, const EgnnConfig& config,
                        std::span<const GraphSample* const> batch, int k_train, const StepKey& key,
                        int chunk_size = 8);

/// Same loss with caller-supplied standard-normal draws: eps[s] is K x d_z for
/// structure s. Used to freeze the draws for gradient checks.
LossGrad loss_step_crps(const ad::ParamVector& params, const EgnnConfig& config,
                        std::span<const GraphSample* const> batch, std::span<const ad::Matrix> eps,
                        int chunk_size = 8);

/// Mean over structures and entries of the squared position error.
LossGrad loss_step_mse(const ad::ParamVector& params, const EgnnConfig& config,
                       std::span<const GraphSample* const> batch, int chunk_size = 8);

/// Mean fair CRPS with K draws per structure keyed by (seed, structure, k).
double validation_crps(const ad::ParamVector& params, const EgnnConfig& config,
                       const std::vector<GraphSample>& data, int k, std::uint64_t seed);
double validation_mse(const ad::ParamVector& params, const EgnnConfig& config,
                      const std::vector<GraphSample>& data);

struct LogRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double wall_time_s = 0.0;
  double grad_norm = 0.0;
};

/// Optimizer and bookkeeping for one model.
struct ModelState {
  std::uint64_t seed = 0;
  ad::ParamVector params;
  Eigen::VectorXd adam_m;
  Eigen::VectorXd adam_v;
  std::int64_t step = 0;
  int epoch = 0;
  ad::ParamVector best_params;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;
  bool finished = false;
  std::vector<LogRow> log;
};

/// One ModelState per trained model (ensemble_size in ensemble mode, else 1).
struct TrainState {
  std::vector<ModelState> members;
};

/// Seed of member m: the run seed itself for single-model modes, a derived
/// seed per member in ensemble mode.
std::uint64_t member_seed(const TrainConfig& config, int member);

TrainState init_train_state(const TrainConfig& config, const EgnnConfig& model);

struct DivergenceReport {
  int member = 0;
  int epoch = 0;
  std::int64_t step = 0;
  double value = 0.0;
  double best = 0.0;
  std::string reason;

  std::string to_json() const;
};

class TrainingDiverged : public DivergenceError {
 public:
  explicit TrainingDiverged(DivergenceReport report);
  const DivergenceReport& report() const { return report_; }

 private:
  DivergenceReport report_;
};

using EpochCallback = std::function<void(int member, const LogRow& row)>;

/// Advances `state` in place. Stops after `max_epochs` further epochs when
/// given (for resumable runs), at config.epochs, or on early stopping. Throws
/// TrainingDiverged on a non-finite loss or a diverging validation score.
void train(TrainState& state, const TrainConfig& config, const EgnnConfig& model,
           const std::vector<GraphSample>& train_data, const std::vector<GraphSample>& val_data,
           std::optional<int> max_epochs = std::nullopt, const EpochCallback& on_epoch = {});

TrainState train(const TrainConfig& config, const EgnnConfig& model, const std::vector<GraphSample>& train_data,
                 const std::vector<GraphSample>& val_data);

/// Single-line JSON header, then per member params, adam_m, adam_v,
/// best_params as float64.
void save_train_state(const std::filesystem::path& path, const TrainState& state, const EgnnConfig& model);
TrainState load_train_state(const std::filesystem::path& path, const EgnnConfig& model);

/// CSV: epoch,train_loss,val_metric,wall_time_s,grad_norm.
void write_log_csv(std::ostream& out, const std::vector<LogRow>& log);

}  // namespace pegnn
