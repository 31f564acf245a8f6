#include "pegnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <sstream>

#include "pegnn/errors.hpp"
#include "pegnn/noise.hpp"
#include "pegnn/scoring.hpp"

namespace pegnn {

const char* mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kDeterministic: return "deterministic";
    case TrainMode::kEnsemble: return "ensemble";
    case TrainMode::kCrps: return "crps";
  }
  return "?";
}

TrainMode parse_mode(const std::string& name) {
  if (name == "deterministic") return TrainMode::kDeterministic;
  if (name == "ensemble") return TrainMode::kEnsemble;
  if (name == "crps") return TrainMode::kCrps;
  throw ConfigError("unknown training mode '" + name + "' (expected deterministic, ensemble or crps)");
}

void TrainConfig::validate(const EgnnConfig& model) const {
  model.validate();
  if (mode == TrainMode::kCrps) {
    if (k_train < 2) throw ConfigError("train.k_train must be >= 2 in crps mode (got " + std::to_string(k_train) + ")");
    if (k_val < 1) throw ConfigError("train.k_val must be >= 1");
    if (!model.perturbed()) throw ConfigError("crps mode requires model.noise_dim > 0");
  } else if (model.perturbed()) {
    throw ConfigError(std::string(mode_name(mode)) + " mode requires model.noise_dim = 0");
  }
  if (mode == TrainMode::kEnsemble && ensemble_size < 2) {
    throw ConfigError("train.ensemble_size must be >= 2 in ensemble mode");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(learning_rate > 0.0) || !(final_learning_rate >= 0.0)) throw ConfigError("learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam decays must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be > 0");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (grad_clip_norm && !(*grad_clip_norm > 0.0)) throw ConfigError("train.grad_clip_norm must be > 0");
  if (patience < 1) throw ConfigError("train.patience must be >= 1");
  if (!(divergence_factor > 1.0)) throw ConfigError("train.divergence_factor must be > 1");
  if (chunk_size < 1) throw ConfigError("train.chunk_size must be >= 1");
}

// Losses ------------------------------------------------------------------------

namespace {

ad::Matrix target_block(const GraphSample& s) { return s.target_positions; }

void add_into(LossGrad& total, const ad::Gradients& g) { total.grad.values() += g.params.values(); }

}  // namespace

LossGrad loss_step_crps(const ad::ParamVector& params, const EgnnConfig& config,
                        std::span<const GraphSample* const> batch, std::span<const ad::Matrix> eps,
                        int chunk_size) {
  if (!config.perturbed()) throw ConfigError("loss_step_crps: model has no noise channel");
  if (batch.empty()) throw ConfigError("loss_step_crps: empty batch");
  if (eps.size() != batch.size()) throw ShapeError("loss_step_crps: one eps block per structure required");
  const int k = static_cast<int>(eps.front().rows());
  if (k < 2) throw ConfigError("loss_step_crps: K_train must be >= 2");
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  LossGrad total;
  total.grad = params.zeros_like();
  for (std::size_t start = 0; start < batch.size(); start += static_cast<std::size_t>(chunk_size)) {
    const std::size_t end = std::min(batch.size(), start + static_cast<std::size_t>(chunk_size));
    std::vector<const ParticleState*> states;
    ad::Matrix eps_rows(static_cast<Eigen::Index>((end - start) * static_cast<std::size_t>(k)), config.noise_dim);
    for (std::size_t s = start; s < end; ++s) {
      states.push_back(&batch[s]->input);
      if (eps[s].rows() != k || eps[s].cols() != config.noise_dim) {
        throw ShapeError("loss_step_crps: eps block must be K x noise_dim");
      }
      eps_rows.middleRows(static_cast<Eigen::Index>((s - start) * static_cast<std::size_t>(k)), k) = eps[s];
    }
    const GraphBatch gb = make_batch(states, k);
    ad::Tape tape(params);
    const ad::Var z = noise_rows(tape, tape.param("noise.W_z"), eps_rows);
    const ad::Var out = egnn_forward(tape, config, gb, z);

    ad::Var loss;
    ad::Var rel;
    ad::Var spread;
    for (std::size_t s = start; s < end; ++s) {
      const int graph = static_cast<int>((s - start) * static_cast<std::size_t>(k));
      const int first = gb.node_offset[static_cast<std::size_t>(graph)];
      const int rows = gb.node_offset[static_cast<std::size_t>(graph + k)] - first;
      const TapeScore sc = crps_multi(tape, tape.slice_rows(out, first, rows), k, target_block(*batch[s]));
      loss = loss.valid() ? tape.add(loss, sc.value) : sc.value;
      rel = rel.valid() ? tape.add(rel, sc.reliability) : sc.reliability;
      spread = spread.valid() ? tape.add(spread, sc.spread) : sc.spread;
    }
    loss = tape.scale(loss, inv_b);
    total.loss += tape.scalar(loss);
    total.reliability += tape.scalar(rel) * inv_b;
    total.spread += tape.scalar(spread) * inv_b;
    add_into(total, tape.backward(loss, ad::Matrix::Ones(1, 1)));
  }
  return total;
}

LossGrad loss_step_crps(const ad::ParamVector& params, const EgnnConfig& config,
                        std::span<const GraphSample* const> batch, int k_train, const StepKey& key,
                        int chunk_size) {
  if (k_train < 2) throw ConfigError("loss_step_crps: K_train must be >= 2");
  std::vector<ad::Matrix> eps;
  eps.reserve(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    eps.push_back(standard_normal_rows(k_train, config.noise_dim,
                                       derive_seed(key.seed, Stream::kNoiseTrain, {key.epoch, key.batch, s})));
  }
  return loss_step_crps(params, config, batch, eps, chunk_size);
}

LossGrad loss_step_mse(const ad::ParamVector& params, const EgnnConfig& config,
                       std::span<const GraphSample* const> batch, int chunk_size) {
  if (batch.empty()) throw ConfigError("loss_step_mse: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  LossGrad total;
  total.grad = params.zeros_like();
  for (std::size_t start = 0; start < batch.size(); start += static_cast<std::size_t>(chunk_size)) {
    const std::size_t end = std::min(batch.size(), start + static_cast<std::size_t>(chunk_size));
    std::vector<const ParticleState*> states;
    ad::Matrix target(0, 3);
    ad::Matrix weights(0, 1);
    for (std::size_t s = start; s < end; ++s) {
      states.push_back(&batch[s]->input);
      const auto n = batch[s]->target_positions.rows();
      target.conservativeResize(target.rows() + n, 3);
      target.bottomRows(n) = batch[s]->target_positions;
      weights.conservativeResize(weights.rows() + n, 1);
      weights.bottomRows(n).setConstant(inv_b / static_cast<double>(3 * n));
    }
    const GraphBatch gb = make_batch(states);
    ad::Tape tape(params);
    const ad::Var out = egnn_forward(tape, config, gb);
    const ad::Var sq = tape.row_sum(tape.square(tape.sub(out, tape.constant(std::move(target)))));
    const ad::Var loss = tape.sum(tape.mul(sq, tape.constant(std::move(weights))));
    total.loss += tape.scalar(loss);
    add_into(total, tape.backward(loss, ad::Matrix::Ones(1, 1)));
  }
  total.reliability = total.loss;
  return total;
}

double validation_crps(const ad::ParamVector& params, const EgnnConfig& config,
                       const std::vector<GraphSample>& data, int k, std::uint64_t seed) {
  if (data.empty()) throw ConfigError("validation_crps: empty dataset");
  const ad::Matrix w_z = params.view("noise.W_z");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ad::Matrix eps = standard_normal_rows(k, config.noise_dim, derive_seed(seed, Stream::kNoiseVal, {i}));
    const ad::Matrix z = eps * w_z.transpose();
    const auto pred = EnsemblePrediction::from_positions(egnn_forward_copies(params, config, data[i].input, z));
    total += crps_multi(pred, flatten(data[i].target_positions)).value;
  }
  return total / static_cast<double>(data.size());
}

double validation_mse(const ad::ParamVector& params, const EgnnConfig& config,
                      const std::vector<GraphSample>& data) {
  if (data.empty()) throw ConfigError("validation_mse: empty dataset");
  double total = 0.0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t end = std::min(data.size(), start + kChunk);
    std::vector<const ParticleState*> states;
    for (std::size_t s = start; s < end; ++s) states.push_back(&data[s].input);
    const GraphBatch gb = make_batch(states);
    ad::Tape tape(params);
    const ad::Matrix& out = tape.value(egnn_forward(tape, config, gb));
    for (std::size_t s = start; s < end; ++s) {
      const int g = static_cast<int>(s - start);
      const int first = gb.node_offset[static_cast<std::size_t>(g)];
      const auto& y = data[s].target_positions;
      total += (out.middleRows(first, y.rows()) - y).squaredNorm() / static_cast<double>(y.size());
    }
  }
  return total / static_cast<double>(data.size());
}

// Training loop ----------------------------------------------------------------------

std::uint64_t member_seed(const TrainConfig& config, int member) {
  if (config.mode != TrainMode::kEnsemble) return config.seed;
  return derive_seed(config.seed, Stream::kMember, {static_cast<std::uint64_t>(member)});
}

TrainState init_train_state(const TrainConfig& config, const EgnnConfig& model) {
  config.validate(model);
  TrainState state;
  const int n = config.mode == TrainMode::kEnsemble ? config.ensemble_size : 1;
  for (int m = 0; m < n; ++m) {
    ModelState ms;
    ms.seed = member_seed(config, m);
    ms.params = init_params(model, ms.seed, config.wz_init);
    ms.adam_m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ms.params.size()));
    ms.adam_v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ms.params.size()));
    ms.best_params = ms.params;
    state.members.push_back(std::move(ms));
  }
  return state;
}

std::string DivergenceReport::to_json() const {
  nlohmann::ordered_json j;
  j["member"] = member;
  j["epoch"] = epoch;
  j["step"] = step;
  j["value"] = std::isfinite(value) ? nlohmann::ordered_json(value) : nlohmann::ordered_json(std::to_string(value));
  j["best"] = std::isfinite(best) ? nlohmann::ordered_json(best) : nlohmann::ordered_json(std::to_string(best));
  j["reason"] = reason;
  return j.dump();
}

TrainingDiverged::TrainingDiverged(DivergenceReport report)
    : DivergenceError("training diverged: " + report.to_json()), report_(std::move(report)) {}

namespace {

double cosine_lr(const TrainConfig& c, std::int64_t step, std::int64_t total) {
  if (total <= 1) return c.learning_rate;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total - 1));
  return c.final_learning_rate +
         0.5 * (c.learning_rate - c.final_learning_rate) * (1.0 + std::cos(std::numbers::pi * t));
}

void adam_update(ModelState& ms, const TrainConfig& c, const Eigen::VectorXd& grad, double lr) {
  ms.step += 1;
  Eigen::VectorXd g = grad;
  if (c.weight_decay > 0.0) g += c.weight_decay * ms.params.values();
  ms.adam_m = c.beta1 * ms.adam_m + (1.0 - c.beta1) * g;
  ms.adam_v = c.beta2 * ms.adam_v + (1.0 - c.beta2) * g.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(ms.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(ms.step));
  ms.params.values().array() -=
      lr * (ms.adam_m.array() / bc1) / ((ms.adam_v.array() / bc2).sqrt() + c.adam_eps);
}

void train_member(ModelState& ms, int member, const TrainConfig& c, const EgnnConfig& model,
                  const std::vector<GraphSample>& train_data, const std::vector<GraphSample>& val_data,
                  int epoch_limit, const EpochCallback& on_epoch) {
  const std::size_t n = train_data.size();
  const auto bs = static_cast<std::size_t>(c.batch_size);
  const std::size_t batches = (n + bs - 1) / bs;
  const auto total_steps = static_cast<std::int64_t>(batches) * c.epochs;
  const double prior_wall = ms.log.empty() ? 0.0 : ms.log.back().wall_time_s;
  const auto t0 = std::chrono::steady_clock::now();

  while (!ms.finished && ms.epoch < epoch_limit) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = make_rng(derive_seed(ms.seed, Stream::kShuffle, {static_cast<std::uint64_t>(ms.epoch)}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);

    double loss_sum = 0.0;
    double norm_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<const GraphSample*> batch;
      for (std::size_t i = b * bs; i < std::min(n, (b + 1) * bs); ++i) batch.push_back(&train_data[order[i]]);
      LossGrad lg = c.mode == TrainMode::kCrps
                        ? loss_step_crps(ms.params, model, batch, c.k_train,
                                         StepKey{ms.seed, static_cast<std::uint64_t>(ms.epoch), b}, c.chunk_size)
                        : loss_step_mse(ms.params, model, batch, c.chunk_size);
      if (!std::isfinite(lg.loss) || !lg.grad.values().allFinite()) {
        throw TrainingDiverged(DivergenceReport{member, ms.epoch, ms.step, lg.loss, ms.best_val,
                                                "non-finite loss or gradient at batch " + std::to_string(b) +
                                                    " (noise key seed " + std::to_string(ms.seed) + ")"});
      }
      const double norm = lg.grad.values().norm();
      if (c.grad_clip_norm && norm > *c.grad_clip_norm) lg.grad.values() *= *c.grad_clip_norm / norm;
      adam_update(ms, c, lg.grad.values(), cosine_lr(c, ms.step, total_steps));
      loss_sum += lg.loss;
      norm_sum += norm;
    }

    const double val = c.mode == TrainMode::kCrps
                           ? validation_crps(ms.params, model, val_data, c.k_val, ms.seed)
                           : validation_mse(ms.params, model, val_data);
    if (!std::isfinite(val) || (std::isfinite(ms.best_val) && val > c.divergence_factor * ms.best_val)) {
      throw TrainingDiverged(DivergenceReport{member, ms.epoch, ms.step, val, ms.best_val,
                                              "validation metric exceeded divergence_factor x best"});
    }
    if (val < ms.best_val) {
      ms.best_val = val;
      ms.best_params = ms.params;
      ms.epochs_since_best = 0;
    } else {
      ++ms.epochs_since_best;
    }

    LogRow row;
    row.epoch = ms.epoch;
    row.train_loss = loss_sum / static_cast<double>(batches);
    row.val_metric = val;
    row.grad_norm = norm_sum / static_cast<double>(batches);
    if (c.log_wall_time) {
      row.wall_time_s =
          prior_wall + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    ms.log.push_back(row);
    if (on_epoch) on_epoch(member, row);

    ++ms.epoch;
    if (ms.epochs_since_best >= c.patience || ms.epoch >= c.epochs) ms.finished = true;
  }
  if (ms.epoch >= c.epochs) ms.finished = true;
}

}  // namespace

void train(TrainState& state, const TrainConfig& config, const EgnnConfig& model,
           const std::vector<GraphSample>& train_data, const std::vector<GraphSample>& val_data,
           std::optional<int> max_epochs, const EpochCallback& on_epoch) {
  config.validate(model);
  if (config.epochs > 0 && (train_data.empty() || val_data.empty())) {
    throw ConfigError("train: training and validation sets must be non-empty");
  }
  for (std::size_t m = 0; m < state.members.size(); ++m) {
    ModelState& ms = state.members[m];
    const int limit = max_epochs ? std::min(config.epochs, ms.epoch + *max_epochs) : config.epochs;
    train_member(ms, static_cast<int>(m), config, model, train_data, val_data, limit, on_epoch);
  }
}

TrainState train(const TrainConfig& config, const EgnnConfig& model, const std::vector<GraphSample>& train_data,
                 const std::vector<GraphSample>& val_data) {
  TrainState state = init_train_state(config, model);
  train(state, config, model, train_data, val_data);
  return state;
}

// Persistence ------------------------------------------------------------------------

void save_train_state(const std::filesystem::path& path, const TrainState& state, const EgnnConfig& model) {
  nlohmann::ordered_json header;
  header["format"] = "pegnn-train-state";
  header["ordering_version"] = kParamOrderingVersion;
  header["param_count"] = make_param_layout(model).size();
  auto& members = header["members"];
  members = nlohmann::ordered_json::array();
  for (const auto& ms : state.members) {
    nlohmann::ordered_json j;
    j["seed"] = ms.seed;
    j["step"] = ms.step;
    j["epoch"] = ms.epoch;
    j["best_val"] = std::isfinite(ms.best_val) ? nlohmann::ordered_json(ms.best_val) : nlohmann::ordered_json(nullptr);
    j["epochs_since_best"] = ms.epochs_since_best;
    j["finished"] = ms.finished;
    auto& log = j["log"];
    log = nlohmann::ordered_json::array();
    for (const auto& r : ms.log) log.push_back({r.epoch, r.train_loss, r.val_metric, r.wall_time_s, r.grad_norm});
    members.push_back(std::move(j));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  auto put = [&](const Eigen::VectorXd& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  for (const auto& ms : state.members) {
    put(ms.params.values());
    put(ms.adam_m);
    put(ms.adam_v);
    put(ms.best_params.values());
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

TrainState load_train_state(const std::filesystem::path& path, const EgnnConfig& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open train state '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("train state '" + path.string() + "' has no header");
  const ad::ParamVector layout = make_param_layout(model);
  TrainState state;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("format") != "pegnn-train-state") throw IoError("not a pegnn train state");
    const auto declared = header.at("param_count").get<std::size_t>();
    if (declared != layout.size()) {
      throw CompatibilityError("train state '" + path.string() + "' holds " + std::to_string(declared) +
                               " parameters per model but the configuration requires " +
                               std::to_string(layout.size()));
    }
    for (const auto& j : header.at("members")) {
      ModelState ms;
      ms.seed = j.at("seed").get<std::uint64_t>();
      ms.step = j.at("step").get<std::int64_t>();
      ms.epoch = j.at("epoch").get<int>();
      ms.best_val = j.at("best_val").is_null() ? std::numeric_limits<double>::infinity()
                                               : j.at("best_val").get<double>();
      ms.epochs_since_best = j.at("epochs_since_best").get<int>();
      ms.finished = j.at("finished").get<bool>();
      for (const auto& r : j.at("log")) {
        ms.log.push_back(LogRow{r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>(),
                                r.at(3).get<double>(), r.at(4).get<double>()});
      }
      state.members.push_back(std::move(ms));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("train state '" + path.string() + "': malformed header: " + e.what());
  }
  const auto n = static_cast<Eigen::Index>(layout.size());
  auto get = [&](Eigen::VectorXd& v) {
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * static_cast<Eigen::Index>(sizeof(double))));
    if (in.gcount() != static_cast<std::streamsize>(n * static_cast<Eigen::Index>(sizeof(double)))) {
      throw IoError("train state '" + path.string() + "': truncated payload");
    }
  };
  for (auto& ms : state.members) {
    ms.params = layout;
    ms.best_params = layout;
    get(ms.params.values());
    get(ms.adam_m);
    get(ms.adam_v);
    get(ms.best_params.values());
  }
  return state;
}

void write_log_csv(std::ostream& out, const std::vector<LogRow>& log) {
  out << "epoch,train_loss,val_metric,wall_time_s,grad_norm\n";
  out << std::setprecision(17);
  for (const auto& r : log) {
    out << r.epoch << "," << r.train_loss << "," << r.val_metric << "," << r.wall_time_s << "," << r.grad_norm << "\n";
  }
}

}  // namespace pegnn
