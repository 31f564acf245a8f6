#include "pegnn/experiment.hpp"

#include <charconv>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "pegnn/errors.hpp"

#ifndef PEGNN_VERSION
#define PEGNN_VERSION "unknown"
#endif

namespace pegnn {

const char* version_string() { return PEGNN_VERSION; }

EgnnConfig RunConfig::model_for(TrainMode mode) const {
  EgnnConfig m = model;
  if (mode != TrainMode::kCrps) m.noise_dim = 0;
  return m;
}

void RunConfig::validate() const {
  sim.validate();
  if (sizes.train == 0 || sizes.val == 0 || sizes.test == 0) throw ConfigError("data split sizes must be positive");
  train.validate(model_for(train.mode));
  if (k_eval < 1) throw ConfigError("eval.k must be >= 1");
  if (sweep_sizes.empty() || sweep_seeds.empty()) throw ConfigError("sweep.sizes and sweep.seeds must be non-empty");
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

int to_int(std::int64_t v, const char* key) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ConfigError(std::string(key) + " is out of range");
  }
  return static_cast<int>(v);
}

std::size_t to_count(std::int64_t v, const char* key) {
  if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
  return static_cast<std::size_t>(v);
}

}  // namespace

RunConfig load_run_config(const KeyValueConfig& kv) {
  RunConfig c;
  SimConfig& s = c.sim;
  s.n_particles = to_int(kv.get_int("sim.n_particles", s.n_particles), "sim.n_particles");
  s.charge_values = kv.get_doubles("sim.charges", s.charge_values);
  s.dt = kv.get_double("sim.dt", s.dt);
  s.n_steps = to_int(kv.get_int("sim.n_steps", s.n_steps), "sim.n_steps");
  s.softening = kv.get_double("sim.softening", s.softening);
  s.box_init_scale = kv.get_double("sim.box_init_scale", s.box_init_scale);
  s.vel_init_scale = kv.get_double("sim.vel_init_scale", s.vel_init_scale);
  s.min_pair_distance = kv.get_double("sim.min_pair_distance", s.min_pair_distance);
  s.seed = kv.get_uint("sim.seed", s.seed);

  const std::size_t n_train = to_count(kv.get_int("data.n_train", 1000), "data.n_train");
  c.sizes = default_split_sizes(n_train);
  c.sizes.val = to_count(kv.get_int("data.n_val", static_cast<std::int64_t>(c.sizes.val)), "data.n_val");
  c.sizes.test = to_count(kv.get_int("data.n_test", static_cast<std::int64_t>(c.sizes.test)), "data.n_test");

  EgnnConfig& m = c.model;
  m.n_layers = to_int(kv.get_int("model.n_layers", m.n_layers), "model.n_layers");
  m.hidden = to_int(kv.get_int("model.hidden", m.hidden), "model.hidden");
  m.noise_dim = to_int(kv.get_int("model.noise_dim", m.noise_dim), "model.noise_dim");
  m.activation = kv.get_string("model.activation", m.activation);

  TrainConfig& t = c.train;
  t.mode = parse_mode(kv.get_string("train.mode", mode_name(t.mode)));
  t.k_train = to_int(kv.get_int("train.k_train", t.k_train), "train.k_train");
  t.k_val = to_int(kv.get_int("train.k_val", t.k_val), "train.k_val");
  t.batch_size = to_int(kv.get_int("train.batch_size", t.batch_size), "train.batch_size");
  t.epochs = to_int(kv.get_int("train.epochs", t.epochs), "train.epochs");
  t.learning_rate = kv.get_double("train.learning_rate", t.learning_rate);
  t.final_learning_rate = kv.get_double("train.final_learning_rate", t.final_learning_rate);
  t.beta1 = kv.get_double("train.beta1", t.beta1);
  t.beta2 = kv.get_double("train.beta2", t.beta2);
  t.adam_eps = kv.get_double("train.adam_eps", t.adam_eps);
  t.weight_decay = kv.get_double("train.weight_decay", t.weight_decay);
  t.ensemble_size = to_int(kv.get_int("train.ensemble_size", t.ensemble_size), "train.ensemble_size");
  const std::string clip = kv.get_string("train.grad_clip_norm", "");
  if (clip == "none") {
    t.grad_clip_norm.reset();
  } else if (!clip.empty()) {
    t.grad_clip_norm = kv.get_double("train.grad_clip_norm", 5.0);
  }
  t.seed = kv.get_uint("train.seed", t.seed);
  t.patience = to_int(kv.get_int("train.patience", t.patience), "train.patience");
  t.divergence_factor = kv.get_double("train.divergence_factor", t.divergence_factor);
  t.chunk_size = to_int(kv.get_int("train.chunk_size", t.chunk_size), "train.chunk_size");
  t.log_wall_time = kv.get_bool("train.log_wall_time", t.log_wall_time);

  c.k_eval = to_int(kv.get_int("eval.k", c.k_eval), "eval.k");
  c.eval_seed = kv.get_uint("eval.seed", c.eval_seed);

  std::vector<std::int64_t> sizes_default(c.sweep_sizes.begin(), c.sweep_sizes.end());
  c.sweep_sizes.clear();
  for (auto v : kv.get_ints("sweep.sizes", sizes_default)) c.sweep_sizes.push_back(to_count(v, "sweep.sizes"));
  std::vector<std::int64_t> seeds_default(c.sweep_seeds.begin(), c.sweep_seeds.end());
  c.sweep_seeds.clear();
  for (auto v : kv.get_ints("sweep.seeds", seeds_default)) c.sweep_seeds.push_back(to_count(v, "sweep.seeds"));

  const auto unused = kv.unused_keys();
  if (!unused.empty()) {
    std::string msg = "unknown configuration key(s):";
    for (const auto& k : unused) msg += " " + k;
    throw ConfigError(msg);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return load_run_config(KeyValueConfig::load(path));
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.find(path.string()) != std::string::npos) throw;
    throw ConfigError(path.string() + ": " + what);
  }
}

std::string dump_run_config(const RunConfig& c) {
  std::ostringstream o;
  o << "config_version = " << KeyValueConfig::kSchemaVersion << "\n";
  o << "sim.n_particles = " << c.sim.n_particles << "\n";
  o << "sim.charges = " << join(c.sim.charge_values) << "\n";
  o << "sim.dt = " << fmt(c.sim.dt) << "\n";
  o << "sim.n_steps = " << c.sim.n_steps << "\n";
  o << "sim.softening = " << fmt(c.sim.softening) << "\n";
  o << "sim.box_init_scale = " << fmt(c.sim.box_init_scale) << "\n";
  o << "sim.vel_init_scale = " << fmt(c.sim.vel_init_scale) << "\n";
  o << "sim.min_pair_distance = " << fmt(c.sim.min_pair_distance) << "\n";
  o << "sim.seed = " << c.sim.seed << "\n";
  o << "data.n_train = " << c.sizes.train << "\n";
  o << "data.n_val = " << c.sizes.val << "\n";
  o << "data.n_test = " << c.sizes.test << "\n";
  o << "model.n_layers = " << c.model.n_layers << "\n";
  o << "model.hidden = " << c.model.hidden << "\n";
  o << "model.noise_dim = " << c.model.noise_dim << "\n";
  o << "model.activation = " << c.model.activation << "\n";
  const TrainConfig& t = c.train;
  o << "train.mode = " << mode_name(t.mode) << "\n";
  o << "train.k_train = " << t.k_train << "\n";
  o << "train.k_val = " << t.k_val << "\n";
  o << "train.batch_size = " << t.batch_size << "\n";
  o << "train.epochs = " << t.epochs << "\n";
  o << "train.learning_rate = " << fmt(t.learning_rate) << "\n";
  o << "train.final_learning_rate = " << fmt(t.final_learning_rate) << "\n";
  o << "train.beta1 = " << fmt(t.beta1) << "\n";
  o << "train.beta2 = " << fmt(t.beta2) << "\n";
  o << "train.adam_eps = " << fmt(t.adam_eps) << "\n";
  o << "train.weight_decay = " << fmt(t.weight_decay) << "\n";
  o << "train.ensemble_size = " << t.ensemble_size << "\n";
  o << "train.grad_clip_norm = " << (t.grad_clip_norm ? fmt(*t.grad_clip_norm) : std::string("none")) << "\n";
  o << "train.seed = " << t.seed << "\n";
  o << "train.patience = " << t.patience << "\n";
  o << "train.divergence_factor = " << fmt(t.divergence_factor) << "\n";
  o << "train.chunk_size = " << t.chunk_size << "\n";
  o << "train.log_wall_time = " << (t.log_wall_time ? "true" : "false") << "\n";
  o << "eval.k = " << c.k_eval << "\n";
  o << "eval.seed = " << c.eval_seed << "\n";
  o << "sweep.sizes = " << join(c.sweep_sizes) << "\n";
  o << "sweep.seeds = " << join(c.sweep_seeds) << "\n";
  return o.str();
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::write(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config_path"] = config_path;
  j["resolved_config"] = resolved_config;
  j["seeds"] = seeds;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["version"] = version_string();
  j["status"] = status;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  if (divergence_json) j["divergence"] = nlohmann::ordered_json::parse(*divergence_json);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for manifest '" + path.string() + "'");
}

TrainedModel train_model(const RunConfig& config, TrainMode mode, std::uint64_t seed,
                         const std::vector<GraphSample>& train_data, const std::vector<GraphSample>& val_data,
                         const EpochCallback& on_epoch) {
  TrainConfig tc = config.train;
  tc.mode = mode;
  tc.seed = seed;
  TrainedModel out;
  out.mode = mode;
  out.config = config.model_for(mode);
  TrainState state = init_train_state(tc, out.config);
  train(state, tc, out.config, train_data, val_data, std::nullopt, on_epoch);
  for (auto& ms : state.members) {
    out.members.push_back(std::move(ms.best_params));
    out.logs.push_back(std::move(ms.log));
  }
  return out;
}

MetricsReport evaluate_model(const TrainedModel& model, const std::vector<GraphSample>& test_data, int k_eval,
                             std::uint64_t eval_seed) {
  switch (model.mode) {
    case TrainMode::kDeterministic:
      return evaluate(deterministic_forecaster(model.members.front(), model.config, 1), test_data);
    case TrainMode::kEnsemble:
      return evaluate(ensemble_forecaster(model.members, model.config), test_data);
    case TrainMode::kCrps:
      return evaluate(perturbed_forecaster(model.members.front(), model.config, k_eval, eval_seed), test_data);
  }
  throw ConfigError("evaluate_model: unknown mode");
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "n,model,seed,mse,crps,ssr\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.n << "," << r.model << "," << r.seed << "," << r.mse << "," << r.crps << ",";
    if (r.ssr) out << *r.ssr;
    out << "\n";
  }
}

}  // namespace pegnn
