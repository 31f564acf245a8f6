#include "pegnn/nbody.hpp"

#include <cmath>
#include <sstream>

#include "pegnn/errors.hpp"

namespace pegnn {

void SimConfig::validate() const {
  if (n_particles < 2) throw ConfigError("sim.n_particles must be >= 2");
  if (charge_values.empty()) throw ConfigError("sim.charge_values must not be empty");
  if (!(dt > 0.0)) throw ConfigError("sim.dt must be > 0");
  if (n_steps < 1) throw ConfigError("sim.n_steps must be >= 1");
  if (!(softening >= 0.0)) throw ConfigError("sim.softening must be >= 0");
  if (!(box_init_scale > 0.0)) throw ConfigError("sim.box_init_scale must be > 0");
  if (!(vel_init_scale >= 0.0)) throw ConfigError("sim.vel_init_scale must be >= 0");
  if (!(min_pair_distance >= 0.0)) throw ConfigError("sim.min_pair_distance must be >= 0");
}

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Coords coulomb_forces(const Coords& positions, const Eigen::VectorXd& charges, double softening) {
  const int n = static_cast<int>(positions.rows());
  Coords forces = Coords::Zero(n, 3);
  const double eps2 = softening * softening;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Eigen::RowVector3d r = positions.row(i) - positions.row(j);
      const double d2 = r.squaredNorm() + eps2;
      const double inv = 1.0 / (d2 * std::sqrt(d2));
      const Eigen::RowVector3d f = (charges[i] * charges[j] * inv) * r;
      if (!f.allFinite()) {
        std::ostringstream msg;
        msg << "degenerate configuration: particles " << i << " and " << j
            << " produce a non-finite force (separation " << r.norm() << ")";
        throw DegenerateConfigurationError(i, j, msg.str());
      }
      forces.row(i) += f;
      forces.row(j) -= f;
    }
  }
  return forces;
}

double total_energy(const ParticleState& state, double softening) {
  const int n = state.size();
  double kinetic = 0.5 * state.velocities.squaredNorm();
  double potential = 0.0;
  const double eps2 = softening * softening;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d2 = (state.positions.row(i) - state.positions.row(j)).squaredNorm() + eps2;
      potential += state.charges[i] * state.charges[j] / std::sqrt(d2);
    }
  }
  return kinetic + potential;
}

namespace {

// Advances in place; `forces` holds F(x) on entry and on exit.
void kdk(ParticleState& s, Coords& forces, double dt, double softening) {
  s.velocities += (0.5 * dt) * forces;
  s.positions += dt * s.velocities;
  forces = coulomb_forces(s.positions, s.charges, softening);
  s.velocities += (0.5 * dt) * forces;
}

}  // namespace

ParticleState step_leapfrog(const ParticleState& state, double dt, double softening) {
  ParticleState next = state;
  Coords forces = coulomb_forces(next.positions, next.charges, softening);
  kdk(next, forces, dt, softening);
  return next;
}

Trajectory simulate(const ParticleState& initial, const SimConfig& config) {
  Trajectory traj;
  traj.config = config;
  traj.states.reserve(static_cast<std::size_t>(config.n_steps) + 1);
  traj.states.push_back(initial);
  ParticleState s = initial;
  Coords forces = coulomb_forces(s.positions, s.charges, config.softening);
  for (int t = 0; t < config.n_steps; ++t) {
    kdk(s, forces, config.dt, config.softening);
    traj.states.push_back(s);
  }
  return traj;
}

ParticleState propagate(const ParticleState& initial, const SimConfig& config) {
  ParticleState s = initial;
  Coords forces = coulomb_forces(s.positions, s.charges, config.softening);
  for (int t = 0; t < config.n_steps; ++t) kdk(s, forces, config.dt, config.softening);
  return s;
}

ParticleState sample_initial_state(const SimConfig& config, Rng& rng, int& rejections) {
  const int n = config.n_particles;
  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    ParticleState s;
    s.positions.resize(n, 3);
    s.velocities.resize(n, 3);
    s.charges.resize(n);
    for (int i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a) s.positions(i, a) = config.box_init_scale * standard_normal(rng);
    }
    for (int i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a) s.velocities(i, a) = config.vel_init_scale * standard_normal(rng);
    }
    const auto n_charges = config.charge_values.size();
    for (int i = 0; i < n; ++i) {
      const auto pick = static_cast<std::size_t>(rng() % n_charges);
      s.charges[i] = config.charge_values[pick];
    }
    double min_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        min_d = std::min(min_d, (s.positions.row(i) - s.positions.row(j)).norm());
      }
    }
    if (min_d >= config.min_pair_distance) return s;
    ++rejections;
  }
  throw ConfigError("initial-state sampling: no configuration satisfied min_pair_distance after " +
                    std::to_string(kMaxAttempts) + " attempts");
}

namespace {

Stream split_stream(Split split) {
  switch (split) {
    case Split::kTrain: return Stream::kDatasetTrain;
    case Split::kVal: return Stream::kDatasetVal;
    case Split::kTest: return Stream::kDatasetTest;
  }
  return Stream::kDatasetTrain;
}

}  // namespace

std::vector<GraphSample> generate_dataset(const SimConfig& config, std::size_t n_samples,
                                          Split split) {
  config.validate();
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
  std::vector<GraphSample> out;
  out.reserve(n_samples);
  long long rejections = 0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    Rng rng = make_rng(derive_seed(config.seed, split_stream(split), {i}));
    int rej = 0;
    ParticleState init = sample_initial_state(config, rng, rej);
    rejections += rej;
    ParticleState final_state = propagate(init, config);
    out.push_back(GraphSample{std::move(init), std::move(final_state.positions)});
  }
  const double total = static_cast<double>(n_samples) + static_cast<double>(rejections);
  if (static_cast<double>(rejections) > 0.5 * total) {
    throw ConfigError("initial-state rejection rate " +
                      std::to_string(static_cast<double>(rejections) / total) +
                      " exceeds 50%; lower sim.min_pair_distance or raise sim.box_init_scale");
  }
  return out;
}

SplitSizes default_split_sizes(std::size_t n_train) {
  return SplitSizes{n_train, std::max<std::size_t>(n_train / 10, 100), 2000};
}

}  // namespace pegnn
