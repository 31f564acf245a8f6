#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pegnn/rng.hpp"

namespace pegnn {

using Coords = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct SimConfig {
  int n_particles = 5;
  std::vector<double> charge_values{-1.0, 1.0};
  double dt = 1e-3;
  int n_steps = 1000;
  double softening = 1e-2;
  double box_init_scale = 1.0;
  double vel_init_scale = 1.0;
  double min_pair_distance = 0.1;
  std::uint64_t seed = 0;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

/// Unit-mass particles; row i of each matrix is particle i.
struct ParticleState {
  Coords positions;
  Coords velocities;
  Eigen::VectorXd charges;

  int size() const { return static_cast<int>(positions.rows()); }
};

struct Trajectory {
  std::vector<ParticleState> states;
  SimConfig config;
};

struct GraphSample {
  ParticleState input;
  Coords target_positions;
};

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split split);

/// Pairwise softened Coulomb forces,
///   F_i = sum_{j != i} q_i q_j (r_i - r_j) / (|r_i - r_j|^2 + eps^2)^{3/2}.
/// Each pair is evaluated once and applied with opposite signs.
Coords coulomb_forces(const Coords& positions, const Eigen::VectorXd& charges, double softening);

/// Kinetic plus softened Coulomb potential energy.
double total_energy(const ParticleState& state, double softening);

/// One kick-drift-kick velocity-Verlet step.
ParticleState step_leapfrog(const ParticleState& state, double dt, double softening);

/// Full trajectory of config.n_steps steps starting at `initial`.
Trajectory simulate(const ParticleState& initial, const SimConfig& config);

/// Final state only; bit-identical to the last state of simulate().
ParticleState propagate(const ParticleState& initial, const SimConfig& config);

/// Draws one initial state, resampling until every pair is at least
/// config.min_pair_distance apart. `rejections` counts discarded draws.
ParticleState sample_initial_state(const SimConfig& config, Rng& rng, int& rejections);

/// n_samples independent supervised pairs. Sample i uses only the substream
/// keyed by (seed, split, i), so a smaller dataset is a prefix of a larger one.
std::vector<GraphSample> generate_dataset(const SimConfig& config, std::size_t n_samples,
                                          Split split = Split::kTrain);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// n / max(n/10, 100) / 2000.
SplitSizes default_split_sizes(std::size_t n_train);

// Dataset container ---------------------------------------------------------
//
// Line 1: single-line JSON header terminated by '\n':
//   {"format":"pegnn-dataset","schema_version":1,"split":...,"n_samples":S,
//    "n_particles":N,"config":{...}}
// Then S records of little-endian float32, each laid out as
//   positions[N][3], velocities[N][3], charges[N], target_positions[N][3]
// for 10*N floats per record. Total payload = 4 * 10 * N * S bytes.

struct DatasetFile {
  SimConfig config;
  Split split = Split::kTrain;
  std::vector<GraphSample> samples;
};

inline constexpr int kDatasetSchemaVersion = 1;

void write_dataset(const std::filesystem::path& path, const SimConfig& config, Split split,
                   const std::vector<GraphSample>& samples);
DatasetFile read_dataset(const std::filesystem::path& path);

/// Header JSON fields shared by the dataset writer and the RunManifest echo.
std::string sim_config_json(const SimConfig& config);

}  // namespace pegnn
