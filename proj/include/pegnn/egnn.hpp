#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pegnn/autodiff.hpp"
#include "pegnn/nbody.hpp"

namespace pegnn {

struct EgnnConfig {
  int n_layers = 4;
  int hidden = 64;
  /// 0 means the deterministic backbone without noise parameters.
  int noise_dim = 0;
  std::string activation = "silu";

  void validate() const;
  bool perturbed() const { return noise_dim > 0; }
  bool operator==(const EgnnConfig&) const = default;
};

struct ParamCount {
  std::int64_t backbone = 0;
  std::int64_t noise_overhead = 0;
  /// (backbone + noise_overhead) / backbone.
  double ratio = 1.0;
};

/// Exact counts from the block widths. Per layer, phi_e, phi_h, phi_x and phi_v
/// are two-linear-layer MLPs with hidden width d_h, inputs
/// {2 d_h + 3, 2 d_h, d_h, d_h} and outputs {d_h, d_h, 1, 1}; the embedding maps
/// the charge scalar to d_h features. Overhead is d_z^2 + 2 L d_h d_z.
ParamCount param_count(const EgnnConfig& config);

/// Version tag of the canonical flat ordering written into checkpoints.
inline constexpr int kParamOrderingVersion = 1;

/// Canonical parameter registry (all values zero):
///   embed.W [1, d_h], embed.b [1, d_h],
///   per layer l: phi_e.{W1 [2d_h+3, d_h], b1, W2 [d_h, d_h], b2},
///                phi_h.{W1 [2d_h, d_h], b1, W2 [d_h, d_h], b2},
///                phi_x.{W1 [d_h, d_h], b1, W2 [d_h, 1], b2 [1, 1]},
///                phi_v.{...same as phi_x},
///                phi_e.W_noise [d_h, d_z], phi_h.W_noise [d_h, d_z]   (d_z > 0 only)
///   noise.W_z [d_z, d_z]                                               (d_z > 0 only)
/// Backbone linear maps are stored [in, out] and applied as x * W + b. Rows of
/// phi_e.W1 follow the edge input order (h_i, h_j, d^2, d, q_i q_j). Noise
/// matrices keep their mathematical orientation (applied as W z).
ad::ParamVector make_param_layout(const EgnnConfig& config);

enum class NoiseGeneratorInit { kFanIn, kZero };

/// Backbone maps: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and
/// biases. Every W_noise starts at zero. W_z uses `wz_init`.
ad::ParamVector init_params(const EgnnConfig& config, std::uint64_t seed,
                            NoiseGeneratorInit wz_init = NoiseGeneratorInit::kFanIn);

/// Disjoint union of fully connected graphs (self edges excluded). Graph g
/// covers nodes [node_offset[g], node_offset[g+1]); edges are ordered by graph,
/// then receiver i, then sender j.
struct GraphBatch {
  int n_graphs = 0;
  int n_nodes = 0;
  int n_edges = 0;
  ad::Matrix positions;      // n_nodes x 3
  ad::Matrix velocities;     // n_nodes x 3
  ad::Matrix charges;        // n_nodes x 1
  ad::Matrix charge_product; // n_edges x 1
  ad::Matrix inv_degree;     // n_nodes x 1, 1/(N_g - 1)
  std::shared_ptr<const ad::IndexList> edge_receiver;
  std::shared_ptr<const ad::IndexList> edge_sender;
  std::shared_ptr<const ad::IndexList> edge_graph;
  std::shared_ptr<const ad::IndexList> node_graph;
  std::vector<int> node_offset;
};

/// Graph s * copies + c is copy c of states[s].
GraphBatch make_batch(std::span<const ParticleState* const> states, int copies = 1);

/// Records, for each perturbed block, the noise vector seen by every graph
/// element (edge rows for phi_e, node rows for phi_h).
struct InjectionTrace {
  std::vector<ad::Matrix> edge_blocks;
  std::vector<ad::Matrix> node_blocks;
};

/// Records the network on `tape` and returns predicted positions
/// (n_nodes x 3). `z_rows` is an n_graphs x d_z tape variable, or invalid for
/// the noise-free path. Parameters are read from tape.params().
ad::Var egnn_forward(ad::Tape& tape, const EgnnConfig& config, const GraphBatch& batch,
                     ad::Var z_rows = {}, InjectionTrace* trace = nullptr);

/// Single-structure convenience wrapper. Throws ConfigError when z is given
/// for a deterministic configuration or has the wrong length.
Coords egnn_forward(const ad::ParamVector& params, const EgnnConfig& config,
                    const ParticleState& state, const std::optional<Eigen::VectorXd>& z = {});

/// Predicted positions for K copies of one structure, copy k using row k of
/// `z_rows` (K x d_z) as its noise vector.
std::vector<Coords> egnn_forward_copies(const ad::ParamVector& params, const EgnnConfig& config,
                                        const ParticleState& state, const ad::Matrix& z_rows);

/// Names of all W_noise slots and W_z, in canonical order.
std::vector<std::size_t> noise_slots(const ad::ParamVector& params);

}  // namespace pegnn
