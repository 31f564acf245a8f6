#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <vector>

#include "pegnn/autodiff.hpp"
#include "pegnn/rng.hpp"

namespace pegnn {

/// One graph-level noise vector z = W_z eps with eps ~ N(0, I), so that
/// z ~ N(0, W_z W_z^T). `eps` is kept for reparameterized gradients.
struct NoiseDraw {
  Eigen::VectorXd z;
  Eigen::VectorXd eps;
  int draw_id = 0;
};

struct EnsembleNoise {
  std::vector<NoiseDraw> draws;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(draws.size()); }
  /// K x d_z matrix of the standard-normal draws, row k = draw k.
  ad::Matrix eps_rows() const;
  ad::Matrix z_rows() const;
};

/// Fills a rows x d_z matrix; row r is drawn from the stream keyed by
/// derive_seed(seed, {r}), independent of `rows`.
ad::Matrix standard_normal_rows(int rows, int d_z, std::uint64_t seed);

NoiseDraw sample_noise(const ad::Matrix& w_z, Rng& rng, int draw_id = 0);

/// K independent draws; draw k uses the stream derive_seed(seed, {k}).
EnsembleNoise draw_ensemble(const ad::Matrix& w_z, int k, std::uint64_t seed);

/// First sub-layer of a perturbed block, h = W x + b + W_noise z, with W in
/// its mathematical [out, in] orientation.
Eigen::VectorXd inject(const ad::Matrix& w_first, const Eigen::VectorXd& bias,
                       const ad::Matrix& w_noise, const Eigen::VectorXd& x, const Eigen::VectorXd& z);

/// Reparameterized noise on the tape: rows eps_r^T W_z^T, one per graph.
ad::Var noise_rows(ad::Tape& tape, ad::Var w_z, const ad::Matrix& eps_rows);

/// Tape form of the injection: adds W_noise z_g to row r of `first_linear`,
/// where g = element_graph[r]. Every element of graph g sees the same z_g.
ad::Var inject(ad::Tape& tape, ad::Var first_linear, ad::Var w_noise, ad::Var z_rows,
               const std::shared_ptr<const ad::IndexList>& element_graph);

}  // namespace pegnn
