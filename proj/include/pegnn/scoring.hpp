#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "pegnn/autodiff.hpp"
#include "pegnn/nbody.hpp"

namespace pegnn {

/// K ensemble members by D flattened entries. Positions and forces flatten
/// atom-major: entry d = 3 * atom + axis.
struct EnsemblePrediction {
  ad::Matrix samples;
  int n_atoms = 0;
  int n_axes = 1;

  int k() const { return static_cast<int>(samples.rows()); }
  int d() const { return static_cast<int>(samples.cols()); }

  static EnsemblePrediction from_positions(const std::vector<Coords>& members);
  static EnsemblePrediction from_scalars(std::span<const double> members);
};

Eigen::VectorXd flatten(const Coords& c);

/// value = reliability - spread.
struct ScoreValue {
  double value = 0.0;
  double reliability = 0.0;
  double spread = 0.0;
};

/// Sum over ordered pairs i != j of |x_i - x_j|, from order statistics:
/// 2 * sum_i (2i - K - 1) x_(i) with 1-based ranks.
double pairwise_abs_sum(std::span<const double> x);

/// Same quantity by direct O(K^2) enumeration.
double pairwise_abs_sum_direct(std::span<const double> x);

/// Fair (unbiased) CRPS of an ensemble for a scalar target:
///   (1/K) sum_k |x_k - y| - 1/(2K(K-1)) sum_{i != j} |x_i - x_j|,
/// with the spread term defined as 0 when K = 1.
ScoreValue fair_crps_scalar(std::span<const double> samples, double y);

/// Per-entry fair CRPS averaged over the D entries.
ScoreValue crps_multi(const EnsemblePrediction& pred, const Eigen::VectorXd& y);

/// Fair l1 energy score. Requires K >= 2.
double energy_score_l1(const EnsemblePrediction& pred, const Eigen::VectorXd& y);

/// crps_multi(E/N) + crps_multi(F) for joint energy and force supervision.
double crps_joint(const EnsemblePrediction& energy_pred, const EnsemblePrediction& force_pred,
                  double energy_true, const Eigen::VectorXd& force_true, int n_atoms);

/// Closed-form CRPS of N(mu, sigma^2) at y; |y - mu| when sigma = 0.
double gaussian_crps_analytic(double mu, double sigma, double y);

struct TapeScore {
  ad::Var value;
  ad::Var reliability;
  ad::Var spread;
};

/// Differentiable crps_multi. `samples` stacks K blocks of R x C rows (member k
/// in rows [kR, (k+1)R)); `target` is R x C. Entries are D = R * C.
TapeScore crps_multi(ad::Tape& tape, ad::Var samples, int k, const ad::Matrix& target);

}  // namespace pegnn
