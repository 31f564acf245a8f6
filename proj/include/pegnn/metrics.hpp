#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pegnn/autodiff.hpp"
#include "pegnn/egnn.hpp"
#include "pegnn/nbody.hpp"
#include "pegnn/scoring.hpp"

namespace pegnn {

struct MetricsReport {
  std::string label;
  std::uint64_t seed = 0;
  double mse_of_mean = 0.0;
  double crps = 0.0;
  /// Absent when K = 1 or the ensemble-mean error is exactly zero.
  std::optional<double> ssr;
  /// Absent when K = 1, fewer than 3 structures, or either input is all ties.
  std::optional<double> spearman_rho;
  int k_eval = 0;
  std::size_t n_test = 0;
  std::size_t n_failed = 0;
};

/// Mean over entries of (ensemble mean - y)^2.
double mse_of_mean(const EnsemblePrediction& pred, const Eigen::VectorXd& y);

/// Mean over entries of the unbiased (K - 1 denominator) ensemble variance.
double mean_ensemble_variance(const EnsemblePrediction& pred);

/// Spread-to-skill ratio with finite-K correction:
///   sqrt((K+1)/K * mean unbiased variance) / RMSE of the ensemble mean,
/// pooled over every entry of every structure. Requires K >= 2.
std::optional<double> ssr(std::span<const EnsemblePrediction> preds, std::span<const Eigen::VectorXd> targets);

/// The same ratio without the (K+1)/K factor.
std::optional<double> ssr_uncorrected(std::span<const EnsemblePrediction> preds,
                                      std::span<const Eigen::VectorXd> targets);

/// 1-based ranks with ties assigned their average rank.
std::vector<double> midranks(std::span<const double> values);

/// Pearson correlation of midranks. Requires at least 3 values; absent when
/// either input is constant.
std::optional<double> spearman_rho(std::span<const double> a, std::span<const double> b);

/// Produces the ensemble for test structure `index`.
using Forecaster = std::function<EnsemblePrediction(std::size_t index, const GraphSample& sample)>;

/// Collects one EnsemblePrediction per structure and computes MSE of the
/// mean, fair CRPS, SSR and Spearman rho (per-structure squared error of the
/// mean against per-structure mean variance). Structures whose forecaster
/// throws pegnn::Error are counted in n_failed and skipped.
MetricsReport evaluate(const Forecaster& forecaster, const std::vector<GraphSample>& dataset);

/// P-EGNN: K noise draws per structure, keyed by (seed, structure, k).
Forecaster perturbed_forecaster(const ad::ParamVector& params, const EgnnConfig& config, int k,
                                std::uint64_t seed);
/// Noise-free backbone repeated K times.
Forecaster deterministic_forecaster(const ad::ParamVector& params, const EgnnConfig& config, int k = 1);
/// One member per independently trained model.
Forecaster ensemble_forecaster(std::vector<ad::ParamVector> members, const EgnnConfig& config);

struct MetricsSummary {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

/// Mean and sample standard deviation over the runs that report a value.
MetricsSummary summarize(std::span<const MetricsReport> runs,
                         const std::function<std::optional<double>(const MetricsReport&)>& field);

/// CSV with a header row, one row per run and one "aggregate" row holding
/// means (value columns) and standard deviations (*_std columns). The ssr and
/// spearman columns are omitted when no run reports them.
void write_metrics_csv(std::ostream& out, std::span<const MetricsReport> runs);

/// Human-readable table of the same information.
std::string format_metrics(std::span<const MetricsReport> runs);

}  // namespace pegnn
