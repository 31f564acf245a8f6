#include "pegnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "pegnn/errors.hpp"
#include "pegnn/noise.hpp"

namespace pegnn {

double mse_of_mean(const EnsemblePrediction& pred, const Eigen::VectorXd& y) {
  if (pred.k() < 1) throw ShapeError("mse_of_mean: K must be >= 1");
  if (pred.d() != y.size()) throw ShapeError("mse_of_mean: prediction and target sizes differ");
  const Eigen::VectorXd mean = pred.samples.colwise().mean().transpose();
  return (mean - y).squaredNorm() / static_cast<double>(y.size());
}

double mean_ensemble_variance(const EnsemblePrediction& pred) {
  if (pred.k() < 2) throw ShapeError("mean_ensemble_variance: K must be >= 2");
  const Eigen::RowVectorXd mean = pred.samples.colwise().mean();
  const double ss = (pred.samples.rowwise() - mean).squaredNorm();
  return ss / (static_cast<double>(pred.k() - 1) * static_cast<double>(pred.d()));
}

namespace {

std::optional<double> spread_skill(std::span<const EnsemblePrediction> preds,
                                   std::span<const Eigen::VectorXd> targets, bool corrected) {
  if (preds.size() != targets.size()) throw ShapeError("ssr: predictions and targets differ in count");
  if (preds.empty()) return std::nullopt;
  const int k = preds.front().k();
  if (k < 2) throw ShapeError("ssr: requires K >= 2");
  double var_sum = 0.0;
  double err_sum = 0.0;
  double entries = 0.0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    if (preds[s].k() != k) throw ShapeError("ssr: ensemble sizes differ across structures");
    const double d = static_cast<double>(preds[s].d());
    var_sum += mean_ensemble_variance(preds[s]) * d;
    err_sum += mse_of_mean(preds[s], targets[s]) * d;
    entries += d;
  }
  const double rmse = std::sqrt(err_sum / entries);
  if (rmse == 0.0) return std::nullopt;
  const double factor = corrected ? (static_cast<double>(k) + 1.0) / static_cast<double>(k) : 1.0;
  return std::sqrt(factor * var_sum / entries) / rmse;
}

}  // namespace

std::optional<double> ssr(std::span<const EnsemblePrediction> preds, std::span<const Eigen::VectorXd> targets) {
  return spread_skill(preds, targets, true);
}

std::optional<double> ssr_uncorrected(std::span<const EnsemblePrediction> preds,
                                      std::span<const Eigen::VectorXd> targets) {
  return spread_skill(preds, targets, false);
}

std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman_rho(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("spearman_rho: inputs differ in length");
  if (a.size() < 3) throw ShapeError("spearman_rho: requires at least 3 values");
  const auto ra = midranks(a);
  const auto rb = midranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da == 0.0 || db == 0.0) return std::nullopt;
  return num / std::sqrt(da * db);
}

MetricsReport evaluate(const Forecaster& forecaster, const std::vector<GraphSample>& dataset) {
  MetricsReport report;
  std::vector<EnsemblePrediction> preds;
  std::vector<Eigen::VectorXd> targets;
  preds.reserve(dataset.size());
  targets.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    try {
      preds.push_back(forecaster(i, dataset[i]));
      targets.push_back(flatten(dataset[i].target_positions));
      if (preds.back().d() != targets.back().size()) throw ShapeError("forecast size differs from target");
    } catch (const Error&) {
      if (preds.size() > targets.size()) preds.pop_back();
      if (targets.size() > preds.size()) targets.pop_back();
      ++report.n_failed;
    }
  }
  report.n_test = preds.size();
  if (preds.empty()) throw Error("evaluate: every structure failed");
  report.k_eval = preds.front().k();

  std::vector<double> errors;
  std::vector<double> variances;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const double e = mse_of_mean(preds[s], targets[s]);
    errors.push_back(e);
    report.mse_of_mean += e;
    report.crps += crps_multi(preds[s], targets[s]).value;
    if (report.k_eval >= 2) variances.push_back(mean_ensemble_variance(preds[s]));
  }
  const double n = static_cast<double>(preds.size());
  report.mse_of_mean /= n;
  report.crps /= n;
  if (report.k_eval >= 2) {
    report.ssr = ssr(preds, targets);
    if (preds.size() >= 3) report.spearman_rho = spearman_rho(errors, variances);
  }
  return report;
}

Forecaster perturbed_forecaster(const ad::ParamVector& params, const EgnnConfig& config, int k,
                                std::uint64_t seed) {
  if (!config.perturbed()) throw ConfigError("perturbed_forecaster: model has no noise channel");
  if (k < 1) throw ConfigError("perturbed_forecaster: K must be >= 1");
  return [&params, config, k, seed](std::size_t index, const GraphSample& sample) {
    const ad::Matrix eps = standard_normal_rows(k, config.noise_dim,
                                                derive_seed(seed, Stream::kNoiseEval, {index}));
    const ad::Matrix w_z = params.view("noise.W_z");
    const ad::Matrix z = eps * w_z.transpose();
    return EnsemblePrediction::from_positions(egnn_forward_copies(params, config, sample.input, z));
  };
}

Forecaster deterministic_forecaster(const ad::ParamVector& params, const EgnnConfig& config, int k) {
  if (k < 1) throw ConfigError("deterministic_forecaster: K must be >= 1");
  return [&params, config, k](std::size_t, const GraphSample& sample) {
    const Coords out = egnn_forward(params, config, sample.input);
    return EnsemblePrediction::from_positions(std::vector<Coords>(static_cast<std::size_t>(k), out));
  };
}

Forecaster ensemble_forecaster(std::vector<ad::ParamVector> members, const EgnnConfig& config) {
  if (members.empty()) throw ConfigError("ensemble_forecaster: no members");
  return [members = std::move(members), config](std::size_t, const GraphSample& sample) {
    std::vector<Coords> out;
    out.reserve(members.size());
    for (const auto& m : members) out.push_back(egnn_forward(m, config, sample.input));
    return EnsemblePrediction::from_positions(out);
  };
}

MetricsSummary summarize(std::span<const MetricsReport> runs,
                         const std::function<std::optional<double>(const MetricsReport&)>& field) {
  std::vector<double> v;
  for (const auto& r : runs)
    if (auto x = field(r)) v.push_back(*x);
  MetricsSummary s;
  s.count = v.size();
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() >= 2) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

namespace {

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(10) << x;
  return s.str();
}

std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string(); }

}  // namespace

void write_metrics_csv(std::ostream& out, std::span<const MetricsReport> runs) {
  const bool any_ssr = std::any_of(runs.begin(), runs.end(), [](const auto& r) { return r.ssr.has_value(); });
  const bool any_rho =
      std::any_of(runs.begin(), runs.end(), [](const auto& r) { return r.spearman_rho.has_value(); });
  out << "run,seed,K,n_test,mse,mse_std,crps,crps_std";
  if (any_ssr) out << ",ssr,ssr_std";
  if (any_rho) out << ",spearman,spearman_std";
  out << "\n";
  for (const auto& r : runs) {
    out << r.label << "," << r.seed << "," << r.k_eval << "," << r.n_test << "," << fmt(r.mse_of_mean) << ",,"
        << fmt(r.crps) << ",";
    if (any_ssr) out << "," << fmt(r.ssr) << ",";
    if (any_rho) out << "," << fmt(r.spearman_rho) << ",";
    out << "\n";
  }
  if (runs.empty()) return;
  const auto mse = summarize(runs, [](const auto& r) { return std::optional<double>(r.mse_of_mean); });
  const auto crps = summarize(runs, [](const auto& r) { return std::optional<double>(r.crps); });
  std::size_t n_test = 0;
  for (const auto& r : runs) n_test += r.n_test;
  out << "aggregate,," << runs.front().k_eval << "," << n_test << "," << fmt(mse.mean) << "," << fmt(mse.std)
      << "," << fmt(crps.mean) << "," << fmt(crps.std);
  if (any_ssr) {
    const auto s = summarize(runs, [](const auto& r) { return r.ssr; });
    out << "," << fmt(s.mean) << "," << fmt(s.std);
  }
  if (any_rho) {
    const auto s = summarize(runs, [](const auto& r) { return r.spearman_rho; });
    out << "," << fmt(s.mean) << "," << fmt(s.std);
  }
  out << "\n";
}

std::string format_metrics(std::span<const MetricsReport> runs) {
  std::ostringstream s;
  s << std::left << std::setw(24) << "run" << std::setw(8) << "K" << std::setw(8) << "n" << std::setw(14) << "MSE"
    << std::setw(14) << "CRPS" << std::setw(10) << "SSR" << std::setw(10) << "rho" << "\n";
  auto opt = [](const std::optional<double>& x) { return x ? fmt(*x).substr(0, 8) : std::string("-"); };
  for (const auto& r : runs) {
    s << std::left << std::setw(24) << r.label << std::setw(8) << r.k_eval << std::setw(8) << r.n_test
      << std::setw(14) << fmt(r.mse_of_mean).substr(0, 12) << std::setw(14) << fmt(r.crps).substr(0, 12)
      << std::setw(10) << opt(r.ssr) << std::setw(10) << opt(r.spearman_rho) << "\n";
  }
  if (runs.size() > 1) {
    const auto mse = summarize(runs, [](const auto& r) { return std::optional<double>(r.mse_of_mean); });
    const auto crps = summarize(runs, [](const auto& r) { return std::optional<double>(r.crps); });
    const auto ssr_s = summarize(runs, [](const auto& r) { return r.ssr; });
    s << "mean +- std: MSE " << fmt(mse.mean) << " +- " << fmt(mse.std) << ", CRPS " << fmt(crps.mean) << " +- "
      << fmt(crps.std);
    if (ssr_s.count) s << ", SSR " << fmt(ssr_s.mean) << " +- " << fmt(ssr_s.std);
    s << "\n";
  }
  return s.str();
}

}  // namespace pegnn
