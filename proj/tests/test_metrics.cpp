#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "pegnn/errors.hpp"
#include "pegnn/metrics.hpp"

using namespace pegnn;

namespace {

EnsemblePrediction make_pred(const std::vector<std::vector<double>>& rows) {
  EnsemblePrediction p;
  p.samples.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t d = 0; d < rows[k].size(); ++d)
      p.samples(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d)) = rows[k][d];
  p.n_atoms = 1;
  p.n_axes = p.d();
  return p;
}

// Synthetic task: structure i has N = 5 particles whose target entries are
// drawn from N(mu_i, sigma_i^2); a calibrated forecaster samples the same law.
struct Synthetic {
  std::vector<GraphSample> data;
  std::vector<Eigen::VectorXd> mu;
  std::vector<double> sigma;
};

Synthetic make_synthetic(std::size_t n, std::uint64_t seed, bool vary_sigma) {
  Synthetic s;
  Rng rng = make_rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double sigma = vary_sigma ? 0.1 + 2.0 * uniform_real(rng, 0.0, 1.0) : 0.7;
    Eigen::VectorXd mu(15);
    GraphSample g;
    g.target_positions.resize(5, 3);
    for (int d = 0; d < 15; ++d) {
      mu[d] = standard_normal(rng);
      g.target_positions(d / 3, d % 3) = mu[d] + sigma * standard_normal(rng);
    }
    s.data.push_back(std::move(g));
    s.mu.push_back(mu);
    s.sigma.push_back(sigma);
  }
  return s;
}

Forecaster calibrated(const Synthetic& s, int k, std::uint64_t seed) {
  return [&s, k, seed](std::size_t i, const GraphSample&) {
    Rng rng = make_rng(derive_seed(seed, {i}));
    EnsemblePrediction p;
    p.samples.resize(k, 15);
    for (int m = 0; m < k; ++m)
      for (int d = 0; d < 15; ++d) p.samples(m, d) = s.mu[i][d] + s.sigma[i] * standard_normal(rng);
    p.n_atoms = 5;
    p.n_axes = 3;
    return p;
  };
}

}  // namespace

TEST(MseOfMean, HandExamples) {
  EXPECT_EQ(mse_of_mean(make_pred({{0, 0}, {2, 2}}), Eigen::Vector2d(1, 1)), 0.0);
  EXPECT_DOUBLE_EQ(mse_of_mean(make_pred({{1, 3}}), Eigen::Vector2d(0, 0)), 5.0);
  EXPECT_DOUBLE_EQ(mse_of_mean(make_pred({{1, 3}, {3, 5}}), Eigen::Vector2d(0, 0)), (4.0 + 16.0) / 2.0);
}

TEST(MeanEnsembleVariance, UnbiasedDenominator) {
  EXPECT_DOUBLE_EQ(mean_ensemble_variance(make_pred({{0, 1}, {2, 1}})), (2.0 + 0.0) / 2.0);
}

TEST(Ssr, IdenticalSamplesGiveZero) {
  const auto p = make_pred({{1, 2}, {1, 2}, {1, 2}});
  const std::vector<EnsemblePrediction> preds{p};
  const std::vector<Eigen::VectorXd> ys{Eigen::Vector2d(0, 0)};
  ASSERT_TRUE(ssr(preds, ys).has_value());
  EXPECT_EQ(*ssr(preds, ys), 0.0);
}

TEST(Ssr, AbsentForPerfectMean) {
  const std::vector<EnsemblePrediction> preds{make_pred({{0, 0}, {2, 2}})};
  const std::vector<Eigen::VectorXd> ys{Eigen::Vector2d(1, 1)};
  EXPECT_FALSE(ssr(preds, ys).has_value());
}

TEST(Ssr, ScalingAndSpreadHomogeneity) {
  Rng rng = make_rng(1);
  std::vector<EnsemblePrediction> preds;
  std::vector<Eigen::VectorXd> ys;
  for (int s = 0; s < 10; ++s) {
    EnsemblePrediction p;
    p.samples.resize(6, 4);
    for (Eigen::Index i = 0; i < p.samples.size(); ++i) p.samples.data()[i] = standard_normal(rng);
    preds.push_back(p);
    Eigen::VectorXd y(4);
    for (int d = 0; d < 4; ++d) y[d] = standard_normal(rng);
    ys.push_back(y);
  }
  const double base = *ssr(preds, ys);
  auto scaled_p = preds;
  auto scaled_y = ys;
  for (auto& p : scaled_p) p.samples *= 3.5;
  for (auto& y : scaled_y) y *= 3.5;
  EXPECT_NEAR(*ssr(scaled_p, scaled_y), base, 1e-12);

  auto wide = preds;
  for (auto& p : wide) {
    const Eigen::RowVectorXd mean = p.samples.colwise().mean();
    p.samples = (2.0 * (p.samples.rowwise() - mean)).rowwise() + mean;
  }
  EXPECT_NEAR(*ssr(wide, ys), 2.0 * base, 1e-12);
  EXPECT_NEAR(*ssr(preds, ys) / *ssr_uncorrected(preds, ys), std::sqrt(7.0 / 6.0), 1e-12);
}

TEST(Ssr, RequiresTwoMembers) {
  const std::vector<EnsemblePrediction> preds{make_pred({{1, 2}})};
  const std::vector<Eigen::VectorXd> ys{Eigen::Vector2d(0, 0)};
  EXPECT_THROW(ssr(preds, ys), Error);
}

TEST(Spearman, HandExamples) {
  const double a[] = {1, 2, 3, 4};
  const double rev[] = {4, 3, 2, 1};
  EXPECT_NEAR(*spearman_rho(a, a), 1.0, 1e-15);
  EXPECT_NEAR(*spearman_rho(a, rev), -1.0, 1e-15);
  const double x[] = {1, 2, 3};
  const double y[] = {3, 1, 2};
  EXPECT_NEAR(*spearman_rho(x, y), -0.5, 1e-15);
}

TEST(Spearman, TiesAndDegenerateInputs) {
  const double v[] = {10, 20, 20, 30};
  EXPECT_EQ(midranks(v), (std::vector<double>{1, 2.5, 2.5, 4}));
  const double flat[] = {5, 5, 5, 5};
  EXPECT_FALSE(spearman_rho(v, flat).has_value());
  const double two[] = {1, 2};
  EXPECT_THROW(spearman_rho(two, two), Error);
}

TEST(Spearman, InvariantUnderMonotoneTransforms) {
  Rng rng = make_rng(4);
  std::vector<double> a(30), b(30), ta(30), tb(30);
  for (int i = 0; i < 30; ++i) {
    a[i] = standard_normal(rng);
    b[i] = a[i] + standard_normal(rng);
    ta[i] = std::exp(3.0 * a[i]);
    tb[i] = b[i] * b[i] * b[i] + 2.0;
  }
  EXPECT_NEAR(*spearman_rho(a, b), *spearman_rho(ta, tb), 1e-14);
}

TEST(Evaluate, SingleSampleGivesMaeAndNoSpreadMetrics) {
  Synthetic s = make_synthetic(20, 3, false);
  const Forecaster point = [&s](std::size_t i, const GraphSample&) {
    EnsemblePrediction p;
    p.samples = s.mu[i].transpose();
    p.n_atoms = 5;
    p.n_axes = 3;
    return p;
  };
  const MetricsReport r = evaluate(point, s.data);
  double mae = 0.0;
  for (std::size_t i = 0; i < 20; ++i) mae += (flatten(s.data[i].target_positions) - s.mu[i]).cwiseAbs().mean();
  EXPECT_NEAR(r.crps, mae / 20.0, 1e-14);
  EXPECT_FALSE(r.ssr.has_value());
  EXPECT_FALSE(r.spearman_rho.has_value());
  EXPECT_EQ(r.k_eval, 1);
}

TEST(Evaluate, RepeatedPointForecastHasZeroSpread) {
  Synthetic s = make_synthetic(10, 3, false);
  const Forecaster point = [&s](std::size_t i, const GraphSample&) {
    EnsemblePrediction p;
    p.samples = s.mu[i].transpose().replicate(4, 1);
    p.n_atoms = 5;
    p.n_axes = 3;
    return p;
  };
  const MetricsReport r = evaluate(point, s.data);
  EXPECT_EQ(*r.ssr, 0.0);
  double mae = 0.0;
  for (std::size_t i = 0; i < 10; ++i) mae += (flatten(s.data[i].target_positions) - s.mu[i]).cwiseAbs().mean();
  EXPECT_NEAR(r.crps, mae / 10.0, 1e-13);
}

TEST(Evaluate, CalibratedForecasterScoresNearAnalytic) {
  const Synthetic s = make_synthetic(500, 5, true);
  const MetricsReport r = evaluate(calibrated(s, 100, 6), s.data);
  EXPECT_GE(*r.ssr, 0.95);
  EXPECT_LE(*r.ssr, 1.05);
  double analytic = 0.0;
  for (std::size_t i = 0; i < 500; ++i) {
    const Eigen::VectorXd y = flatten(s.data[i].target_positions);
    double sum = 0.0;
    for (int d = 0; d < 15; ++d) sum += gaussian_crps_analytic(s.mu[i][d], s.sigma[i], y[d]);
    analytic += sum / 15.0;
  }
  analytic /= 500.0;
  EXPECT_LT(std::abs(r.crps - analytic), 0.02 * analytic);
  EXPECT_GT(*r.spearman_rho, 0.5);
}

TEST(Evaluate, SameSeedSameReport) {
  const Synthetic s = make_synthetic(30, 7, true);
  const MetricsReport a = evaluate(calibrated(s, 10, 1), s.data);
  const MetricsReport b = evaluate(calibrated(s, 10, 1), s.data);
  EXPECT_EQ(a.crps, b.crps);
  EXPECT_EQ(a.mse_of_mean, b.mse_of_mean);
  EXPECT_EQ(*a.ssr, *b.ssr);
}

TEST(Evaluate, FiniteEnsembleCorrectionPointsTheRightWay) {
  double corrected = 0.0, uncorrected = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    const Synthetic s = make_synthetic(20, 1000 + static_cast<std::uint64_t>(r), false);
    std::vector<EnsemblePrediction> preds;
    std::vector<Eigen::VectorXd> ys;
    const Forecaster f = calibrated(s, 3, 2000 + static_cast<std::uint64_t>(r));
    for (std::size_t i = 0; i < s.data.size(); ++i) {
      preds.push_back(f(i, s.data[i]));
      ys.push_back(flatten(s.data[i].target_positions));
    }
    corrected += *ssr(preds, ys);
    uncorrected += *ssr_uncorrected(preds, ys);
  }
  corrected /= reps;
  uncorrected /= reps;
  EXPECT_LT(uncorrected, 1.0);
  EXPECT_LT(std::abs(corrected - 1.0), std::abs(uncorrected - 1.0));
}

TEST(Evaluate, FailuresAreCountedNotFatal) {
  const Synthetic s = make_synthetic(12, 9, true);
  const Forecaster good = calibrated(s, 4, 1);
  const Forecaster flaky = [&good](std::size_t i, const GraphSample& g) {
    if (i % 4 == 1) throw DegenerateConfigurationError(0, 1, "coincident particles");
    return good(i, g);
  };
  const MetricsReport r = evaluate(flaky, s.data);
  EXPECT_EQ(r.n_failed, 3u);
  EXPECT_EQ(r.n_test, 9u);
}

TEST(MetricsCsv, AggregateRowAndOptionalColumns) {
  MetricsReport a{.label = "a", .seed = 0, .mse_of_mean = 1.0, .crps = 2.0, .k_eval = 1, .n_test = 5};
  MetricsReport b{.label = "b", .seed = 1, .mse_of_mean = 3.0, .crps = 4.0, .k_eval = 1, .n_test = 5};
  std::vector<MetricsReport> runs{a, b};
  std::ostringstream out;
  write_metrics_csv(out, runs);
  const std::string text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "run,seed,K,n_test,mse,mse_std,crps,crps_std");
  EXPECT_NE(text.find("aggregate"), std::string::npos);
  EXPECT_EQ(text.find("ssr"), std::string::npos);

  runs[0].ssr = 0.8;
  runs[1].ssr = 1.0;
  std::ostringstream with;
  write_metrics_csv(with, runs);
  EXPECT_NE(with.str().find("ssr"), std::string::npos);
  const auto sm = summarize(runs, [](const MetricsReport& r) { return r.ssr; });
  EXPECT_NEAR(sm.mean, 0.9, 1e-15);
  EXPECT_NEAR(sm.std, std::sqrt(0.02), 1e-15);
}
