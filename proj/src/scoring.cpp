#include "pegnn/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pegnn/errors.hpp"

namespace pegnn {

EnsemblePrediction EnsemblePrediction::from_positions(const std::vector<Coords>& members) {
  if (members.empty()) throw ShapeError("EnsemblePrediction: no members");
  EnsemblePrediction p;
  p.n_atoms = static_cast<int>(members.front().rows());
  p.n_axes = 3;
  p.samples.resize(static_cast<Eigen::Index>(members.size()), 3 * p.n_atoms);
  for (std::size_t k = 0; k < members.size(); ++k) {
    if (members[k].rows() != p.n_atoms) throw ShapeError("EnsemblePrediction: member sizes differ");
    p.samples.row(static_cast<Eigen::Index>(k)) = flatten(members[k]).transpose();
  }
  return p;
}

EnsemblePrediction EnsemblePrediction::from_scalars(std::span<const double> members) {
  EnsemblePrediction p;
  p.n_atoms = 1;
  p.n_axes = 1;
  p.samples.resize(static_cast<Eigen::Index>(members.size()), 1);
  for (std::size_t k = 0; k < members.size(); ++k) p.samples(static_cast<Eigen::Index>(k), 0) = members[k];
  return p;
}

Eigen::VectorXd flatten(const Coords& c) {
  Eigen::VectorXd out(c.size());
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (int a = 0; a < 3; ++a) out[3 * i + a] = c(i, a);
  return out;
}

double pairwise_abs_sum(std::span<const double> x) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  const auto k = static_cast<double>(s.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    acc += (2.0 * static_cast<double>(i + 1) - k - 1.0) * s[i];
  }
  return 2.0 * acc;
}

double pairwise_abs_sum_direct(std::span<const double> x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j)
      if (i != j) acc += std::abs(x[i] - x[j]);
  return acc;
}

ScoreValue fair_crps_scalar(std::span<const double> samples, double y) {
  if (samples.empty()) throw ShapeError("fair_crps_scalar: K must be >= 1");
  const auto k = static_cast<double>(samples.size());
  ScoreValue s;
  for (double x : samples) s.reliability += std::abs(x - y);
  s.reliability /= k;
  if (samples.size() >= 2) s.spread = pairwise_abs_sum(samples) / (2.0 * k * (k - 1.0));
  s.value = s.reliability - s.spread;
  return s;
}

ScoreValue crps_multi(const EnsemblePrediction& pred, const Eigen::VectorXd& y) {
  if (pred.k() < 1) throw ShapeError("crps_multi: K must be >= 1");
  if (pred.d() != y.size()) throw ShapeError("crps_multi: prediction and target sizes differ");
  ScoreValue total;
  std::vector<double> column(static_cast<std::size_t>(pred.k()));
  for (int d = 0; d < pred.d(); ++d) {
    for (int k = 0; k < pred.k(); ++k) column[static_cast<std::size_t>(k)] = pred.samples(k, d);
    const ScoreValue s = fair_crps_scalar(column, y[d]);
    total.reliability += s.reliability;
    total.spread += s.spread;
  }
  const double inv_d = 1.0 / static_cast<double>(pred.d());
  total.reliability *= inv_d;
  total.spread *= inv_d;
  total.value = total.reliability - total.spread;
  return total;
}

double energy_score_l1(const EnsemblePrediction& pred, const Eigen::VectorXd& y) {
  const int k = pred.k();
  if (k < 2) throw ShapeError("energy_score_l1: requires K >= 2");
  if (pred.d() != y.size()) throw ShapeError("energy_score_l1: prediction and target sizes differ");
  double skill = 0.0;
  for (int i = 0; i < k; ++i) skill += (pred.samples.row(i).transpose() - y).lpNorm<1>();
  double spread = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (i != j) spread += (pred.samples.row(i) - pred.samples.row(j)).lpNorm<1>();
  const auto kd = static_cast<double>(k);
  return skill / kd - spread / (2.0 * kd * (kd - 1.0));
}

double crps_joint(const EnsemblePrediction& energy_pred, const EnsemblePrediction& force_pred,
                  double energy_true, const Eigen::VectorXd& force_true, int n_atoms) {
  if (n_atoms <= 0) throw ShapeError("crps_joint: atom count must be positive");
  if (energy_pred.d() != 1) throw ShapeError("crps_joint: energy prediction must have D = 1");
  if (energy_pred.k() != force_pred.k()) throw ShapeError("crps_joint: ensemble sizes differ");
  EnsemblePrediction per_atom = energy_pred;
  per_atom.samples /= static_cast<double>(n_atoms);
  Eigen::VectorXd e(1);
  e[0] = energy_true / static_cast<double>(n_atoms);
  return crps_multi(per_atom, e).value + crps_multi(force_pred, force_true).value;
}

double gaussian_crps_analytic(double mu, double sigma, double y) {
  if (sigma < 0.0) throw ShapeError("gaussian_crps_analytic: sigma must be >= 0");
  if (sigma == 0.0) return std::abs(y - mu);
  const double w = (y - mu) / sigma;
  const double cdf = 0.5 * std::erfc(-w / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * w * w) / std::sqrt(2.0 * std::numbers::pi);
  return sigma * (w * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / std::sqrt(std::numbers::pi));
}

TapeScore crps_multi(ad::Tape& tape, ad::Var samples, int k, const ad::Matrix& target) {
  const auto& s = tape.value(samples);
  const auto r = target.rows();
  const auto c = target.cols();
  if (k < 1 || s.rows() != k * r || s.cols() != c) {
    throw ShapeError("crps_multi (tape): samples must stack K blocks of the target shape");
  }
  const double d = static_cast<double>(r * c);
  const double kd = static_cast<double>(k);

  ad::Matrix tiled(s.rows(), c);
  for (int m = 0; m < k; ++m) tiled.middleRows(m * r, r) = target;
  TapeScore out;
  out.reliability = tape.scale(tape.sum(tape.abs(tape.sub(samples, tape.constant(std::move(tiled))))),
                               1.0 / (d * kd));
  if (k >= 2) {
    auto first = std::make_shared<ad::IndexList>();
    auto second = std::make_shared<ad::IndexList>();
    for (int a = 0; a < k; ++a) {
      for (int b = a + 1; b < k; ++b) {
        for (Eigen::Index row = 0; row < r; ++row) {
          first->push_back(static_cast<int>(a * r + row));
          second->push_back(static_cast<int>(b * r + row));
        }
      }
    }
    // Each unordered pair stands for the two ordered terms of the i != j sum.
    const ad::Var gaps = tape.abs(tape.sub(tape.gather_rows(samples, first), tape.gather_rows(samples, second)));
    out.spread = tape.scale(tape.sum(gaps), 2.0 / (2.0 * d * kd * (kd - 1.0)));
  } else {
    out.spread = tape.constant(ad::Matrix::Zero(1, 1));
  }
  out.value = tape.sub(out.reliability, out.spread);
  return out;
}

}  // namespace pegnn
