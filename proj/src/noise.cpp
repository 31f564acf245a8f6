#include "pegnn/noise.hpp"

#include "pegnn/errors.hpp"

namespace pegnn {

ad::Matrix EnsembleNoise::eps_rows() const {
  if (draws.empty()) return {};
  ad::Matrix out(size(), draws.front().eps.size());
  for (int k = 0; k < size(); ++k) out.row(k) = draws[static_cast<std::size_t>(k)].eps.transpose();
  return out;
}

ad::Matrix EnsembleNoise::z_rows() const {
  if (draws.empty()) return {};
  ad::Matrix out(size(), draws.front().z.size());
  for (int k = 0; k < size(); ++k) out.row(k) = draws[static_cast<std::size_t>(k)].z.transpose();
  return out;
}

ad::Matrix standard_normal_rows(int rows, int d_z, std::uint64_t seed) {
  ad::Matrix out(rows, d_z);
  for (int r = 0; r < rows; ++r) {
    Rng rng = make_rng(derive_seed(seed, {static_cast<std::uint64_t>(r)}));
    for (int c = 0; c < d_z; ++c) out(r, c) = standard_normal(rng);
  }
  return out;
}

NoiseDraw sample_noise(const ad::Matrix& w_z, Rng& rng, int draw_id) {
  if (w_z.rows() < 1 || w_z.rows() != w_z.cols()) {
    throw ShapeError("sample_noise: W_z must be a non-empty square matrix");
  }
  NoiseDraw d;
  d.draw_id = draw_id;
  d.eps.resize(w_z.cols());
  for (Eigen::Index i = 0; i < d.eps.size(); ++i) d.eps[i] = standard_normal(rng);
  d.z = w_z * d.eps;
  return d;
}

EnsembleNoise draw_ensemble(const ad::Matrix& w_z, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("draw_ensemble: K must be >= 1");
  EnsembleNoise e;
  e.seed = seed;
  e.draws.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    Rng rng = make_rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    e.draws.push_back(sample_noise(w_z, rng, i));
  }
  return e;
}

Eigen::VectorXd inject(const ad::Matrix& w_first, const Eigen::VectorXd& bias,
                       const ad::Matrix& w_noise, const Eigen::VectorXd& x, const Eigen::VectorXd& z) {
  if (w_first.cols() != x.size() || w_first.rows() != bias.size() || w_noise.rows() != bias.size() ||
      w_noise.cols() != z.size()) {
    throw ShapeError("inject: inconsistent block shapes");
  }
  Eigen::VectorXd h = w_first * x + bias;
  h.noalias() += w_noise * z;
  return h;
}

ad::Var noise_rows(ad::Tape& tape, ad::Var w_z, const ad::Matrix& eps_rows) {
  return tape.matmul_bt(tape.constant(eps_rows), w_z);
}

ad::Var inject(ad::Tape& tape, ad::Var first_linear, ad::Var w_noise, ad::Var z_rows,
               const std::shared_ptr<const ad::IndexList>& element_graph) {
  const ad::Var per_graph = tape.matmul_bt(z_rows, w_noise);
  return tape.add(first_linear, tape.gather_rows(per_graph, element_graph));
}

}  // namespace pegnn
