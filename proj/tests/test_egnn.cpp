#include <gtest/gtest.h>

#include <Eigen/LU>
#include <Eigen/QR>
#include <filesystem>
#include <fstream>

#include "pegnn/checkpoint.hpp"
#include "pegnn/egnn.hpp"
#include "pegnn/errors.hpp"
#include "pegnn/noise.hpp"

using namespace pegnn;

namespace {

ParticleState random_state(int n, std::uint64_t seed) {
  SimConfig c;
  c.n_particles = n;
  Rng rng = make_rng(seed);
  int rej = 0;
  return sample_initial_state(c, rng, rej);
}

Eigen::Matrix3d random_orthogonal(Rng& rng, bool reflect) {
  Eigen::Matrix3d a;
  for (int i = 0; i < 9; ++i) a.data()[i] = standard_normal(rng);
  Eigen::Matrix3d q = Eigen::HouseholderQR<Eigen::Matrix3d>(a).householderQ();
  if ((q.determinant() < 0) != reflect) q.col(0) *= -1.0;
  return q;
}

Eigen::VectorXd random_vector(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = standard_normal(rng);
  return v;
}

void randomize_noise(ad::ParamVector& p, std::uint64_t seed, double scale) {
  Rng rng = make_rng(seed);
  for (auto s : noise_slots(p)) {
    auto v = p.view(s);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = scale * standard_normal(rng);
  }
}

ad::ParamVector backbone_of(const ad::ParamVector& perturbed, const EgnnConfig& pcfg) {
  EgnnConfig bcfg = pcfg;
  bcfg.noise_dim = 0;
  ad::ParamVector b = make_param_layout(bcfg);
  for (const auto& slot : b.slots()) b.view(slot.name) = perturbed.view(slot.name);
  return b;
}

double rel_diff(const Coords& a, const Coords& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

}  // namespace

TEST(ParamCount, DefaultWidths) {
  const ParamCount pc = param_count(EgnnConfig{.noise_dim = 32});
  EXPECT_EQ(pc.backbone, 134024);
  EXPECT_EQ(pc.noise_overhead, 17408);
  EXPECT_NEAR(pc.ratio, 1.13, 0.005);
  const ParamCount det = param_count(EgnnConfig{});
  EXPECT_EQ(det.noise_overhead, 0);
  EXPECT_EQ(det.ratio, 1.0);
}

TEST(ParamCount, LayoutMatchesCount) {
  for (int dz : {0, 4, 32}) {
    for (int layers : {1, 3}) {
      const EgnnConfig c{.n_layers = layers, .hidden = 16, .noise_dim = dz};
      const ParamCount pc = param_count(c);
      EXPECT_EQ(static_cast<std::int64_t>(make_param_layout(c).size()), pc.backbone + pc.noise_overhead);
      EXPECT_EQ(pc.noise_overhead, dz * dz + 2 * layers * 16 * dz);
    }
  }
}

TEST(Init, NoiseProjectionsZeroAndGeneratorFanIn) {
  const EgnnConfig c{.n_layers = 2, .hidden = 8, .noise_dim = 4};
  const auto p = init_params(c, 3);
  EXPECT_EQ(p.view("layer0.phi_e.W_noise").norm(), 0.0);
  EXPECT_EQ(p.view("layer1.phi_h.W_noise").norm(), 0.0);
  EXPECT_GT(p.view("noise.W_z").norm(), 0.0);
  EXPECT_LE(p.view("noise.W_z").cwiseAbs().maxCoeff(), 0.5);
  EXPECT_EQ(init_params(c, 3, NoiseGeneratorInit::kZero).view("noise.W_z").norm(), 0.0);
  EXPECT_EQ(init_params(c, 3).values(), p.values());
  EXPECT_NE(init_params(c, 4).values(), p.values());
}

TEST(Config, RejectsInvalidWidthsAndActivation) {
  EXPECT_THROW((EgnnConfig{.n_layers = 0}.validate()), ConfigError);
  EXPECT_THROW((EgnnConfig{.hidden = 0}.validate()), ConfigError);
  EXPECT_THROW((EgnnConfig{.noise_dim = -1}.validate()), ConfigError);
  EXPECT_THROW((EgnnConfig{.activation = "relu"}.validate()), ConfigError);
}

TEST(Forward, ZRejectedForBackboneAndWrongLength) {
  const EgnnConfig det{.n_layers = 2, .hidden = 8};
  const auto st = random_state(4, 1);
  EXPECT_THROW(egnn_forward(init_params(det, 0), det, st, Eigen::VectorXd::Zero(3)), ConfigError);
  const EgnnConfig pert{.n_layers = 2, .hidden = 8, .noise_dim = 3};
  EXPECT_THROW(egnn_forward(init_params(pert, 0), pert, st, Eigen::VectorXd::Zero(5)), ConfigError);
}

TEST(Forward, EquivariantUnderEuclideanMapsAndPermutations) {
  const EgnnConfig c{.n_layers = 3, .hidden = 16, .noise_dim = 4};
  auto p = init_params(c, 11);
  randomize_noise(p, 12, 0.3);
  Rng rng = make_rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const ParticleState st = random_state(5, 200 + static_cast<std::uint64_t>(trial));
    const Eigen::VectorXd z = random_vector(4, rng);
    const Eigen::Matrix3d q = random_orthogonal(rng, trial % 2 == 1);
    const Eigen::RowVector3d t = random_vector(3, rng).transpose();
    std::vector<int> perm{0, 1, 2, 3, 4};
    std::shuffle(perm.begin(), perm.end(), rng);

    ParticleState moved = st;
    for (int i = 0; i < 5; ++i) {
      moved.positions.row(i) = st.positions.row(perm[i]) * q.transpose() + t;
      moved.velocities.row(i) = st.velocities.row(perm[i]) * q.transpose();
      moved.charges[i] = st.charges[perm[i]];
    }
    const Coords base = egnn_forward(p, c, st, z);
    const Coords out = egnn_forward(p, c, moved, z);
    Coords expect(5, 3);
    for (int i = 0; i < 5; ++i) expect.row(i) = base.row(perm[i]) * q.transpose() + t;
    EXPECT_LT(rel_diff(out, expect), 1e-10) << "trial " << trial;
  }
}

TEST(Forward, ZeroNoiseProjectionsReproduceBackboneExactly) {
  const EgnnConfig c{.noise_dim = 32};
  const auto p = init_params(c, 5);
  const auto st = random_state(5, 3);
  ad::Matrix z(10, 32);
  Rng rng = make_rng(8);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = 3.0 * standard_normal(rng);
  const auto copies = egnn_forward_copies(p, c, st, z);
  const EgnnConfig bcfg{};
  const Coords backbone = egnn_forward(backbone_of(p, c), bcfg, st);
  ASSERT_EQ(copies.size(), 10u);
  for (const auto& x : copies) EXPECT_TRUE((x.array() == backbone.array()).all());
}

TEST(Forward, NonzeroNoiseChangesPredictions) {
  const EgnnConfig c{.n_layers = 2, .hidden = 16, .noise_dim = 4};
  auto p = init_params(c, 5);
  randomize_noise(p, 6, 0.2);
  const auto st = random_state(5, 3);
  ad::Matrix z(2, 4);
  z << 1, 0, 0, 0, 0, 1, 0, 0;
  const auto copies = egnn_forward_copies(p, c, st, z);
  EXPECT_GT((copies[0] - copies[1]).norm(), 1e-6);
}

TEST(Forward, BatchedCopiesMatchSingleGraph) {
  const EgnnConfig c{.n_layers = 2, .hidden = 16, .noise_dim = 4};
  auto p = init_params(c, 5);
  randomize_noise(p, 6, 0.2);
  const auto st = random_state(5, 3);
  Rng rng = make_rng(1);
  ad::Matrix z(6, 4);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = standard_normal(rng);
  const auto copies = egnn_forward_copies(p, c, st, z);
  for (int k = 0; k < 6; ++k) {
    const Coords single = egnn_forward(p, c, st, Eigen::VectorXd(z.row(k).transpose()));
    EXPECT_LT(rel_diff(copies[static_cast<std::size_t>(k)], single), 1e-13);
  }
}

TEST(Forward, NoiseIsSharedAcrossAllElementsOfAGraph) {
  const EgnnConfig c{.n_layers = 2, .hidden = 8, .noise_dim = 3};
  const auto p = init_params(c, 2);
  const auto a = random_state(4, 1);
  const auto b = random_state(6, 2);
  const ParticleState* states[] = {&a, &b};
  const GraphBatch batch = make_batch(states, 2);
  ASSERT_EQ(batch.n_graphs, 4);
  ad::Matrix z(4, 3);
  for (int g = 0; g < 4; ++g) z.row(g).setConstant(g + 1.0);
  ad::Tape tape(p);
  InjectionTrace trace;
  egnn_forward(tape, c, batch, tape.constant(z), &trace);
  ASSERT_EQ(trace.edge_blocks.size(), 2u);
  ASSERT_EQ(trace.node_blocks.size(), 1u);
  for (const auto& blk : trace.edge_blocks) {
    ASSERT_EQ(blk.rows(), batch.n_edges);
    for (int e = 0; e < batch.n_edges; ++e) {
      EXPECT_EQ(blk.row(e), z.row((*batch.edge_graph)[static_cast<std::size_t>(e)]));
    }
  }
  for (const auto& blk : trace.node_blocks) {
    ASSERT_EQ(blk.rows(), batch.n_nodes);
    for (int i = 0; i < batch.n_nodes; ++i) {
      EXPECT_EQ(blk.row(i), z.row((*batch.node_graph)[static_cast<std::size_t>(i)]));
    }
  }
}

TEST(Forward, BatchLayout) {
  const auto a = random_state(3, 1);
  const auto b = random_state(5, 2);
  const ParticleState* states[] = {&a, &b};
  const GraphBatch batch = make_batch(states);
  EXPECT_EQ(batch.n_nodes, 8);
  EXPECT_EQ(batch.n_edges, 3 * 2 + 5 * 4);
  EXPECT_EQ(batch.node_offset, (std::vector<int>{0, 3, 8}));
  EXPECT_DOUBLE_EQ(batch.inv_degree(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(batch.inv_degree(7, 0), 0.25);
  for (int e = 0; e < batch.n_edges; ++e) {
    const int i = (*batch.edge_receiver)[static_cast<std::size_t>(e)];
    const int j = (*batch.edge_sender)[static_cast<std::size_t>(e)];
    EXPECT_NE(i, j);
    EXPECT_EQ(batch.charge_product(e, 0), batch.charges(i, 0) * batch.charges(j, 0));
  }
}

TEST(Forward, GradientMatchesFiniteDifferences) {
  const EgnnConfig c{.n_layers = 2, .hidden = 8, .noise_dim = 3};
  auto p = init_params(c, 21);
  randomize_noise(p, 22, 0.3);
  const auto a = random_state(4, 1);
  const ParticleState* states[] = {&a};
  const GraphBatch batch = make_batch(states, 2);
  Rng rng = make_rng(4);
  ad::Matrix eps(2, 3);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = standard_normal(rng);
  ad::Matrix w = ad::Matrix::Random(batch.n_nodes, 3);
  auto loss = [&](const ad::ParamVector& params) {
    ad::Tape tape(params);
    const ad::Var z = noise_rows(tape, tape.param("noise.W_z"), eps);
    const ad::Var out = egnn_forward(tape, c, batch, z);
    const ad::Var l = tape.sum(tape.mul(tape.square(out), tape.constant(w)));
    return std::make_pair(tape.scalar(l), tape.backward(l, ad::Matrix::Ones(1, 1)).params);
  };
  const auto rep = ad::finite_difference_check(loss, p, 1e-6, 60, 7, ad::ProbeKind::kDirection);
  EXPECT_LT(rep.max_relative_error, 1e-5);
  const auto noise = ad::finite_difference_check(loss, p, 1e-6, 30, 8, ad::ProbeKind::kCoordinate, noise_slots(p));
  EXPECT_LT(noise.max_relative_error, 1e-5);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const EgnnConfig c{.n_layers = 2, .hidden = 8, .noise_dim = 3};
  auto p = init_params(c, 2);
  randomize_noise(p, 3, 0.1);
  const auto path = std::filesystem::temp_directory_path() / "pegnn_ckpt_roundtrip.ckpt";
  write_checkpoint(path, c, p, CheckpointMeta{"crps", 9, 0});
  const Checkpoint back = read_checkpoint(path);
  EXPECT_EQ(back.config, c);
  EXPECT_EQ(back.params.values(), p.values());
  EXPECT_EQ(back.meta.seed, 9u);
  EXPECT_EQ(back.meta.mode, "crps");
}

TEST(Checkpoint, DeclaredCountMismatchIsIncompatible) {
  const EgnnConfig c{.n_layers = 2, .hidden = 8};
  const auto path = std::filesystem::temp_directory_path() / "pegnn_ckpt_bad.ckpt";
  write_checkpoint(path, c, init_params(c, 1), CheckpointMeta{});
  std::ifstream in(path, std::ios::binary);
  std::string header;
  std::getline(in, header);
  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const std::string count = "\"param_count\":" + std::to_string(make_param_layout(c).size());
  const auto pos = header.find(count);
  ASSERT_NE(pos, std::string::npos);
  header.replace(pos, count.size(), "\"param_count\":12");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << header << "\n" << payload;
  out.close();
  EXPECT_THROW(read_checkpoint(path), CompatibilityError);
}
