#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "pegnn/egnn.hpp"
#include "pegnn/errors.hpp"
#include "pegnn/noise.hpp"
#include "pegnn/training.hpp"

using namespace pegnn;

namespace {

const EgnnConfig kSmall{.n_layers = 2, .hidden = 16, .noise_dim = 4};
const EgnnConfig kSmallDet{.n_layers = 2, .hidden = 16};

std::vector<GraphSample> toy_data(std::size_t n, Split split = Split::kTrain) {
  SimConfig c;
  c.n_steps = 100;
  return generate_dataset(c, n, split);
}

std::vector<const GraphSample*> pointers(const std::vector<GraphSample>& d) {
  std::vector<const GraphSample*> out;
  for (const auto& s : d) out.push_back(&s);
  return out;
}

std::vector<ad::Matrix> eps_blocks(std::size_t n, int k, int dz, std::uint64_t seed) {
  std::vector<ad::Matrix> out;
  for (std::size_t s = 0; s < n; ++s) out.push_back(standard_normal_rows(k, dz, derive_seed(seed, {s})));
  return out;
}

void randomize_noise(ad::ParamVector& p, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  for (auto s : noise_slots(p)) {
    auto v = p.view(s);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = 0.3 * standard_normal(rng);
  }
}

TrainConfig quick(TrainMode mode, int epochs) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = epochs;
  c.batch_size = 8;
  c.k_train = 3;
  c.k_val = 4;
  c.log_wall_time = false;
  return c;
}

}  // namespace

TEST(TrainConfig, Preconditions) {
  TrainConfig c;
  c.k_train = 1;
  EXPECT_THROW(c.validate(kSmall), ConfigError);
  c = TrainConfig{};
  EXPECT_THROW(c.validate(kSmallDet), ConfigError);
  c.mode = TrainMode::kEnsemble;
  c.ensemble_size = 1;
  EXPECT_THROW(c.validate(kSmallDet), ConfigError);
  c.ensemble_size = 3;
  EXPECT_NO_THROW(c.validate(kSmallDet));
  EXPECT_THROW(c.validate(kSmall), ConfigError);
  EXPECT_THROW(parse_mode("bayesian"), ConfigError);
}

TEST(CrpsLoss, ZeroBootEqualsBackboneMae) {
  const auto data = toy_data(6);
  const auto batch = pointers(data);
  const auto p = init_params(kSmall, 1);
  const LossGrad lg = loss_step_crps(p, kSmall, batch, 5, StepKey{1, 0, 0});
  EXPECT_EQ(lg.spread, 0.0);
  double mae = 0.0;
  for (const auto& s : data) mae += (egnn_forward(p, kSmall, s.input) - s.target_positions).cwiseAbs().mean();
  mae /= static_cast<double>(data.size());
  EXPECT_NEAR(lg.loss, mae, 1e-13 * mae);
  EXPECT_EQ(lg.loss, lg.reliability);
}

TEST(CrpsLoss, ZeroGeneratorAndProjectionsIsASaddle) {
  const auto data = toy_data(4);
  const auto p = init_params(kSmall, 2, NoiseGeneratorInit::kZero);
  const LossGrad lg = loss_step_crps(p, kSmall, pointers(data), 4, StepKey{2, 0, 0});
  for (auto s : noise_slots(p)) EXPECT_EQ(lg.grad.view(s).norm(), 0.0) << p.slots()[s].name;
}

TEST(CrpsLoss, ReliabilityDrivesNoiseProjectionsFromZeroBoot) {
  const auto data = toy_data(4);
  const auto p = init_params(kSmall, 2);
  const LossGrad lg = loss_step_crps(p, kSmall, pointers(data), 4, StepKey{2, 0, 0});
  EXPECT_GT(lg.grad.view("layer0.phi_e.W_noise").norm(), 0.0);
  EXPECT_GT(lg.grad.view("layer0.phi_h.W_noise").norm(), 0.0);
  EXPECT_EQ(lg.grad.view("layer1.phi_h.W_noise").norm(), 0.0);
  // W_z only acts through the zero projections at this point.
  EXPECT_EQ(lg.grad.view("noise.W_z").norm(), 0.0);
}

TEST(CrpsLoss, GradientMatchesFiniteDifferencesWithFrozenDraws) {
  const auto data = toy_data(3);
  const auto batch = pointers(data);
  auto p = init_params(kSmall, 3);
  randomize_noise(p, 4);
  const auto eps = eps_blocks(3, 2, kSmall.noise_dim, 5);
  auto loss = [&](const ad::ParamVector& params) {
    LossGrad lg = loss_step_crps(params, kSmall, batch, eps, 2);
    return std::make_pair(lg.loss, std::move(lg.grad));
  };
  const auto all = ad::finite_difference_check(loss, p, 1e-6, 50, 6, ad::ProbeKind::kDirection);
  EXPECT_LT(all.max_relative_error, 1e-4);
  const auto noise = ad::finite_difference_check(loss, p, 1e-6, 50, 7, ad::ProbeKind::kDirection, noise_slots(p));
  EXPECT_LT(noise.max_relative_error, 1e-4);
}

TEST(CrpsLoss, ChunkingDoesNotChangeTheLoss) {
  const auto data = toy_data(7);
  auto p = init_params(kSmall, 3);
  randomize_noise(p, 4);
  const auto eps = eps_blocks(7, 3, kSmall.noise_dim, 1);
  const LossGrad a = loss_step_crps(p, kSmall, pointers(data), eps, 1);
  const LossGrad b = loss_step_crps(p, kSmall, pointers(data), eps, 8);
  EXPECT_NEAR(a.loss, b.loss, 1e-14);
  EXPECT_LT((a.grad.values() - b.grad.values()).norm(), 1e-12 * b.grad.values().norm());
}

TEST(CrpsLoss, DuplicatedStructureKeepsMeanLoss) {
  const auto data = toy_data(3);
  auto p = init_params(kSmall, 3);
  randomize_noise(p, 4);
  const auto eps = eps_blocks(3, 3, kSmall.noise_dim, 2);
  const LossGrad a = loss_step_crps(p, kSmall, pointers(data), eps);
  std::vector<const GraphSample*> doubled;
  std::vector<ad::Matrix> doubled_eps;
  for (std::size_t i = 0; i < 3; ++i) {
    for (int r = 0; r < 2; ++r) {
      doubled.push_back(&data[i]);
      doubled_eps.push_back(eps[i]);
    }
  }
  EXPECT_NEAR(loss_step_crps(p, kSmall, doubled, doubled_eps).loss, a.loss, 1e-14);
}

TEST(CrpsLoss, RejectsSingleDraw) {
  const auto data = toy_data(2);
  EXPECT_THROW(loss_step_crps(init_params(kSmall, 0), kSmall, pointers(data), 1, StepKey{}), ConfigError);
}

TEST(MseLoss, PerfectOffsetAndRandomPredictions) {
  auto data = toy_data(4);
  const auto p = init_params(kSmallDet, 1);
  for (auto& s : data) s.target_positions = egnn_forward(p, kSmallDet, s.input);
  EXPECT_LT(loss_step_mse(p, kSmallDet, pointers(data)).loss, 1e-28);
  for (auto& s : data) s.target_positions.array() += 1.0;
  EXPECT_NEAR(loss_step_mse(p, kSmallDet, pointers(data)).loss, 1.0, 1e-12);

  auto fresh = toy_data(5);
  double expect = 0.0;
  for (const auto& s : fresh) {
    expect += (egnn_forward(p, kSmallDet, s.input) - s.target_positions).array().square().mean();
  }
  EXPECT_NEAR(loss_step_mse(p, kSmallDet, pointers(fresh)).loss, expect / 5.0, 1e-13);
}

TEST(MseLoss, GradientMatchesFiniteDifferences) {
  const auto data = toy_data(3);
  const auto p = init_params(kSmallDet, 8);
  auto loss = [&](const ad::ParamVector& params) {
    LossGrad lg = loss_step_mse(params, kSmallDet, pointers(data), 2);
    return std::make_pair(lg.loss, std::move(lg.grad));
  };
  EXPECT_LT(ad::finite_difference_check(loss, p, 1e-6, 40, 1, ad::ProbeKind::kDirection).max_relative_error, 1e-5);
}

TEST(Train, ZeroEpochsReturnsInitialState) {
  const auto c = quick(TrainMode::kCrps, 0);
  const TrainState st = train(c, kSmall, {}, {});
  ASSERT_EQ(st.members.size(), 1u);
  EXPECT_TRUE(st.members[0].log.empty());
  EXPECT_EQ(st.members[0].params.values(), init_params(kSmall, c.seed).values());
}

TEST(Train, SameSeedSameLogsAndParams) {
  const auto tr = toy_data(20);
  const auto va = toy_data(6, Split::kVal);
  const auto c = quick(TrainMode::kCrps, 3);
  const TrainState a = train(c, kSmall, tr, va);
  const TrainState b = train(c, kSmall, tr, va);
  std::ostringstream la, lb;
  write_log_csv(la, a.members[0].log);
  write_log_csv(lb, b.members[0].log);
  EXPECT_EQ(la.str(), lb.str());
  EXPECT_EQ(a.members[0].params.values(), b.members[0].params.values());
  EXPECT_EQ(a.members[0].log.size(), 3u);
}

TEST(Train, ResumeIsBitIdentical) {
  const auto tr = toy_data(20);
  const auto va = toy_data(6, Split::kVal);
  const auto c = quick(TrainMode::kCrps, 4);
  const TrainState full = train(c, kSmall, tr, va);

  TrainState part = init_train_state(c, kSmall);
  train(part, c, kSmall, tr, va, 2);
  EXPECT_EQ(part.members[0].epoch, 2);
  const auto path = std::filesystem::temp_directory_path() / "pegnn_resume_state.bin";
  save_train_state(path, part, kSmall);
  TrainState resumed = load_train_state(path, kSmall);
  train(resumed, c, kSmall, tr, va, 2);

  EXPECT_EQ(resumed.members[0].params.values(), full.members[0].params.values());
  EXPECT_EQ(resumed.members[0].best_params.values(), full.members[0].best_params.values());
  EXPECT_EQ(resumed.members[0].adam_v, full.members[0].adam_v);
  std::ostringstream la, lb;
  write_log_csv(la, resumed.members[0].log);
  write_log_csv(lb, full.members[0].log);
  EXPECT_EQ(la.str(), lb.str());
  EXPECT_THROW(load_train_state(path, kSmallDet), CompatibilityError);
}

TEST(Train, EnsembleMembersUseDistinctSeeds) {
  const auto tr = toy_data(10);
  const auto va = toy_data(4, Split::kVal);
  const auto c = quick(TrainMode::kEnsemble, 1);
  const TrainState st = train(c, kSmallDet, tr, va);
  ASSERT_EQ(st.members.size(), 3u);
  EXPECT_NE(st.members[0].seed, st.members[1].seed);
  EXPECT_NE(st.members[0].params.values(), st.members[1].params.values());
}

TEST(Train, NonFiniteLossReportsDivergence) {
  auto tr = toy_data(8);
  tr[3].target_positions(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto va = toy_data(4, Split::kVal);
  const auto c = quick(TrainMode::kDeterministic, 2);
  try {
    train(c, kSmallDet, tr, va);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.report().epoch, 0);
    EXPECT_NE(e.report().to_json().find("non-finite"), std::string::npos);
  }
}

TEST(Train, DeterministicSmokeRunReducesLossTenfold) {
  const auto tr = toy_data(50);
  const auto va = toy_data(20, Split::kVal);
  TrainConfig c = quick(TrainMode::kDeterministic, 200);
  c.batch_size = 50;
  c.learning_rate = 3e-3;
  c.patience = 200;
  const TrainState st = train(c, EgnnConfig{}, tr, va);
  const auto& log = st.members[0].log;
  ASSERT_EQ(log.size(), 200u);
  EXPECT_LT(log.back().train_loss * 10.0, log.front().train_loss);
}
