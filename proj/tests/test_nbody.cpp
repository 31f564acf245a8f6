#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pegnn/errors.hpp"
#include "pegnn/nbody.hpp"

using namespace pegnn;

namespace {

ParticleState random_state(int n, std::uint64_t seed) {
  SimConfig c;
  c.n_particles = n;
  Rng rng = make_rng(seed);
  int rejections = 0;
  return sample_initial_state(c, rng, rejections);
}

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "pegnn_test_nbody";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Coulomb, ForcesSumToZero) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const ParticleState st = random_state(7, s);
    const Coords f = coulomb_forces(st.positions, st.charges, 0.01);
    EXPECT_LT(f.colwise().sum().norm(), 1e-12 * (1.0 + f.norm()));
  }
}

TEST(Coulomb, LikeChargesRepelOppositeAttract) {
  Coords x(2, 3);
  x << 0, 0, 0, 1, 0, 0;
  Eigen::VectorXd q(2);
  q << 1, 1;
  Coords f = coulomb_forces(x, q, 0.0);
  EXPECT_NEAR(f(0, 0), -1.0, 1e-15);
  EXPECT_NEAR(f(1, 0), 1.0, 1e-15);
  q << 1, -1;
  f = coulomb_forces(x, q, 0.0);
  EXPECT_NEAR(f(0, 0), 1.0, 1e-15);
}

TEST(Coulomb, CoincidentUnsoftenedPairIsReported) {
  Coords x = Coords::Zero(3, 3);
  x(2, 0) = 1.0;
  Eigen::VectorXd q = Eigen::VectorXd::Ones(3);
  try {
    coulomb_forces(x, q, 0.0);
    FAIL();
  } catch (const DegenerateConfigurationError& e) {
    EXPECT_EQ(e.first, 0);
    EXPECT_EQ(e.second, 1);
  }
}

TEST(Leapfrog, TwoBodyCircularOrbitKeepsRadius) {
  const double d = 1.0;
  const double eps = 0.01;
  const double force = d / std::pow(d * d + eps * eps, 1.5);
  const double v = std::sqrt(force * d / 2.0);
  ParticleState st;
  st.positions.resize(2, 3);
  st.positions << -d / 2, 0, 0, d / 2, 0, 0;
  st.velocities.resize(2, 3);
  st.velocities << 0, -v, 0, 0, v, 0;
  st.charges.resize(2);
  st.charges << 1, -1;
  SimConfig c;
  c.n_particles = 2;
  const Trajectory t = simulate(st, c);
  ASSERT_EQ(t.states.size(), 1001u);
  double worst = 0.0;
  for (const auto& s : t.states) {
    const double r = (s.positions.row(0) - s.positions.row(1)).norm();
    worst = std::max(worst, std::abs(r - d) / d);
  }
  EXPECT_LT(worst, 0.01);
}

TEST(Leapfrog, EnergyDriftSmallForDefaultConfig) {
  SimConfig c;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const ParticleState st = random_state(c.n_particles, 100 + s);
    const double e0 = total_energy(st, c.softening);
    const ParticleState end = propagate(st, c);
    const double e1 = total_energy(end, c.softening);
    EXPECT_LT(std::abs(e1 - e0), 0.01 * std::max(1.0, std::abs(e0))) << "sample " << s;
  }
}

TEST(Leapfrog, PropagateMatchesLastTrajectoryState) {
  SimConfig c;
  c.n_steps = 50;
  const ParticleState st = random_state(5, 9);
  const Trajectory t = simulate(st, c);
  const ParticleState end = propagate(st, c);
  EXPECT_EQ(end.positions, t.states.back().positions);
  EXPECT_EQ(end.velocities, t.states.back().velocities);
}

TEST(Dataset, SmallerDatasetIsPrefixOfLarger) {
  SimConfig c;
  c.n_steps = 20;
  const auto a = generate_dataset(c, 4, Split::kTrain);
  const auto b = generate_dataset(c, 9, Split::kTrain);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(a[i].input.positions, b[i].input.positions);
    EXPECT_EQ(a[i].target_positions, b[i].target_positions);
  }
  const auto v = generate_dataset(c, 4, Split::kVal);
  EXPECT_NE(a[0].input.positions, v[0].input.positions);
}

TEST(Dataset, RespectsMinimumPairDistanceAndCharges) {
  SimConfig c;
  c.n_steps = 5;
  c.min_pair_distance = 0.3;
  for (const auto& s : generate_dataset(c, 50, Split::kTrain)) {
    for (int i = 0; i < s.input.size(); ++i) {
      EXPECT_TRUE(s.input.charges[i] == 1.0 || s.input.charges[i] == -1.0);
      for (int j = i + 1; j < s.input.size(); ++j) {
        EXPECT_GE((s.input.positions.row(i) - s.input.positions.row(j)).norm(), 0.3);
      }
    }
  }
}

TEST(Dataset, ImpossibleSpacingIsAConfigError) {
  SimConfig c;
  c.n_particles = 20;
  c.min_pair_distance = 5.0;
  EXPECT_THROW(generate_dataset(c, 3, Split::kTrain), ConfigError);
}

TEST(Dataset, InvalidConfigRejected) {
  SimConfig c;
  c.n_particles = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SimConfig{};
  c.dt = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(DatasetIo, RoundTripAtSinglePrecision) {
  SimConfig c;
  c.n_steps = 10;
  const auto data = generate_dataset(c, 6, Split::kTest);
  const auto path = temp_file("roundtrip.bin");
  write_dataset(path, c, Split::kTest, data);
  const DatasetFile f = read_dataset(path);
  EXPECT_EQ(f.split, Split::kTest);
  EXPECT_EQ(f.config.n_steps, 10);
  ASSERT_EQ(f.samples.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Coords expect = data[i].target_positions.cast<float>().cast<double>();
    EXPECT_EQ(f.samples[i].target_positions, expect);
    EXPECT_EQ(f.samples[i].input.charges, data[i].input.charges);
  }
}

TEST(DatasetIo, FileSizeMatchesHeader) {
  SimConfig c;
  c.n_steps = 3;
  const auto path = temp_file("size.bin");
  write_dataset(path, c, Split::kTrain, generate_dataset(c, 13, Split::kTrain));
  std::ifstream in(path, std::ios::binary);
  std::string header;
  std::getline(in, header);
  const auto total = std::filesystem::file_size(path);
  EXPECT_EQ(total, header.size() + 1 + 4u * 10u * 5u * 13u);
}

TEST(DatasetIo, TruncatedOrMissingFileIsAnIoError) {
  SimConfig c;
  c.n_steps = 3;
  const auto path = temp_file("trunc.bin");
  write_dataset(path, c, Split::kTrain, generate_dataset(c, 4, Split::kTrain));
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 4);
  EXPECT_THROW(read_dataset(path), IoError);
  EXPECT_THROW(read_dataset(temp_file("does_not_exist.bin")), IoError);
}
