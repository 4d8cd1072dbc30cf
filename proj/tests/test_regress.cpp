#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "scenecaps/regress.hpp"
#include "scenecaps/sdf.hpp"

using namespace scenecaps;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST(Regress, DenseGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    DenseModel m({6, 9, 8, 7, 4}, 100 + i);
    const auto x = random_vector(6, rng);
    const auto y = random_vector(4, rng);
    EXPECT_LE(grad_check(m, x, y, 1e-5), 1e-4) << "instance " << i;
  }
}

TEST(Regress, ConvGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  ConvConfig cfg{.patch = 12, .stages = {{3, 3}, {4, 2}}, .hidden = 8, .outputs = 3};
  for (int i = 0; i < 20; ++i) {
    ConvModel m(cfg, 200 + i);
    std::vector<double> x(144);
    for (auto& v : x) v = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto y = random_vector(3, rng);
    EXPECT_LE(grad_check(m, x, y, 1e-5, 300, 9 + i), 1e-3) << "instance " << i;
  }
}

TEST(Regress, DenseFitsASmoothFunction) {
  std::mt19937_64 rng(3);
  Dataset d{Eigen::MatrixXd(2, 800), Eigen::MatrixXd(1, 800)};
  for (int i = 0; i < 800; ++i) {
    const double a = uniform01(rng), b = uniform01(rng);
    d.inputs.col(i) << a, b;
    d.targets(0, i) = std::sin(3 * a) + b * b;
  }
  DenseModel m({2, 24, 24, 24, 1}, 4);
  TrainConfig cfg{.learning_rate = 3e-3, .batch_size = 32, .steps = 3000, .seed = 1, .optimizer = Optimizer::adam};
  const auto r = train(m, d, cfg);
  EXPECT_LT(r.final_loss, 1e-3);
  EXPECT_LT(evaluate_mse(m, d), 1e-3);
  // deterministic under the seed
  DenseModel m2({2, 24, 24, 24, 1}, 4);
  train(m2, d, cfg);
  EXPECT_EQ(m.parameters(), m2.parameters());
}

TEST(Regress, StandardizerInverts) {
  Eigen::MatrixXd x(2, 3);
  x << 1, 2, 3, 5, 5, 5;
  const auto s = Standardizer::fit(x);
  EXPECT_TRUE(s.invert(s.apply(x)).isApprox(x, 1e-12));
  EXPECT_NEAR(s.apply(x).row(0).mean(), 0.0, 1e-12);
}

TEST(Regress, WeightFilesRoundTripAtFloatPrecision) {
  const auto dir = std::filesystem::temp_directory_path() / "scenecaps_regress";
  std::filesystem::create_directories(dir);
  DenseModel d({3, 4, 4, 4, 2}, 5);
  snap_to_float(d.parameters());
  d.input_standardizer = Standardizer::identity(3);
  d.output_standardizer = Standardizer::identity(2);
  save_model(d, dir / "dense", {{"note", "x"}});
  nlohmann::json meta;
  EXPECT_EQ(load_model<DenseModel>(dir / "dense", &meta), d);
  EXPECT_EQ(meta.at("note"), "x");

  ConvModel c(ConvConfig{.patch = 10, .stages = {{2, 3}}, .hidden = 4, .outputs = 2}, 6);
  snap_to_float(c.parameters());
  c.input_standardizer = Standardizer::identity(100);
  c.output_standardizer = Standardizer::identity(2);
  save_model(c, dir / "conv");
  EXPECT_EQ(load_model<ConvModel>(dir / "conv"), c);
  EXPECT_THROW(load_model<DenseModel>(dir / "conv"), DataError);
  EXPECT_THROW(load_model<DenseModel>(dir / "missing"), DataError);
  std::filesystem::remove_all(dir);
}

TEST(Regress, InvalidConfigs) {
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), Error);
  DenseModel m({2, 3, 3, 3, 1}, 1);
  Dataset d{Eigen::MatrixXd::Zero(3, 4), Eigen::MatrixXd::Zero(1, 4)};
  EXPECT_THROW(train(m, d, TrainConfig{}), DimensionError);
}
