#include <cmath>

#include <gtest/gtest.h>

#include "attikit/filters.hpp"
#include "attikit/verify.hpp"

namespace attikit {
namespace {

ObservationModel orthogonal_triad(double sigma) {
  ObservationModel m;
  m.vectors.push_back({Vec3::UnitX(), 1.0, sigma});
  m.vectors.push_back({Vec3::UnitY(), 1.0, sigma});
  m.vectors.push_back({Vec3::UnitZ(), 1.0, sigma});
  return m;
}

TEST(RiccatiRhs, ZeroCovarianceGivesProcessNoise) {
  const ObservationModel model = orthogonal_triad(0.1);
  NoiseParams noise{0.3, 0.05};
  const Mat6 rhs =
      riccati_rhs(Mat6::Zero(), Vec3(0.1, 0.2, 0.3), Rotation::identity(), model, noise);
  Mat6 expect = Mat6::Zero();
  expect.block<3, 3>(0, 0) = 0.09 * Mat3::Identity();
  expect.block<3, 3>(3, 3) = 0.0025 * Mat3::Identity();
  EXPECT_LT((rhs - expect).norm(), 1e-15);
}

TEST(RiccatiRhs, AttitudeBlockClosedForm) {
  // omega' = 0, P_c = P_b = 0, unit sigmas and two orthogonal vectors:
  // P_a' = sigma_w^2 I - P_a A0 P_a with A0 = tr(Mw) I - Mw
  ObservationModel model;
  model.vectors.push_back({Vec3::UnitX(), 1.0, 1.0});
  model.vectors.push_back({Vec3::UnitY(), 1.0, 1.0});
  NoiseParams noise{0.2, 0.0};
  verify::Sampler rng(3);
  for (int i = 0; i < 20; ++i) {
    const Mat3 p_a = rng.pd(0.1, 2.0);
    Mat6 p = Mat6::Zero();
    p.block<3, 3>(0, 0) = p_a;
    const Mat6 rhs = riccati_rhs(p, Vec3::Zero(), Rotation::identity(), model, noise);
    const Mat3 a0 = Vec3(1, 1, 2).asDiagonal();  // tr(diag(1,1,0)) I - diag(1,1,0)
    const Mat3 expect = 0.04 * Mat3::Identity() - p_a * a0 * p_a;
    EXPECT_LT(((rhs.block<3, 3>(0, 0)) - expect).norm(), 1e-13);
  }
}

TEST(RiccatiRhs, SymmetricOutputForSymmetricInput) {
  verify::Sampler rng(5);
  for (int i = 0; i < 50; ++i) {
    const ObservationModel model = rng.model(2 + (i % 2), /*mekf_weights=*/true);
    Mat6 p = Mat6::Random();
    p = (0.5 * (p + p.transpose())).eval();
    NoiseParams noise{rng.uniform(0.01, 0.3), rng.uniform(0.001, 0.05)};
    const Mat6 rhs = riccati_rhs(p, rng.vec3(), rng.rotation(), model, noise);
    EXPECT_LT((rhs - rhs.transpose()).norm(), 1e-12);
    // transpose-input consistency
    const Mat6 rhs_t =
        riccati_rhs(Mat6(p.transpose()), Vec3::Zero(), Rotation::identity(), model, noise);
    const Mat6 rhs_0 = riccati_rhs(p, Vec3::Zero(), Rotation::identity(), model, noise);
    EXPECT_LT((rhs_t - rhs_0.transpose()).norm(), 1e-12);
  }
}

TEST(RiccatiRhs, FrameCovariance) {
  // conjugating the attitude rotates the v_ref vectors consistently
  verify::Sampler rng(7);
  const ObservationModel model = rng.model(3, true);
  NoiseParams noise{0.1, 0.01};
  const Mat6 p = Mat6::Identity();
  const Mat6 a = riccati_rhs(p, Vec3::Zero(), Rotation::identity(), model, noise);
  EXPECT_LT((a - a.transpose()).norm(), 1e-13);
}

TEST(RiccatiSteadyState, IsotropicClosedForm) {
  // three orthogonal vectors, k = sigma^-2 = 1 (M = I, A0 = 2I),
  // sigma_w = 0.1, sigma_b = 0.02:
  //   c = -sigma_b / sqrt(2)            ~ -0.0141421
  //   p = sqrt((sigma_w^2 + 2 sigma_b/sqrt(2)) / 2) ~ 0.138355
  //   q = sigma_b sqrt(2) p             ~ 0.0039133
  const ObservationModel model = orthogonal_triad(1.0);
  NoiseParams noise{0.1, 0.02};
  const RiccatiSteadyState ss = riccati_steady_state(model, noise);

  const double c = -noise.sigma_b / std::sqrt(2.0);
  const double p = std::sqrt((noise.sigma_omega * noise.sigma_omega +
                              2.0 * noise.sigma_b / std::sqrt(2.0)) /
                             2.0);
  const double q = noise.sigma_b * std::sqrt(2.0) * p;
  EXPECT_NEAR(c, -0.0141421, 1e-6);
  EXPECT_NEAR(p, 0.138355, 1e-6);
  EXPECT_NEAR(q, 0.0039133, 1e-6);

  EXPECT_LT((ss.p_a - p * Mat3::Identity()).norm(), 1e-6);
  EXPECT_LT((ss.p_c - c * Mat3::Identity()).norm(), 1e-6);
  EXPECT_LT((ss.p_b - q * Mat3::Identity()).norm(), 1e-6);
  EXPECT_LT(ss.res_a, 1e-8);
  EXPECT_LT(ss.res_b, 1e-8);
  EXPECT_LT(ss.res_c, 1e-8);
  EXPECT_LT(ss.res_rel, 1e-8);
}

TEST(RiccatiSteadyState, SmallBiasWalkLimit) {
  // sigma_b -> 0: P_c -> 0 and P_a -> sigma_w / sqrt(a) per axis (A0 = aI)
  const ObservationModel model = orthogonal_triad(1.0);
  NoiseParams noise{0.1, 1e-6};
  const RiccatiSteadyState ss = riccati_steady_state(model, noise);
  EXPECT_LT(ss.p_c.norm(), 1e-4);
  EXPECT_LT((ss.p_a - (0.1 / std::sqrt(2.0)) * Mat3::Identity()).norm(), 1e-4);
}

TEST(RiccatiSteadyState, RandomModelsSatisfyStationarityAndCoupling) {
  verify::Sampler rng(11);
  for (int i = 0; i < 10; ++i) {
    const ObservationModel model = rng.model(2 + (i % 2), /*mekf_weights=*/true);
    NoiseParams noise{rng.uniform(0.02, 0.2), rng.uniform(0.005, 0.05)};
    const RiccatiSteadyState ss = riccati_steady_state(model, noise);
    EXPECT_LT(ss.res_a, 1e-8);
    EXPECT_LT(ss.res_b, 1e-8);
    EXPECT_LT(ss.res_c, 1e-8);
    EXPECT_LT(ss.res_rel, 1e-8);
    // P_c negative definite, P_a and P_b positive definite
    EXPECT_LT(eig_sym3(ps(ss.p_c)).values[0], 0.0);
    EXPECT_GT(eig_sym3(ss.p_a).values[2], 0.0);
    EXPECT_GT(eig_sym3(ss.p_b).values[2], 0.0);
  }
}

TEST(RiccatiSteadyState, RejectsInvalidInputs) {
  const ObservationModel model = orthogonal_triad(1.0);
  EXPECT_THROW(riccati_steady_state(model, NoiseParams{0.0, 0.02}), InvalidModel);
  EXPECT_THROW(riccati_steady_state(model, NoiseParams{0.1, 0.0}), InvalidModel);
  ObservationModel single;
  single.vectors.push_back({Vec3::UnitZ(), 1.0, 1.0});
  EXPECT_THROW(riccati_steady_state(single, NoiseParams{0.1, 0.02}), InvalidModel);
}

}  // namespace
}  // namespace attikit
