#include "attikit/filters.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "attikit/sim.hpp"
#include "attikit/verify.hpp"

namespace attikit {
namespace {

ObservationModel two_axis_model() {
  ObservationModel m;
  m.vectors.push_back({Vec3::UnitX(), 1.0, 0.0});
  m.vectors.push_back({Vec3::UnitY(), 1.0, 0.0});
  return m;
}

ObservationModel orthogonal_triad(double sigma) {
  ObservationModel m;
  m.vectors.push_back({Vec3::UnitX(), 1.0 / (sigma * sigma), sigma});
  m.vectors.push_back({Vec3::UnitY(), 1.0 / (sigma * sigma), sigma});
  m.vectors.push_back({Vec3::UnitZ(), 1.0 / (sigma * sigma), sigma});
  return m;
}

MeasurementFrame noise_free_frame(const Rotation& c_true, const Vec3& omega_plus_bias,
                                  const ObservationModel& model) {
  MeasurementFrame f;
  f.omega_meas = omega_plus_bias;
  for (const auto& obs : model.vectors) {
    f.vec_meas.push_back(c_true.matrix().transpose() * obs.dir_inertial);
  }
  return f;
}

TEST(OmegaErr, ConvergedIsZero) {
  verify::Sampler rng(1);
  const ObservationModel model = rng.model(2);
  const Rotation c = rng.rotation();
  const MeasurementFrame f = noise_free_frame(c, Vec3::Zero(), model);
  FilterState st;
  st.c_hat = c;
  EXPECT_LT(omega_err(st, f, model).norm(), 1e-15);
}

TEST(OmegaErr, ClosedFormThirtyDegrees) {
  // C = I, C_hat = Rz(pi/6)^T, model {e1, e2}: omega_err = (0, 0, 2 sin 30deg)
  const ObservationModel model = two_axis_model();
  const Rotation c_hat = exp_map(Vec3(0, 0, M_PI / 6)).transposed();
  const MeasurementFrame f = noise_free_frame(Rotation::identity(), Vec3::Zero(), model);
  const Vec3 w = omega_err(c_hat, f, model);
  EXPECT_LT((w - Vec3(0, 0, 1)).norm(), 1e-15);
}

TEST(OmegaErr, PaIdentity) {
  verify::Sampler rng(2);
  for (int i = 0; i < 200; ++i) {
    const ObservationModel model = rng.model(2 + (i % 2));
    const Rotation c_true = rng.rotation();
    const Rotation c_tilde = rng.rotation();
    const Rotation c_hat = c_true * c_tilde.transposed();
    const MeasurementFrame f = noise_free_frame(c_true, Vec3::Zero(), model);
    const Mat3 m = build_m(model, c_true);
    EXPECT_LT((uncross(2.0 * pa(c_tilde.matrix() * m)) - omega_err(c_hat, f, model)).norm(),
              1e-12);
  }
}

TEST(GeneralizedStep, EquilibriumUnchanged) {
  verify::Sampler rng(3);
  const ObservationModel model = rng.model(3);
  const Rotation c = rng.rotation();
  const Vec3 bias(0.01, -0.02, 0.005);
  FilterState st;
  st.c_hat = c;
  st.b_hat = bias;
  const MeasurementFrame f = noise_free_frame(c, bias, model);  // omega = 0
  const FilterState next =
      generalized_step(st, f, model, GainSchedule::scalar(1.0, 0.3), 1e-3);
  EXPECT_LT((next.c_hat.matrix() - c.matrix()).norm(), 1e-14);
  EXPECT_LT((next.b_hat - bias).norm(), 1e-14);
}

TEST(GeneralizedStep, ScalarGainsReduceToMahony) {
  verify::Sampler rng(4);
  const ObservationModel model = rng.model(2);
  FilterState a, b;
  a.c_hat = b.c_hat = rng.rotation();
  Rotation c_truth = rng.rotation();
  const Vec3 omega(0.2, -0.4, 0.1);
  for (int k = 0; k < 100; ++k) {
    const MeasurementFrame f = noise_free_frame(c_truth, omega, model);
    a = generalized_step(a, f, model, GainSchedule::scalar(1.3, 0.21), 1e-2);
    b = mahony_step(b, f, model, 1.3, 0.21, 1e-2);
    c_truth = c_truth * exp_map(1e-2 * omega);
  }
  EXPECT_EQ(a.c_hat.matrix(), b.c_hat.matrix());
  EXPECT_EQ(a.b_hat, b.b_hat);
}

TEST(GeneralizedStep, RejectsBadGains) {
  verify::Sampler rng(5);
  const ObservationModel model = rng.model(2);
  FilterState st;
  const MeasurementFrame f = noise_free_frame(Rotation::identity(), Vec3::Zero(), model);
  EXPECT_THROW(generalized_step(st, f, model,
                                GainSchedule::constant(-Mat3::Identity(), Mat3::Identity()),
                                1e-3),
               GainNotPositiveDefinite);
  EXPECT_THROW(generalized_step(st, f, model,
                                GainSchedule::constant(Mat3::Identity(),
                                                       Vec3(1, 1, -0.1).asDiagonal()),
                                1e-3),
               GainNotPositiveDefinite);
  Mat3 asym = Mat3::Identity();
  asym(0, 1) = 0.5;
  EXPECT_THROW(
      generalized_step(st, f, model, GainSchedule::constant(asym, Mat3::Identity()), 1e-3),
      GainNotPositiveDefinite);
}

TEST(MahonyStep, ZeroIntegralGainKeepsBiasConstant) {
  verify::Sampler rng(6);
  const ObservationModel model = rng.model(2);
  FilterState st;
  st.c_hat = rng.rotation();
  st.b_hat = Vec3(0.04, -0.01, 0.0);
  const Rotation c_truth = rng.rotation();
  for (int k = 0; k < 50; ++k) {
    const MeasurementFrame f = noise_free_frame(c_truth, Vec3::Zero(), model);
    st = mahony_step(st, f, model, 1.0, 0.0, 1e-2);
  }
  EXPECT_EQ(st.b_hat, Vec3(0.04, -0.01, 0.0));
}

// Reference integrator for the generalized-filter ODE: classic RK4 on the
// raw matrix equation at a much finer step, independent of the library's
// geometric stepper. Truth motion is the exact closed form for constant
// omega.
struct OracleState {
  Mat3 c_hat;
  Vec3 b_hat;
};

OracleState oracle_integrate(const Rotation& c0_hat, const Vec3& b0_hat,
                             const Rotation& c0_true, const Vec3& b_true, const Vec3& omega,
                             const ObservationModel& model, const Mat3& kp, const Mat3& ki,
                             double duration, double dt) {
  OracleState s{c0_hat.matrix(), b0_hat};
  const long n = std::lround(duration / dt);
  const auto deriv = [&](const Mat3& c_hat, const Vec3& b_hat, double t) {
    const Rotation c_true = c0_true * exp_map(t * omega);
    Vec3 werr = Vec3::Zero();
    for (const auto& obs : model.vectors) {
      const Vec3 v_meas = c_true.matrix().transpose() * obs.dir_inertial;
      const Vec3 v_hat = c_hat.transpose() * obs.dir_inertial;
      werr += obs.weight * v_meas.cross(v_hat);
    }
    const Vec3 weff = omega + b_true - b_hat + kp * werr;
    return std::pair<Mat3, Vec3>(c_hat * cross_op(weff), (-(ki * werr)).eval());
  };
  for (long k = 0; k < n; ++k) {
    const double t = k * dt;
    const auto [dc1, db1] = deriv(s.c_hat, s.b_hat, t);
    const auto [dc2, db2] =
        deriv(s.c_hat + 0.5 * dt * dc1, s.b_hat + 0.5 * dt * db1, t + 0.5 * dt);
    const auto [dc3, db3] =
        deriv(s.c_hat + 0.5 * dt * dc2, s.b_hat + 0.5 * dt * db2, t + 0.5 * dt);
    const auto [dc4, db4] = deriv(s.c_hat + dt * dc3, s.b_hat + dt * db3, t + dt);
    s.c_hat += (dt / 6.0) * (dc1 + 2.0 * dc2 + 2.0 * dc3 + dc4);
    s.b_hat += (dt / 6.0) * (db1 + 2.0 * db2 + 2.0 * db3 + db4);
    s.c_hat = orthonormalize(s.c_hat).matrix();
  }
  return s;
}

TEST(GeneralizedStep, ConvergenceAgainstReferenceIntegrator) {
  // noise-free scenario: C~0 = exp((0.5, 0.3, -0.2)), b~0 = (0.02, -0.01, 0.03),
  // K_P = diag(2, 1, 1), K_I = 0.2 I, omega = (0.1, 0, 0) constant
  const ObservationModel model = two_axis_model();
  const Mat3 kp = Vec3(2, 1, 1).asDiagonal();
  const Mat3 ki = 0.2 * Mat3::Identity();
  const Vec3 omega(0.1, 0, 0);
  const Rotation c_tilde0 = exp_map(Vec3(0.5, 0.3, -0.2));
  const Vec3 b_true(0.02, -0.01, 0.03);  // b_hat0 = 0 so b~0 = b_true
  const Rotation c0_true = Rotation::identity();
  const Rotation c0_hat = c0_true * c_tilde0.transposed();
  const double duration = 60.0;

  // oracle at dt = 1e-4; the bias error at t = 60 s settles at 1.36e-4
  // (slow bias mode ~ exp(-t K_I/K_P) on the K_P = 2 axis), frozen here
  const OracleState oracle = oracle_integrate(c0_hat, Vec3::Zero(), c0_true, b_true, omega,
                                              model, kp, ki, duration, 1e-4);
  const Rotation c_true_end = c0_true * exp_map(duration * omega);
  const double oracle_err =
      log_map(Rotation::from_matrix(oracle.c_hat).transposed() * c_true_end).norm();
  EXPECT_LT(oracle_err, 1e-3);
  EXPECT_LT((b_true - oracle.b_hat).norm(), 1.5e-4);

  // implementation at dt = 1e-3
  FilterState st;
  st.c_hat = c0_hat;
  const GainSchedule gains = GainSchedule::constant(kp, ki);
  Rotation c_truth = c0_true;
  const double dt = 1e-3;
  const long n = std::lround(duration / dt);
  for (long k = 0; k < n; ++k) {
    const MeasurementFrame f = noise_free_frame(c_truth, omega + b_true, model);
    st = generalized_step(st, f, model, gains, dt);
    c_truth = c_truth * exp_map(dt * omega);
  }
  EXPECT_LT(attitude_error_angle(c_truth, st.c_hat), 1e-3);
  EXPECT_LT((b_true - st.b_hat).norm(), 1.5e-4);

  // the two integrations agree on the terminal state
  EXPECT_LT((st.c_hat.matrix() - oracle.c_hat).norm(), 1e-5);
  EXPECT_LT((st.b_hat - oracle.b_hat).norm(), 1e-6);
}

TEST(MahonyStep, LyapunovDecreaseFromLargeError) {
  // k_p = 1, k_i = 0.3, start at C~ = Rz(2.0); v decreases monotonically
  // once the bias wind-up transient has passed
  const ObservationModel model = two_axis_model();
  const GainSchedule gains = GainSchedule::scalar(1.0, 0.3);
  FilterState st;
  st.c_hat = exp_map(Vec3(0, 0, 2.0)).transposed();
  const Rotation c_truth = Rotation::identity();
  const double dt = 2.5e-4;
  double v_prev = lyapunov_v({st.c_hat.transposed() * c_truth, -st.b_hat}, model, gains, 0.0);
  double worst_increase = -1.0;
  double worst_after_transient = -1.0;
  for (int k = 0; k < 120000; ++k) {  // 30 s
    const MeasurementFrame f = noise_free_frame(c_truth, Vec3::Zero(), model);
    st = mahony_step(st, f, model, 1.0, 0.3, dt);
    const double v =
        lyapunov_v({st.c_hat.transposed() * c_truth, -st.b_hat}, model, gains, st.t);
    worst_increase = std::max(worst_increase, v - v_prev);
    if (st.t > 3.0) worst_after_transient = std::max(worst_after_transient, v - v_prev);
    v_prev = v;
  }
  EXPECT_LT(worst_increase, 1e-6);          // integrator wiggle mid-transient only
  EXPECT_LT(worst_after_transient, 1e-9);   // monotone after the transient
  EXPECT_LT(v_prev, 1e-6);                  // converged
}

TEST(MekfOmegaRef, ConvergedNoiseFree) {
  verify::Sampler rng(8);
  const ObservationModel model = rng.model(3, /*mekf_weights=*/true);
  const Rotation c = rng.rotation();
  FilterState st;
  st.c_hat = c;
  st.b_hat = Vec3(0.01, 0.0, -0.02);
  st.p = Mat6(Mat6::Identity());
  const Vec3 omega(0.4, 0.1, -0.2);
  const MeasurementFrame f = noise_free_frame(c, omega + st.b_hat, model);
  EXPECT_LT((mekf_omega_ref(st, f, model) - omega).norm(), 1e-13);
}

TEST(MekfOmegaRef, GainIdentification) {
  verify::Sampler rng(9);
  for (int i = 0; i < 100; ++i) {
    const ObservationModel model = rng.model(2 + (i % 2), /*mekf_weights=*/true);
    FilterState st;
    st.c_hat = rng.rotation();
    st.b_hat = rng.vec3(0.05);
    Mat6 p = Mat6::Zero();
    p.block<3, 3>(0, 0) = rng.pd(0.2, 2.0);
    p.block<3, 3>(3, 3) = Mat3::Identity();
    st.p = p;
    const Rotation c_true = rng.rotation();
    const MeasurementFrame f = noise_free_frame(c_true, rng.vec3(0.5), model);
    const Vec3 expected = f.omega_meas - st.b_hat +
                          p.block<3, 3>(0, 0) * omega_err(st.c_hat, f, model);
    EXPECT_LT((mekf_omega_ref(st, f, model) - expected).norm(), 1e-14);
  }
  FilterState no_cov;
  const ObservationModel model = rng.model(2, true);
  const MeasurementFrame f = noise_free_frame(Rotation::identity(), Vec3::Zero(), model);
  EXPECT_THROW(mekf_omega_ref(no_cov, f, model), CovarianceMissing);
}

TEST(FullMekf, TracksTruthWhenConverged) {
  const ObservationModel model = orthogonal_triad(0.1);
  NoiseParams noise{0.05, 0.01};
  const RiccatiSteadyState ss = riccati_steady_state(model, noise);

  Mat6 p0;
  p0.block<3, 3>(0, 0) = ss.p_a;
  p0.block<3, 3>(0, 3) = ss.p_c;
  p0.block<3, 3>(3, 0) = ss.p_c.transpose();
  p0.block<3, 3>(3, 3) = ss.p_b;

  const Vec3 omega(0.3, -0.2, 0.1);
  const Vec3 bias(0.01, 0.02, -0.01);
  Rotation c_truth = exp_map(Vec3(0.4, 0.2, -0.1));
  FilterState st;
  st.c_hat = c_truth;
  st.b_hat = bias;
  st.p = p0;
  const double dt = 1e-3;
  for (int k = 0; k < 10000; ++k) {
    const MeasurementFrame f = noise_free_frame(c_truth, omega + bias, model);
    st = full_mekf_step(st, f, model, noise, dt);
    c_truth = c_truth * exp_map(dt * omega);
  }
  EXPECT_LT(attitude_error_angle(c_truth, st.c_hat), 1e-6);
  EXPECT_LT((bias - st.b_hat).norm(), 1e-6);
}

TEST(FullMekf, ZeroBiasWalkApproachesBiasFree) {
  // sigma_b = 0, b_hat0 = b = 0, P_c0 = 0 and P_b0 tiny: P_c stays small
  // (P_c' = -P_b at P_c = 0) and the trajectory approaches the bias-free
  // filter started from the same P_a
  const ObservationModel model = orthogonal_triad(0.2);
  NoiseParams noise{0.05, 0.0};
  const Mat3 pa0 = 0.5 * Mat3::Identity();
  const double pb0 = 1e-6;

  FilterState full;
  full.c_hat = exp_map(Vec3(0.5, -0.3, 0.2));
  Mat6 p0 = Mat6::Zero();
  p0.block<3, 3>(0, 0) = pa0;
  p0.block<3, 3>(3, 3) = pb0 * Mat3::Identity();
  full.p = p0;

  FilterState bf;
  bf.c_hat = full.c_hat;
  bf.p_att = pa0;

  Rotation c_truth = Rotation::identity();
  const Vec3 omega(0.2, 0.1, -0.3);
  const double dt = 2e-3;
  const int steps = 2000;  // 4 s
  for (int k = 0; k < steps; ++k) {
    const MeasurementFrame f = noise_free_frame(c_truth, omega, model);
    full = full_mekf_step(full, f, model, noise, dt);
    bf = bias_free_mekf_step(bf, f, model, noise, dt);
    c_truth = c_truth * exp_map(dt * omega);
  }
  // coupling block grows no faster than |P_b0| * t
  EXPECT_LT((full.p->block<3, 3>(0, 3)).norm(), 10.0 * pb0 * steps * dt);
  EXPECT_LT((full.c_hat.matrix() - bf.c_hat.matrix()).norm(), 1e-4);
  EXPECT_LT(((full.p->block<3, 3>(0, 0)) - *bf.p_att).norm(), 1e-4);
  EXPECT_LT(full.b_hat.norm(), 1e-4);
}

TEST(FullMekf, RejectsNonPdCovariance) {
  const ObservationModel model = orthogonal_triad(0.1);
  NoiseParams noise{0.05, 0.01};
  FilterState st;
  Mat6 p = Mat6::Identity();
  p(0, 0) = -1.0;
  st.p = p;
  const MeasurementFrame f = noise_free_frame(Rotation::identity(), Vec3::Zero(), model);
  EXPECT_THROW(full_mekf_step(st, f, model, noise, 1e-3), CovarianceNotPD);
  FilterState missing;
  EXPECT_THROW(full_mekf_step(missing, f, model, noise, 1e-3), CovarianceMissing);
}

TEST(BiasFreeMekf, SteadyStateResidual) {
  // omega = 0, converged attitude: P_a flows to the stationary point of
  // sigma_w^2 I - P_a A0 P_a with A0 = 2I
  const ObservationModel model = orthogonal_triad(1.0);
  NoiseParams noise{0.1, 0.0};
  FilterState st;
  st.p_att = Mat3::Identity();
  const Rotation c_truth = Rotation::identity();
  st.c_hat = c_truth;
  const double dt = 5e-3;
  for (int k = 0; k < 20000; ++k) {
    const MeasurementFrame f = noise_free_frame(c_truth, Vec3::Zero(), model);
    st = bias_free_mekf_step(st, f, model, noise, dt);
  }
  const Mat3 expect = (0.1 / std::sqrt(2.0)) * Mat3::Identity();
  EXPECT_LT((*st.p_att - expect).norm(), 1e-8);
  const Mat3 residual = noise.sigma_omega * noise.sigma_omega * Mat3::Identity() -
                        2.0 * (*st.p_att) * (*st.p_att);
  EXPECT_LT(residual.norm(), 1e-10);
}

TEST(BiasFreeMekf, NoiseFreeConvergence) {
  const ObservationModel model = orthogonal_triad(0.3);
  NoiseParams noise{0.05, 0.0};
  FilterState st;
  st.c_hat = exp_map(Vec3(1.0, 1.0, 0.5)).transposed();  // C~0 = exp((1, 1, 0.5))
  st.p_att = Mat3::Identity();
  Rotation c_truth = Rotation::identity();
  const Vec3 omega(0.1, -0.05, 0.0);
  const double dt = 2e-3;
  for (int k = 0; k < 15000; ++k) {  // 30 s
    const MeasurementFrame f = noise_free_frame(c_truth, omega, model);
    st = bias_free_mekf_step(st, f, model, noise, dt);
    c_truth = c_truth * exp_map(dt * omega);
  }
  EXPECT_LT(attitude_error_angle(c_truth, st.c_hat), 1e-3);
}

TEST(Equivalences, SuitePasses) {
  const auto res = verify::run_equivalence(5, 12345);
  EXPECT_TRUE(res.passed()) << res.failures << " failures";
  EXPECT_LT(res.worst("bias_free_equivalence"), 1e-12);
  EXPECT_LT(res.worst("constant_gain_equivalence"), 1e-14);
  EXPECT_LT(res.worst("mahony_reduction"), 1e-14);
  EXPECT_LT(res.worst("omega_ref_identification"), 1e-14);
}

TEST(AnyFilter, StartedAtTruthStaysAtTruth) {
  // machine-precision drift bound: 1e-10 over 1e4 steps
  const ObservationModel model = orthogonal_triad(0.2);
  NoiseParams noise{0.05, 0.01};
  const RiccatiSteadyState ss = riccati_steady_state(model, noise);
  const Vec3 omega(1.0, -2.0, 0.5);

  FilterState gen, cg, bf, full;
  Rotation c_truth = exp_map(Vec3(0.2, 0.1, 0.0));
  gen.c_hat = cg.c_hat = bf.c_hat = full.c_hat = c_truth;
  Mat6 p0;
  p0.block<3, 3>(0, 0) = ss.p_a;
  p0.block<3, 3>(0, 3) = ss.p_c;
  p0.block<3, 3>(3, 0) = ss.p_c.transpose();
  p0.block<3, 3>(3, 3) = ss.p_b;
  full.p = p0;
  bf.p_att = ss.p_a;

  const GainSchedule gains = GainSchedule::scalar(1.0, 0.3);
  const double dt = 1e-3;
  for (int k = 0; k < 10000; ++k) {
    const MeasurementFrame f = noise_free_frame(c_truth, omega, model);
    gen = generalized_step(gen, f, model, gains, dt);
    cg = constant_gain_mekf_step(cg, f, model, noise, dt, {ss.p_a, ss.p_c});
    bf = bias_free_mekf_step(bf, f, model, noise, dt);
    full = full_mekf_step(full, f, model, noise, dt);
    c_truth = c_truth * exp_map(dt * omega);
  }
  EXPECT_LT(attitude_error_angle(c_truth, gen.c_hat), 1e-10);
  EXPECT_LT(attitude_error_angle(c_truth, cg.c_hat), 1e-10);
  EXPECT_LT(attitude_error_angle(c_truth, bf.c_hat), 1e-10);
  EXPECT_LT(attitude_error_angle(c_truth, full.c_hat), 1e-10);
  EXPECT_LT(gen.b_hat.norm(), 1e-10);
}

TEST(AnyFilter, RotationInvariantsPreserved) {
  // high rate, dt = 1e-3: orthonormality must hold after every step
  const ObservationModel model = two_axis_model();
  FilterState st;
  st.c_hat = exp_map(Vec3(0.5, 0.5, 0.5));
  Rotation c_truth = Rotation::identity();
  const Vec3 omega(7.0, -5.0, 4.0);  // |omega| ~ 9.5 rad/s
  const double dt = 1e-3;
  for (int k = 0; k < 10000; ++k) {
    const MeasurementFrame f = noise_free_frame(c_truth, omega, model);
    st = mahony_step(st, f, model, 1.0, 0.3, dt);
    c_truth = c_truth * exp_map(dt * omega);
  }
  const Mat3 g = st.c_hat.matrix().transpose() * st.c_hat.matrix();
  EXPECT_LT((g - Mat3::Identity()).norm(), 1e-12);
  EXPECT_NEAR(st.c_hat.matrix().determinant(), 1.0, 1e-12);
}

TEST(GainSchedule, FiniteDifferenceFallbackFlagged) {
  const auto kp = [](double) { return Mat3(Mat3::Identity()); };
  const auto ki = [](double t) { return Mat3((1.0 + 0.1 * std::sin(t)) * Mat3::Identity()); };
  const GainSchedule fd = GainSchedule::time_varying_fd(kp, ki);
  EXPECT_TRUE(fd.k_i_dot_from_fd);
  const double t = 2.0;
  const Mat3 expect = 0.1 * std::cos(t) * Mat3::Identity();
  EXPECT_LT((fd.k_i_dot(t) - expect).norm(), 1e-8);
}

}  // namespace
}  // namespace attikit
