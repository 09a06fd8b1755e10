#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "attikit/error.hpp"
#include "attikit/filters.hpp"
#include "attikit/sensors.hpp"
#include "attikit/so3.hpp"

namespace attikit {

// Attitude/bias estimation error: C_tilde = C_hat^T C, b_tilde = b - b_hat.
struct ErrorState {
  Rotation c_tilde;
  Vec3 b_tilde = Vec3::Zero();
};

struct ErrorRates {
  Mat3 c_tilde_dot = Mat3::Zero();
  Vec3 b_tilde_dot = Vec3::Zero();
};

// The four equilibria of the error dynamics: identity plus the pi
// rotations about the principal axes of M. u, lambda come from the
// symmetric eigendecomposition of M^A (eigenvalues descending).
struct EquilibriumSet {
  std::array<Rotation, 4> c_star;
  Rotation u;
  Vec3 lambda = Vec3::Zero();
};

namespace detail {

inline std::vector<Vec3> body_vectors(const ObservationModel& model, const Rotation& c_truth) {
  const Mat3 ct = c_truth.matrix().transpose();
  std::vector<Vec3> out;
  out.reserve(model.vectors.size());
  for (const auto& obs : model.vectors) out.push_back(ct * obs.dir_inertial);
  return out;
}

inline Vec3 omega_err_body(const std::vector<Vec3>& v_body, const ObservationModel& model,
                           const Rotation& c_tilde) {
  Vec3 w = Vec3::Zero();
  for (size_t n = 0; n < v_body.size(); ++n) {
    w += model.vectors[n].weight * v_body[n].cross(c_tilde * v_body[n]);
  }
  return w;
}

}  // namespace detail

/// Noise-free error dynamics:
///   C_tilde' = [C_tilde, omega_x] - (b_tilde + K_P omega_err)x C_tilde
///   b_tilde' = K_I omega_err,  omega_err = sum k_n v_n x C_tilde v_n.
/// The reference vectors are mapped into the body frame by c_truth
/// (identity when studying the dynamics with the truth frame frozen).
inline ErrorRates error_dynamics_rhs(const ErrorState& err, const Vec3& omega,
                                     const ObservationModel& model, const GainSchedule& gains,
                                     double t, const Rotation& c_truth = Rotation::identity()) {
  const auto v_body = detail::body_vectors(model, c_truth);
  const Vec3 werr = detail::omega_err_body(v_body, model, err.c_tilde);
  ErrorRates out;
  out.c_tilde_dot = commutator(err.c_tilde.matrix(), cross_op(omega)) -
                    cross_op(err.b_tilde + gains.k_p(t) * werr) * err.c_tilde.matrix();
  out.b_tilde_dot = gains.k_i(t) * werr;
  return out;
}

/// Equilibria of the error correction: C_star_i = U D_i U^T with
/// M^A = U Lambda U^T, D_0 = I, D_i = pi-rotation about axis i.
/// Requires distinct eigenvalues (propagates DegenerateEigenvalues).
inline EquilibriumSet equilibria(const ObservationModel& model) {
  const Mat3 ma = build_m(model, Rotation::identity());
  check_distinct_eigenvalues(ma);
  const SymEig3 eig = eig_sym3(ma);

  EquilibriumSet out;
  out.u = Rotation::from_matrix(eig.vectors);
  out.lambda = eig.values;
  const std::array<Vec3, 4> d = {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1),
                                 Vec3(-1, -1, 1)};
  for (int i = 0; i < 4; ++i) {
    out.c_star[i] =
        Rotation::from_matrix(eig.vectors * d[i].asDiagonal() * eig.vectors.transpose());
  }
  return out;
}

/// Lyapunov candidate v = sum k_n - tr(C_tilde M) + 1/2 b~^T K_I^-1 b~.
/// Zero exactly at (I, 0), positive elsewhere.
inline double lyapunov_v(const ErrorState& err, const ObservationModel& model,
                         const GainSchedule& gains, double t,
                         const Rotation& c_truth = Rotation::identity()) {
  const Mat3 m = build_m(model, c_truth);
  double v = model.weight_sum() - (err.c_tilde.matrix() * m).trace();
  if (err.b_tilde.squaredNorm() > 0.0) {
    const Mat3 ki = gains.k_i(t);
    Eigen::LDLT<Mat3> ldlt(ki);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      throw GainNotPositiveDefinite("lyapunov_v: K_I must be positive definite when b_tilde != 0");
    }
    v += 0.5 * err.b_tilde.dot(ldlt.solve(err.b_tilde));
  }
  return v;
}

/// Analytic derivative of v along the error dynamics:
/// v' = tr((K_P omega_err)x Pa(C_tilde M)) - 1/2 b~^T K_I^-1 K_I' K_I^-1 b~.
/// Non-positive under the stability hypotheses (K_P, K_I PD, K_I' PSD).
inline double lyapunov_v_dot(const ErrorState& err, const Vec3& /*omega*/,
                             const ObservationModel& model, const GainSchedule& gains, double t,
                             const Rotation& c_truth = Rotation::identity()) {
  const auto v_body = detail::body_vectors(model, c_truth);
  const Vec3 werr = detail::omega_err_body(v_body, model, err.c_tilde);
  const Mat3 m = build_m(model, c_truth);
  double vdot =
      (cross_op(gains.k_p(t) * werr) * pa(err.c_tilde.matrix() * m)).trace();
  if (err.b_tilde.squaredNorm() > 0.0) {
    const Mat3 ki = gains.k_i(t);
    Eigen::LDLT<Mat3> ldlt(ki);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      throw GainNotPositiveDefinite(
          "lyapunov_v_dot: K_I must be positive definite when b_tilde != 0");
    }
    const Vec3 z = ldlt.solve(err.b_tilde);
    vdot -= 0.5 * z.dot(gains.k_i_dot(t) * z);
  }
  return vdot;
}

/// Linearization matrix A_i = C_star_i (tr(M) I - M), expressed in the
/// frame reached by c (identity = inertial). A_0 is symmetric positive
/// definite; A_1..A_3 each have at least one negative eigenvalue.
inline Mat3 linearization_a(const ObservationModel& model, int equil_index,
                            const Rotation& c = Rotation::identity()) {
  if (equil_index < 0 || equil_index > 3)
    throw Error("linearization_a: equil_index must be in 0..3");
  const EquilibriumSet eq = equilibria(model);
  const Mat3 m = build_m(model, c);
  const Mat3 cstar =
      c.matrix().transpose() * eq.c_star[equil_index].matrix() * c.matrix();
  return cstar * (m.trace() * Mat3::Identity() - m);
}

/// 6x6 state matrix of the linearized error dynamics about C_star_i with
/// constant gains. i = 0 uses the body-frame form
/// [[-K_P A0 - omega_x, I], [-K_I A0, 0]]; i >= 1 the inertial-frame form
/// [[-K_P A_i, I], [-K_I A_i, omega_x]].
inline Mat6 linearized_system(const ObservationModel& model, const Mat3& k_p, const Mat3& k_i,
                              const Vec3& omega, int equil_index) {
  if (equil_index < 0 || equil_index > 3)
    throw Error("linearized_system: equil_index must be in 0..3");
  const Mat3 a = linearization_a(model, equil_index);
  Mat6 b = Mat6::Zero();
  b.block<3, 3>(0, 0) = -k_p * a;
  b.block<3, 3>(0, 3) = Mat3::Identity();
  b.block<3, 3>(3, 0) = -k_i * a;
  if (equil_index == 0) {
    b.block<3, 3>(0, 0) -= cross_op(omega);
  } else {
    b.block<3, 3>(3, 3) = cross_op(omega);
  }
  return b;
}

/// Instability cost about an unstable equilibrium (i in 1..3):
/// s = 1/2 x^T A_i x + 1/2 y^T K_I^-1 y,
/// s' = -x^T A_i^T K_P A_i x - 1/2 y^T K_I^-1 K_I' K_I^-1 y.
/// s' <= 0 always, and s < 0 along negative eigenvectors of A_i.
inline std::pair<double, double> instability_cost(const Vec3& x, const Vec3& y,
                                                  const ObservationModel& model,
                                                  const GainSchedule& gains, int equil_index,
                                                  double t) {
  if (equil_index < 1 || equil_index > 3)
    throw Error("instability_cost: equil_index must be in 1..3");
  const Mat3 a = linearization_a(model, equil_index);
  const Mat3 ki = gains.k_i(t);
  Eigen::LDLT<Mat3> ldlt(ki);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw GainNotPositiveDefinite("instability_cost: K_I must be positive definite");
  }
  const Vec3 kiy = ldlt.solve(y);
  const double s = 0.5 * x.dot(a * x) + 0.5 * y.dot(kiy);
  const Vec3 ax = a * x;
  const double s_dot = -ax.dot(gains.k_p(t) * ax) - 0.5 * kiy.dot(gains.k_i_dot(t) * kiy);
  return {s, s_dot};
}

// Local exponential-stability certificate at the identity equilibrium.
struct Certificate {
  double alpha = 0.0;
  double min_eig_p = 0.0;
  double min_eig_q = 0.0;
};

/// Searches a 200-point logarithmic grid of alpha in (0, alpha_max) for
/// P = [[A0, -a A0], [-a A0, K_I^-1]] > 0 and Q = -(PB + B^T P) > 0
/// (constant gains, so P' = 0). alpha_max comes from a^2 A0 < K_I^-1.
/// Throws NoCertificateFound when the grid is exhausted; that signals a
/// hypothesis violation or a too-coarse grid, not a disproof.
inline Certificate exponential_certificate(const ObservationModel& model, const Mat3& k_p,
                                           const Mat3& k_i, const Vec3& omega) {
  detail::check_gain(k_p, "K_P", /*strictly_pd=*/true);
  detail::check_gain(k_i, "K_I", /*strictly_pd=*/true);
  const Mat3 m = build_m(model, Rotation::identity());
  const Mat3 a0 = m.trace() * Mat3::Identity() - m;
  if (eig_sym3(a0).values[2] <= 0.0)
    throw InvalidModel("exponential_certificate: A0 not positive definite");

  const SymEig3 ki_eig = eig_sym3(k_i);
  const Mat3 ki_sqrt = ki_eig.vectors *
                       ki_eig.values.cwiseSqrt().asDiagonal() * ki_eig.vectors.transpose();
  const double alpha_max =
      1.0 / std::sqrt(eig_sym3(Mat3(ki_sqrt * a0 * ki_sqrt)).values[0]);

  const Mat6 b = linearized_system(model, k_p, k_i, omega, 0);
  const Mat3 ki_inv = k_i.inverse();

  constexpr int kGridPoints = 200;
  for (int j = 0; j < kGridPoints; ++j) {
    // logarithmic sweep over 8 decades up to just below alpha_max
    const double alpha =
        alpha_max * std::pow(10.0, -8.0 * (1.0 - double(j) / (kGridPoints - 1))) *
        (j == kGridPoints - 1 ? 1.0 - 1e-9 : 1.0);
    Mat6 p;
    p.block<3, 3>(0, 0) = a0;
    p.block<3, 3>(0, 3) = -alpha * a0;
    p.block<3, 3>(3, 0) = -alpha * a0;
    p.block<3, 3>(3, 3) = ki_inv;
    const Mat6 q = -(p * b + b.transpose() * p);
    const double min_p = eig_sym<6>(p).values[5];
    const double min_q = eig_sym<6>(Mat6(0.5 * (q + q.transpose()))).values[5];
    if (min_p > 0.0 && min_q > 0.0) {
      return {alpha, min_p, min_q};
    }
  }
  throw NoCertificateFound("exponential_certificate: no alpha in (0, " +
                           std::to_string(alpha_max) + ") certified P > 0 and Q > 0");
}

// ---------------------------------------------------------------------
// Error-dynamics trajectory integration (coupled with the truth frame so
// M co-rotates exactly as in the convergence analysis).

using OmegaFn = std::function<Vec3(double)>;

struct ErrorTrajectoryState {
  ErrorState err;
  Rotation c_truth;
  double t = 0.0;
};

/// One geometric step of the coupled (C, C_tilde, b_tilde) system.
/// dt may be negative (used by finite-difference probes).
inline ErrorTrajectoryState error_dynamics_step(const ErrorTrajectoryState& s,
                                                const OmegaFn& omega,
                                                const ObservationModel& model,
                                                const GainSchedule& gains, double dt) {
  const double t = s.t;
  const double tm = t + 0.5 * dt;
  const Vec3 w0 = omega(t);
  const Vec3 wm = omega(tm);

  const auto v0 = detail::body_vectors(model, s.c_truth);
  const Vec3 werr0 = detail::omega_err_body(v0, model, s.err.c_tilde);
  const Vec3 weff0 = w0 + s.err.b_tilde + gains.k_p(t) * werr0;  // estimator body rate
  const Vec3 bdot0 = gains.k_i(t) * werr0;

  // midpoint predictor
  const Rotation c_truth_half = s.c_truth * exp_map(0.5 * dt * w0);
  const Rotation ctil_half =
      exp_map(-0.5 * dt * weff0) * s.err.c_tilde * exp_map(0.5 * dt * w0);
  const Vec3 b_half = s.err.b_tilde + 0.5 * dt * bdot0;
  const auto vh = detail::body_vectors(model, c_truth_half);
  const Vec3 werr_m = detail::omega_err_body(vh, model, ctil_half);
  const Vec3 weff_m = wm + b_half + gains.k_p(tm) * werr_m;

  // corrector: both frames advance with midpoint rates
  ErrorTrajectoryState out;
  out.t = t + dt;
  out.c_truth = s.c_truth * exp_map(dt * wm);
  out.err.c_tilde = orthonormalize(
      (exp_map(-dt * weff_m) * s.err.c_tilde * exp_map(dt * wm)).matrix());

  // Simpson stages for the bias error along the committed paths
  const Rotation c_truth_mid = s.c_truth * exp_map(0.5 * dt * wm);
  const Rotation ctil_mid =
      exp_map(-0.5 * dt * weff_m) * s.err.c_tilde * exp_map(0.5 * dt * wm);
  const auto vmid = detail::body_vectors(model, c_truth_mid);
  const auto vend = detail::body_vectors(model, out.c_truth);
  const Vec3 k1 = bdot0;
  const Vec3 k2 = gains.k_i(tm) * detail::omega_err_body(vmid, model, ctil_mid);
  const Vec3 k4 = gains.k_i(t + dt) * detail::omega_err_body(vend, model, out.err.c_tilde);
  out.err.b_tilde = s.err.b_tilde + (dt / 6.0) * (k1 + 4.0 * k2 + k4);
  return out;
}

}  // namespace attikit
