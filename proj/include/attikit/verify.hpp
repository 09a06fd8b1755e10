#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "attikit/error.hpp"
#include "attikit/filters.hpp"
#include "attikit/sensors.hpp"
#include "attikit/sim.hpp"
#include "attikit/so3.hpp"
#include "attikit/stability.hpp"

namespace attikit::verify {

// Outcome of one property suite: check/failure counts plus the worst
// residual seen per named property.
struct SuiteResult {
  std::string name;
  long checks = 0;
  long failures = 0;
  std::map<std::string, double> residuals;

  bool passed() const { return failures == 0; }

  double worst(const std::string& key) const {
    auto it = residuals.find(key);
    return it == residuals.end() ? 0.0 : it->second;
  }

  void check(const std::string& key, double residual, double tol) {
    ++checks;
    auto& worst = residuals[key];
    worst = std::max(worst, residual);
    if (!(residual <= tol) || !std::isfinite(residual)) ++failures;
  }

  void check_true(const std::string& key, bool ok) {
    ++checks;
    residuals.try_emplace(key, 0.0);
    if (!ok) ++failures;
  }
};

// Deterministic sample generators built on the seeded Gaussian stream.
class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : ns_(seed) {}

  double gaussian() { return ns_.gaussian(); }

  double uniform(double lo, double hi) {
    return lo + detail::uniform01(ns_) * (hi - lo);
  }

  Vec3 vec3(double scale = 1.0) { return scale * ns_.gaussian3(); }

  Vec3 unit() { return detail::random_unit(ns_); }

  Rotation rotation(double max_angle = M_PI - 1e-3) {
    return exp_map(uniform(0.0, max_angle) * unit());
  }

  /// Symmetric PD matrix with eigenvalues in [lo, hi].
  Mat3 pd(double lo, double hi) {
    const Mat3 s = rotation().matrix();
    const Vec3 eigs(uniform(lo, hi), uniform(lo, hi), uniform(lo, hi));
    return s * eigs.asDiagonal() * s.transpose();
  }

  /// Observation model with n well-separated unit directions. With
  /// mekf_weights set, k_n = sigma_n^-2 so the MEKF innovation equals
  /// omega_err. Rejects draws whose M has near-degenerate eigenvalues.
  ObservationModel model(int n_vectors, bool mekf_weights = false) {
    for (int attempt = 0; attempt < 256; ++attempt) {
      ObservationModel m;
      for (int i = 0; i < n_vectors; ++i) {
        VectorObservation obs;
        for (int tries = 0; tries < 64; ++tries) {
          obs.dir_inertial = unit();
          bool separated = true;
          for (const auto& prev : m.vectors) {
            const double c = std::abs(prev.dir_inertial.dot(obs.dir_inertial));
            if (c > std::cos(0.35)) separated = false;
          }
          if (separated) break;
        }
        obs.sigma = uniform(0.05, 0.4);
        obs.weight = mekf_weights ? 1.0 / (obs.sigma * obs.sigma) : uniform(0.5, 2.0);
        m.vectors.push_back(obs);
      }
      try {
        m.validate(true);
        check_distinct_eigenvalues(build_m(m, Rotation::identity()));
        return m;
      } catch (const Error&) {
        continue;
      }
    }
    throw Error("Sampler::model: could not draw a non-degenerate model");
  }

  NoiseStream& stream() { return ns_; }

 private:
  NoiseStream ns_;
};

namespace vdetail {

inline MeasurementFrame noise_free_frame(const Rotation& c_true, const Vec3& omega_plus_bias,
                                         const ObservationModel& model) {
  MeasurementFrame f;
  f.omega_meas = omega_plus_bias;
  const Mat3 ct = c_true.matrix().transpose();
  for (const auto& obs : model.vectors) f.vec_meas.push_back(ct * obs.dir_inertial);
  return f;
}

inline double rotation_distance(const Rotation& a, const Rotation& b) {
  return log_map(a.transposed() * b).norm();
}

}  // namespace vdetail

// ---------------------------------------------------------------------
// identities: cross-operator identity set, expansion/contraction set,
// exp/log round trips, frame maps, and the omega_err identity.

inline SuiteResult run_identities(int n, std::uint64_t seed) {
  SuiteResult res;
  res.name = "identities";
  Sampler rng(seed);

  for (int it = 0; it < n; ++it) {
    const Vec3 x = rng.vec3();
    const Vec3 y = rng.vec3();

    // (x cross y)x = [xx, yx]
    res.check("19a_cross_commutator",
              (cross_op(x.cross(y)) - commutator(cross_op(x), cross_op(y))).norm(), 1e-12);

    // Qx cross Qy = det(Q) Q^-1 (x cross y), Q definite (relative)
    {
      const Mat3 q = rng.pd(0.5, 2.0) * (it % 2 == 0 ? 1.0 : -1.0);
      const Vec3 lhs = (q * x).cross(q * y);
      const Vec3 rhs = q.determinant() * (q.inverse() * x.cross(y));
      res.check("19b_definite_contraction",
                (lhs - rhs).norm() / std::max(1.0, std::max(lhs.norm(), rhs.norm())), 1e-12);
    }

    // x.y = -tr(xx yx)/2
    res.check("19c_trace_ident",
              std::abs(x.dot(y) + 0.5 * (cross_op(x) * cross_op(y)).trace()) /
                  std::max(1.0, x.norm() * y.norm()),
              1e-12);

    // xx yx = y x^T - (y.x) I
    res.check("19d_outer_ident",
              (cross_op(x) * cross_op(y) -
               (y * x.transpose() - x.dot(y) * Mat3::Identity()))
                  .norm() /
                  std::max(1.0, x.norm() * y.norm()),
              1e-12);

    // shared eigenbasis expansion identities
    {
      const Rotation s = rng.rotation();
      const Vec3 la(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
      const Vec3 lb(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
      const Mat3 sm = s.matrix();
      const Mat3 a = sm * la.asDiagonal() * sm.transpose();
      const Mat3 b = sm * lb.asDiagonal() * sm.transpose();
      const Vec3 lc(la[1] * lb[2] + lb[1] * la[2], la[0] * lb[2] + lb[0] * la[2],
                    la[0] * lb[1] + lb[0] * la[1]);
      const Mat3 c = sm * lc.asDiagonal() * sm.transpose();
      res.check("20a_pa_expansion",
                (pa(a * cross_op(x) * b) - 0.5 * cross_op(c * x)).norm(), 1e-12);

      res.check("20b_rotation_conjugation",
                (sm * cross_op(x) * sm.transpose() - cross_op(sm * x)).norm(), 1e-12);

      const Vec3 ld(la[1] * la[2], la[0] * la[2], la[0] * la[1]);
      const Mat3 d = sm * ld.asDiagonal() * sm.transpose();
      res.check("20c_sandwich",
                (a * cross_op(x) * a - cross_op(d * x)).norm(), 1e-12);
    }

    // exp/log round trip on |v| <= pi - 1e-3
    {
      const Vec3 v = rng.uniform(0.0, M_PI - 1e-3) * rng.unit();
      res.check("exp_log_round_trip", (log_map(exp_map(v)) - v).norm(), 1e-12);
      const Rotation r = exp_map(v);
      res.check("exp_inverse",
                ((r * exp_map(-v)).matrix() - Mat3::Identity()).norm(), 1e-12);
    }

    // frame maps: conjugation of a cross operator, eigenvalue invariance
    {
      const Rotation c = rng.rotation();
      res.check("frame_cross_conjugation",
                (to_inertial(cross_op(x), c) - cross_op(to_inertial(x, c))).norm(), 1e-12);
    }

    // omega_err identity: cross_op(omega_err) == 2 Pa(C_tilde M)
    {
      const ObservationModel model = rng.model(2 + (it % 2));
      const Rotation c_true = rng.rotation();
      const Rotation c_tilde = rng.rotation();
      const Rotation c_hat = c_true * c_tilde.transposed();
      const MeasurementFrame frame =
          vdetail::noise_free_frame(c_true, Vec3::Zero(), model);
      const Vec3 werr = omega_err(c_hat, frame, model);
      const Mat3 m = build_m(model, c_true);
      res.check("omega_err_pa_identity",
                (uncross(2.0 * pa(c_tilde.matrix() * m)) - werr).norm(), 1e-12);
    }
  }
  return res;
}

// ---------------------------------------------------------------------
// lyapunov: v non-increasing along noise-free error-dynamics
// trajectories under the stability hypotheses, and analytic v' matching
// a central finite difference.

inline SuiteResult run_lyapunov(int n_trajectories, std::uint64_t seed) {
  SuiteResult res;
  res.name = "lyapunov";
  Sampler rng(seed);

  const double dt = 2.5e-4;
  const double duration = 6.0;
  const long steps = std::lround(duration / dt);

  for (int traj = 0; traj < n_trajectories; ++traj) {
    const ObservationModel model = rng.model(2 + (traj % 2));
    const GainSchedule gains =
        GainSchedule::constant(rng.pd(0.3, 1.5), rng.pd(0.1, 0.6));
    const OmegaProfile profile =
        OmegaProfile::sinusoid(rng.vec3(0.4), rng.uniform(0.05, 0.4));
    const OmegaFn omega = [profile](double t) { return profile(t); };

    ErrorTrajectoryState s;
    s.err.c_tilde = exp_map(rng.uniform(0.1, M_PI - 0.3) * rng.unit());
    s.err.b_tilde = rng.uniform(0.0, 0.1) * rng.unit();
    s.c_truth = rng.rotation();
    s.t = 0.0;

    double v_prev = lyapunov_v(s.err, model, gains, s.t, s.c_truth);
    double worst_increase = 0.0;
    for (long k = 0; k < steps; ++k) {
      s = error_dynamics_step(s, omega, model, gains, dt);
      const double v = lyapunov_v(s.err, model, gains, s.t, s.c_truth);
      worst_increase = std::max(worst_increase, v - v_prev);
      v_prev = v;

      // probe the analytic derivative against a central difference
      if (k % (steps / 8) == steps / 16) {
        const double vd =
            lyapunov_v_dot(s.err, omega(s.t), model, gains, s.t, s.c_truth);
        if (std::abs(vd) > 1e-5) {
          const double h = 1e-6;
          const ErrorTrajectoryState fwd = error_dynamics_step(s, omega, model, gains, h);
          const ErrorTrajectoryState bwd = error_dynamics_step(s, omega, model, gains, -h);
          const double fd = (lyapunov_v(fwd.err, model, gains, fwd.t, fwd.c_truth) -
                             lyapunov_v(bwd.err, model, gains, bwd.t, bwd.c_truth)) /
                            (2.0 * h);
          res.check("vdot_fd_rel", std::abs(fd - vd) / std::abs(vd), 1e-4);
        }
      }
    }
    res.check("v_step_increase", worst_increase, 1e-9);
    res.check_true("v_nonnegative", v_prev >= 0.0);
  }
  return res;
}

// ---------------------------------------------------------------------
// equilibria: Lemma-1 forward direction (all four C_star annihilate
// Pa(C M)), converse (small residual implies proximity to the set), and
// stationarity of the error dynamics there.

namespace vdetail {

// Newton solve for Pa(R M) = 0 over R = exp(d x) R0 with a
// finite-difference Jacobian; returns the final residual.
inline double newton_equilibrium(Rotation& r, const Mat3& m) {
  const auto f = [&m](const Rotation& rr) { return uncross(pa(rr.matrix() * m)); };
  double resid = f(r).norm();
  for (int iter = 0; iter < 60 && resid > 1e-12; ++iter) {
    const Vec3 r0 = f(r);
    Mat3 jac;
    const double h = 1e-7;
    for (int i = 0; i < 3; ++i) {
      const Rotation rp = exp_map(h * Vec3::Unit(i)) * r;
      jac.col(i) = (f(rp) - r0) / h;
    }
    Eigen::FullPivLU<Mat3> lu(jac);
    if (!lu.isInvertible()) break;
    Vec3 delta = lu.solve(-r0);
    if (delta.norm() > 0.5) delta *= 0.5 / delta.norm();  // trust region
    r = exp_map(delta) * r;
    resid = f(r).norm();
  }
  return resid;
}

}  // namespace vdetail

inline SuiteResult run_equilibria(int n_models, std::uint64_t seed) {
  SuiteResult res;
  res.name = "equilibria";
  Sampler rng(seed);

  for (int it = 0; it < n_models; ++it) {
    const ObservationModel model = rng.model(2 + (it % 2));
    const Mat3 ma = build_m(model, Rotation::identity());
    const EquilibriumSet eq = equilibria(model);

    for (int i = 0; i < 4; ++i) {
      res.check("lemma1_forward", pa(eq.c_star[i].matrix() * ma).norm(), 1e-12);
      // equilibria of the full error dynamics at omega = 0
      const ErrorRates rates =
          error_dynamics_rhs({eq.c_star[i], Vec3::Zero()}, Vec3::Zero(), model,
                             GainSchedule::scalar(1.0, 0.5), 0.0);
      res.check("equilibrium_residual",
                rates.c_tilde_dot.norm() + rates.b_tilde_dot.norm(), 1e-12);
    }

    // converse: drive random rotations to Pa(R M) = 0, then measure the
    // distance to the nearest equilibrium
    for (int start = 0; start < 8; ++start) {
      Rotation r = (start < 4) ? eq.c_star[start] * exp_map(1e-3 * rng.unit())
                               : rng.rotation();
      const double resid = vdetail::newton_equilibrium(r, ma);
      if (resid < 1e-9) {
        double dist = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 4; ++i) {
          dist = std::min(dist, vdetail::rotation_distance(r, eq.c_star[i]));
        }
        res.check("lemma1_converse_distance", dist, 1e-6);
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------
// linearization: spectral dichotomy of the 6x6 systems, plus a
// finite-difference consistency check of the body-frame linearization.

inline SuiteResult run_linearization(int n_models, std::uint64_t seed) {
  SuiteResult res;
  res.name = "linearization";
  Sampler rng(seed);

  for (int it = 0; it < n_models; ++it) {
    const ObservationModel model = rng.model(2 + (it % 2));
    const Mat3 kp = rng.pd(0.4, 2.0);
    const Mat3 ki = rng.pd(0.05, 0.5);
    const Vec3 omega = (it % 3 == 0) ? rng.vec3(3.0) : rng.vec3(0.6);

    for (int i = 0; i < 4; ++i) {
      const Mat6 b = linearized_system(model, kp, ki, omega, i);
      const Eigen::EigenSolver<Mat6> es(b);
      const double max_re = es.eigenvalues().real().maxCoeff();
      if (i == 0) {
        res.check("stable_max_re", max_re, -1e-9);
      } else {
        res.check_true("unstable_positive_re", max_re > 1e-9);
      }
    }

    // FD Jacobian of the nonlinear error dynamics at (I, 0) vs the
    // body-frame linearization (validates the b~ = -y sign convention)
    {
      const GainSchedule gains = GainSchedule::constant(kp, ki);
      const Mat6 b = linearized_system(model, kp, ki, omega, 0);
      Mat6 jac = Mat6::Zero();
      const double h = 1e-7;
      for (int col = 0; col < 6; ++col) {
        ErrorState err;
        Vec3 x = Vec3::Zero(), y = Vec3::Zero();
        if (col < 3) x[col] = h; else y[col - 3] = h;
        err.c_tilde = exp_map(x);
        err.b_tilde = -y;
        const ErrorRates rates = error_dynamics_rhs(err, omega, model, gains, 0.0);
        jac.block<3, 1>(0, col) = uncross(pa(rates.c_tilde_dot)) / h;
        jac.block<3, 1>(3, col) = -rates.b_tilde_dot / h;
      }
      res.check("linearization_fd", (jac - b).norm() / std::max(1.0, b.norm()), 1e-4);
    }

    // instability cost signs at i = 1..3
    for (int i = 1; i <= 3; ++i) {
      const Mat3 a = linearization_a(model, i);
      const Eigen::EigenSolver<Mat3> es(a);
      int neg = -1;
      for (int k = 0; k < 3; ++k) {
        if (std::abs(es.eigenvalues()[k].imag()) < 1e-9 &&
            es.eigenvalues()[k].real() < -1e-9) {
          neg = k;
          break;
        }
      }
      res.check_true("ai_has_negative_eigenvalue", neg >= 0);
      if (neg >= 0) {
        const GainSchedule gains = GainSchedule::constant(kp, ki);
        const Vec3 x = es.eigenvectors().col(neg).real().normalized();
        const auto [s_neg, s_neg_dot] = instability_cost(x, Vec3::Zero(), model, gains, i, 0.0);
        res.check_true("instability_s_negative_direction", s_neg < 0.0);
        res.check("instability_sdot_nonpositive", s_neg_dot, 1e-12);
        const auto [s_rand, s_rand_dot] =
            instability_cost(rng.vec3(0.5), rng.vec3(0.2), model, gains, i, 0.0);
        (void)s_rand;
        res.check("instability_sdot_nonpositive", s_rand_dot, 1e-12);
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------
// equivalence: the paper's special-case identifications, executable.

inline SuiteResult run_equivalence(int n_runs, std::uint64_t seed) {
  SuiteResult res;
  res.name = "equivalence";
  Sampler rng(seed);

  for (int it = 0; it < n_runs; ++it) {
    const ObservationModel model = rng.model(2 + (it % 2), /*mekf_weights=*/true);
    NoiseParams noise;
    noise.sigma_omega = rng.uniform(0.02, 0.15);
    noise.sigma_b = rng.uniform(0.005, 0.05);

    GyroModel gyro;
    gyro.sigma_omega = noise.sigma_omega;
    gyro.sigma_b = 0.0;  // keep the true bias constant across both runs
    const Vec3 omega_true = rng.vec3(0.3);
    const double dt = 2e-3;
    const int steps = 200;

    // (a) constant-gain MEKF == generalized filter with (P_a, -P_c^T)
    {
      const RiccatiSteadyState ss = riccati_steady_state(model, noise);
      const GainSchedule ident =
          GainSchedule::constant(ss.p_a, (-ss.p_c.transpose()).eval());
      const Vec3 bias = rng.vec3(0.02);
      GyroModel g2 = gyro;
      g2.b0 = bias;

      FilterState a, b;
      a.c_hat = b.c_hat = rng.rotation();
      a.b_hat = b.b_hat = Vec3::Zero();
      Rotation c_truth = rng.rotation();
      NoiseStream ns_a(seed ^ (it + 1));
      NoiseStream ns_b(seed ^ (it + 1));
      double worst = 0.0;
      for (int k = 0; k < steps; ++k) {
        const auto mra = measure(c_truth, omega_true, bias, g2, model, a.t, dt, ns_a);
        const auto mrb = measure(c_truth, omega_true, bias, g2, model, b.t, dt, ns_b);
        a = constant_gain_mekf_step(a, mra.frame, model, noise, dt, {ss.p_a, ss.p_c});
        b = generalized_step(b, mrb.frame, model, ident, dt);
        worst = std::max(worst, (a.c_hat.matrix() - b.c_hat.matrix()).norm() +
                                    (a.b_hat - b.b_hat).norm());
        c_truth = c_truth * exp_map(dt * omega_true);
      }
      res.check("constant_gain_equivalence", worst, 1e-14);
    }

    // (b) bias-free MEKF == generalized filter replaying recorded P_a(t)
    {
      FilterState mekf;
      mekf.c_hat = rng.rotation();
      mekf.p_att = rng.pd(0.2, 1.0);
      FilterState gen;
      gen.c_hat = mekf.c_hat;
      gen.b_hat = Vec3::Zero();

      Rotation c_truth = rng.rotation();
      GainRecorder recorder;
      std::vector<MeasurementFrame> frames;
      {
        NoiseStream ns(seed ^ (0x9e37 + it));
        Rotation c = c_truth;
        FilterState st = mekf;
        for (int k = 0; k < steps; ++k) {
          const auto mr = measure(c, omega_true, Vec3::Zero(), gyro, model, st.t, dt, ns);
          frames.push_back(mr.frame);
          st = bias_free_mekf_step(st, mr.frame, model, noise, dt, &recorder);
          c = c * exp_map(dt * omega_true);
        }
        mekf = st;
      }
      const GainSchedule replay = recorder.as_schedule();
      for (int k = 0; k < steps; ++k) {
        gen = generalized_step(gen, frames[k], model, replay, dt);
      }
      res.check("bias_free_equivalence",
                (mekf.c_hat.matrix() - gen.c_hat.matrix()).norm(), 1e-12);
    }

    // (c) mekf_omega_ref equals the generalized propagation term with
    // K_P = P_a when k_n = sigma_n^-2
    {
      FilterState st;
      st.c_hat = rng.rotation();
      st.b_hat = rng.vec3(0.05);
      Mat6 p = Mat6::Zero();
      p.block<3, 3>(0, 0) = rng.pd(0.2, 1.5);
      p.block<3, 3>(3, 3) = rng.pd(0.1, 0.5);
      st.p = p;
      const Rotation c_truth = rng.rotation();
      const MeasurementFrame frame =
          vdetail::noise_free_frame(c_truth, omega_true + st.b_hat, model);
      const Vec3 wref = mekf_omega_ref(st, frame, model);
      const Vec3 expect = frame.omega_meas - st.b_hat +
                          p.block<3, 3>(0, 0) * omega_err(st.c_hat, frame, model);
      res.check("omega_ref_identification", (wref - expect).norm(), 1e-14);
    }

    // (d) mahony == generalized with scalar gains
    {
      const double kp = rng.uniform(0.5, 2.0);
      const double ki = rng.uniform(0.05, 0.5);
      FilterState a, b;
      a.c_hat = b.c_hat = rng.rotation();
      const Rotation c_truth = rng.rotation();
      const MeasurementFrame frame =
          vdetail::noise_free_frame(c_truth, omega_true, model);
      a = mahony_step(a, frame, model, kp, ki, dt);
      b = generalized_step(b, frame, model, GainSchedule::scalar(kp, ki), dt);
      res.check("mahony_reduction",
                (a.c_hat.matrix() - b.c_hat.matrix()).norm() + (a.b_hat - b.b_hat).norm(),
                1e-14);
    }
  }
  return res;
}

inline SuiteResult run_suite(const std::string& suite, int n, std::uint64_t seed) {
  if (suite == "identities") return run_identities(n, seed);
  if (suite == "lyapunov") return run_lyapunov(n, seed);
  if (suite == "equilibria") return run_equilibria(n, seed);
  if (suite == "linearization") return run_linearization(n, seed);
  if (suite == "equivalence") return run_equivalence(n, seed);
  throw ConfigError("unknown verify suite: " + suite);
}

}  // namespace attikit::verify
