#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "attikit/error.hpp"
#include "attikit/filters.hpp"
#include "attikit/sensors.hpp"
#include "attikit/so3.hpp"
#include "attikit/stability.hpp"

namespace attikit {

// Bounded body-rate profile driving the truth kinematics.
struct OmegaProfile {
  enum class Kind { kConstant, kSinusoid, kPiecewise };

  Kind kind = Kind::kConstant;
  Vec3 value = Vec3::Zero();                       // constant
  Vec3 amplitude = Vec3::Zero();                   // sinusoid
  double freq_hz = 0.0;                            // sinusoid
  std::vector<std::pair<double, Vec3>> segments;   // piecewise: (t_start, value)

  static OmegaProfile constant(const Vec3& w) {
    OmegaProfile p;
    p.kind = Kind::kConstant;
    p.value = w;
    return p;
  }

  static OmegaProfile sinusoid(const Vec3& amplitude, double freq_hz) {
    OmegaProfile p;
    p.kind = Kind::kSinusoid;
    p.amplitude = amplitude;
    p.freq_hz = freq_hz;
    return p;
  }

  static OmegaProfile piecewise(std::vector<std::pair<double, Vec3>> segments) {
    OmegaProfile p;
    p.kind = Kind::kPiecewise;
    p.segments = std::move(segments);
    return p;
  }

  Vec3 operator()(double t) const {
    switch (kind) {
      case Kind::kConstant:
        return value;
      case Kind::kSinusoid:
        return amplitude * std::sin(2.0 * M_PI * freq_hz * t);
      case Kind::kPiecewise: {
        Vec3 w = segments.front().second;
        for (const auto& [t0, v] : segments) {
          if (t0 <= t) w = v;
        }
        return w;
      }
    }
    return Vec3::Zero();
  }

  void validate() const {
    if (kind == Kind::kPiecewise) {
      if (segments.empty()) throw ConfigError("omega profile: piecewise needs segments");
      for (size_t i = 1; i < segments.size(); ++i) {
        if (!(segments[i].first > segments[i - 1].first))
          throw ConfigError("omega profile: piecewise segments must have increasing t_start");
      }
    }
  }
};

enum class FilterKind {
  kMahony,
  kGeneralized,
  kBiasFreeMekf,
  kFullMekf,
  kConstantGainMekf,
};

inline const char* filter_kind_name(FilterKind k) {
  switch (k) {
    case FilterKind::kMahony: return "mahony";
    case FilterKind::kGeneralized: return "generalized";
    case FilterKind::kBiasFreeMekf: return "bias_free_mekf";
    case FilterKind::kFullMekf: return "full_mekf";
    case FilterKind::kConstantGainMekf: return "constant_gain_mekf";
  }
  return "?";
}

// Complete description of one simulation run.
struct Scenario {
  double duration = 10.0;
  double dt = 1e-3;
  OmegaProfile profile;
  Rotation c0;
  Vec3 b0 = Vec3::Zero();
  Rotation c_hat0;
  Vec3 b_hat0 = Vec3::Zero();
  ObservationModel model;
  GyroModel gyro;
  FilterKind filter = FilterKind::kMahony;
  GainSchedule gains = GainSchedule::scalar(1.0, 0.3);
  NoiseParams noise;                  // MEKF process noise
  Mat6 p0 = Mat6::Identity();         // full MEKF initial covariance
  Mat3 p0_att = Mat3::Identity();     // bias-free MEKF initial covariance
  std::uint64_t seed = 0;

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("scenario: dt must be > 0");
    if (!(duration >= dt)) throw ConfigError("scenario: duration must be >= dt");
    profile.validate();
    gyro.validate();
    model.validate(/*for_filtering=*/true);
  }
};

struct RunSample {
  double t = 0.0;
  double err_angle = 0.0;
  Vec3 b_tilde = Vec3::Zero();
  double v = 0.0;
  double v_dot = 0.0;
  double pa_ctm_norm = 0.0;
  std::vector<double> extras;
};

struct RunMeta {
  std::uint64_t seed = 0;
  std::string integrator = "so3-midpoint-exp/rk4";
  std::string noise_algorithm = NoiseStream::kAlgorithmId;
  std::string config_hash;  // filled by the CLI layer
  bool k_i_dot_from_fd = false;
};

struct RunRecord {
  std::vector<RunSample> samples;
  std::vector<std::string> extra_columns;
  RunMeta meta;
};

/// Geometric midpoint step of the truth kinematics C' = C omega_x:
/// C <- C exp(dt * omega(t + dt/2)).
inline Rotation integrate_truth(const Rotation& c, const OmegaProfile& profile, double t,
                                double dt) {
  return c * exp_map(dt * profile(t + 0.5 * dt));
}

/// Rotation angle between truth and estimate: |log(C_hat^T C)|, in [0, pi].
inline double attitude_error_angle(const Rotation& c_true, const Rotation& c_hat) {
  return log_map(c_hat.transposed() * c_true).norm();
}

namespace detail {

// Uniform variate helper on top of the deterministic Gaussian stream.
inline double uniform01(NoiseStream& ns) {
  // fold two gaussians through atan2 for a uniform angle; cheap and keeps
  // a single stream per run
  const double a = std::atan2(ns.gaussian(), ns.gaussian());
  return (a + M_PI) / (2.0 * M_PI);
}

inline Vec3 random_unit(NoiseStream& ns) {
  for (;;) {
    const Vec3 g = ns.gaussian3();
    const double n = g.norm();
    if (n > 1e-6) return g / n;
  }
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Per-scenario filter dispatch plus the gain schedule used to evaluate
// the Lyapunov diagnostics.
struct FilterDriver {
  FilterKind kind;
  GainSchedule gains;
  NoiseParams noise;
  std::pair<Mat3, Mat3> cg_cache{Mat3::Identity(), Mat3::Identity()};
  std::optional<GainSchedule> eval_gains;

  FilterState initial_state(const Scenario& sc) const {
    FilterState st;
    st.c_hat = sc.c_hat0;
    st.b_hat = sc.b_hat0;
    st.t = 0.0;
    if (kind == FilterKind::kFullMekf) st.p = sc.p0;
    if (kind == FilterKind::kBiasFreeMekf) {
      st.p_att = sc.p0_att;
      st.b_hat = Vec3::Zero();
    }
    return st;
  }

  FilterState step(const FilterState& st, const MeasurementFrame& frame,
                   const ObservationModel& model, double dt) const {
    switch (kind) {
      case FilterKind::kMahony:
      case FilterKind::kGeneralized:
        return generalized_step(st, frame, model, gains, dt);
      case FilterKind::kBiasFreeMekf:
        return bias_free_mekf_step(st, frame, model, noise, dt);
      case FilterKind::kFullMekf:
        return full_mekf_step(st, frame, model, noise, dt);
      case FilterKind::kConstantGainMekf:
        return constant_gain_mekf_step(st, frame, model, noise, dt, cg_cache);
    }
    throw Error("unknown filter kind");
  }

  std::vector<std::string> extra_columns() const {
    if (kind == FilterKind::kBiasFreeMekf) return {"tr_pa"};
    if (kind == FilterKind::kFullMekf) return {"tr_pa", "tr_pb"};
    return {};
  }

  void fill_extras(const FilterState& st, std::vector<double>& out) const {
    if (kind == FilterKind::kBiasFreeMekf) out.push_back(st.p_att->trace());
    if (kind == FilterKind::kFullMekf) {
      out.push_back(st.p->block<3, 3>(0, 0).trace());
      out.push_back(st.p->block<3, 3>(3, 3).trace());
    }
  }
};

inline FilterDriver make_driver(const Scenario& sc) {
  FilterDriver d;
  d.kind = sc.filter;
  d.gains = sc.gains;
  d.noise = sc.noise;
  switch (sc.filter) {
    case FilterKind::kMahony:
    case FilterKind::kGeneralized:
      d.eval_gains = sc.gains;
      break;
    case FilterKind::kConstantGainMekf: {
      const RiccatiSteadyState ss = riccati_steady_state(sc.model, sc.noise);
      d.cg_cache = {ss.p_a, ss.p_c};
      d.eval_gains = GainSchedule::constant(ss.p_a, (-ss.p_c.transpose()).eval());
      break;
    }
    case FilterKind::kFullMekf:
      try {
        const RiccatiSteadyState ss = riccati_steady_state(sc.model, sc.noise);
        d.eval_gains = GainSchedule::constant(ss.p_a, (-ss.p_c.transpose()).eval());
      } catch (const Error&) {
        d.eval_gains = std::nullopt;  // v column degrades to attitude-only
      }
      break;
    case FilterKind::kBiasFreeMekf:
      d.eval_gains = std::nullopt;
      break;
  }
  return d;
}

inline void check_state_finite(const FilterState& st) {
  bool ok = st.c_hat.matrix().allFinite() && st.b_hat.allFinite();
  if (ok && st.p) ok = st.p->allFinite();
  if (ok && st.p_att) ok = st.p_att->allFinite();
  if (!ok) throw DivergenceDetected("filter state became non-finite at t = " +
                                    std::to_string(st.t));
}

inline RunSample make_sample(const Scenario& sc, const FilterDriver& driver,
                             const FilterState& st, const Rotation& c_truth,
                             const Vec3& bias_truth) {
  RunSample s;
  s.t = st.t;
  s.err_angle = attitude_error_angle(c_truth, st.c_hat);
  s.b_tilde = bias_truth - st.b_hat;

  ErrorState err{st.c_hat.transposed() * c_truth, s.b_tilde};
  const Vec3 w = sc.profile(st.t);
  if (driver.eval_gains) {
    try {
      s.v = lyapunov_v(err, sc.model, *driver.eval_gains, st.t, c_truth);
      s.v_dot = lyapunov_v_dot(err, w, sc.model, *driver.eval_gains, st.t, c_truth);
    } catch (const GainNotPositiveDefinite&) {
      // K_I not invertible (e.g. k_i = 0) with nonzero bias error:
      // fall back to the attitude-only terms
      ErrorState att_only{err.c_tilde, Vec3::Zero()};
      s.v = lyapunov_v(att_only, sc.model, *driver.eval_gains, st.t, c_truth);
      s.v_dot = lyapunov_v_dot(att_only, w, sc.model, *driver.eval_gains, st.t, c_truth);
    }
  } else {
    ErrorState att_only{err.c_tilde, Vec3::Zero()};
    GainSchedule g = GainSchedule::scalar(1.0, 1.0);
    if (st.p_att) g = GainSchedule::constant(*st.p_att, Mat3::Identity());
    s.v = lyapunov_v(att_only, sc.model, g, st.t, c_truth);
    s.v_dot = lyapunov_v_dot(att_only, w, sc.model, g, st.t, c_truth);
  }
  s.pa_ctm_norm = pa(err.c_tilde.matrix() * build_m(sc.model, c_truth)).norm();
  driver.fill_extras(st, s.extras);
  return s;
}

}  // namespace detail

/// Runs one scenario: truth and estimate advance in lockstep, one record
/// per step (duration/dt + 1 rows). Deterministic given the seed.
inline RunRecord run_scenario(const Scenario& sc) {
  sc.validate();
  const long n_steps = std::lround(sc.duration / sc.dt);
  const detail::FilterDriver driver = detail::make_driver(sc);

  RunRecord rec;
  rec.extra_columns = driver.extra_columns();
  rec.meta.seed = sc.seed;
  rec.meta.k_i_dot_from_fd = sc.gains.k_i_dot_from_fd;
  rec.samples.reserve(n_steps + 1);

  NoiseStream noise(sc.seed);
  Rotation c_truth = sc.c0;
  Vec3 bias = sc.b0;
  FilterState st = driver.initial_state(sc);

  rec.samples.push_back(detail::make_sample(sc, driver, st, c_truth, bias));
  for (long k = 0; k < n_steps; ++k) {
    const double t = st.t;
    // the gyro sample for [t, t+dt] is taken at the step midpoint, the
    // same point the truth integrator uses
    const MeasureResult mr = measure(c_truth, sc.profile(t + 0.5 * sc.dt), bias, sc.gyro,
                                     sc.model, t, sc.dt, noise);
    st = driver.step(st, mr.frame, sc.model, sc.dt);
    detail::check_state_finite(st);
    c_truth = integrate_truth(c_truth, sc.profile, t, sc.dt);
    bias = mr.bias_next;
    rec.samples.push_back(detail::make_sample(sc, driver, st, c_truth, bias));
  }
  return rec;
}

// Initial-error sampler for Monte Carlo sweeps: uniform axis on the
// sphere, error angle uniform in [angle_min, angle_max], bias error with
// uniform direction and magnitude in [0, bias_err_max]. Avoids the
// measure-zero unstable set by construction when angle_max < pi.
struct InitSampler {
  double angle_min = 0.0;
  double angle_max = M_PI - 0.2;
  double bias_err_max = 0.1;
};

struct McRunResult {
  std::uint64_t run_index = 0;
  std::uint64_t seed = 0;
  // start of the first window with err_angle < 1e-2 rad sustained >= 1 s
  double settle_time = std::numeric_limits<double>::quiet_NaN();
  // start of the first window with |b_tilde| < 1e-3 rad/s sustained >= 1 s
  double bias_settle_time = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  double final_err_angle = 0.0;
  double final_bias_err = 0.0;
};

struct McSummary {
  std::vector<McRunResult> runs;
  double convergence_fraction = 0.0;
  double settle_median = std::numeric_limits<double>::quiet_NaN();
  double settle_p95 = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr double kSettleAngleThreshold = 1e-2;  // rad
inline constexpr double kSettleBiasThreshold = 1e-3;   // rad/s
inline constexpr double kSettleHold = 1.0;             // s

namespace detail {

// Latches the start of the first window where the signal stays below the
// threshold for the hold duration.
class SustainTracker {
 public:
  SustainTracker(double threshold, double hold) : threshold_(threshold), hold_(hold) {}

  void update(double t, double value) {
    if (latched()) return;
    if (value < threshold_) {
      if (std::isnan(window_start_)) window_start_ = t;
      if (t - window_start_ >= hold_) latched_ = window_start_;
    } else {
      window_start_ = std::numeric_limits<double>::quiet_NaN();
    }
  }

  bool latched() const { return !std::isnan(latched_); }
  double latch_time() const { return latched_; }

 private:
  double threshold_, hold_;
  double window_start_ = std::numeric_limits<double>::quiet_NaN();
  double latched_ = std::numeric_limits<double>::quiet_NaN();
};

inline McRunResult run_for_settling(const Scenario& sc, std::uint64_t run_index) {
  McRunResult res;
  res.run_index = run_index;
  res.seed = sc.seed;

  const long n_steps = std::lround(sc.duration / sc.dt);
  const FilterDriver driver = make_driver(sc);
  NoiseStream noise(sc.seed);
  Rotation c_truth = sc.c0;
  Vec3 bias = sc.b0;
  FilterState st = driver.initial_state(sc);

  SustainTracker att(kSettleAngleThreshold, kSettleHold);
  SustainTracker bia(kSettleBiasThreshold, kSettleHold);
  att.update(0.0, attitude_error_angle(c_truth, st.c_hat));
  bia.update(0.0, (bias - st.b_hat).norm());

  for (long k = 0; k < n_steps; ++k) {
    const double t = st.t;
    const MeasureResult mr = measure(c_truth, sc.profile(t + 0.5 * sc.dt), bias, sc.gyro,
                                     sc.model, t, sc.dt, noise);
    st = driver.step(st, mr.frame, sc.model, sc.dt);
    check_state_finite(st);
    c_truth = integrate_truth(c_truth, sc.profile, t, sc.dt);
    bias = mr.bias_next;

    res.final_err_angle = attitude_error_angle(c_truth, st.c_hat);
    res.final_bias_err = (bias - st.b_hat).norm();
    att.update(st.t, res.final_err_angle);
    bia.update(st.t, res.final_bias_err);
    if (att.latched() && bia.latched()) break;  // latch-first semantics; safe to stop
  }
  res.settle_time = att.latch_time();
  res.bias_settle_time = bia.latch_time();
  res.converged = att.latched() && bia.latched();
  return res;
}

}  // namespace detail

/// Runs n independent seeded scenarios with sampled initial errors.
/// Per-run seeds derive from the template seed; aggregation is by run
/// index, so results are independent of thread scheduling. max_threads
/// caps the worker count (0 = hardware concurrency).
inline McSummary monte_carlo(const Scenario& sc_template, int n_runs,
                             const InitSampler& sampler, int max_threads = 0) {
  if (n_runs < 1) throw ConfigError("monte_carlo: n_runs must be >= 1");
  sc_template.validate();

  McSummary summary;
  summary.runs.resize(n_runs);

  const auto run_one = [&](int i) {
    Scenario sc = sc_template;
    sc.seed = detail::splitmix64(sc_template.seed ^ (0x517cc1b727220a95ull * (i + 1)));
    NoiseStream init_rng(detail::splitmix64(sc.seed ^ 0xa0761d6478bd642full));

    const Vec3 axis = detail::random_unit(init_rng);
    const double angle =
        sampler.angle_min + detail::uniform01(init_rng) * (sampler.angle_max - sampler.angle_min);
    const Rotation c_tilde0 = exp_map(angle * axis);
    const Vec3 b_tilde0 =
        detail::random_unit(init_rng) * (detail::uniform01(init_rng) * sampler.bias_err_max);

    sc.c_hat0 = sc.c0 * c_tilde0.transposed();  // C_tilde = C_hat^T C
    sc.b_hat0 = sc.b0 - b_tilde0;
    summary.runs[i] = detail::run_for_settling(sc, static_cast<std::uint64_t>(i));
  };

  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  int workers = (max_threads > 0) ? std::min(max_threads, hw) : hw;
  workers = std::min(workers, n_runs);

  if (workers <= 1) {
    for (int i = 0; i < n_runs; ++i) run_one(i);
  } else {
    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const int i = next.fetch_add(1);
          if (i >= n_runs || failed.load()) return;
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
            failed.store(true);
            return;
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  int converged = 0;
  std::vector<double> settles;
  for (const auto& r : summary.runs) {
    if (r.converged) {
      ++converged;
      settles.push_back(r.settle_time);
    }
  }
  summary.convergence_fraction = static_cast<double>(converged) / n_runs;
  if (!settles.empty()) {
    std::sort(settles.begin(), settles.end());
    summary.settle_median = settles[settles.size() / 2];
    summary.settle_p95 = settles[static_cast<size_t>(0.95 * (settles.size() - 1))];
  }
  return summary;
}

}  // namespace attikit
