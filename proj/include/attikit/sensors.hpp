#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "attikit/error.hpp"
#include "attikit/so3.hpp"

namespace attikit {

// One inertial reference direction with its filter weight k_n and the
// measurement noise level sigma_{v_n}.
struct VectorObservation {
  Vec3 dir_inertial = Vec3::UnitZ();
  double weight = 1.0;
  double sigma = 0.0;
};

struct ObservationModel {
  std::vector<VectorObservation> vectors;

  double weight_sum() const {
    double s = 0.0;
    for (const auto& v : vectors) s += v.weight;
    return s;
  }

  /// Invariant check. With for_filtering set, additionally requires at
  /// least two directions separated by more than 1e-3 rad (the
  /// distinct-eigenvalue hypothesis cannot hold otherwise).
  void validate(bool for_filtering = true) const {
    if (vectors.empty()) throw InvalidModel("observation model: no reference vectors");
    for (size_t n = 0; n < vectors.size(); ++n) {
      const auto& v = vectors[n];
      if (!v.dir_inertial.allFinite())
        throw InvalidModel("observation model: vector " + std::to_string(n) + " not finite");
      if (std::abs(v.dir_inertial.norm() - 1.0) > 1e-12)
        throw InvalidModel("observation model: vector " + std::to_string(n) +
                           " is not unit length");
      if (!(v.weight > 0.0))
        throw InvalidModel("observation model: weight k_" + std::to_string(n) +
                           " must be > 0");
      if (v.sigma < 0.0)
        throw InvalidModel("observation model: sigma_v_" + std::to_string(n) +
                           " must be >= 0");
    }
    if (for_filtering) {
      bool ok = false;
      for (size_t i = 0; i < vectors.size() && !ok; ++i) {
        for (size_t j = i + 1; j < vectors.size() && !ok; ++j) {
          const double c = std::clamp(
              vectors[i].dir_inertial.dot(vectors[j].dir_inertial), -1.0, 1.0);
          if (std::acos(std::abs(c)) > 1e-3) ok = true;
        }
      }
      if (!ok)
        throw InvalidModel(
            "observation model: needs at least two non-parallel vectors "
            "(pairwise angle > 1e-3 rad)");
    }
  }
};

// Rate-gyro error model: white noise sigma_omega, bias random walk
// sigma_b, initial bias b0.
struct GyroModel {
  double sigma_omega = 0.0;  // rad/s (continuous white-noise PSD convention)
  double sigma_b = 0.0;      // rad/s/sqrt(s) bias walk density
  Vec3 b0 = Vec3::Zero();

  void validate() const {
    if (sigma_omega < 0.0 || sigma_b < 0.0)
      throw InvalidModel("gyro model: noise stddevs must be >= 0");
    if (!b0.allFinite()) throw InvalidModel("gyro model: b0 not finite");
  }
};

// One time step of corrupted sensor data.
struct MeasurementFrame {
  double t = 0.0;
  Vec3 omega_meas = Vec3::Zero();
  std::vector<Vec3> vec_meas;
};

// Deterministic Gaussian stream: mt19937_64 (bit-exact per the C++
// standard) through a Box-Muller transform. The algorithm id is recorded
// in run metadata so runs stay reproducible.
class NoiseStream {
 public:
  static constexpr const char* kAlgorithmId = "mt19937_64/box-muller";

  explicit NoiseStream(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Vec3 gaussian3() {
    Vec3 g;
    g.x() = gaussian();
    g.y() = gaussian();
    g.z() = gaussian();
    return g;
  }

 private:
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

struct MeasureResult {
  MeasurementFrame frame;
  Vec3 bias_next = Vec3::Zero();
};

/// Produces one corrupted measurement frame at time t and advances the
/// gyro bias random walk by dt.
///
/// Discretization: omega noise ~ N(0, sigma_omega^2/dt I) per sample,
/// bias increment ~ N(0, sigma_b^2 dt I). Noisy direction measurements
/// are renormalized to unit length. Draw order is fixed: gyro (3), bias
/// walk (3), then 3 per vector in model order; zero-sigma terms draw
/// nothing so noise-free channels are exact.
inline MeasureResult measure(const Rotation& c_true, const Vec3& omega_true,
                             const Vec3& bias, const GyroModel& gyro,
                             const ObservationModel& model, double t, double dt,
                             NoiseStream& noise) {
  if (!(dt > 0.0)) throw InvalidModel("measure: dt must be > 0");
  MeasureResult out;
  out.frame.t = t;

  out.frame.omega_meas = omega_true + bias;
  if (gyro.sigma_omega > 0.0) {
    out.frame.omega_meas += (gyro.sigma_omega / std::sqrt(dt)) * noise.gaussian3();
  }

  out.bias_next = bias;
  if (gyro.sigma_b > 0.0) {
    out.bias_next += (gyro.sigma_b * std::sqrt(dt)) * noise.gaussian3();
  }

  const Mat3 ct = c_true.matrix().transpose();
  out.frame.vec_meas.reserve(model.vectors.size());
  for (const auto& obs : model.vectors) {
    Vec3 v = ct * obs.dir_inertial;
    if (obs.sigma > 0.0) {
      v += obs.sigma * noise.gaussian3();
      const double norm = v.norm();
      if (norm < 1e-9) {
        throw DegenerateVector("measure: noisy vector measurement has norm " +
                               std::to_string(norm));
      }
      v /= norm;
    }
    out.frame.vec_meas.push_back(v);
  }
  return out;
}

/// M = C^T M^A C with M^A = sum_n k_n v^A_n (v^A_n)^T. Symmetric PSD with
/// trace = sum k_n; eigenvalues are frame-invariant.
inline Mat3 build_m(const ObservationModel& model, const Rotation& c) {
  if (model.vectors.empty()) throw InvalidModel("build_m: empty observation model");
  Mat3 ma = Mat3::Zero();
  for (const auto& obs : model.vectors) {
    ma += obs.weight * obs.dir_inertial * obs.dir_inertial.transpose();
  }
  return c.matrix().transpose() * ma * c.matrix();
}

/// Eigenvalues of a symmetric PSD matrix, sorted descending. Throws
/// DegenerateEigenvalues when any pairwise gap is <= 1e-6 * max(tr, 1):
/// Lemma-1-style hypotheses need distinct eigenvalues.
inline std::array<double, 3> check_distinct_eigenvalues(const Mat3& m) {
  const SymEig3 eig = eig_sym3(m);
  const double tol = 1e-6 * std::max(m.trace(), 1.0);
  for (int i = 0; i < 3; ++i) {
    for (int j = i + 1; j < 3; ++j) {
      if (std::abs(eig.values[i] - eig.values[j]) <= tol) {
        throw DegenerateEigenvalues(
            "check_distinct_eigenvalues: eigenvalue gap " +
            std::to_string(std::abs(eig.values[i] - eig.values[j])) +
            " below tolerance " + std::to_string(tol));
      }
    }
  }
  return {eig.values[0], eig.values[1], eig.values[2]};
}

}  // namespace attikit
