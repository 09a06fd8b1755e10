#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <Eigen/Dense>

#include "attikit/error.hpp"

namespace attikit {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

// An Euler vector: axis * angle, radians. First-order attitude errors are
// C̃ ≈ I + x× for small |x|; callers keep |x| < pi where linearizations
// are involved.
using EulerVector = Vec3;

inline constexpr double kRotationTol = 1e-9;       // orthonormality / det tolerance
inline constexpr double kSmallAngle = 1e-8;        // Taylor-branch threshold (rad)

/// Cross operator: cross_op(x) * y == x.cross(y).
inline Mat3 cross_op(const Vec3& x) {
  Mat3 m;
  m << 0.0, -x.z(), x.y(),
       x.z(), 0.0, -x.x(),
      -x.y(), x.x(), 0.0;
  return m;
}

/// Inverse of cross_op. Throws NotAntisymmetric when the input is not
/// antisymmetric to relative tolerance 1e-9.
inline Vec3 uncross(const Mat3& a) {
  const double asym = (a + a.transpose()).norm();
  if (asym > 1e-9 * std::max(1.0, a.norm())) {
    throw NotAntisymmetric("uncross: matrix is not antisymmetric (||A+A^T||_F = " +
                           std::to_string(asym) + ")");
  }
  return Vec3(a(2, 1), a(0, 2), a(1, 0));
}

/// Antisymmetric projection Pa(A) = (A - A^T)/2.
inline Mat3 pa(const Mat3& a) { return 0.5 * (a - a.transpose()); }

/// Symmetric projection Ps(A) = (A + A^T)/2.
inline Mat3 ps(const Mat3& a) { return 0.5 * (a + a.transpose()); }

inline Mat3 commutator(const Mat3& a, const Mat3& b) { return a * b - b * a; }

inline Mat3 anticommutator(const Mat3& a, const Mat3& b) { return a * b + b * a; }

// 3x3 direction cosine matrix with the SO(3) invariants enforced at
// construction: R^T R = I and det R = +1, both to 1e-9.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  static Rotation identity() { return Rotation(); }

  /// Validating constructor; throws NotProperRotation on invariant breach.
  static Rotation from_matrix(const Mat3& m) {
    const double ortho = (m.transpose() * m - Mat3::Identity()).norm();
    const double det = m.determinant();
    if (ortho > kRotationTol || std::abs(det - 1.0) > kRotationTol) {
      throw NotProperRotation("Rotation::from_matrix: ||R^T R - I||_F = " +
                              std::to_string(ortho) + ", det = " + std::to_string(det));
    }
    return Rotation(m, Unchecked{});
  }

  /// Fast path for matrices already known to be rotations (compositions,
  /// transposes, freshly orthonormalized results).
  static Rotation from_matrix_unchecked(const Mat3& m) { return Rotation(m, Unchecked{}); }

  const Mat3& matrix() const { return m_; }

  Rotation transposed() const { return Rotation(m_.transpose(), Unchecked{}); }

  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  Rotation operator*(const Rotation& rhs) const {
    return Rotation(m_ * rhs.m_, Unchecked{});
  }

 private:
  struct Unchecked {};
  Rotation(const Mat3& m, Unchecked) : m_(m) {}
  Mat3 m_;
};

/// Exponential map so(3) -> SO(3) via the Rodrigues formula
/// R = I + sin(th) K + (1 - cos(th)) K^2, K = cross_op(x/th).
/// Below the small-angle threshold the second-order Taylor series is used.
inline Rotation exp_map(const EulerVector& x) {
  const double theta = x.norm();
  const Mat3 xc = cross_op(x);
  Mat3 r;
  if (theta < kSmallAngle) {
    r = Mat3::Identity() + xc + 0.5 * xc * xc;
  } else {
    const Mat3 k = xc / theta;
    r = Mat3::Identity() + std::sin(theta) * k + (1.0 - std::cos(theta)) * k * k;
  }
  return Rotation::from_matrix_unchecked(r);
}

/// Logarithm map SO(3) -> so(3), inverse of exp_map on |x| <= pi.
/// Near theta = pi the axis is recovered from the symmetric part; the
/// remaining sign ambiguity at exactly pi is resolved by making the first
/// nonzero axis component positive.
inline EulerVector log_map(const Rotation& r) {
  const Mat3& m = r.matrix();
  const double cos_theta = std::clamp(0.5 * (m.trace() - 1.0), -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  const Vec3 w(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));  // 2 sin(th) * axis

  if (theta < kSmallAngle) {
    return 0.5 * w;  // x ~ vee(Pa(R)), error O(theta^3)
  }
  if (cos_theta > -0.9) {
    return (0.5 * theta / std::sin(theta)) * w;
  }

  // Near pi the division by sin(theta) and the acos both lose accuracy.
  // Recover the axis from R = I + sin(th) a× + (1 - cos(th))(aa^T - I):
  // aa^T = I + (Ps(R) - I)/(1 - cos(th)), pivoting on the largest
  // diagonal; recover the angle from |w| = 2 sin(th) instead of acos.
  const double sin_theta = std::min(0.5 * w.norm(), 1.0);
  const double theta_pi = M_PI - std::asin(sin_theta);
  const Mat3 aat = Mat3::Identity() + (ps(m) - Mat3::Identity()) / (1.0 - cos_theta);
  int piv = 0;
  aat.diagonal().maxCoeff(&piv);
  Vec3 axis;
  axis[piv] = std::sqrt(std::max(aat(piv, piv), 0.0));
  for (int i = 0; i < 3; ++i) {
    if (i != piv) axis[i] = aat(piv, i) / axis[piv];
  }
  axis.normalize();

  const double s = w.dot(axis);  // 2 sin(th) along the axis
  if (std::abs(s) > 1e-12) {
    if (s < 0.0) axis = -axis;
  } else {
    // theta == pi: first-nonzero-component-positive convention
    for (int i = 0; i < 3; ++i) {
      if (std::abs(axis[i]) > 1e-12) {
        if (axis[i] < 0.0) axis = -axis;
        break;
      }
    }
  }
  return theta_pi * axis;
}

/// Frame change to inertial coordinates: x^A = C x.
inline Vec3 to_inertial(const Vec3& x, const Rotation& c) { return c * x; }

/// Frame change to inertial coordinates: A^A = C A C^T.
inline Mat3 to_inertial(const Mat3& a, const Rotation& c) {
  return c.matrix() * a * c.matrix().transpose();
}

/// Nearest rotation in Frobenius norm (polar factor), computed by the
/// Newton iteration R <- (R + R^-T)/2 to 1e-14. Throws NotProperRotation
/// when det(m) <= 0 (no proper polar factor).
inline Rotation orthonormalize(const Mat3& m) {
  if (!(m.determinant() > 0.0)) {
    throw NotProperRotation("orthonormalize: det <= 0, input is not a proper rotation candidate");
  }
  Mat3 x = m;
  for (int iter = 0; iter < 100; ++iter) {
    const Mat3 next = 0.5 * (x + x.inverse().transpose());
    const double delta = (next - x).norm();
    x = next;
    if (delta < 1e-14) break;
  }
  return Rotation::from_matrix_unchecked(x);
}

// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
// Deterministic: fixed sweep order, eigenvalues sorted descending, each
// eigenvector's largest-magnitude component made positive, determinant
// fixed to +1 by flipping the last column if needed.
template <int N>
struct SymEig {
  Eigen::Matrix<double, N, 1> values;   // descending
  Eigen::Matrix<double, N, N> vectors;  // columns, orthonormal, det +1
};

template <int N>
inline SymEig<N> eig_sym(const Eigen::Matrix<double, N, N>& input) {
  using MatN = Eigen::Matrix<double, N, N>;
  MatN a = 0.5 * (input + input.transpose());
  MatN v = MatN::Identity();
  const double scale = std::max(1.0, a.norm());

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < N; ++p)
      for (int q = p + 1; q < N; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) < 1e-14 * scale) break;

    for (int p = 0; p < N; ++p) {
      for (int q = p + 1; q < N; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        MatN j = MatN::Identity();
        j(p, p) = c;
        j(q, q) = c;
        j(p, q) = s;
        j(q, p) = -s;
        a = (j.transpose() * a * j).eval();
        v = (v * j).eval();
      }
    }
  }

  // sort descending; stable on ties by original index
  std::array<int, N> order{};
  for (int i = 0; i < N; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return a(i, i) > a(j, j); });

  SymEig<N> out;
  for (int i = 0; i < N; ++i) {
    out.values[i] = a(order[i], order[i]);
    out.vectors.col(i) = v.col(order[i]);
    int piv = 0;
    out.vectors.col(i).cwiseAbs().maxCoeff(&piv);
    if (out.vectors(piv, i) < 0.0) out.vectors.col(i) = -out.vectors.col(i);
  }
  if (out.vectors.determinant() < 0.0) out.vectors.col(N - 1) = -out.vectors.col(N - 1);
  return out;
}

using SymEig3 = SymEig<3>;

inline SymEig3 eig_sym3(const Mat3& m) { return eig_sym<3>(m); }

}  // namespace attikit
