#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace dynasparse {

// Forward-mode dual scalar: value plus a row of tangents, one per seeded
// input direction. An empty tangent row means "constant" (identically zero
// derivative); arithmetic treats it as a zero vector of whatever width the
// other operand carries. This lets environment code mix parameters
// (constants) and seeded inputs without threading the ambient dimension
// through every expression.
//
// The value field is always computed by the same double operation, in the
// same order, as the plain-double instantiation of the templated caller,
// so values are bitwise identical between the two paths (the build disables
// FMA contraction for exactly this reason).
class Dual {
 public:
  double v = 0.0;
  Eigen::RowVectorXd d;  // empty == zero tangent

  Dual() = default;
  Dual(double value) : v(value) {}  // implicit: constants promote like doubles
  Dual(double value, Eigen::RowVectorXd tangent) : v(value), d(std::move(tangent)) {}

  static Dual seeded(double value, int dim, int index) {
    Dual x(value);
    x.d = Eigen::RowVectorXd::Zero(dim);
    x.d(index) = 1.0;
    return x;
  }

  Dual operator-() const { return Dual(-v, -d); }

  Dual& operator+=(const Dual& o) { *this = *this + o; return *this; }
  Dual& operator-=(const Dual& o) { *this = *this - o; return *this; }
  Dual& operator*=(const Dual& o) { *this = *this * o; return *this; }
  Dual& operator/=(const Dual& o) { *this = *this / o; return *this; }

  friend Dual operator+(const Dual& a, const Dual& b) {
    return Dual(a.v + b.v, add_tangents(a.d, b.d));
  }
  friend Dual operator-(const Dual& a, const Dual& b) {
    return Dual(a.v - b.v, sub_tangents(a.d, b.d));
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    return Dual(a.v * b.v, add_tangents(scaled(a.d, b.v), scaled(b.d, a.v)));
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    // d(a/b) = da/b - a*db/b^2
    return Dual(a.v / b.v,
                sub_tangents(scaled(a.d, 1.0 / b.v), scaled(b.d, a.v / (b.v * b.v))));
  }

  friend bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
  friend bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
  friend bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
  friend bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }
  friend bool operator==(const Dual& a, const Dual& b) { return a.v == b.v; }
  friend bool operator!=(const Dual& a, const Dual& b) { return a.v != b.v; }

 private:
  static Eigen::RowVectorXd add_tangents(const Eigen::RowVectorXd& a,
                                         const Eigen::RowVectorXd& b) {
    if (a.size() == 0) return b;
    if (b.size() == 0) return a;
    return a + b;
  }
  static Eigen::RowVectorXd sub_tangents(const Eigen::RowVectorXd& a,
                                         const Eigen::RowVectorXd& b) {
    if (b.size() == 0) return a;
    if (a.size() == 0) return -b;
    return a - b;
  }
  static Eigen::RowVectorXd scaled(const Eigen::RowVectorXd& a, double s) {
    if (a.size() == 0) return a;
    return a * s;
  }
};

inline Dual sin(const Dual& x) {
  return Dual(std::sin(x.v), x.d.size() ? Eigen::RowVectorXd(x.d * std::cos(x.v))
                                        : x.d);
}
inline Dual cos(const Dual& x) {
  return Dual(std::cos(x.v), x.d.size() ? Eigen::RowVectorXd(x.d * -std::sin(x.v))
                                        : x.d);
}
inline Dual exp(const Dual& x) {
  const double e = std::exp(x.v);
  return Dual(e, x.d.size() ? Eigen::RowVectorXd(x.d * e) : x.d);
}
inline Dual log(const Dual& x) {
  return Dual(std::log(x.v), x.d.size() ? Eigen::RowVectorXd(x.d / x.v) : x.d);
}
inline Dual sqrt(const Dual& x) {
  const double r = std::sqrt(x.v);
  return Dual(r, x.d.size() ? Eigen::RowVectorXd(x.d * (0.5 / r)) : x.d);
}

// One-sided ramp used by the contact models. Ties (x == 0) take the active
// branch, the documented >= rule for derivatives at switching points.
inline Dual max0(const Dual& x) {
  if (x.v >= 0.0) return x;
  return Dual(0.0);
}
inline double max0(double x) { return x >= 0.0 ? x : 0.0; }

// Generic accessors so templated dynamics can branch on values.
inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

using std::cos;
using std::exp;
using std::log;
using std::sin;
using std::sqrt;

}  // namespace dynasparse
