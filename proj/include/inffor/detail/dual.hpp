#pragma once

#include <cmath>

namespace inffor::detail {

// First-order dual number: value plus a directional derivative. Running the
// analytic gradient in Dual arithmetic with d seeded to a direction yields
// the exact Hessian-vector product along that direction.
struct Dual {
  double v = 0.0;
  double d = 0.0;

  Dual() = default;
  Dual(double value) : v(value) {}
  Dual(double value, double dot) : v(value), d(dot) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) {
  const double inv = 1.0 / b.v;
  return {a.v * inv, (a.d - a.v * b.d * inv) * inv};
}
inline Dual& operator+=(Dual& a, Dual b) { a = a + b; return a; }
inline Dual& operator-=(Dual& a, Dual b) { a = a - b; return a; }
inline Dual& operator*=(Dual& a, Dual b) { a = a * b; return a; }
inline bool operator>(Dual a, double b) { return a.v > b; }
inline bool operator<(Dual a, double b) { return a.v < b; }

inline Dual exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, a.d * e};
}
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual log1p(Dual a) { return {std::log1p(a.v), a.d / (1.0 + a.v)}; }
inline Dual tanh(Dual a) {
  const double t = std::tanh(a.v);
  return {t, a.d * (1.0 - t * t)};
}
inline Dual relu(Dual a) { return a.v > 0.0 ? a : Dual{0.0, 0.0}; }

inline double value_of(double x) { return x; }
inline double value_of(Dual x) { return x.v; }

using std::exp;
using std::log;
using std::log1p;
using std::tanh;
inline double relu(double a) { return a > 0.0 ? a : 0.0; }

}  // namespace inffor::detail
