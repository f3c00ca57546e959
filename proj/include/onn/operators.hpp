#pragma once

// Nodal, pool and activation operators of an operational neuron, their
// analytic derivatives, and the enumeration of operator sets.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace onn {

enum class NodalOp : std::uint8_t { linear = 0, cubic, sine, exp, sinh, sinc, chirp };
enum class PoolOp : std::uint8_t { sum = 0, median };
enum class ActOp : std::uint8_t { tanh = 0, lincut };

inline constexpr int kNodalCount = 7;
inline constexpr int kPoolCount = 2;
inline constexpr int kActCount = 2;
inline constexpr int kSetCount = kNodalCount * kPoolCount * kActCount;

std::string to_string(NodalOp op);
std::string to_string(PoolOp op);
std::string to_string(ActOp op);

// Constants frozen per model instance and serialized with checkpoints.
struct OperatorConstants {
  double k_nodal = std::numbers::pi;
  double k_chirp = std::numbers::pi;
  double cut = 10.0;
  double sinc_guard = 1e-4;
  double arg_clip = 20.0;

  void validate() const;
  bool operator==(const OperatorConstants&) const = default;
};

// A (pool, activation, nodal) triple. index() is pool*14 + act*7 + nodal.
struct OperatorSet {
  PoolOp pool = PoolOp::sum;
  ActOp act = ActOp::tanh;
  NodalOp nodal = NodalOp::linear;

  int index() const noexcept {
    return static_cast<int>(pool) * kActCount * kNodalCount +
           static_cast<int>(act) * kNodalCount + static_cast<int>(nodal);
  }

  bool operator==(const OperatorSet&) const = default;
};

int set_index(int pool, int act, int nodal);
OperatorSet set_from_index(int index);

// Full cross product of the used operator ids, ascending by set index.
struct OperatorSubLibrary {
  std::vector<int> sets;
  std::vector<int> pools_used;
  std::vector<int> acts_used;
  std::vector<int> nodals_used;

  bool contains(int set) const;
  std::size_t size() const noexcept { return sets.size(); }
  bool operator==(const OperatorSubLibrary&) const = default;
};

OperatorSubLibrary make_sublibrary(std::vector<int> pools, std::vector<int> acts,
                                   std::vector<int> nodals);
OperatorSubLibrary full_library();

// ---------------------------------------------------------------------------
// Nodal operators. Each specialization provides eval() and grads(), where
// grads() returns both partial derivatives of the guarded function.

struct NodalGrad {
  double dw;
  double dy;
};

namespace detail {

inline double clip(double v, double lim) noexcept {
  return v > lim ? lim : (v < -lim ? -lim : v);
}

inline double sinc_denominator(double y, double guard) noexcept {
  const double mag = std::fabs(y) < guard ? guard : std::fabs(y);
  return y < 0.0 ? -mag : mag;
}

}  // namespace detail

template <NodalOp Op>
struct Nodal;

template <>
struct Nodal<NodalOp::linear> {
  static double eval(double w, double y, const OperatorConstants&) noexcept { return w * y; }
  static NodalGrad grads(double w, double y, const OperatorConstants&) noexcept { return {y, w}; }
};

template <>
struct Nodal<NodalOp::cubic> {
  static double eval(double w, double y, const OperatorConstants& c) noexcept {
    return c.k_nodal * w * y * y * y;
  }
  static NodalGrad grads(double w, double y, const OperatorConstants& c) noexcept {
    return {c.k_nodal * y * y * y, 3.0 * c.k_nodal * w * y * y};
  }
};

template <>
struct Nodal<NodalOp::sine> {
  static double eval(double w, double y, const OperatorConstants& c) noexcept {
    return std::sin(c.k_nodal * w * y);
  }
  static NodalGrad grads(double w, double y, const OperatorConstants& c) noexcept {
    const double cs = c.k_nodal * std::cos(c.k_nodal * w * y);
    return {cs * y, cs * w};
  }
};

// Product argument clipped to |w*y| <= arg_clip; flat beyond the clip.
template <>
struct Nodal<NodalOp::exp> {
  static double eval(double w, double y, const OperatorConstants& c) noexcept {
    return std::expm1(detail::clip(w * y, c.arg_clip));
  }
  static NodalGrad grads(double w, double y, const OperatorConstants& c) noexcept {
    const double a = w * y;
    if (std::fabs(a) > c.arg_clip) return {0.0, 0.0};
    const double e = std::exp(a);
    return {y * e, w * e};
  }
};

template <>
struct Nodal<NodalOp::sinh> {
  static double eval(double w, double y, const OperatorConstants& c) noexcept {
    return std::sinh(detail::clip(c.k_nodal * w * y, c.arg_clip));
  }
  static NodalGrad grads(double w, double y, const OperatorConstants& c) noexcept {
    const double a = c.k_nodal * w * y;
    if (std::fabs(a) > c.arg_clip) return {0.0, 0.0};
    const double ch = c.k_nodal * std::cosh(a);
    return {ch * y, ch * w};
  }
};

// sin(K w y) / y with the denominator held at +-sinc_guard near zero.
template <>
struct Nodal<NodalOp::sinc> {
  static double eval(double w, double y, const OperatorConstants& c) noexcept {
    return std::sin(c.k_nodal * w * y) / detail::sinc_denominator(y, c.sinc_guard);
  }
  static NodalGrad grads(double w, double y, const OperatorConstants& c) noexcept {
    const double a = c.k_nodal * w * y;
    const double d = detail::sinc_denominator(y, c.sinc_guard);
    const double cs = c.k_nodal * std::cos(a) / d;
    double dy = cs * w;
    if (std::fabs(y) >= c.sinc_guard) dy -= std::sin(a) / (d * d);
    return {cs * y, dy};
  }
};

template <>
struct Nodal<NodalOp::chirp> {
  static double eval(double w, double y, const OperatorConstants& c) noexcept {
    return std::sin(c.k_chirp * w * y * y);
  }
  static NodalGrad grads(double w, double y, const OperatorConstants& c) noexcept {
    const double cs = c.k_chirp * std::cos(c.k_chirp * w * y * y);
    return {cs * y * y, 2.0 * cs * w * y};
  }
};

// Invokes fn(std::integral_constant-like tag) with the compile-time operator.
template <typename Fn>
decltype(auto) dispatch_nodal(NodalOp op, Fn&& fn) {
  switch (op) {
    case NodalOp::linear: return fn(Nodal<NodalOp::linear>{});
    case NodalOp::cubic: return fn(Nodal<NodalOp::cubic>{});
    case NodalOp::sine: return fn(Nodal<NodalOp::sine>{});
    case NodalOp::exp: return fn(Nodal<NodalOp::exp>{});
    case NodalOp::sinh: return fn(Nodal<NodalOp::sinh>{});
    case NodalOp::sinc: return fn(Nodal<NodalOp::sinc>{});
    case NodalOp::chirp: break;
  }
  return fn(Nodal<NodalOp::chirp>{});
}

double nodal_eval(NodalOp op, double w, double y, const OperatorConstants& c);
double nodal_grad_w(NodalOp op, double w, double y, const OperatorConstants& c);
double nodal_grad_y(NodalOp op, double w, double y, const OperatorConstants& c);

// ---------------------------------------------------------------------------
// Pool operators.

struct PoolResult {
  double value;
  std::optional<std::size_t> argmedian;
};

// Median uses the lower middle of the sorted order for even lengths; among
// equal values the smallest original index is selected.
PoolResult pool_eval(PoolOp op, std::span<const double> terms);
double pool_grad(PoolOp op, std::span<const double> terms, std::size_t j);

// Index of the median term. terms must be non-empty.
std::size_t argmedian(std::span<const double> terms);

// ---------------------------------------------------------------------------
// Activation operators.

inline double act_eval(ActOp op, double x, const OperatorConstants& c) noexcept {
  if (op == ActOp::tanh) return std::tanh(x);
  if (x > c.cut) return 1.0;
  if (x < -c.cut) return -1.0;
  return x / c.cut;
}

inline double act_grad(ActOp op, double x, const OperatorConstants& c) noexcept {
  if (op == ActOp::tanh) {
    const double f = std::tanh(x);
    return 1.0 - f * f;
  }
  return std::fabs(x) <= c.cut ? 1.0 / c.cut : 0.0;
}

}  // namespace onn
