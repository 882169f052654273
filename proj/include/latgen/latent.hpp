#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "latgen/error.hpp"

namespace latgen {

enum class LatentSpace { UniformCube, UnitGaussian };

inline std::string_view to_string(LatentSpace space) {
  return space == LatentSpace::UniformCube ? "uniform" : "gaussian";
}

inline LatentSpace parse_latent_space(std::string_view text) {
  if (text == "uniform") return LatentSpace::UniformCube;
  if (text == "gaussian") return LatentSpace::UnitGaussian;
  fail(ErrorCode::InvalidArgument, "unknown latent space '" + std::string(text) + "'");
}

// A point in generator input space. Components are always finite.
class LatentVector {
 public:
  LatentVector(std::vector<double> values, LatentSpace space)
      : values_(std::move(values)), space_(space) {
    require(!values_.empty(), ErrorCode::InvalidArgument, "latent vector must have dim > 0");
    for (double v : values_) {
      require(std::isfinite(v), ErrorCode::Numeric, "latent vector component is not finite");
    }
  }

  std::size_t dim() const noexcept { return values_.size(); }
  LatentSpace space() const noexcept { return space_; }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool bitwise_equal(const LatentVector& other) const noexcept {
    if (space_ != other.space_ || values_.size() != other.values_.size()) return false;
    return std::equal(values_.begin(), values_.end(), other.values_.begin(),
                      [](double x, double y) { return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y); });
  }

  friend bool operator==(const LatentVector&, const LatentVector&) = default;

 private:
  std::vector<double> values_;
  LatentSpace space_;
};

enum class TraversalKind { Linear, ExtrapolateTwoSided, CircularPaper, Slerp };

inline std::string_view to_string(TraversalKind kind) {
  switch (kind) {
    case TraversalKind::Linear: return "linear";
    case TraversalKind::ExtrapolateTwoSided: return "extrapolate";
    case TraversalKind::CircularPaper: return "circular_paper";
    case TraversalKind::Slerp: return "slerp";
  }
  return "unknown";
}

struct TraversalSequence {
  TraversalKind kind;
  LatentVector first;
  LatentVector last;
  std::vector<LatentVector> points;

  std::size_t size() const noexcept { return points.size(); }
};

namespace detail {

inline void require_same_dim(const LatentVector& a, const LatentVector& b) {
  if (a.dim() != b.dim()) {
    fail(ErrorCode::InvalidArgument,
         "latent dim mismatch: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
}

inline void require_steps(std::size_t n) {
  require(n >= 2, ErrorCode::InvalidArgument, "traversal needs n >= 2");
}

// 53 random bits mapped onto [0, 1).
inline double unit_interval(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double norm(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  return std::sqrt(sum);
}

}  // namespace detail

// Deterministic for fixed arguments. Uniform components lie in [-1, 1);
// Gaussian components come from Box-Muller over the same 64-bit Mersenne
// Twister stream, so the output is identical on every conforming platform.
inline std::vector<LatentVector> sample_latents(LatentSpace space, std::int64_t dim, std::int64_t count,
                                                std::uint64_t seed) {
  require(dim >= 1, ErrorCode::InvalidArgument, "sample_latents: dim must be >= 1");
  require(count >= 1, ErrorCode::InvalidArgument, "sample_latents: count must be >= 1");

  std::mt19937_64 rng(seed);
  std::vector<LatentVector> out;
  out.reserve(static_cast<std::size_t>(count));

  bool have_spare = false;
  double spare = 0.0;
  auto gaussian = [&]() {
    if (have_spare) {
      have_spare = false;
      return spare;
    }
    const double u1 = 1.0 - detail::unit_interval(rng);  // (0, 1]
    const double u2 = detail::unit_interval(rng);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare = radius * std::sin(angle);
    have_spare = true;
    return radius * std::cos(angle);
  };

  for (std::int64_t k = 0; k < count; ++k) {
    std::vector<double> values(static_cast<std::size_t>(dim));
    for (double& v : values) {
      v = space == LatentSpace::UniformCube ? 2.0 * detail::unit_interval(rng) - 1.0 : gaussian();
    }
    out.emplace_back(std::move(values), space);
  }
  return out;
}

// point_i = a(1 - t_i) + b t_i, t_i = i / (n - 1), evaluated as a + t_i (b - a) so a
// degenerate segment stays exactly constant. Endpoints are copied, not computed.
inline TraversalSequence lerp(const LatentVector& a, const LatentVector& b, std::size_t n) {
  detail::require_same_dim(a, b);
  detail::require_steps(n);

  std::vector<LatentVector> points;
  points.reserve(n);
  points.push_back(a);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    std::vector<double> v(a.dim());
    for (std::size_t d = 0; d < v.size(); ++d) v[d] = a[d] + t * (b[d] - a[d]);
    points.emplace_back(std::move(v), a.space());
  }
  points.push_back(b);
  return {TraversalKind::Linear, a, b, std::move(points)};
}

// Two-sided extrapolation schedule: the first half walks away from `a` past `b`
// (coefficient on `a` is -t), the second half walks past `a` (coefficient 1 + t).
// The first point therefore equals `b` exactly, and the coefficient jumps by 2
// between points n/2 and n/2 + 1. Points are evaluated as b + el (a - b).
inline TraversalSequence extrapolate_two_sided(const LatentVector& a, const LatentVector& b, std::size_t n) {
  detail::require_same_dim(a, b);
  detail::require_steps(n);
  require(n % 2 == 0, ErrorCode::InvalidArgument, "extrapolate_two_sided needs an even n");

  std::vector<LatentVector> points;
  points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double line = static_cast<double>(i) / static_cast<double>(n - 1);
    const double el = i < n / 2 ? -line : 1.0 + line;
    std::vector<double> v(a.dim());
    for (std::size_t d = 0; d < v.size(); ++d) v[d] = b[d] + el * (a[d] - b[d]);
    points.emplace_back(std::move(v), a.space());
  }
  return {TraversalKind::ExtrapolateTwoSided, a, b, std::move(points)};
}

// Semicircle scheme: the blend coefficient is x = mid[0] + r cos(theta) and the
// first two components are overwritten with (x, mid[1] + r sin(theta)),
// theta sweeping [0, pi]. radius = 1 reproduces the reference construction.
inline TraversalSequence circular_paper(const LatentVector& a, const LatentVector& b, std::size_t n,
                                        double radius = 1.0) {
  detail::require_same_dim(a, b);
  require(a.dim() >= 2, ErrorCode::InvalidArgument, "circular_paper needs dim >= 2");
  detail::require_steps(n);
  require(std::isfinite(radius), ErrorCode::InvalidArgument, "circular_paper radius must be finite");

  const double rx = (a[0] + b[0]) / 2.0;
  const double ry = (a[1] + b[1]) / 2.0;

  std::vector<LatentVector> points;
  points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double theta = std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1);
    const double x = rx + radius * std::cos(theta);
    const double y = ry + radius * std::sin(theta);
    std::vector<double> v(a.dim());
    for (std::size_t d = 0; d < v.size(); ++d) v[d] = a[d] + x * (b[d] - a[d]);
    v[0] = x;
    v[1] = y;
    points.emplace_back(std::move(v), a.space());
  }
  return {TraversalKind::CircularPaper, a, b, std::move(points)};
}

inline constexpr double kSlerpAngleTolerance = 1e-6;

// Great-circle interpolation. Falls back to lerp when the endpoints are
// (nearly) parallel; antiparallel endpoints have no unique arc.
inline TraversalSequence slerp(const LatentVector& a, const LatentVector& b, std::size_t n) {
  detail::require_same_dim(a, b);
  detail::require_steps(n);
  const double norm_a = detail::norm(a.values());
  const double norm_b = detail::norm(b.values());
  require(norm_a > 0.0 && norm_b > 0.0, ErrorCode::InvalidArgument, "slerp endpoints must have nonzero norm");

  // omega = 2 atan2(|a^ - b^|, |a^ + b^|) stays accurate near 0 and pi, unlike acos.
  double diff = 0.0, sum = 0.0;
  for (std::size_t d = 0; d < a.dim(); ++d) {
    const double ua = a[d] / norm_a, ub = b[d] / norm_b;
    diff += (ua - ub) * (ua - ub);
    sum += (ua + ub) * (ua + ub);
  }
  const double omega = 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));

  if (std::numbers::pi - omega < kSlerpAngleTolerance) {
    fail(ErrorCode::DegenerateGeometry, "slerp endpoints are antiparallel");
  }
  if (omega < kSlerpAngleTolerance) {
    TraversalSequence seq = lerp(a, b, n);
    seq.kind = TraversalKind::Slerp;
    return seq;
  }

  const double sin_omega = std::sin(omega);
  std::vector<LatentVector> points;
  points.reserve(n);
  points.push_back(a);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    const double wa = std::sin((1.0 - t) * omega) / sin_omega;
    const double wb = std::sin(t * omega) / sin_omega;
    std::vector<double> v(a.dim());
    for (std::size_t d = 0; d < v.size(); ++d) v[d] = wa * a[d] + wb * b[d];
    points.emplace_back(std::move(v), a.space());
  }
  points.push_back(b);
  return {TraversalKind::Slerp, a, b, std::move(points)};
}

// A named group of exemplar latents sharing an attribute.
struct AnchorSet {
  std::string name;
  std::set<std::string> tags;
  std::vector<LatentVector> members;

  void validate() const {
    require(!name.empty(), ErrorCode::InvalidArgument, "anchor set name must be nonempty");
    if (members.empty()) fail(ErrorCode::InvalidArgument, "anchor set '" + name + "' has no members");
    for (const auto& m : members) {
      if (m.dim() != members.front().dim() || m.space() != members.front().space()) {
        fail(ErrorCode::InvalidArgument, "anchor set '" + name + "' mixes latent dims or spaces");
      }
    }
  }
};

inline LatentVector average_anchors(const AnchorSet& set) {
  if (set.members.empty()) fail(ErrorCode::InvalidArgument, "cannot average empty anchor set '" + set.name + "'");
  set.validate();
  const auto& first = set.members.front();
  std::vector<double> sum(first.values().begin(), first.values().end());
  for (std::size_t k = 1; k < set.members.size(); ++k) {
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += set.members[k][d];
  }
  const double count = static_cast<double>(set.members.size());
  for (double& v : sum) v /= count;
  return LatentVector(std::move(sum), first.space());
}

struct ArithmeticTerm {
  int sign;  // +1 or -1
  AnchorSet anchors;
};

struct ArithmeticExpression {
  std::vector<ArithmeticTerm> terms;
};

// Sum of signed anchor means. Terms whose means are bitwise identical are
// merged before summation, so +B and -B cancel exactly instead of leaving
// rounding residue; otherwise the sum runs left to right.
inline LatentVector evaluate_arithmetic(const ArithmeticExpression& expr) {
  require(!expr.terms.empty(), ErrorCode::InvalidArgument, "arithmetic expression has no terms");
  for (const auto& term : expr.terms) {
    require(term.sign == 1 || term.sign == -1, ErrorCode::InvalidArgument, "term sign must be +1 or -1");
  }

  struct Operand {
    LatentVector mean;
    double coefficient;
  };
  std::vector<Operand> operands;
  const std::size_t dim = expr.terms.front().anchors.members.empty() ? 0 : expr.terms.front().anchors.members.front().dim();
  for (const auto& term : expr.terms) {
    LatentVector mean = average_anchors(term.anchors);
    if (mean.dim() != dim) {
      fail(ErrorCode::InvalidArgument, "arithmetic term '" + term.anchors.name + "' has dim " +
                                           std::to_string(mean.dim()) + ", expected " + std::to_string(dim));
    }
    auto same = std::find_if(operands.begin(), operands.end(),
                             [&](const Operand& op) { return op.mean.bitwise_equal(mean); });
    if (same != operands.end()) {
      same->coefficient += term.sign;
    } else {
      operands.push_back({std::move(mean), static_cast<double>(term.sign)});
    }
  }

  const LatentSpace space = operands.front().mean.space();
  std::vector<double> acc;
  for (const auto& op : operands) {
    if (op.coefficient == 0.0) continue;
    if (acc.empty()) {
      acc.resize(dim);
      for (std::size_t d = 0; d < dim; ++d) acc[d] = op.coefficient * op.mean[d];
    } else {
      for (std::size_t d = 0; d < dim; ++d) acc[d] += op.coefficient * op.mean[d];
    }
  }
  if (acc.empty()) acc.assign(dim, 0.0);
  return LatentVector(std::move(acc), space);
}

// Text form: "<dim> <space> c_1 ... c_dim" with shortest round-trip decimals.
inline std::string serialize_latent(const LatentVector& z) {
  std::string out = std::to_string(z.dim());
  out += ' ';
  out += to_string(z.space());
  char buf[32];
  for (double v : z.values()) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out += ' ';
    out.append(buf, end);
  }
  return out;
}

inline LatentVector parse_latent(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    std::size_t end = pos;
    while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end]))) ++end;
    if (end > pos) fields.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  if (fields.size() < 3) fail(ErrorCode::Format, "latent record needs dim, space and components");

  std::size_t dim = 0;
  auto [dim_end, dim_ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), dim);
  if (dim_ec != std::errc{} || dim_end != fields[0].data() + fields[0].size() || dim == 0) {
    fail(ErrorCode::Format, "bad latent dim '" + std::string(fields[0]) + "'");
  }
  LatentSpace space;
  try {
    space = parse_latent_space(fields[1]);
  } catch (const Error& e) {
    fail(ErrorCode::Format, e.message());
  }
  if (fields.size() - 2 != dim) {
    fail(ErrorCode::Format, "latent record declares dim " + std::to_string(dim) + " but has " +
                                std::to_string(fields.size() - 2) + " components");
  }
  std::vector<double> values(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    const auto f = fields[d + 2];
    auto [end, ec] = std::from_chars(f.data(), f.data() + f.size(), values[d]);
    if (ec != std::errc{} || end != f.data() + f.size() || !std::isfinite(values[d])) {
      fail(ErrorCode::Format, "bad latent component '" + std::string(f) + "'");
    }
  }
  return LatentVector(std::move(values), space);
}

inline std::string serialize_latents(std::span<const LatentVector> latents) {
  std::string out;
  for (const auto& z : latents) {
    out += serialize_latent(z);
    out += '\n';
  }
  return out;
}

inline std::vector<LatentVector> parse_latents(std::string_view text) {
  std::vector<LatentVector> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) out.push_back(parse_latent(line));
    pos = end + 1;
  }
  return out;
}

}  // namespace latgen
