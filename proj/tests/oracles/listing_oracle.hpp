#pragma once

// Line-by-line transcriptions of the two reference Torch listings (semicircle
// interpolation and two-sided extrapolation). Indices are kept 1-based, as in
// the original Lua, through a small wrapper; these never call into latgen.

#include <cmath>
#include <numbers>
#include <vector>

namespace oracle {

// Lua-style 1-based view over a vector.
struct LuaVec {
  std::vector<double> v;
  explicit LuaVec(std::vector<double> values) : v(std::move(values)) {}
  double& operator[](int i) { return v[static_cast<std::size_t>(i - 1)]; }
  double operator[](int i) const { return v[static_cast<std::size_t>(i - 1)]; }
  int size() const { return static_cast<int>(v.size()); }
};

inline LuaVec axpby(const LuaVec& x, double a, const LuaVec& y, double b) {
  LuaVec out(std::vector<double>(x.v.size()));
  for (int d = 1; d <= x.size(); ++d) out[d] = x[d] * a + y[d] * b;
  return out;
}

// torch.linspace(lo, hi, n)[i], 1-based, evaluated as lo + (i-1)(hi-lo)/(n-1).
inline double linspace_at(double lo, double hi, int n, int i) {
  return lo + (hi - lo) * static_cast<double>(i - 1) / static_cast<double>(n - 1);
}

//   theta = torch.linspace(0, math.pi, n)
//   mid = (noiseL + noiseR) / 2
//   rx = mid[1]; ry = mid[2]
//   for i = 1, n do
//     x = rx + math.cos(theta[i]); y = ry + math.sin(theta[i])
//     noise_cur = noiseL * (1-x) + noiseR * x
//     noise_cur[1] = x; noise_cur[2] = y
inline std::vector<std::vector<double>> circular_listing(const std::vector<double>& left,
                                                         const std::vector<double>& right, int n) {
  const LuaVec noiseL(left), noiseR(right);
  LuaVec mid(std::vector<double>(left.size()));
  for (int d = 1; d <= mid.size(); ++d) mid[d] = (noiseL[d] + noiseR[d]) / 2;
  const double rx = mid[1];
  const double ry = mid[2];
  std::vector<std::vector<double>> noise;
  for (int i = 1; i <= n; ++i) {
    const double theta = linspace_at(0.0, std::numbers::pi, n, i);
    const double x = rx + std::cos(theta);
    const double y = ry + std::sin(theta);
    LuaVec noise_cur = axpby(noiseL, 1 - x, noiseR, x);
    noise_cur[1] = x;
    noise_cur[2] = y;
    noise.push_back(noise_cur.v);
  }
  return noise;
}

//   line = torch.linspace(0, 1, n)
//   for i = 1, n do
//     if i <= math.floor(n/2) then el = -line[i] else el = 1 + line[i] end
//     noise[i] = noiseL * el + noiseR * (1 - el)
inline std::vector<std::vector<double>> extrapolation_listing(const std::vector<double>& left,
                                                              const std::vector<double>& right, int n) {
  const LuaVec noiseL(left), noiseR(right);
  std::vector<std::vector<double>> noise;
  for (int i = 1; i <= n; ++i) {
    const double line_i = linspace_at(0.0, 1.0, n, i);
    double el;
    if (i <= n / 2) {
      el = -line_i;
    } else {
      el = 1 + line_i;
    }
    noise.push_back(axpby(noiseL, el, noiseR, 1 - el).v);
  }
  return noise;
}

}  // namespace oracle
