#include "dope/quadrature.hpp"

#include <algorithm>

namespace dope {

namespace {

struct Simpson {
  const std::function<double(double)>& f;
  double tol;
  int max_depth;

  double recurse(double a, double b, double fa, double fm, double fb,
                 double whole, double tol_here, int depth) const {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double err = left + right - whole;
    if (std::abs(err) <= 15.0 * tol_here)
      return left + right + err / 15.0;
    if (depth >= max_depth)
      throw QuadratureNonConvergence("adaptive Simpson depth limit");
    return recurse(a, m, fa, flm, fm, left, 0.5 * tol_here, depth + 1) +
           recurse(m, b, fm, frm, fb, right, 0.5 * tol_here, depth + 1);
  }

  double integrate(double a, double b) const {
    if (a == b) return 0.0;
    const double m = 0.5 * (a + b);
    const double fa = f(a), fm = f(m), fb = f(b);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return recurse(a, b, fa, fm, fb, whole, tol, 0);
  }
};

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a,
                        double b, double tol, int max_depth) {
  return Simpson{f, tol, max_depth}.integrate(a, b);
}

double adaptive_simpson_pieces(const std::function<double(double)>& f,
                               std::vector<double> breakpoints, double tol,
                               int max_depth) {
  std::sort(breakpoints.begin(), breakpoints.end());
  breakpoints.erase(std::unique(breakpoints.begin(), breakpoints.end()),
                    breakpoints.end());
  if (breakpoints.size() < 2) throw Error("need at least two breakpoints");
  double total = 0.0;
  const double piece_tol = tol / static_cast<double>(breakpoints.size() - 1);
  for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i)
    total += adaptive_simpson(f, breakpoints[i], breakpoints[i + 1], piece_tol,
                              max_depth);
  return total;
}

namespace {

struct SimpsonVec {
  const std::function<std::vector<double>(double)>& f;
  std::size_t dim;
  double tol;
  int max_depth;

  static double max_abs_diff(const std::vector<double>& a,
                             const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      m = std::max(m, std::abs(a[i] - b[i]));
    return m;
  }

  std::vector<double> rule(double a, double b, const std::vector<double>& fa,
                           const std::vector<double>& fm,
                           const std::vector<double>& fb) const {
    std::vector<double> out(dim);
    for (std::size_t i = 0; i < dim; ++i)
      out[i] = (b - a) / 6.0 * (fa[i] + 4.0 * fm[i] + fb[i]);
    return out;
  }

  std::vector<double> recurse(double a, double b, const std::vector<double>& fa,
                              const std::vector<double>& fm,
                              const std::vector<double>& fb,
                              const std::vector<double>& whole, double tol_here,
                              int depth) const {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const std::vector<double> flm = f(lm);
    const std::vector<double> frm = f(rm);
    const std::vector<double> left = rule(a, m, fa, flm, fm);
    const std::vector<double> right = rule(m, b, fm, frm, fb);
    std::vector<double> sum(dim);
    for (std::size_t i = 0; i < dim; ++i) sum[i] = left[i] + right[i];
    if (max_abs_diff(sum, whole) <= 15.0 * tol_here) {
      for (std::size_t i = 0; i < dim; ++i)
        sum[i] += (sum[i] - whole[i]) / 15.0;
      return sum;
    }
    if (depth >= max_depth)
      throw QuadratureNonConvergence("adaptive Simpson (vec) depth limit");
    const std::vector<double> l =
        recurse(a, m, fa, flm, fm, left, 0.5 * tol_here, depth + 1);
    const std::vector<double> r =
        recurse(m, b, fm, frm, fb, right, 0.5 * tol_here, depth + 1);
    std::vector<double> out(dim);
    for (std::size_t i = 0; i < dim; ++i) out[i] = l[i] + r[i];
    return out;
  }
};

}  // namespace

std::vector<double> adaptive_simpson_vec(
    const std::function<std::vector<double>(double)>& f, double a, double b,
    std::size_t dim, double tol, int max_depth) {
  if (a == b) return std::vector<double>(dim, 0.0);
  SimpsonVec s{f, dim, tol, max_depth};
  const double m = 0.5 * (a + b);
  const std::vector<double> fa = f(a), fm = f(m), fb = f(b);
  return s.recurse(a, b, fa, fm, fb, s.rule(a, b, fa, fm, fb), tol, 0);
}

}  // namespace dope
