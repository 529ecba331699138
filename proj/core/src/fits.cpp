#include "actlab/fits.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace actlab {

double LogisticFit::evaluate(double x) const {
  const double sign = increasing ? -1.0 : 1.0;
  return 1.0 / (1.0 + std::exp(sign * alpha * (std::log(x) - std::log(midpoint))));
}

double cell_weight(std::size_t count, double stddev) {
  return static_cast<double>(count) / std::max(stddev * stddev, 1e-4);
}

namespace {

constexpr int kStarts = 8;
constexpr int kMaxIterations = 500;
constexpr double kStepTolerance = 1e-8;

struct Solver {
  std::span<const FitPoint> points;
  double sign;  // +1 decreasing, -1 increasing

  // theta = (log alpha, log midpoint)
  double model(const std::array<double, 2>& th, double lx) const {
    const double z = sign * std::exp(th[0]) * (lx - th[1]);
    return 1.0 / (1.0 + std::exp(z));
  }

  double cost(const std::array<double, 2>& th) const {
    double c = 0;
    for (const auto& pt : points) {
      const double r = pt.p - model(th, std::log(pt.x));
      c += pt.weight * r * r;
    }
    return c;
  }

  // Normal matrix J^T W J (packed a00, a01, a11) and gradient J^T W r.
  void normal_equations(const std::array<double, 2>& th, std::array<double, 3>& a, std::array<double, 2>& g) const {
    a = {0, 0, 0};
    g = {0, 0};
    const double alpha = std::exp(th[0]);
    for (const auto& pt : points) {
      const double lx = std::log(pt.x);
      const double s = model(th, lx);
      const double ds = s * (1.0 - s);
      const double j0 = -ds * sign * alpha * (lx - th[1]);
      const double j1 = ds * sign * alpha;
      const double r = pt.p - s;
      a[0] += pt.weight * j0 * j0;
      a[1] += pt.weight * j0 * j1;
      a[2] += pt.weight * j1 * j1;
      g[0] += pt.weight * j0 * r;
      g[1] += pt.weight * j1 * r;
    }
  }
};

struct Run {
  std::array<double, 2> theta{};
  double cost = 0;
  int iterations = 0;
  bool converged = false;
};

Run levenberg_marquardt(const Solver& solver, std::array<double, 2> theta) {
  Run run{theta, solver.cost(theta), 0, false};
  double lambda = 1e-3;
  std::array<double, 3> a{};
  std::array<double, 2> g{};
  for (run.iterations = 0; run.iterations < kMaxIterations; ++run.iterations) {
    solver.normal_equations(run.theta, a, g);
    const double m00 = a[0] * (1 + lambda) + 1e-300, m11 = a[2] * (1 + lambda) + 1e-300, m01 = a[1];
    const double det = m00 * m11 - m01 * m01;
    if (!(std::abs(det) > 0) || !std::isfinite(det)) break;
    const std::array<double, 2> step{(m11 * g[0] - m01 * g[1]) / det, (m00 * g[1] - m01 * g[0]) / det};
    const std::array<double, 2> trial{run.theta[0] + step[0], run.theta[1] + step[1]};
    const double trial_cost = solver.cost(trial);
    if (std::isfinite(trial_cost) && trial_cost <= run.cost) {
      run.theta = trial;
      run.cost = trial_cost;
      lambda = std::max(lambda / 10, 1e-12);
      if (std::max(std::abs(step[0]), std::abs(step[1])) < kStepTolerance) {
        run.converged = true;
        break;
      }
    } else {
      lambda *= 10;
      if (lambda > 1e16) {
        // No descent direction left at working precision: a stationary point.
        run.converged = true;
        break;
      }
    }
  }
  return run;
}

}  // namespace

LogisticFit fit_logistic(std::span<const FitPoint> points, bool increasing) {
  std::vector<double> xs;
  double pmin = 1, pmax = 0;
  for (const auto& pt : points) {
    if (!(pt.x > 0) || !std::isfinite(pt.x)) throw std::invalid_argument("fit_logistic: x must be positive");
    if (!(pt.p >= 0 && pt.p <= 1)) throw std::invalid_argument("fit_logistic: p must be in [0, 1]");
    if (!(pt.weight >= 0) || !std::isfinite(pt.weight)) throw std::invalid_argument("fit_logistic: bad weight");
    xs.push_back(pt.x);
    pmin = std::min(pmin, pt.p);
    pmax = std::max(pmax, pt.p);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  if (xs.size() < 3) throw std::invalid_argument("fit_logistic: need at least 3 distinct x values");

  LogisticFit fit;
  fit.increasing = increasing;
  if (pmax - pmin < 1e-12) {
    fit.midpoint = std::numeric_limits<double>::quiet_NaN();
    fit.alpha = std::numeric_limits<double>::quiet_NaN();
    return fit;
  }

  const Solver solver{points, increasing ? -1.0 : 1.0};
  const double lo = std::log(xs.front()), hi = std::log(xs.back());
  Run best;
  bool have = false;
  for (int k = 0; k < kStarts; ++k) {
    const double u0 = lo + (hi - lo) * k / (kStarts - 1);
    Run run = levenberg_marquardt(solver, {0.0, u0});
    if (!have || (run.converged && !best.converged) || (run.converged == best.converged && run.cost < best.cost)) {
      best = run;
      have = true;
    }
  }

  fit.alpha = std::exp(best.theta[0]);
  fit.midpoint = std::exp(best.theta[1]);
  fit.residual_sum = best.cost;
  fit.iterations = best.iterations;
  fit.converged = best.converged && std::isfinite(fit.alpha) && std::isfinite(fit.midpoint);
  fit.extrapolated = fit.midpoint < xs.front() || fit.midpoint > xs.back();

  std::array<double, 3> a{};
  std::array<double, 2> g{};
  solver.normal_equations(best.theta, a, g);
  std::size_t used = 0;
  for (const auto& pt : points) used += pt.weight > 0 ? 1 : 0;
  const double det = a[0] * a[2] - a[1] * a[1];
  if (used > 2 && det > 0) {
    const double s2 = best.cost / static_cast<double>(used - 2);
    fit.alpha_stderr = fit.alpha * std::sqrt(a[2] / det * s2);
    fit.midpoint_stderr = fit.midpoint * std::sqrt(a[0] / det * s2);
  } else {
    fit.alpha_stderr = fit.midpoint_stderr = std::numeric_limits<double>::quiet_NaN();
  }
  return fit;
}

SigmoidFit fit_sigmoid(std::span<const FitPoint> points) { return SigmoidFit{fit_logistic(points, false)}; }

AminFit fit_amin(std::span<const FitPoint> points) { return AminFit{fit_logistic(points, true)}; }

ScalingFit fit_kappa(std::span<const ScalingPoint> points) {
  if (points.empty()) throw std::invalid_argument("fit_kappa: no points");
  bool weighted = true;
  for (const auto& pt : points) {
    if (!(pt.x > 0) || !std::isfinite(pt.x)) throw std::invalid_argument("fit_kappa: x must be positive");
    if (!std::isfinite(pt.t_max)) throw std::invalid_argument("fit_kappa: t_max must be finite");
    if (!(pt.t_max_stderr > 0) || !std::isfinite(pt.t_max_stderr)) weighted = false;
  }
  ScalingFit fit;
  fit.points_used = points.size();
  if (points.size() == 1) {
    fit.kappa = points[0].t_max / points[0].x;
    return fit;
  }
  fit.weighted = weighted;
  double sxy = 0, sxx = 0;
  for (const auto& pt : points) {
    const double w = weighted ? 1.0 / (pt.t_max_stderr * pt.t_max_stderr) : 1.0;
    sxy += w * pt.x * pt.t_max;
    sxx += w * pt.x * pt.x;
  }
  fit.kappa = sxy / sxx;
  double chi2 = 0;
  for (const auto& pt : points) {
    const double w = weighted ? 1.0 / (pt.t_max_stderr * pt.t_max_stderr) : 1.0;
    const double r = pt.t_max - fit.kappa * pt.x;
    chi2 += w * r * r;
  }
  const double dof = static_cast<double>(points.size() - 1);
  fit.reduced_chi2 = chi2 / dof;
  if (weighted) {
    // Scaled up when the scatter exceeds the quoted errors.
    fit.kappa_stderr = std::sqrt(1.0 / sxx) * std::max(1.0, std::sqrt(fit.reduced_chi2));
  } else {
    fit.kappa_stderr = std::sqrt(fit.reduced_chi2 / sxx);
  }
  return fit;
}

double SeparationFit::evaluate(double s) const {
  return s <= s0 ? kappa0 : kappa0 - slope * std::log(s / s0);
}

SeparationFit fit_separation(std::span<const SeparationPoint> points) {
  if (points.size() < 4) throw std::invalid_argument("fit_separation: need at least 4 points");
  std::vector<double> grid;
  for (const auto& pt : points) {
    if (!(pt.s >= 1) || !std::isfinite(pt.s)) throw std::invalid_argument("fit_separation: s must be >= 1");
    if (!std::isfinite(pt.kappa)) throw std::invalid_argument("fit_separation: kappa must be finite");
    grid.push_back(pt.s);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  SeparationFit best;
  bool have = false;
  auto consider = [&](double kappa0, double s0, double slope) {
    double rss = 0;
    for (const auto& pt : points) {
      const double l = pt.s > s0 ? std::log(pt.s / s0) : 0.0;
      const double r = pt.kappa - (kappa0 - slope * l);
      rss += r * r;
    }
    if (!have || rss < best.residual_sum) {
      best.kappa0 = kappa0;
      best.s0 = s0;
      best.slope = slope;
      best.residual_sum = rss;
      have = true;
    }
  };

  const double n = static_cast<double>(points.size());
  std::size_t candidates = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double s0 = grid[k];
    std::size_t beyond = 0;
    for (const auto& pt : points) beyond += pt.s > s0 ? 1 : 0;
    if (beyond < 2) continue;
    ++candidates;

    // Breakpoint pinned at an observed s: kappa = c0 + c1 * l, slope = -c1.
    double sl = 0, sll = 0, sy = 0, sly = 0;
    for (const auto& pt : points) {
      const double l = pt.s > s0 ? std::log(pt.s / s0) : 0.0;
      sl += l;
      sll += l * l;
      sy += pt.kappa;
      sly += l * pt.kappa;
    }
    const double det = n * sll - sl * sl;
    double kappa0 = sy / n, slope = 0;
    if (det > 0) {
      const double c1 = (n * sly - sl * sy) / det;
      if (c1 < 0) {
        slope = -c1;
        kappa0 = (sy - c1 * sl) / n;
      }
    }
    consider(kappa0, s0, slope);

    // Breakpoint strictly between grid[k] and grid[k + 1]: plateau mean on the
    // left, free line in log s on the right, joined where they cross.
    if (k + 1 >= grid.size()) continue;
    double ln = 0, ly = 0, rn = 0, rx = 0, rxx = 0, ry = 0, rxy = 0;
    for (const auto& pt : points) {
      if (pt.s <= s0) {
        ln += 1;
        ly += pt.kappa;
      } else {
        const double x = std::log(pt.s);
        rn += 1;
        rx += x;
        rxx += x * x;
        ry += pt.kappa;
        rxy += x * pt.kappa;
      }
    }
    const double rdet = rn * rxx - rx * rx;
    if (!(rdet > 0)) continue;
    const double b = -(rn * rxy - rx * ry) / rdet;
    if (!(b > 0)) continue;
    const double c = (ry + b * rx) / rn;
    const double k0 = ly / ln;
    const double cross = std::exp((c - k0) / b);
    if (cross > grid[k] && cross < grid[k + 1]) consider(k0, cross, b);
  }
  best.candidates = candidates;
  if (!have) throw std::invalid_argument("fit_separation: no breakpoint leaves two points beyond it");
  return best;
}

ResistanceEstimate attack_resistance(double d, double p_bits, double vocab, double kappa, double kappa_stderr) {
  if (!(d > 0 && p_bits > 0 && vocab > 1 && kappa > 0)) {
    throw std::invalid_argument("attack_resistance: arguments must be positive (vocab > 1)");
  }
  ResistanceEstimate r;
  r.chi = d * p_bits / (kappa * std::log2(vocab));
  r.chi_stderr = r.chi * std::abs(kappa_stderr) / kappa;
  return r;
}

double kappa_from_resistance(double d, double p_bits, double vocab, double chi) {
  if (!(d > 0 && p_bits > 0 && vocab > 1 && chi > 0)) {
    throw std::invalid_argument("kappa_from_resistance: arguments must be positive (vocab > 1)");
  }
  return d * p_bits / (chi * std::log2(vocab));
}

double token_to_activation_bit_ratio(double d, double p_bits, double vocab) {
  if (!(d > 0 && p_bits > 0 && vocab > 1)) throw std::invalid_argument("bit ratio: arguments must be positive");
  return std::log2(vocab) / (d * p_bits);
}

double predicted_token_kappa(double kappa, double d, double p_bits, double vocab) {
  if (!(kappa >= 0)) throw std::invalid_argument("predicted_token_kappa: kappa must be non-negative");
  return kappa * token_to_activation_bit_ratio(d, p_bits, vocab);
}

TokenKappaEstimate token_kappa_from_amin(double t, double a_min, double a_min_stderr) {
  if (!(t > 0 && a_min > 0)) throw std::invalid_argument("token_kappa_from_amin: t and a_min must be positive");
  return {t, a_min, a_min_stderr, t / a_min, t * a_min_stderr / (a_min * a_min)};
}

CombinedEstimate combine_estimates(std::span<const double> values, std::span<const double> stderrs) {
  if (values.empty() || values.size() != stderrs.size()) {
    throw std::invalid_argument("combine_estimates: need matching, non-empty values and errors");
  }
  double wsum = 0, wv = 0, vsum = 0, vv = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(stderrs[i] > 0)) throw std::invalid_argument("combine_estimates: errors must be positive");
    const double var = stderrs[i] * stderrs[i];
    wsum += 1.0 / var;
    wv += values[i] / var;
    vsum += var;
    vv += values[i] * var;
  }
  CombinedEstimate c;
  c.inverse_variance_mean = wv / wsum;
  c.inverse_variance_stderr = std::sqrt(1.0 / wsum);
  c.variance_weighted_mean = vv / vsum;
  if (std::abs(c.variance_weighted_mean - c.inverse_variance_mean) > c.inverse_variance_stderr) {
    std::ostringstream os;
    os << "inverse-variance mean " << c.inverse_variance_mean << " and variance-weighted mean "
       << c.variance_weighted_mean << " differ by more than one stderr";
    c.note = os.str();
  }
  return c;
}

}  // namespace actlab
