#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

namespace actlab {

/// Success level that defines t_max (and a_min). The 50% choice is a convention.
inline constexpr double kSuccessThreshold = 0.5;

struct FitPoint {
  double x = 0;       // t for success curves, a for token-attack curves
  double p = 0;       // success probability in [0, 1]
  double weight = 1;  // least-squares weight
};

/// Logistic in log x. Decreasing: 1 / (1 + exp(alpha (log x - log m))).
/// Increasing: 1 / (1 + exp(-alpha (log x - log m))). alpha > 0 and the curve
/// crosses 0.5 at x = m.
struct LogisticFit {
  double alpha = 0;
  double midpoint = 0;
  double alpha_stderr = 0;
  double midpoint_stderr = 0;
  double residual_sum = 0;
  int iterations = 0;
  bool increasing = false;
  bool converged = false;
  bool extrapolated = false;  // midpoint outside the sampled x range

  double evaluate(double x) const;
};

/// Decreasing success curve p(t); t_max is where it falls to 50%.
struct SigmoidFit {
  LogisticFit curve;
  double alpha() const { return curve.alpha; }
  double t_max() const { return curve.midpoint; }
  double t_max_stderr() const { return curve.midpoint_stderr; }
  double residual_sum() const { return curve.residual_sum; }
  bool converged() const { return curve.converged; }
  double evaluate(double t) const { return curve.evaluate(t); }
};

/// Increasing token-attack curve p(a); a_min is where it rises to 50%.
struct AminFit {
  LogisticFit curve;
  double a_min() const { return curve.midpoint; }
  double a_min_stderr() const { return curve.midpoint_stderr; }
  bool converged() const { return curve.converged; }
};

/// Weighted least squares over (alpha, log midpoint) with damped Gauss-Newton
/// from 8 log-spaced starting midpoints. Requires >= 3 distinct x > 0 and
/// p in [0, 1]; a flat curve comes back with converged = false.
LogisticFit fit_logistic(std::span<const FitPoint> points, bool increasing);

SigmoidFit fit_sigmoid(std::span<const FitPoint> points);
AminFit fit_amin(std::span<const FitPoint> points);

/// Least-squares weight for a success-grid cell.
double cell_weight(std::size_t count, double stddev);

struct ScalingPoint {
  double x = 0;  // f * a / n
  double t_max = 0;
  double t_max_stderr = 0;  // <= 0 or NaN means unknown
};

struct ScalingFit {
  double kappa = 0;
  double kappa_stderr = std::numeric_limits<double>::quiet_NaN();
  std::size_t points_used = 0;
  bool weighted = false;
  double reduced_chi2 = std::numeric_limits<double>::quiet_NaN();
};

/// Line through the origin t_max = kappa * x. Inverse-variance weighted when
/// every point has a stderr, unweighted otherwise. With one point, kappa = y/x
/// and no stderr.
ScalingFit fit_kappa(std::span<const ScalingPoint> points);

struct SeparationPoint {
  double s = 0;
  double kappa = 0;
};

/// kappa(s) = kappa0 for s <= s0 and kappa0 - slope * log(s / s0) beyond.
struct SeparationFit {
  double kappa0 = 0;
  double s0 = 0;
  double slope = 0;
  double residual_sum = 0;
  std::size_t candidates = 0;

  double evaluate(double s) const;
};

/// Breakpoint searched over the observed s values that leave at least two
/// points beyond them; (kappa0, slope) solved in closed form per candidate.
SeparationFit fit_separation(std::span<const SeparationPoint> points);

struct ResistanceEstimate {
  double chi = 0;
  double chi_stderr = 0;
};

/// chi = d p / (kappa log2 V), stderr propagated to first order from kappa.
ResistanceEstimate attack_resistance(double d, double p_bits, double vocab, double kappa, double kappa_stderr = 0);
/// Inverse relation: kappa = d p / (chi log2 V).
double kappa_from_resistance(double d, double p_bits, double vocab, double chi);
/// log2 V / (d p): bits of a token relative to bits of one activation vector.
double token_to_activation_bit_ratio(double d, double p_bits, double vocab);
/// Predicted token-substitution multiplier kappa log2 V / (d p).
double predicted_token_kappa(double kappa, double d, double p_bits, double vocab);

struct TokenKappaEstimate {
  double t = 0;
  double a_min = 0;
  double a_min_stderr = 0;
  double kappa = 0;  // t / a_min
  double kappa_stderr = 0;
};

TokenKappaEstimate token_kappa_from_amin(double t, double a_min, double a_min_stderr);

struct CombinedEstimate {
  double inverse_variance_mean = 0;
  double inverse_variance_stderr = 0;
  // Weights proportional to the squared errors themselves (not their inverse).
  double variance_weighted_mean = 0;
  std::string note;
};

CombinedEstimate combine_estimates(std::span<const double> values, std::span<const double> stderrs);

}  // namespace actlab
