#pragma once

#include <cstddef>
#include <vector>

namespace actdiff {

/// Cosine noise schedule over N diffusion steps.
///
/// `closed_form_alpha_bar[n] = f(n) / f(0)` with
/// `f(n) = cos(((n/N + tau) / (1 + tau)) * pi/2)^2`. The betas derived from
/// consecutive ratios are clipped to at most `kMaxBeta`, and `alpha_bar` is
/// the running product of `1 - beta`, so the two arrays agree everywhere
/// except where clipping was active (only n = N for tau > 0).
class NoiseSchedule {
 public:
  static constexpr double kMaxBeta = 0.999;
  static constexpr double kDefaultTau = 0.008;

  NoiseSchedule(std::size_t steps, double tau = kDefaultTau);

  std::size_t steps() const { return steps_; }
  double tau() const { return tau_; }

  /// Cumulative signal fraction used by the forward and reverse processes, indexed 0..N.
  const std::vector<double>& alpha_bar() const { return alpha_bar_; }
  /// Unclipped closed-form values, indexed 0..N.
  const std::vector<double>& closed_form_alpha_bar() const { return closed_form_; }
  /// Per-step noise, indexed 1..N (index 0 is unused and holds 0).
  const std::vector<double>& beta() const { return beta_; }

  struct Step {
    double alpha_bar;
    double beta;
  };
  /// Values at step n, 1 <= n <= N.
  Step query(std::size_t n) const;

 private:
  std::size_t steps_;
  double tau_;
  std::vector<double> alpha_bar_, closed_form_, beta_;
};

/// Default step count per dataset preset (200 for CrossTask- and Coin-like
/// data, 50 for NIV-like data).
std::size_t default_diffusion_steps(const char* preset);

}  // namespace actdiff
