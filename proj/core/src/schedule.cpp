#include "actdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "actdiff/error.hpp"

namespace actdiff {

NoiseSchedule::NoiseSchedule(std::size_t steps, double tau) : steps_(steps), tau_(tau) {
  if (steps == 0) throw ConfigError("schedule: step count must be >= 1");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("schedule: tau must be > 0");
  const double n_total = static_cast<double>(steps);
  auto f = [&](std::size_t n) {
    const double c = std::cos(((static_cast<double>(n) / n_total + tau) / (1.0 + tau)) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0);
  closed_form_.resize(steps + 1);
  for (std::size_t n = 0; n <= steps; ++n) closed_form_[n] = f(n) / f0;
  closed_form_[0] = 1.0;

  beta_.assign(steps + 1, 0.0);
  alpha_bar_.assign(steps + 1, 1.0);
  for (std::size_t n = 1; n <= steps; ++n) {
    beta_[n] = std::min(1.0 - closed_form_[n] / closed_form_[n - 1], kMaxBeta);
    alpha_bar_[n] = alpha_bar_[n - 1] * (1.0 - beta_[n]);
  }
}

NoiseSchedule::Step NoiseSchedule::query(std::size_t n) const {
  if (n < 1 || n > steps_) {
    throw ConfigError("schedule: step " + std::to_string(n) + " outside [1, " + std::to_string(steps_) + "]");
  }
  return {alpha_bar_[n], beta_[n]};
}

std::size_t default_diffusion_steps(const char* preset) {
  const std::string p = preset ? preset : "";
  if (p == "niv" || p == "niv-like") return 50;
  return 200;
}

}  // namespace actdiff
