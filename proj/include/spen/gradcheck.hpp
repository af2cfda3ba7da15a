#pragma once

#include <functional>
#include <span>

#include "spen/autodiff.hpp"
#include "spen/error.hpp"

namespace spen::ad {

// Builds the scalar expression on a fresh tape. The same builder is used for
// the analytic pass and every perturbed re-evaluation, so it must be pure.
using ScalarBuilder = std::function<Tape::Id(Tape&)>;

// Central-difference check of the analytic gradient for every entry of every
// parameter. Returns max over entries of
//   |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
inline double finite_diff_check(const ScalarBuilder& build,
                                std::span<const TensorPtr> params, double eps) {
  check(eps >= 1e-7 && eps <= 1e-3, msg_cat("finite_diff_check: epsilon ", eps,
                                            " outside [1e-7, 1e-3]"));
  zero_grads(params);
  {
    Tape tape;
    Tape::Id out = build(tape);
    check_finite(tape.scalar(out), "finite_diff_check: function value");
    tape.backward(out);
  }

  double worst = 0.0;
  for (const auto& p : params) {
    for (size_t i = 0; i < p->data.size(); ++i) {
      double saved = p->data[i];
      p->data[i] = saved + eps;
      double f_plus;
      {
        Tape tape;
        f_plus = tape.scalar(build(tape));
      }
      p->data[i] = saved - eps;
      double f_minus;
      {
        Tape tape;
        f_minus = tape.scalar(build(tape));
      }
      p->data[i] = saved;
      check_finite(f_plus, "finite_diff_check: perturbed function value");
      check_finite(f_minus, "finite_diff_check: perturbed function value");

      double numeric = (f_plus - f_minus) / (2.0 * eps);
      double analytic = p->grad[i];
      double rel = std::fabs(analytic - numeric) /
                   (std::fabs(analytic) + std::fabs(numeric) + 1e-12);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace spen::ad
