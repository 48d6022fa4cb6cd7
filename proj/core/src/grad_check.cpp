// SPDX-License-Identifier: Apache-2.0
#include "mosa/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mosa {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                           double eps, double tol, double floor) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
    p.zero_grad();
  }

  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + eps;
      const double up = f().item();
      values[j] = saved - eps;
      const double down = f().item();
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i][j];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      ++report.entries_checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (!(rel_err <= tol)) ++report.failures;
      if (rel_err > report.max_rel_error || std::isnan(rel_err)) {
        report.max_rel_error = std::isnan(rel_err) ? INFINITY : rel_err;
        std::ostringstream os;
        os << "param " << i << " entry " << j << ": analytic " << a << " vs numeric " << numeric;
        report.worst = os.str();
      }
    }
  }
  report.passed = report.failures == 0;
  return report;
}

}  // namespace mosa
