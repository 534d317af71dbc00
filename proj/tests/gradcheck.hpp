#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "moldiff/denoiser.hpp"

namespace moldiff::test {

struct GradReport {
  double worst = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

// Relative error of analytic against central-difference gradients for every
// trainable entry. Gradients below floor in magnitude are compared against
// floor so rounding noise in the difference quotient does not dominate.
inline GradReport finite_difference_check(model::ModelParams& params, const std::function<double(const model::ModelParams&)>& loss,
                                          const std::function<void(model::ModelParams&)>& analytic, double h = 1e-5,
                                          double floor = 1e-6) {
  params.zero_grad();
  analytic(params);
  GradReport report;
  for (auto& p : params.params()) {
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      if (p.frozen_row0 && r == 0) continue;
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        const double keep = p.value(r, c);
        p.value(r, c) = keep + h;
        const double up = loss(params);
        p.value(r, c) = keep - h;
        const double down = loss(params);
        p.value(r, c) = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double exact = p.grad(r, c);
        const double err = std::abs(numeric - exact) / std::max({std::abs(numeric), std::abs(exact), floor});
        ++report.checked;
        if (err > report.worst) {
          report.worst = err;
          report.worst_param = p.name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
        }
      }
    }
  }
  return report;
}

}  // namespace moldiff::test
