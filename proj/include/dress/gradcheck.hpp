#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dress/params.hpp"

namespace dress::gradcheck {

/// Central finite-difference step and the elementwise relative error
/// measure used throughout: |a - fd| / max(1, |a|, |fd|).
inline constexpr double kFdStep = 1e-6;

double rel_err(double analytic, double fd);

/// Max relative error between `analytic` and central differences of the
/// scalar `f` taken entry by entry through the live matrix `m`. The matrix
/// is restored afterwards.
double check_matrix(Matrix& m, const Matrix& analytic, const std::function<double()>& f,
                    double step = kFdStep);

struct CheckResult {
  std::string op;
  double max_rel_err = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

/// Runs the full certification suite: every differentiable operation and
/// loss term against central finite differences over n_seeds randomized
/// instances each. `corrupt_op` is a test hook that perturbs the analytic
/// gradient of the named check so it must fail.
std::vector<CheckResult> run_gradient_certification(int n_seeds,
                                                    const std::string& corrupt_op = "");

bool all_passed(const std::vector<CheckResult>& results);
std::string results_table(const std::vector<CheckResult>& results);

}  // namespace dress::gradcheck
