#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pvpl {

struct GradSuiteConfig {
  std::uint64_t seed = 1;
  std::size_t points = 10;
  double step = 1e-3;
  double tol = 1e-4;
  double backward_scale = 1.0;  // != 1 corrupts every backward pass
};

struct OpGradReport {
  std::string op;
  std::size_t points = 0;
  std::size_t failures = 0;
  double max_rel_err = 0.0;

  bool passed() const { return failures == 0; }
};

/// Finite-difference checks, in double, of every differentiable operation,
/// the encoders, adapters, scoring functions and both losses, each at
/// `points` seeded smooth points (inputs are drawn away from ReLU and hinge
/// kinks). Scalar outputs are formed by contracting with fixed random weights.
std::vector<OpGradReport> run_gradient_suite(const GradSuiteConfig& config = {});

/// One line per op: name, points, failures, max rel-err, PASS/FAIL.
std::string gradient_report_text(const std::vector<OpGradReport>& reports);

}  // namespace pvpl
