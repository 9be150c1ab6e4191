#pragma once

// Central finite-difference checks of every analytic gradient path, run in
// 64-bit on the micro configuration.

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "phinet/autodiff.hpp"
#include "phinet/params.hpp"

namespace phinet {

struct GradCheckResult {
  std::string name;
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  std::size_t entries = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckResult> results;
  double tolerance = 1e-4;

  bool all_pass() const {
    for (const auto& r : results)
      if (!r.pass) return false;
    return !results.empty();
  }
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
  // Names of checks whose analytic gradient is negated before comparison.
  // Lets tests confirm that a broken backward pass is reported by name.
  std::set<std::string> inject_sign_bug;
};

// ‖a − n‖ / max(‖a‖, ‖n‖); zero when both vanish.
double relative_error(const Mat<double>& analytic, const Mat<double>& numeric);

using ScalarProbe = std::function<ad::Var<double>(Binder<double>&)>;

// Analytic gradients of `probe` w.r.t. every trainable entry of `params`.
Gradients<double> analytic_gradient(const ParameterSet<double>& params, const ScalarProbe& probe);

// Central differences of `value` (evaluated without gradient tracking).
Gradients<double> numeric_gradient(const ParameterSet<double>& params, const ScalarProbe& value, double step);

// Runs the whole suite: per-operation checks named module.op, then the
// asymmetric loss against finite differences for each parameter group
// (named loss[<parameter>]).
GradCheckReport run_gradcheck_suite(const GradCheckOptions& options = {});

}  // namespace phinet
