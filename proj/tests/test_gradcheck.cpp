#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "phinet/gradcheck.hpp"

using namespace phinet;

TEST(GradCheck, SuitePassesOnMicroConfig) {
  const auto report = run_gradcheck_suite();
  for (const auto& r : report.results) {
    EXPECT_TRUE(r.pass) << r.name << " rel_error=" << r.rel_error;
    EXPECT_GT(r.analytic_norm, 0.0) << r.name;
  }
  EXPECT_TRUE(report.all_pass());
}

TEST(GradCheck, InjectedSignErrorIsReportedByName) {
  GradCheckOptions opt;
  opt.inject_sign_bug = {"hippocampus.ca1_decode", "loss[h.w]"};
  const auto report = run_gradcheck_suite(opt);
  EXPECT_FALSE(report.all_pass());
  for (const auto& r : report.results) {
    if (opt.inject_sign_bug.count(r.name)) {
      EXPECT_FALSE(r.pass) << r.name;
      EXPECT_NEAR(r.rel_error, 2.0, 1e-6) << r.name;
    } else {
      EXPECT_TRUE(r.pass) << r.name;
    }
  }
}

TEST(GradCheck, CoversEveryOperationAndParameter) {
  const auto report = run_gradcheck_suite();
  std::set<std::string> names;
  for (const auto& r : report.results) names.insert(r.name);
  for (const char* op : {"backbone.encode", "hippocampus.ca3_predict", "hippocampus.prior_logits",
                         "hippocampus.posterior_logits", "hippocampus.sample_straight_through",
                         "hippocampus.ca1_decode", "objective.sim2", "objective.kl_balanced"})
    EXPECT_TRUE(names.count(op)) << op;
  EXPECT_TRUE(names.count("loss[h.w]"));
  EXPECT_TRUE(names.count("loss[f.patch.w]"));
  EXPECT_TRUE(names.count("loss[g.queries]"));
  EXPECT_FALSE(names.count("loss[f.pixel_mean]"));
}

TEST(GradCheck, RelativeErrorOracle) {
  Mat<double> a(2, 1), n(2, 1);
  a << 3, 4;
  n << 3, 4;
  EXPECT_DOUBLE_EQ(relative_error(a, n), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(a, -a), 2.0);
  EXPECT_DOUBLE_EQ(relative_error(Mat<double>::Zero(2, 1), Mat<double>::Zero(2, 1)), 0.0);
  n << 3, 5;
  EXPECT_NEAR(relative_error(a, n), 1.0 / std::sqrt(34.0), 1e-15);
}
