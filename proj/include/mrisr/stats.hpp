#pragma once

#include <vector>

namespace mrisr::stats {

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-tailed
  double mean_difference = 0.0;
};

/// Paired two-tailed t-test on a[i] - b[i]. Zero-variance differences give
/// p = 0 (nonzero mean) or p = 1 (zero mean).
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// Average ranks (1-based), ties share their mean rank.
std::vector<double> ranks(const std::vector<double>& x);

/// Pearson correlation of the ranks.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace mrisr::stats
