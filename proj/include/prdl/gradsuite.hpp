#ifndef PRDL_GRADSUITE_HPP
#define PRDL_GRADSUITE_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace prdl::train {

struct GradSuiteCase {
  std::string name;
  std::uint64_t seed = 0;
  bool pass = false;
  double max_rel_err = 0.0;
};

struct GradSuiteResult {
  std::vector<GradSuiteCase> cases;
  bool pass = false;
};

// Finite-difference suite over every loss term and the full objective on a
// D=8, P=8, K=6 toy model. Seeds are derived from base_seed; toy inputs are
// redrawn until every relu pre-activation clears a safety margin, keeping
// the expression smooth where central differences are taken.
GradSuiteResult gradient_suite(std::uint64_t base_seed, int num_seeds,
                               double h, double tolerance);

}  // namespace prdl::train

#endif  // PRDL_GRADSUITE_HPP
