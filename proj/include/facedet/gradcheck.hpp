#ifndef FACEDET_GRADCHECK_HPP
#define FACEDET_GRADCHECK_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace facedet {

struct GradCheckResult {
  std::string op;
  double max_rel_error = 0;
};

// Central finite-difference checks for every differentiable operation,
// including a fused 2-level toy detector driving total_loss. Inputs are
// drawn away from non-smooth points (ReLU kinks, pool ties, the smooth-L1
// knee), which the harness cannot average over.
std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed, double eps = 1e-5);

bool gradcheck_passed(const std::vector<GradCheckResult>& results, double tol = 1e-4);

}  // namespace facedet

#endif  // FACEDET_GRADCHECK_HPP
