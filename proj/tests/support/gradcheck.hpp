#ifndef TOKENPOSE_TESTS_GRADCHECK_HPP
#define TOKENPOSE_TESTS_GRADCHECK_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tokenpose/tensor.hpp"

// Central finite-difference oracle, independent of the backward rules it
// checks: only forward evaluations of the function under test.

namespace tokenpose::testing {

struct GradCheckResult {
  bool ok = true;
  double max_rel_err = 0.0;
  std::string detail;
};

// make_loss() rebuilds the scalar loss from the current leaf values.
inline GradCheckResult gradcheck(std::vector<Tensor<double>> leaves,
                                 const std::function<Tensor<double>()>& make_loss,
                                 double h = 1e-5, double tol = 1e-4) {
  GradCheckResult result;
  for (auto& leaf : leaves) leaf.zero_grad();
  Tensor<double> loss = make_loss();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves)
    analytic.push_back(leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.numel(), 0.0));

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& vals = leaves[li].mutable_values();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      double orig = vals[j];
      vals[j] = orig + h;
      double plus = make_loss().item();
      vals[j] = orig - h;
      double minus = make_loss().item();
      vals[j] = orig;
      double numeric = (plus - minus) / (2.0 * h);
      double a = analytic[li][j];
      double rel = std::fabs(a - numeric) /
                   std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.detail = "leaf " + std::to_string(li) + " elem " + std::to_string(j) +
                        ": analytic " + std::to_string(a) + " vs numeric " +
                        std::to_string(numeric);
      }
    }
  }
  result.ok = result.max_rel_err < tol;
  return result;
}

}  // namespace tokenpose::testing

#endif
