#pragma once

// Centered finite-difference verification of reverse-mode gradients.
// Run at T=double: eps 1e-4 against a 1e-3 relative threshold leaves two
// orders of headroom for the O(eps^2) truncation error.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cresnet/tensor.hpp"

namespace cresnet {

template <typename T>
struct GradCheckReport {
  T max_rel_error = 0;
  T max_abs_error = 0;
  std::string worst;  // "leaf 2 elem 17" for the max_rel_error element
};

// `loss_fn` must rebuild the scalar loss from the leaves on every call.
// Perturbs every element of every leaf; leaves keep their values afterwards.
template <typename T>
GradCheckReport<T> grad_check(const std::function<Tensor<T>()>& loss_fn,
                              std::vector<Tensor<T>> leaves, T eps = T(1e-4)) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  Tensor<T> loss = loss_fn();
  loss.backward();
  std::vector<std::vector<T>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) analytic.push_back(leaf.grad());

  GradCheckReport<T> report;
  NoGradGuard no_grad;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    for (std::int64_t i = 0; i < leaf.size(); ++i) {
      const T saved = leaf.data()[i];
      leaf.data()[i] = saved + eps;
      const T up = loss_fn().item();
      leaf.data()[i] = saved - eps;
      const T down = loss_fn().item();
      leaf.data()[i] = saved;
      const T numeric = (up - down) / (2 * eps);
      const T a = analytic[li][static_cast<size_t>(i)];
      const T abs_err = std::abs(a - numeric);
      const T rel = abs_err / std::max({T(1), std::abs(a), std::abs(numeric)});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = "leaf " + std::to_string(li) + " elem " + std::to_string(i);
      }
    }
  }
  return report;
}

}  // namespace cresnet
