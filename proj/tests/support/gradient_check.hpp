#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tslm/numcore.hpp"

namespace tslm::testing {

inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kMaxRelativeError = 1e-4;
// Components smaller than this are compared in absolute terms.
inline constexpr double kRelativeFloor = 1e-6;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kRelativeFloor});
  return std::abs(analytic - numeric) / scale;
}

/// Compares reverse-mode gradients of `loss()` w.r.t. each leaf against
/// central differences (f(x+h) - f(x-h)) / 2h, element by element.
inline GradCheckResult check_gradients(std::vector<std::pair<std::string, Var>> leaves, const std::function<Var()>& loss,
                                       double h = kFiniteDifferenceStep) {
  for (auto& [name, v] : leaves) v.zero_grad();
  loss().backward();
  std::vector<Tensor> analytic;
  for (auto& [name, v] : leaves) {
    analytic.push_back(v.has_grad() ? *v.grad() : Tensor::zeros(v.shape()));
    v.zero_grad();
  }
  GradCheckResult r;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto& [name, v] = leaves[l];
    auto& data = v.mutable_value().data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double up = loss().item();
      data[i] = orig - h;
      const double down = loss().item();
      data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[l][i], numeric);
      ++r.checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic[l][i]) +
                  " numeric=" + std::to_string(numeric);
      }
    }
  }
  return r;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace tslm::testing
