#pragma once

// Central finite-difference oracle for gradient tests. Lives in test code
// only; it never reuses the tape's backward path it is checking.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tslc/ops.hpp"
#include "tslc/tape.hpp"
#include "tslc/tensor.hpp"

namespace gradcheck {

using tslc::Tape;
using tslc::Tensor;

// Scalar loss from an arbitrary op output: sum of c .* y with fixed random c,
// expressed as [1,N] x [N,1] so it runs through the ops under test minimally.
inline Tensor weighted_sum(Tape& tape, const Tensor& y, const Tensor& coeffs) {
  Tensor flat = y.reshaped({1, y.numel()});
  return tslc::ops::matmul(tape, flat, coeffs);
}

struct Result {
  double rel_err = 0.0;
  std::string detail;
};

/// Compares tape gradients of `loss_fn` against central differences with
/// step `eps` for every tensor in `inputs`. rel_err is the max abs deviation
/// normalized by the largest gradient magnitude seen.
inline Result check(const std::function<Tensor(Tape&)>& loss_fn, std::vector<Tensor> inputs,
                    double eps = 1e-3) {
  Tape tape;
  for (auto& t : inputs) t.zero_grad();
  Tensor loss = loss_fn(tape);
  tslc::backward(tape, loss);

  Result res;
  double scale = 1e-6;
  std::vector<std::vector<double>> numeric(inputs.size());
  Tape off = Tape::disabled();
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto data = inputs[ti].f32();
    numeric[ti].resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float keep = data[i];
      data[i] = keep + static_cast<float>(eps);
      const double up = loss_fn(off).item();
      data[i] = keep - static_cast<float>(eps);
      const double dn = loss_fn(off).item();
      data[i] = keep;
      numeric[ti][i] = (up - dn) / (2.0 * eps);
      scale = std::max({scale, std::abs(numeric[ti][i]),
                        std::abs(static_cast<double>(inputs[ti].grad()[i]))});
    }
  }
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto g = inputs[ti].grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double err = std::abs(static_cast<double>(g[i]) - numeric[ti][i]) / scale;
      if (err > res.rel_err) {
        res.rel_err = err;
        res.detail = "input " + std::to_string(ti) + " elem " + std::to_string(i) +
                     ": analytic " + std::to_string(g[i]) + " numeric " +
                     std::to_string(numeric[ti][i]);
      }
    }
  }
  return res;
}

}  // namespace gradcheck
