// Copyright 2026 The DecomposeWHAR Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dwhar/tensor.hpp"

namespace dwhar {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_tensor = 0;  // index into the checked list
  std::size_t worst_index = 0;   // flat index within that tensor
};

/// Compares tape gradients of a scalar objective against central differences
/// for every coordinate of every tensor in `inputs`. `objective` must rebuild
/// the computation from the current contents of `inputs` on each call.
/// Error per coordinate is |analytic - numeric| / max(1, |numeric|).
inline GradCheckResult finite_diff_check(const std::function<Tensor()>& objective,
                                         std::vector<Tensor> inputs, double h = 1e-5) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = objective();
    backward(loss, tape);
  }
  GradCheckResult result;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                     : std::vector<double>(t.size(), 0.0);
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = objective().item();
      values[i] = saved - h;
      const double down = objective().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = ti;
        result.worst_index = i;
      }
      ++result.coordinates;
    }
  }
  for (Tensor& t : inputs) t.zero_grad();
  return result;
}

/// Single-input form: checks d f(x) / dx.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                double h = 1e-5) {
  return finite_diff_check([&]() { return f(x); }, {x}, h).max_rel_error;
}

}  // namespace dwhar
