#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "g2s/autodiff.hpp"
#include "g2s/ops.hpp"

namespace g2s {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;  // "input#i[j]" of the worst coordinate
  int64_t coords_checked = 0;
  bool finite = true;

  bool ok(double tol) const { return finite && max_rel_err < tol; }
};

// Central-difference check of a scalar-valued tensor function against the
// tape gradients. `f` must be deterministic (fix dropout seeds or use p=0).
// Relative error per coordinate: |a - fd| / max(1, |a|, |fd|), so near-zero
// gradients are compared absolutely.
template <typename T>
GradCheckReport grad_check(const std::function<Variable<T>(std::vector<Variable<T>>&)>& f,
                           std::vector<Variable<T>> inputs, T eps = T(1e-5),
                           int64_t max_coords_per_input = 0, uint64_t subsample_seed = 17) {
  GradCheckReport rep;
  // analytic gradients
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    Variable<T> loss = f(inputs);
    for (auto& v : inputs) v.zero_grad();
    tape.backward(loss);
    if (!loss.value().all_finite()) {
      rep.finite = false;
      rep.worst = "loss is non-finite";
      return rep;
    }
  }
  auto eval = [&]() -> T {
    Variable<T> out = f(inputs);
    return out.value().item();
  };
  for (size_t i = 0; i < inputs.size(); ++i) {
    auto& v = inputs[i];
    if (!v.requires_grad()) continue;
    int64_t n = v.numel();
    std::vector<int64_t> coords;
    if (max_coords_per_input > 0 && n > max_coords_per_input) {
      Rng rng(sub_seed(subsample_seed, "gradcheck", uint64_t(i)));
      for (int64_t c = 0; c < max_coords_per_input; ++c)
        coords.push_back(int64_t(rng.next_below(uint64_t(n))));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    } else {
      coords.resize(size_t(n));
      for (int64_t c = 0; c < n; ++c) coords[size_t(c)] = c;
    }
    for (int64_t c : coords) {
      T saved = v.value()[c];
      v.value()[c] = saved + eps;
      T up = eval();
      v.value()[c] = saved - eps;
      T down = eval();
      v.value()[c] = saved;
      T fd = (up - down) / (T(2) * eps);
      T an = v.has_grad() ? v.grad()[c] : T(0);
      if (!std::isfinite(double(fd)) || !std::isfinite(double(an))) {
        rep.finite = false;
        rep.worst = "input#" + std::to_string(i) + "[" + std::to_string(c) + "] non-finite";
        return rep;
      }
      double denom = std::max({1.0, std::abs(double(an)), std::abs(double(fd))});
      double err = std::abs(double(an) - double(fd)) / denom;
      ++rep.coords_checked;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst = "input#" + std::to_string(i) + "[" + std::to_string(c) + "]";
      }
    }
  }
  return rep;
}

}  // namespace g2s
