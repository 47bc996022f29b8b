#pragma once

#include <functional>
#include <optional>
#include <string>

#include "blindspot/numerics.hpp"

namespace blindspot {

// Objective callback: returns f(x) and writes the gradient into grad.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

struct LbfgsOptions {
  int max_iterations = 2000;
  int memory = 10;
  // Stop when ||projected gradient|| <= grad_tol * (1 + |f|).
  double grad_tol = 1e-5;
  double armijo_c1 = 1e-4;
  int max_backtracks = 60;
  // Optional box; when set, iterates are projected after every step and the
  // curvature memory is cleared whenever the projection clips a coordinate.
  std::optional<Vector> lower;
  std::optional<Vector> upper;
};

struct LbfgsIterate {
  int iteration = 0;
  double value = 0.0;
  double grad_norm = 0.0;
};

struct LbfgsResult {
  Vector x;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string stop_reason;
};

// Return false to stop early.
using LbfgsCallback = std::function<bool(const LbfgsIterate&)>;

// Limited-memory BFGS with backtracking Armijo line search (halving).
// Accepted steps never increase f. Throws DivergenceError if f becomes
// non-finite at the starting point.
LbfgsResult minimize_lbfgs(const Objective& objective, Vector x0, const LbfgsOptions& opts,
                           const LbfgsCallback& callback = {});

}  // namespace blindspot
