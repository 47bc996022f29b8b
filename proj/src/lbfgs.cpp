#include "blindspot/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "blindspot/error.hpp"

namespace blindspot {

namespace {

struct CurvaturePair {
  Vector s;
  Vector y;
  double rho;
};

class Box {
 public:
  explicit Box(const LbfgsOptions& opts) : lower_(opts.lower), upper_(opts.upper) {}

  bool bounded() const { return lower_.has_value() || upper_.has_value(); }

  // Projects in place; returns true if any coordinate was clipped.
  bool project(Vector& x) const {
    bool clipped = false;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (lower_ && x(i) < (*lower_)(i)) {
        x(i) = (*lower_)(i);
        clipped = true;
      }
      if (upper_ && x(i) > (*upper_)(i)) {
        x(i) = (*upper_)(i);
        clipped = true;
      }
    }
    return clipped;
  }

  // Coordinates pinned at a bound with the gradient pushing outward.
  std::vector<bool> pinned(const Vector& x, const Vector& g) const {
    std::vector<bool> out(static_cast<std::size_t>(x.size()), false);
    if (!bounded()) return out;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const bool at_lower = lower_ && x(i) <= (*lower_)(i) && g(i) > 0.0;
      const bool at_upper = upper_ && x(i) >= (*upper_)(i) && g(i) < 0.0;
      out[static_cast<std::size_t>(i)] = at_lower || at_upper;
    }
    return out;
  }

 private:
  std::optional<Vector> lower_;
  std::optional<Vector> upper_;
};

void zero_pinned(Vector& v, const std::vector<bool>& pinned) {
  for (std::size_t i = 0; i < pinned.size(); ++i) {
    if (pinned[i]) v(static_cast<Eigen::Index>(i)) = 0.0;
  }
}

Vector two_loop_direction(const Vector& g, const std::deque<CurvaturePair>& memory) {
  Vector q = g;
  std::vector<double> alpha(memory.size());
  for (std::size_t i = memory.size(); i-- > 0;) {
    alpha[i] = memory[i].rho * memory[i].s.dot(q);
    q -= alpha[i] * memory[i].y;
  }
  if (!memory.empty()) {
    const auto& last = memory.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (std::size_t i = 0; i < memory.size(); ++i) {
    const double beta = memory[i].rho * memory[i].y.dot(q);
    q += (alpha[i] - beta) * memory[i].s;
  }
  return -q;
}

}  // namespace

LbfgsResult minimize_lbfgs(const Objective& objective, Vector x0, const LbfgsOptions& opts,
                           const LbfgsCallback& callback) {
  if (opts.memory < 1) throw InvalidInput("lbfgs: memory must be at least 1");
  if (!(opts.grad_tol > 0.0)) throw InvalidInput("lbfgs: grad_tol must be positive");
  const Box box(opts);

  LbfgsResult res;
  Vector x = std::move(x0);
  box.project(x);
  Vector g(x.size());
  double f = objective(x, g);
  ++res.evaluations;
  if (!std::isfinite(f) || !g.allFinite()) {
    throw DivergenceError("lbfgs: non-finite objective at the starting point", 0);
  }

  std::deque<CurvaturePair> memory;
  Vector x_new(x.size());
  Vector g_new(x.size());
  res.stop_reason = "iteration limit";

  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    const auto pinned = box.pinned(x, g);
    Vector pg = g;
    zero_pinned(pg, pinned);
    const double gnorm = pg.norm();
    res.grad_norm = gnorm;
    if (gnorm <= opts.grad_tol * (1.0 + std::abs(f))) {
      res.converged = true;
      res.stop_reason = "gradient tolerance";
      break;
    }

    bool accepted = false;
    bool clipped = false;
    double f_new = f;
    // Up to two attempts: quasi-Newton direction, then steepest descent.
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      if (attempt == 1) {
        if (memory.empty()) break;
        memory.clear();
      }
      Vector d = two_loop_direction(pg, memory);
      zero_pinned(d, pinned);
      double slope = g.dot(d);
      if (!(slope < 0.0)) {
        memory.clear();
        d = -pg;
        slope = g.dot(d);
      }
      double step = memory.empty() ? std::min(1.0, 1.0 / gnorm) : 1.0;
      for (int bt = 0; bt < opts.max_backtracks; ++bt, step *= 0.5) {
        x_new = x + step * d;
        clipped = box.project(x_new);
        f_new = objective(x_new, g_new);
        ++res.evaluations;
        if (!std::isfinite(f_new) || !g_new.allFinite()) continue;
        const double decrease = std::min(0.0, g.dot(x_new - x));
        if (f_new <= f + opts.armijo_c1 * decrease && f_new <= f) {
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) {
      res.stop_reason = "line search failed";
      break;
    }

    Vector s = x_new - x;
    Vector y = g_new - g;
    const double sy = s.dot(y);
    if (clipped) {
      memory.clear();
    } else if (sy > 1e-10 * y.squaredNorm() && sy > 0.0) {
      memory.push_back({std::move(s), std::move(y), 1.0 / sy});
      if (static_cast<int>(memory.size()) > opts.memory) memory.pop_front();
    }
    x.swap(x_new);
    g.swap(g_new);
    f = f_new;

    if (callback) {
      Vector pg_now = g;
      zero_pinned(pg_now, box.pinned(x, g));
      if (!callback({it + 1, f, pg_now.norm()})) {
        ++it;
        res.stop_reason = "stopped by callback";
        break;
      }
    }
  }

  res.iterations = it;
  res.x = std::move(x);
  res.value = f;
  Vector pg = g;
  zero_pinned(pg, box.pinned(res.x, g));
  res.grad_norm = pg.norm();
  return res;
}

}  // namespace blindspot
