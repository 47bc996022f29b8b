#include "blindspot/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "blindspot/error.hpp"
#include "blindspot/lbfgs.hpp"

namespace blindspot {

std::string_view target_policy_name(TargetPolicy p) noexcept {
  switch (p) {
    case TargetPolicy::second_most_probable:
      return "second_most_probable";
    case TargetPolicy::least_probable:
      return "least_probable";
    case TargetPolicy::fixed:
      return "fixed";
    case TargetPolicy::cycle_all:
      return "cycle_all";
  }
  return "second_most_probable";
}

TargetPolicy parse_target_policy(std::string_view name) {
  if (name == "second_most_probable") return TargetPolicy::second_most_probable;
  if (name == "least_probable") return TargetPolicy::least_probable;
  if (name == "fixed") return TargetPolicy::fixed;
  if (name == "cycle_all") return TargetPolicy::cycle_all;
  throw InvalidInput("unknown target policy '" + std::string(name) + "'");
}

void AttackConfig::validate() const {
  if (!(c_init > 0.0)) throw InvalidInput("attack: c_init must be positive");
  if (!(c_growth > 1.0)) throw InvalidInput("attack: c_growth must exceed 1");
  if (bisection_steps < 0) throw InvalidInput("attack: bisection_steps must be non-negative");
  if (inner_iterations < 1) throw InvalidInput("attack: inner_iterations must be positive");
  if (max_growth_steps < 1) throw InvalidInput("attack: max_growth_steps must be positive");
}

namespace {

// Classes ordered by decreasing probability, ties to the lower index.
std::vector<Label> rank_classes(const Vector& p) {
  std::vector<Label> order(static_cast<std::size_t>(p.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Label a, Label b) { return p(a) > p(b); });
  return order;
}

}  // namespace

Label choose_target(const Vector& probabilities, TargetPolicy policy, Label fixed_target) {
  if (probabilities.size() < 2) throw InvalidInput("choose_target: need at least two classes");
  const auto order = rank_classes(probabilities);
  switch (policy) {
    case TargetPolicy::second_most_probable:
    case TargetPolicy::cycle_all:
      return order[1];
    case TargetPolicy::least_probable:
      return order.back();
    case TargetPolicy::fixed:
      if (fixed_target < 0 || fixed_target >= probabilities.size()) {
        throw InvalidInput("choose_target: fixed target outside class range");
      }
      return fixed_target;
  }
  return order[1];
}

namespace {

struct InnerSolution {
  Vector z;
  bool reached = false;
  bool failed = false;
  int iterations = 0;
};

InnerSolution solve_inner(const Network& net, std::size_t first_layer, const Vector& h, Label l,
                          double c, const LbfgsOptions& base) {
  const Objective objective = [&](const Vector& z, Vector& grad) {
    const auto ce = cross_entropy_input_gradient(net, first_layer, z, l);
    const Vector r = z - h;
    grad = 2.0 * c * r + ce.gradient;
    return c * r.squaredNorm() + ce.loss;
  };
  InnerSolution out;
  try {
    auto res = minimize_lbfgs(objective, h, base);
    out.z = std::move(res.x);
    out.iterations = res.iterations;
  } catch (const DivergenceError&) {
    out.z = h;
    out.failed = true;
    return out;
  }
  if (!out.z.allFinite()) {
    out.z = h;
    out.failed = true;
    return out;
  }
  out.reached = argmax(forward_from(net, first_layer, out.z)) == l;
  return out;
}

}  // namespace

PerturbationResult minimal_perturbation_at(const Network& net, std::size_t first_layer,
                                           const Vector& h, Label l, const AttackConfig& cfg,
                                           const Bounds& bounds) {
  cfg.validate();
  if (!net.is_classifier()) throw InvalidInput("attack: classifier network required");
  if (l < 0 || static_cast<std::size_t>(l) >= net.output_dim()) {
    throw InvalidInput("attack: target label outside class range");
  }
  PerturbationResult out;
  out.target = l;
  out.perturbed = h;
  out.r = Vector::Zero(h.size());

  if (argmax(forward_from(net, first_layer, h)) == l) {
    out.achieved = true;
    return out;
  }

  LbfgsOptions opts;
  opts.max_iterations = cfg.inner_iterations;
  opts.grad_tol = cfg.inner_grad_tol;
  if (bounds.lower) opts.lower = Vector::Constant(h.size(), *bounds.lower);
  if (bounds.upper) opts.upper = Vector::Constant(h.size(), *bounds.upper);

  double best_distortion = std::numeric_limits<double>::infinity();
  int failures = 0;
  auto try_c = [&](double c) {
    auto sol = solve_inner(net, first_layer, h, l, c, opts);
    out.inner_iters_used += sol.iterations;
    ++out.inner_solves;
    if (sol.failed) {
      ++failures;
      return false;
    }
    if (sol.reached) {
      const double d = distortion(h, sol.z);
      if (d < best_distortion) {
        best_distortion = d;
        out.perturbed = sol.z;
        out.c_final = c;
        out.achieved = true;
      }
    }
    return sol.reached;
  };

  // Bracket [feasible_c, infeasible_c]: larger c means a stronger pull
  // towards r = 0, so feasibility is lost as c grows.
  double c = cfg.c_init;
  double feasible_c = 0.0;
  double infeasible_c = 0.0;
  bool bracketed = false;
  if (try_c(c)) {
    feasible_c = c;
    for (int step = 0; step < cfg.max_growth_steps; ++step) {
      c *= cfg.c_growth;
      if (!try_c(c)) {
        infeasible_c = c;
        bracketed = true;
        break;
      }
      feasible_c = c;
    }
  } else {
    infeasible_c = c;
    for (int step = 0; step < cfg.max_growth_steps; ++step) {
      c /= cfg.c_growth;
      if (try_c(c)) {
        feasible_c = c;
        bracketed = true;
        break;
      }
      infeasible_c = c;
    }
  }

  if (bracketed) {
    for (int step = 0; step < cfg.bisection_steps; ++step) {
      const double mid = std::sqrt(feasible_c * infeasible_c);
      if (try_c(mid)) {
        feasible_c = mid;
      } else {
        infeasible_c = mid;
      }
    }
  }

  if (!out.achieved) {
    out.diagnostics = "no c in [" + format_number(c) + ", " + format_number(cfg.c_init) +
                      "] reached the target";
    if (failures > 0) out.diagnostics += "; " + std::to_string(failures) + " inner solves failed";
    out.perturbed = h;
  } else if (failures > 0) {
    out.diagnostics = std::to_string(failures) + " inner solves failed";
  }
  out.r = out.perturbed - h;
  out.distortion = distortion(h, out.perturbed);
  return out;
}

AdversarialResult minimal_perturbation(const Network& net, const Image& x, Label l,
                                       const AttackConfig& cfg) {
  const auto pr = minimal_perturbation_at(net, 0, x.pixels, l, cfg, Bounds::unit());
  AdversarialResult out;
  out.original = x;
  out.perturbed = Image{x.width, x.height, pr.perturbed};
  out.r = pr.r;
  out.original_label = predict(net, x);
  out.target = pr.target;
  out.achieved = pr.achieved;
  out.c_final = pr.c_final;
  out.distortion = pr.distortion;
  out.inner_iters_used = pr.inner_iters_used;
  out.diagnostics = pr.diagnostics;
  return out;
}

AdversarialResult attack(const Network& net, const Image& x, Label true_label,
                         const AttackConfig& cfg) {
  const Vector probs = forward(net, x).output();
  std::vector<Label> targets;
  if (cfg.target_policy == TargetPolicy::cycle_all) {
    const auto order = rank_classes(probs);
    targets.assign(order.begin() + 1, order.end());
  } else {
    targets.push_back(choose_target(probs, cfg.target_policy, cfg.fixed_target));
  }
  AdversarialResult res;
  int total_iters = 0;
  for (Label t : targets) {
    res = minimal_perturbation(net, x, t, cfg);
    total_iters += res.inner_iters_used;
    if (res.achieved) break;
  }
  res.inner_iters_used = total_iters;
  res.original_label = true_label;
  return res;
}

double distortion(const Vector& x, const Vector& x2) {
  if (x.size() != x2.size()) throw InvalidInput("distortion: dimension mismatch");
  if (x.size() == 0) throw InvalidInput("distortion: empty vectors");
  return std::sqrt((x2 - x).squaredNorm() / static_cast<double>(x.size()));
}

double distortion(const Image& x, const Image& x2) {
  if (x.width != x2.width || x.height != x2.height) {
    throw InvalidInput("distortion: image dimensions differ");
  }
  return distortion(x.pixels, x2.pixels);
}

Vector amplify_unclamped(const Vector& x, const Vector& x2, double target_stddev,
                         AmplifyMode mode) {
  if (x.size() != x2.size()) throw InvalidInput("amplify: dimension mismatch");
  if (!(target_stddev >= 0.0)) throw InvalidInput("amplify: target must be non-negative");
  const Vector d = x2 - x;
  const double norm = d.norm();
  if (norm == 0.0) throw InvalidInput("amplify: images are identical");
  const double scale = mode == AmplifyMode::rms
                           ? target_stddev * std::sqrt(static_cast<double>(x.size())) / norm
                           : target_stddev / norm;
  return x + scale * d;
}

Image amplify(const Image& x, const Image& x2, double target_stddev, AmplifyMode mode) {
  if (x.width != x2.width || x.height != x2.height) {
    throw InvalidInput("amplify: image dimensions differ");
  }
  Vector v = amplify_unclamped(x.pixels, x2.pixels, target_stddev, mode);
  return Image{x.width, x.height, v.cwiseMax(0.0).cwiseMin(1.0)};
}

Image gaussian_baseline(const Image& x, double stddev, RngStream& rng) {
  const Vector noise = gaussian(rng, static_cast<std::size_t>(x.pixels.size()), stddev);
  return Image{x.width, x.height, (x.pixels + noise).cwiseMax(0.0).cwiseMin(1.0)};
}

}  // namespace blindspot
