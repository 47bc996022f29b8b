#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "blindspot/dataio.hpp"
#include "blindspot/network.hpp"
#include "blindspot/rng.hpp"

namespace blindspot {

enum class TargetPolicy { second_most_probable, least_probable, fixed, cycle_all };

std::string_view target_policy_name(TargetPolicy p) noexcept;
TargetPolicy parse_target_policy(std::string_view name);

struct AttackConfig {
  TargetPolicy target_policy = TargetPolicy::second_most_probable;
  Label fixed_target = 0;
  double c_init = 0.01;
  double c_growth = 10.0;
  int bisection_steps = 20;
  int inner_iterations = 500;
  // Growth (or shrink) steps allowed while bracketing c.
  int max_growth_steps = 50;
  double inner_grad_tol = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
};

// Allowed range of the perturbed vector; pixels use [0, 1].
struct Bounds {
  std::optional<double> lower = 0.0;
  std::optional<double> upper = 1.0;

  static Bounds unit() { return {}; }
  static Bounds unbounded() { return {std::nullopt, std::nullopt}; }
};

// Outcome of a search in the activation space feeding some layer.
struct PerturbationResult {
  Vector perturbed;
  Vector r;
  Label target = 0;
  bool achieved = false;
  double c_final = 0.0;
  double distortion = 0.0;
  int inner_iters_used = 0;
  int inner_solves = 0;
  std::string diagnostics;
};

struct AdversarialResult {
  Image original;
  Image perturbed;
  Vector r;
  Label original_label = 0;  // label of the source example (true label when known)
  Label target = 0;
  bool achieved = false;
  double c_final = 0.0;
  double distortion = 0.0;
  int inner_iters_used = 0;
  std::string diagnostics;
};

// Target label for a prediction vector under a policy. cycle_all starts from
// the second most probable class.
Label choose_target(const Vector& probabilities, TargetPolicy policy, Label fixed_target = 0);

// Penalty-method approximation of the closest point to h (in L2) that the
// sub-network starting at first_layer assigns label l. The outer search grows
// c from c_init by c_growth until the inner minimizer no longer reaches l (or
// shrinks it until it does), then bisects geometrically; the inner problem
// minimizes c * ||r||^2 + CE(h + r, l) by projected L-BFGS over the bounds.
// The smallest-distortion feasible point found is returned.
PerturbationResult minimal_perturbation_at(const Network& net, std::size_t first_layer,
                                           const Vector& h, Label l, const AttackConfig& cfg,
                                           const Bounds& bounds);

// Pixel-space search with the [0, 1] box. If l already equals the
// prediction, r = 0 is returned immediately.
AdversarialResult minimal_perturbation(const Network& net, const Image& x, Label l,
                                       const AttackConfig& cfg);

// Attack using cfg.target_policy. Under cycle_all every other class is tried
// in decreasing order of probability until one is reached.
AdversarialResult attack(const Network& net, const Image& x, Label true_label,
                         const AttackConfig& cfg);

// sqrt(sum (x2_i - x_i)^2 / n).
double distortion(const Vector& x, const Vector& x2);
double distortion(const Image& x, const Image& x2);

enum class AmplifyMode {
  // x + s * sqrt(n) * d / ||d||: the distortion metric of the result is s.
  rms,
  // x + s * d / ||d||: the L2 norm of the step is s.
  literal,
};

// Moves x2 along its difference from x to the requested distortion and
// clamps the result into [0, 1].
Image amplify(const Image& x, const Image& x2, double target_stddev,
              AmplifyMode mode = AmplifyMode::rms);
// Same, without the clamp; used to check the scaling identity.
Vector amplify_unclamped(const Vector& x, const Vector& x2, double target_stddev,
                         AmplifyMode mode = AmplifyMode::rms);

// clamp(x + N(0, stddev^2) noise, [0, 1]).
Image gaussian_baseline(const Image& x, double stddev, RngStream& rng);

}  // namespace blindspot
