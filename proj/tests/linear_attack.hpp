#pragma once

// Random two-class linear classifiers and the analytic check of the attack
// against the distance to their decision hyperplane.

#include <cmath>

#include "blindspot/adversary.hpp"
#include "blindspot/network.hpp"
#include "generators.hpp"
#include "oracles.hpp"

namespace linear_attack {

using namespace blindspot;

struct Case {
  double analytic = 0.0;
  double returned = 0.0;
  bool achieved = false;
  double relative_error() const { return std::abs(returned - analytic) / analytic; }
};

inline Case run(std::uint64_t seed) {
  RngStream rng(seed);
  const auto n = static_cast<Eigen::Index>(gen::random_dim(rng, 2, 50));
  const std::size_t dims[] = {static_cast<std::size_t>(n), 2};
  const LayerKind kinds[] = {LayerKind::softmax};
  const double lambdas[] = {0.0};
  Network net = make_network("linear", dims, kinds, lambdas, rng.next_u64());
  net.layers[0].weights = gen::random_matrix(rng, 2, n);
  net.layers[0].biases = gen::random_vector(rng, 2, -0.5, 0.5);
  const Vector x = gen::random_vector(rng, n, -1.0, 1.0);

  const Label pred = predict(net, x);
  const Label target = 1 - pred;
  const Vector w = net.layers[0].weights.row(target) - net.layers[0].weights.row(pred);
  const double b = net.layers[0].biases(target) - net.layers[0].biases(pred);

  AttackConfig cfg;
  const auto res = minimal_perturbation_at(net, 0, x, target, cfg, Bounds::unbounded());
  Case c;
  c.analytic = oracle::hyperplane_distance(w, b, x);
  c.returned = res.r.norm();
  c.achieved = res.achieved && predict(net, res.perturbed) == target;
  return c;
}

}  // namespace linear_attack
