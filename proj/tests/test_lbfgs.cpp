#include <doctest.h>

#include <cmath>

#include "blindspot/error.hpp"
#include "blindspot/lbfgs.hpp"
#include "generators.hpp"

using namespace blindspot;

namespace {

double rosenbrock(const Vector& x, Vector& g) {
  g = Vector::Zero(x.size());
  double f = 0.0;
  for (Eigen::Index i = 0; i + 1 < x.size(); ++i) {
    const double a = x(i + 1) - x(i) * x(i);
    const double b = 1.0 - x(i);
    f += 100.0 * a * a + b * b;
    g(i) += -400.0 * x(i) * a - 2.0 * b;
    g(i + 1) += 200.0 * a;
  }
  return f;
}

}  // namespace

TEST_CASE("L-BFGS solves random convex quadratics") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngStream rng(seed);
    const auto n = static_cast<Eigen::Index>(gen::random_dim(rng, 2, 40));
    const Matrix a = gen::random_matrix(rng, n, n);
    const Matrix q = a.transpose() * a + Matrix::Identity(n, n);
    const Vector b = gen::random_vector(rng, n, -1.0, 1.0);
    const Objective f = [&](const Vector& x, Vector& g) {
      g = q * x - b;
      return 0.5 * x.dot(q * x) - b.dot(x);
    };
    LbfgsOptions opts;
    opts.grad_tol = 1e-7;
    const auto res = minimize_lbfgs(f, Vector::Zero(n), opts);
    const Vector exact = q.ldlt().solve(b);
    CAPTURE(seed);
    CHECK(res.converged);
    CHECK((res.x - exact).norm() < 1e-6 * (1.0 + exact.norm()));
  }
}

TEST_CASE("L-BFGS minimizes the Rosenbrock function") {
  Vector x0(4);
  x0 << -1.2, 1.0, -1.2, 1.0;
  LbfgsOptions opts;
  opts.grad_tol = 1e-9;
  const auto res = minimize_lbfgs(rosenbrock, x0, opts);
  CHECK(res.converged);
  CHECK((res.x - Vector::Ones(4)).norm() < 1e-5);
}

TEST_CASE("accepted steps never increase the objective") {
  Vector x0(6);
  x0 << -1.2, 1.0, 0.3, -0.5, 2.0, 1.5;
  double last = std::numeric_limits<double>::infinity();
  bool monotone = true;
  minimize_lbfgs(rosenbrock, x0, {}, [&](const LbfgsIterate& it) {
    monotone = monotone && it.value <= last;
    last = it.value;
    return true;
  });
  CHECK(monotone);
}

TEST_CASE("projected L-BFGS respects the box and finds the KKT point") {
  // min ||x - c||^2 over [0, 1]^n has solution clamp(c).
  RngStream rng(12);
  const Vector c = gen::random_vector(rng, 25, -1.0, 2.0);
  const Objective f = [&](const Vector& x, Vector& g) {
    g = 2.0 * (x - c);
    return (x - c).squaredNorm();
  };
  LbfgsOptions opts;
  opts.lower = Vector::Zero(25);
  opts.upper = Vector::Ones(25);
  opts.grad_tol = 1e-10;
  bool inside = true;
  const auto res = minimize_lbfgs(f, Vector::Constant(25, 0.5), opts);
  inside = res.x.minCoeff() >= 0.0 && res.x.maxCoeff() <= 1.0;
  CHECK(inside);
  CHECK((res.x - c.cwiseMax(0.0).cwiseMin(1.0)).norm() < 1e-8);
}

TEST_CASE("iteration cap, early stop and non-finite start") {
  Vector x0(2);
  x0 << -1.2, 1.0;
  LbfgsOptions opts;
  opts.max_iterations = 3;
  const auto capped = minimize_lbfgs(rosenbrock, x0, opts);
  CHECK(capped.iterations == 3);
  CHECK_FALSE(capped.converged);

  int calls = 0;
  const auto stopped = minimize_lbfgs(rosenbrock, x0, {}, [&](const LbfgsIterate&) {
    return ++calls < 2;
  });
  CHECK(stopped.iterations == 2);

  const Objective nan_f = [](const Vector& x, Vector& g) {
    g = Vector::Zero(x.size());
    return std::nan("");
  };
  CHECK_THROWS_AS(minimize_lbfgs(nan_f, x0, {}), DivergenceError);
}
