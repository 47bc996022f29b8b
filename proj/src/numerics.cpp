#include "blindspot/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "blindspot/error.hpp"

namespace blindspot {

namespace {

template <typename Mat>
bool finite_entries(const Mat& m) {
  return m.allFinite();
}

template <typename Mat, typename Vec>
double power_iteration_from(const Mat& m, Vec v, const PowerIterationOptions& opts) {
  const bool use_right = m.cols() <= m.rows();
  auto apply_gram = [&](const Vec& x) -> Vec {
    if (use_right) return m.adjoint() * (m * x);
    return m * (m.adjoint() * x);
  };

  double sigma = 0.0;
  for (int it = 0; it < opts.max_iterations; ++it) {
    Vec w = apply_gram(v);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    // Rayleigh quotient of the Gram matrix at the current unit vector.
    const double rayleigh = std::abs(v.dot(w));
    const double next = std::sqrt(rayleigh);
    v = w / norm;
    if (it > 0 && std::abs(next - sigma) <= opts.tol * next) return next;
    sigma = next;
  }
  throw ConvergenceError("largest_singular_value: no convergence in " +
                             std::to_string(opts.max_iterations) + " iterations",
                         sigma);
}

template <typename Mat>
double largest_singular_value_impl(const Mat& m, const PowerIterationOptions& opts) {
  using Vec = Eigen::Matrix<typename Mat::Scalar, Eigen::Dynamic, 1>;
  if (m.size() == 0) throw InvalidInput("largest_singular_value: empty matrix");
  if (!(opts.tol > 0.0)) throw InvalidInput("largest_singular_value: tol must be positive");
  if (!finite_entries(m)) throw InvalidInput("largest_singular_value: non-finite entries");

  const Eigen::Index n = std::min(m.rows(), m.cols());
  Vec ones = Vec::Ones(n) / std::sqrt(static_cast<double>(n));
  double best = power_iteration_from(m, ones, opts);

  // A second, fixed pseudo-random start covers matrices whose dominant
  // singular vector is orthogonal to the all-ones vector.
  RngStream rng(0x5EED5EEDULL);
  Vec scrambled(n);
  for (Eigen::Index i = 0; i < n; ++i) scrambled(i) = rng.uniform(0.5, 1.5);
  scrambled.normalize();
  best = std::max(best, power_iteration_from(m, scrambled, opts));
  return best;
}

}  // namespace

double largest_singular_value(const Matrix& m, double tol) {
  return largest_singular_value_impl(m, PowerIterationOptions{tol, 10000});
}

double largest_singular_value(const ComplexMatrix& m, double tol) {
  return largest_singular_value_impl(m, PowerIterationOptions{tol, 10000});
}

double largest_singular_value(const Matrix& m, const PowerIterationOptions& opts) {
  return largest_singular_value_impl(m, opts);
}

double largest_singular_value(const ComplexMatrix& m, const PowerIterationOptions& opts) {
  return largest_singular_value_impl(m, opts);
}

ComplexGrid dft2(const Matrix& kernel, std::size_t out_height, std::size_t out_width) {
  if (out_height == 0 || out_width == 0 || kernel.size() == 0) {
    throw InvalidInput("dft2: zero-sized kernel or frequency grid");
  }
  if (static_cast<std::size_t>(kernel.rows()) > out_height ||
      static_cast<std::size_t>(kernel.cols()) > out_width) {
    throw InvalidInput("dft2: kernel larger than frequency grid");
  }
  if (!kernel.allFinite()) throw InvalidInput("dft2: non-finite kernel entries");

  const auto H = static_cast<Eigen::Index>(out_height);
  const auto W = static_cast<Eigen::Index>(out_width);
  const double two_pi = 2.0 * std::numbers::pi;

  // Separable evaluation: first along the kernel columns, then the rows.
  // Phases use (u * k mod n) so arguments stay in [0, 2 pi).
  ComplexMatrix col_phase(kernel.cols(), W);
  for (Eigen::Index u = 0; u < kernel.cols(); ++u) {
    for (Eigen::Index k = 0; k < W; ++k) {
      const double angle = -two_pi * static_cast<double>((u * k) % W) / static_cast<double>(W);
      col_phase(u, k) = std::polar(1.0, angle);
    }
  }
  ComplexMatrix row_phase(H, kernel.rows());
  for (Eigen::Index k = 0; k < H; ++k) {
    for (Eigen::Index u = 0; u < kernel.rows(); ++u) {
      const double angle = -two_pi * static_cast<double>((u * k) % H) / static_cast<double>(H);
      row_phase(k, u) = std::polar(1.0, angle);
    }
  }
  return row_phase * (kernel.cast<std::complex<double>>() * col_phase);
}

Vector gaussian(RngStream& rng, std::size_t n, double stddev) {
  if (!(stddev >= 0.0)) throw InvalidInput("gaussian: stddev must be non-negative");
  Vector out(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = stddev * rng.normal();
  return out;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace blindspot
