#pragma once

#include <complex>
#include <cstddef>

#include <Eigen/Dense>

#include "blindspot/rng.hpp"

namespace blindspot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;
// Frequency-domain samples; rows index the first (vertical) frequency.
using ComplexGrid = Eigen::MatrixXcd;

struct PowerIterationOptions {
  double tol = 1e-10;
  int max_iterations = 10000;
};

// Largest singular value by power iteration on the Gram matrix of the smaller
// side, started from the normalized all-ones vector. Throws InvalidInput for
// empty or non-finite input and ConvergenceError (carrying the last estimate)
// if the relative change never drops below tol.
double largest_singular_value(const Matrix& m, double tol = 1e-10);
double largest_singular_value(const ComplexMatrix& m, double tol = 1e-10);
double largest_singular_value(const Matrix& m, const PowerIterationOptions& opts);
double largest_singular_value(const ComplexMatrix& m, const PowerIterationOptions& opts);

// 2-D DFT of a real kernel zero-padded to out_height x out_width:
//   out(k1, k2) = sum_{u1,u2} kernel(u1, u2) exp(-2 pi i (u1 k1 / H + u2 k2 / W)).
// Direct summation; kernels are small.
ComplexGrid dft2(const Matrix& kernel, std::size_t out_height, std::size_t out_width);

// n i.i.d. N(0, stddev^2) draws.
Vector gaussian(RngStream& rng, std::size_t n, double stddev);

bool all_finite(const Matrix& m);

}  // namespace blindspot
