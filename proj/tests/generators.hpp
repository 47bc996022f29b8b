#pragma once

// Seeded random inputs for the property tests.

#include <cstdint>
#include <vector>

#include "blindspot/dataio.hpp"
#include "blindspot/network.hpp"
#include "blindspot/rng.hpp"
#include "blindspot/spectral.hpp"

namespace gen {

using namespace blindspot;

inline Matrix random_matrix(RngStream& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  }
  return m;
}

inline Vector random_vector(RngStream& rng, Eigen::Index n, double lo = 0.0, double hi = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.uniform(lo, hi);
  return v;
}

inline std::size_t random_dim(RngStream& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

// 1 to max_layers affine layers with dims in [2, max_dim]; hidden layers pick
// sigmoid, relu or linear, the last layer is softmax. Biases and lambdas are
// random so every term of the loss is exercised.
inline Network random_classifier(std::uint64_t seed, std::size_t max_layers = 3, std::size_t max_dim = 64) {
  RngStream rng(seed);
  const std::size_t n_layers = random_dim(rng, 1, max_layers);
  std::vector<std::size_t> dims{random_dim(rng, 2, max_dim)};
  std::vector<LayerKind> kinds;
  std::vector<double> lambdas;
  for (std::size_t k = 0; k < n_layers; ++k) {
    dims.push_back(k + 1 == n_layers ? random_dim(rng, 2, 10) : random_dim(rng, 2, max_dim));
    if (k + 1 == n_layers) {
      kinds.push_back(LayerKind::softmax);
    } else {
      const LayerKind hidden[] = {LayerKind::sigmoid, LayerKind::relu, LayerKind::linear};
      kinds.push_back(hidden[rng.below(3)]);
    }
    lambdas.push_back(rng.uniform(0.0, 0.1));
  }
  Network net = make_network("random", dims, kinds, lambdas, rng.next_u64());
  for (auto& l : net.layers) {
    for (Eigen::Index i = 0; i < l.biases.size(); ++i) l.biases(i) = rng.uniform(-0.5, 0.5);
  }
  return net;
}

inline ConvLayerSpec random_conv(RngStream& rng, std::size_t c, std::size_t d, std::size_t n,
                                 std::size_t stride) {
  ConvLayerSpec conv;
  conv.in_features = c;
  conv.out_features = d;
  conv.kernel_size = n;
  conv.stride = stride;
  for (std::size_t i = 0; i < c * d; ++i) {
    conv.kernels.push_back(random_matrix(rng, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
  }
  return conv;
}

// Labelled points in [0,1]^dim, labels uniformly in [0, classes).
inline LabeledDataset random_dataset(std::uint64_t seed, std::size_t count, std::size_t width,
                                     std::size_t height, int classes) {
  RngStream rng(seed);
  Matrix px(static_cast<Eigen::Index>(width * height), static_cast<Eigen::Index>(count));
  std::vector<Label> labels;
  for (std::size_t j = 0; j < count; ++j) {
    px.col(static_cast<Eigen::Index>(j)) = random_vector(rng, px.rows());
    labels.push_back(static_cast<Label>(rng.below(static_cast<std::uint64_t>(classes))));
  }
  return LabeledDataset("random", width, height, std::move(px), std::move(labels), classes);
}

}  // namespace gen
