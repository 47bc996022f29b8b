#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "blindspot/dataio.hpp"
#include "blindspot/network.hpp"
#include "blindspot/rng.hpp"

namespace blindspot {

// Convolution with C input features, D output features, N x N kernels and
// spatial stride. kernels[c * D + d] is w_{c,d}, indexed (row, col).
struct ConvLayerSpec {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::size_t kernel_size = 0;
  std::size_t stride = 1;
  std::vector<Matrix> kernels;

  const Matrix& kernel(std::size_t c, std::size_t d) const { return kernels[c * out_features + d]; }
  void validate() const;
};

// x / (epsilon + ||x||^2)^gamma.
struct ContrastNormSpec {
  double epsilon = 1.0;
  double gamma = 0.5;
};

struct MaxPoolSpec {};
struct ReluSpec {};

using SpectralLayer = std::variant<LayerSpec, ConvLayerSpec, MaxPoolSpec, ReluSpec, ContrastNormSpec>;

enum class SigmoidBoundMode {
  // ||W||, the operator norm alone.
  plain,
  // ||W|| scaled by the activation's derivative bound: 1/4 for sigmoid and
  // 1/2 for softmax.
  tightened,
};

struct FcBound {
  double operator_norm = 0.0;
  double tightened = 0.0;
  double used = 0.0;
};

FcBound fc_bound(const LayerSpec& layer, SigmoidBoundMode mode = SigmoidBoundMode::tightened,
                 double tol = 1e-10);

struct ConvBound {
  double bound = 0.0;
  // Maximizing frequency sample, in grid units over the fundamental domain.
  std::size_t argmax_row = 0;
  std::size_t argmax_col = 0;
};

// Operator norm of a strided convolution from the per-frequency matrices:
// with S = grid_points * stride, B(j) is the D x (C * stride^2) matrix whose
// entries are the S-point DFTs of w_{c,d} at the aliased frequencies
// j + l * grid_points, l in [0, stride)^2, and the bound is
// max_j ||B(j)|| / stride over the grid_points^2 samples j. This is exact for
// circular S x S inputs.
ConvBound conv_bound(const ConvLayerSpec& layer, std::size_t grid_points = 64, double tol = 1e-10);

enum class ContractiveKind { max_pool, relu, contrast_norm };

double contractive_bound(ContractiveKind kind, const ContrastNormSpec& spec = {});

struct SpectralEntry {
  std::string name;
  std::string kind;
  std::string size;
  std::string stride;
  double bound = 0.0;
  // Operator norm before activation tightening (equal to bound otherwise).
  double operator_norm = 0.0;
};

struct SpectralReport {
  std::vector<SpectralEntry> entries;
  double product = 1.0;

  // Columns: Layer, Size, Stride, Upper bound.
  CsvWriter table() const;
};

SpectralReport network_bound(const std::vector<SpectralLayer>& layers, std::size_t grid_points = 64,
                             SigmoidBoundMode mode = SigmoidBoundMode::tightened);
SpectralReport network_bound(const Network& net, SigmoidBoundMode mode = SigmoidBoundMode::tightened);

// Largest observed ||phi(x) - phi(x')|| / ||x' - x|| over random x in [0,1]^m
// and x' = x + r with ||r|| log-uniform in [1e-4, 1e-1].
double empirical_lipschitz_probe(const Network& net, std::size_t samples, RngStream& rng);

// Layer-list document: {"name": str, "layers": [...]} where each layer is a
// model-schema affine layer or one of
//   {"kind": "conv", "in_features", "out_features", "kernel_size", "stride",
//    "kernels": [[N*N row-major values] x (C*D), index c*D + d]}
//   {"kind": "max_pool"}, {"kind": "relu"},
//   {"kind": "contrast_norm", "epsilon", "gamma"}.
std::vector<SpectralLayer> spectral_layers_from_json(const nlohmann::json& doc);
std::vector<SpectralLayer> load_spectral_layers(const std::filesystem::path& path);
std::vector<SpectralLayer> spectral_layers(const Network& net);

}  // namespace blindspot
