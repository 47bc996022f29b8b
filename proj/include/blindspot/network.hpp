#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "blindspot/dataio.hpp"
#include "blindspot/numerics.hpp"

namespace blindspot {

enum class LayerKind { sigmoid, relu, softmax, linear };

// Serialized names: "affine+sigmoid", "affine+relu", "affine+softmax", "affine-linear".
std::string_view layer_kind_name(LayerKind kind) noexcept;
LayerKind parse_layer_kind(std::string_view name);

// One affine map followed by an elementwise (or softmax) nonlinearity.
struct LayerSpec {
  LayerKind kind = LayerKind::linear;
  Matrix weights;  // out x in
  Vector biases;   // out
  double lambda = 0.0;
  // Frozen layers are evaluated but never updated by the trainer.
  bool frozen = false;

  std::size_t in_dim() const noexcept { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out_dim() const noexcept { return static_cast<std::size_t>(weights.rows()); }
};

struct Network {
  std::string name;
  std::vector<LayerSpec> layers;
  std::map<std::string, double> training_meta;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t num_layers() const noexcept { return layers.size(); }
  // Dimension of the activation feeding layer k (k == num_layers gives the output).
  std::size_t activation_dim(std::size_t k) const;
  bool is_classifier() const noexcept;

  // Throws InvalidInput on empty stacks, mismatched dimensions, negative
  // lambdas, non-finite parameters, or softmax anywhere but the last layer.
  void validate() const;
};

// Post-activation vectors of every layer for one input.
struct ForwardTrace {
  std::vector<Vector> activations;

  const Vector& output() const { return activations.back(); }
};

// Glorot-uniform weights, zero biases. Layer k draws from RngStream(seed).fork(k).
Network make_network(std::string name, std::span<const std::size_t> dims,
                     std::span<const LayerKind> kinds, std::span<const double> lambdas,
                     std::uint64_t seed);

ForwardTrace forward(const Network& net, const Vector& x);
ForwardTrace forward(const Network& net, const Image& x);
// Evaluates layers [first_layer, end) on the activation h of layer first_layer.
Vector forward_from(const Network& net, std::size_t first_layer, const Vector& h);

// Batch evaluation; columns are examples. Returns the final layer output.
Matrix forward_batch(const Network& net, const Eigen::Ref<const Matrix>& inputs,
                     std::size_t first_layer = 0);
// Activation of layer `upto` (0 = inputs) for every column.
Matrix activations_at(const Network& net, const Eigen::Ref<const Matrix>& inputs,
                      std::size_t upto);

// Argmax of the output with ties going to the lowest index.
Label argmax(const Vector& v);
Label predict(const Network& net, const Vector& x);
Label predict(const Network& net, const Image& x);
std::vector<Label> predict_batch(const Network& net, const Eigen::Ref<const Matrix>& inputs,
                                 std::size_t first_layer = 0);
// Fraction of examples whose prediction differs from the label.
double error_rate(const Network& net, const LabeledDataset& data);

inline constexpr double kProbabilityFloor = 1e-30;

// Cross-entropy -log max(p_y, 1e-30) without the decay term.
double cross_entropy(const Vector& probabilities, Label y);
// Sum over layers of lambda_k * sum(W_k^2) / units_k; biases excluded.
double decay_penalty(const Network& net, bool trainable_only = false);
// Cross-entropy plus weight decay.
double loss(const Network& net, const Image& x, Label y);
double loss(const Network& net, const Vector& x, Label y);

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static Gradients zeros_like(const Network& net);
};

struct LabeledExample {
  Image image;
  Label label = 0;
};

// Mean gradient of the total loss (cross-entropy plus decay) over the batch.
Gradients param_gradient(const Network& net, std::span<const LabeledExample> batch);
Gradients param_gradient(const Network& net, const Eigen::Ref<const Matrix>& inputs,
                         std::span<const Label> labels);

// Adds scale * sum_i d CE(x_i, y_i) / d theta for layers >= first_layer into
// grads and returns scale * sum_i CE(x_i, y_i). Inputs are activations of
// layer first_layer. Decay is not included.
double accumulate_cross_entropy_gradient(const Network& net, std::size_t first_layer,
                                         const Eigen::Ref<const Matrix>& inputs,
                                         std::span<const Label> labels, double scale,
                                         Gradients& grads);

// Adds the gradient of decay_penalty into grads.
void accumulate_decay_gradient(const Network& net, Gradients& grads, bool trainable_only);

struct InputGradient {
  double loss = 0.0;  // cross-entropy at the target
  Vector gradient;
  Vector probabilities;
};

// Cross-entropy at target l and its gradient with respect to the activation
// h feeding layer first_layer (the input pixels when first_layer == 0).
InputGradient cross_entropy_input_gradient(const Network& net, std::size_t first_layer,
                                           const Vector& h, Label l);
Vector input_gradient(const Network& net, const Image& x, Label l);
Vector input_gradient(const Network& net, const Vector& x, Label l);

// Flat views over the trainable parameters of layers >= first_layer,
// ordered layer by layer as (weights column-major, biases).
std::size_t trainable_parameter_count(const Network& net, std::size_t first_layer = 0);
Vector pack_parameters(const Network& net, std::size_t first_layer = 0);
void unpack_parameters(Network& net, const Vector& flat, std::size_t first_layer = 0);
Vector pack_gradients(const Network& net, const Gradients& grads, std::size_t first_layer = 0);

// Exact logistic function in the branch-split form that never overflows.
double stable_sigmoid(double z) noexcept;

}  // namespace blindspot
