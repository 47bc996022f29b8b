#include "blindspot/network.hpp"

#include <algorithm>
#include <cmath>

#include "blindspot/error.hpp"

namespace blindspot {

std::string_view layer_kind_name(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::sigmoid:
      return "affine+sigmoid";
    case LayerKind::relu:
      return "affine+relu";
    case LayerKind::softmax:
      return "affine+softmax";
    case LayerKind::linear:
      return "affine-linear";
  }
  return "affine-linear";
}

LayerKind parse_layer_kind(std::string_view name) {
  if (name == "affine+sigmoid") return LayerKind::sigmoid;
  if (name == "affine+relu") return LayerKind::relu;
  if (name == "affine+softmax") return LayerKind::softmax;
  if (name == "affine-linear") return LayerKind::linear;
  throw FormatError("unknown layer kind '" + std::string(name) + "'");
}

std::size_t Network::input_dim() const {
  if (layers.empty()) throw InvalidInput("network has no layers");
  return layers.front().in_dim();
}

std::size_t Network::output_dim() const {
  if (layers.empty()) throw InvalidInput("network has no layers");
  return layers.back().out_dim();
}

std::size_t Network::activation_dim(std::size_t k) const {
  if (k > layers.size()) throw InvalidInput("activation_dim: layer index out of range");
  return k == 0 ? input_dim() : layers[k - 1].out_dim();
}

bool Network::is_classifier() const noexcept {
  return !layers.empty() && layers.back().kind == LayerKind::softmax;
}

void Network::validate() const {
  if (layers.empty()) throw InvalidInput("network '" + name + "' has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    const std::string where = "network '" + name + "' layer " + std::to_string(k);
    if (l.weights.size() == 0) throw InvalidInput(where + ": empty weight matrix");
    if (static_cast<std::size_t>(l.biases.size()) != l.out_dim()) {
      throw InvalidInput(where + ": bias length does not match output dimension");
    }
    if (!(l.lambda >= 0.0)) throw InvalidInput(where + ": lambda must be non-negative");
    if (!l.weights.allFinite() || !l.biases.allFinite()) {
      throw InvalidInput(where + ": non-finite parameters");
    }
    if (k > 0 && layers[k - 1].out_dim() != l.in_dim()) {
      throw InvalidInput(where + ": input dimension " + std::to_string(l.in_dim()) +
                         " does not match previous output " +
                         std::to_string(layers[k - 1].out_dim()));
    }
    if (l.kind == LayerKind::softmax && k + 1 != layers.size()) {
      throw InvalidInput(where + ": softmax is only allowed as the final layer");
    }
  }
}

double stable_sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

void softmax_columns(Matrix& z) {
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    auto col = z.col(j);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
}

Matrix apply_layer(const LayerSpec& layer, const Eigen::Ref<const Matrix>& input) {
  Matrix z = layer.weights * input;
  z.colwise() += layer.biases;
  switch (layer.kind) {
    case LayerKind::sigmoid:
      z = z.unaryExpr([](double v) { return stable_sigmoid(v); });
      break;
    case LayerKind::relu:
      z = z.cwiseMax(0.0);
      break;
    case LayerKind::softmax:
      softmax_columns(z);
      break;
    case LayerKind::linear:
      break;
  }
  return z;
}

void check_input(const Network& net, std::size_t first_layer, Eigen::Index rows) {
  if (net.layers.empty()) throw InvalidInput("network has no layers");
  if (first_layer >= net.layers.size()) {
    throw InvalidInput("first_layer " + std::to_string(first_layer) + " out of range");
  }
  if (static_cast<std::size_t>(rows) != net.layers[first_layer].in_dim()) {
    throw InvalidInput("input dimension " + std::to_string(rows) + " does not match layer " +
                       std::to_string(first_layer) + " input " +
                       std::to_string(net.layers[first_layer].in_dim()));
  }
}

void check_label(const Network& net, Label l) {
  if (!net.is_classifier()) throw InvalidInput("classifier network (softmax output) required");
  if (l < 0 || static_cast<std::size_t>(l) >= net.output_dim()) {
    throw InvalidInput("label " + std::to_string(l) + " outside class range");
  }
}

// Forward pass keeping every post-activation; acts[0] is the input.
std::vector<Matrix> forward_all(const Network& net, std::size_t first_layer,
                                const Eigen::Ref<const Matrix>& inputs) {
  std::vector<Matrix> acts;
  acts.reserve(net.layers.size() - first_layer + 1);
  acts.emplace_back(inputs);
  for (std::size_t k = first_layer; k < net.layers.size(); ++k) {
    acts.push_back(apply_layer(net.layers[k], acts.back()));
  }
  return acts;
}

// Multiplies delta (dL/dA) by the activation derivative, giving dL/dZ.
void through_activation(LayerKind kind, const Matrix& act, Matrix& delta) {
  switch (kind) {
    case LayerKind::sigmoid:
      delta.array() *= act.array() * (1.0 - act.array());
      break;
    case LayerKind::relu:
      delta.array() *= (act.array() > 0.0).cast<double>();
      break;
    case LayerKind::linear:
      break;
    case LayerKind::softmax:
      throw InvalidInput("softmax is only allowed as the final layer");
  }
}

// Backpropagates dL/dZ of the last layer. Parameter gradients for layers
// >= first_layer are added into grads when provided; returns dL/d(input).
Matrix backpropagate(const Network& net, std::size_t first_layer, const std::vector<Matrix>& acts,
                     Matrix delta, Gradients* grads) {
  for (std::size_t k = net.layers.size(); k-- > first_layer;) {
    const auto& layer = net.layers[k];
    const Matrix& input = acts[k - first_layer];
    if (grads != nullptr) {
      grads->weights[k].noalias() += delta * input.transpose();
      grads->biases[k].noalias() += delta.rowwise().sum();
    }
    Matrix upstream = layer.weights.transpose() * delta;
    if (k > first_layer) through_activation(net.layers[k - 1].kind, input, upstream);
    delta = std::move(upstream);
  }
  return delta;
}

}  // namespace

Network make_network(std::string name, std::span<const std::size_t> dims,
                     std::span<const LayerKind> kinds, std::span<const double> lambdas,
                     std::uint64_t seed) {
  if (dims.size() < 2) throw InvalidInput("make_network: need at least input and output dims");
  const std::size_t n_layers = dims.size() - 1;
  if (kinds.size() != n_layers || lambdas.size() != n_layers) {
    throw InvalidInput("make_network: kinds/lambdas must have one entry per layer");
  }
  Network net;
  net.name = std::move(name);
  const RngStream root(seed);
  for (std::size_t k = 0; k < n_layers; ++k) {
    const auto fan_in = static_cast<Eigen::Index>(dims[k]);
    const auto fan_out = static_cast<Eigen::Index>(dims[k + 1]);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    RngStream rng = root.fork(k);
    LayerSpec layer;
    layer.kind = kinds[k];
    layer.lambda = lambdas[k];
    layer.weights.resize(fan_out, fan_in);
    for (Eigen::Index i = 0; i < fan_out; ++i) {
      for (Eigen::Index j = 0; j < fan_in; ++j) layer.weights(i, j) = rng.uniform(-a, a);
    }
    layer.biases = Vector::Zero(fan_out);
    net.layers.push_back(std::move(layer));
  }
  net.validate();
  return net;
}

ForwardTrace forward(const Network& net, const Vector& x) {
  check_input(net, 0, x.size());
  ForwardTrace trace;
  trace.activations.reserve(net.layers.size());
  Matrix current = x;
  for (const auto& layer : net.layers) {
    current = apply_layer(layer, current);
    trace.activations.emplace_back(current.col(0));
  }
  return trace;
}

ForwardTrace forward(const Network& net, const Image& x) { return forward(net, x.pixels); }

Vector forward_from(const Network& net, std::size_t first_layer, const Vector& h) {
  return forward_batch(net, h, first_layer).col(0);
}

Matrix forward_batch(const Network& net, const Eigen::Ref<const Matrix>& inputs,
                     std::size_t first_layer) {
  check_input(net, first_layer, inputs.rows());
  Matrix current = inputs;
  for (std::size_t k = first_layer; k < net.layers.size(); ++k) {
    current = apply_layer(net.layers[k], current);
  }
  return current;
}

Matrix activations_at(const Network& net, const Eigen::Ref<const Matrix>& inputs,
                      std::size_t upto) {
  if (upto > net.layers.size()) throw InvalidInput("activations_at: layer out of range");
  check_input(net, 0, inputs.rows());
  Matrix current = inputs;
  for (std::size_t k = 0; k < upto; ++k) current = apply_layer(net.layers[k], current);
  return current;
}

Label argmax(const Vector& v) {
  if (v.size() == 0) throw InvalidInput("argmax of empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return static_cast<Label>(best);
}

Label predict(const Network& net, const Vector& x) { return argmax(forward(net, x).output()); }

Label predict(const Network& net, const Image& x) { return predict(net, x.pixels); }

std::vector<Label> predict_batch(const Network& net, const Eigen::Ref<const Matrix>& inputs,
                                 std::size_t first_layer) {
  std::vector<Label> out(static_cast<std::size_t>(inputs.cols()));
  constexpr Eigen::Index chunk = 4096;
  for (Eigen::Index start = 0; start < inputs.cols(); start += chunk) {
    const Eigen::Index n = std::min(chunk, inputs.cols() - start);
    const Matrix probs = forward_batch(net, inputs.middleCols(start, n), first_layer);
    for (Eigen::Index j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(start + j)] = argmax(probs.col(j));
    }
  }
  return out;
}

double error_rate(const Network& net, const LabeledDataset& data) {
  if (data.empty()) throw InvalidInput("error_rate: empty dataset");
  const auto preds = predict_batch(net, data.pixels());
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) wrong += preds[i] != data.label(i);
  return static_cast<double>(wrong) / static_cast<double>(preds.size());
}

double cross_entropy(const Vector& probabilities, Label y) {
  if (y < 0 || y >= probabilities.size()) throw InvalidInput("cross_entropy: label out of range");
  return -std::log(std::max(probabilities(y), kProbabilityFloor));
}

double decay_penalty(const Network& net, bool trainable_only) {
  double total = 0.0;
  for (const auto& l : net.layers) {
    if (trainable_only && l.frozen) continue;
    if (l.lambda == 0.0) continue;
    total += l.lambda * l.weights.squaredNorm() / static_cast<double>(l.out_dim());
  }
  return total;
}

double loss(const Network& net, const Vector& x, Label y) {
  check_label(net, y);
  return cross_entropy(forward(net, x).output(), y) + decay_penalty(net);
}

double loss(const Network& net, const Image& x, Label y) { return loss(net, x.pixels, y); }

Gradients Gradients::zeros_like(const Network& net) {
  Gradients g;
  for (const auto& l : net.layers) {
    g.weights.push_back(Matrix::Zero(l.weights.rows(), l.weights.cols()));
    g.biases.push_back(Vector::Zero(l.biases.size()));
  }
  return g;
}

double accumulate_cross_entropy_gradient(const Network& net, std::size_t first_layer,
                                         const Eigen::Ref<const Matrix>& inputs,
                                         std::span<const Label> labels, double scale,
                                         Gradients& grads) {
  check_input(net, first_layer, inputs.rows());
  if (static_cast<std::size_t>(inputs.cols()) != labels.size()) {
    throw InvalidInput("gradient: input and label counts differ");
  }
  if (!net.is_classifier()) throw InvalidInput("classifier network (softmax output) required");
  const auto acts = forward_all(net, first_layer, inputs);
  const Matrix& probs = acts.back();
  Matrix delta = probs;
  double total = 0.0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    const Label y = labels[j];
    if (y < 0 || y >= probs.rows()) throw InvalidInput("gradient: label out of range");
    total += -std::log(std::max(probs(y, col), kProbabilityFloor));
    delta(y, col) -= 1.0;
  }
  delta *= scale;
  backpropagate(net, first_layer, acts, std::move(delta), &grads);
  return scale * total;
}

void accumulate_decay_gradient(const Network& net, Gradients& grads, bool trainable_only) {
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto& l = net.layers[k];
    if ((trainable_only && l.frozen) || l.lambda == 0.0) continue;
    grads.weights[k] += (2.0 * l.lambda / static_cast<double>(l.out_dim())) * l.weights;
  }
}

Gradients param_gradient(const Network& net, const Eigen::Ref<const Matrix>& inputs,
                         std::span<const Label> labels) {
  if (labels.empty()) throw InvalidInput("param_gradient: empty batch");
  Gradients g = Gradients::zeros_like(net);
  accumulate_cross_entropy_gradient(net, 0, inputs, labels,
                                    1.0 / static_cast<double>(labels.size()), g);
  accumulate_decay_gradient(net, g, false);
  return g;
}

Gradients param_gradient(const Network& net, std::span<const LabeledExample> batch) {
  if (batch.empty()) throw InvalidInput("param_gradient: empty batch");
  Matrix inputs(static_cast<Eigen::Index>(batch.front().image.pixels.size()),
                static_cast<Eigen::Index>(batch.size()));
  std::vector<Label> labels;
  labels.reserve(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (batch[j].image.pixels.size() != inputs.rows()) {
      throw InvalidInput("param_gradient: images differ in dimension");
    }
    inputs.col(static_cast<Eigen::Index>(j)) = batch[j].image.pixels;
    labels.push_back(batch[j].label);
  }
  return param_gradient(net, inputs, labels);
}

InputGradient cross_entropy_input_gradient(const Network& net, std::size_t first_layer,
                                           const Vector& h, Label l) {
  check_input(net, first_layer, h.size());
  check_label(net, l);
  const auto acts = forward_all(net, first_layer, h);
  InputGradient out;
  out.probabilities = acts.back().col(0);
  out.loss = cross_entropy(out.probabilities, l);
  Matrix delta = acts.back();
  delta(l, 0) -= 1.0;
  out.gradient = backpropagate(net, first_layer, acts, std::move(delta), nullptr).col(0);
  return out;
}

Vector input_gradient(const Network& net, const Vector& x, Label l) {
  return cross_entropy_input_gradient(net, 0, x, l).gradient;
}

Vector input_gradient(const Network& net, const Image& x, Label l) {
  return input_gradient(net, x.pixels, l);
}

std::size_t trainable_parameter_count(const Network& net, std::size_t first_layer) {
  std::size_t n = 0;
  for (std::size_t k = first_layer; k < net.layers.size(); ++k) {
    const auto& l = net.layers[k];
    if (!l.frozen) n += static_cast<std::size_t>(l.weights.size() + l.biases.size());
  }
  return n;
}

Vector pack_parameters(const Network& net, std::size_t first_layer) {
  Vector flat(static_cast<Eigen::Index>(trainable_parameter_count(net, first_layer)));
  Eigen::Index pos = 0;
  for (std::size_t k = first_layer; k < net.layers.size(); ++k) {
    const auto& l = net.layers[k];
    if (l.frozen) continue;
    flat.segment(pos, l.weights.size()) = l.weights.reshaped();
    pos += l.weights.size();
    flat.segment(pos, l.biases.size()) = l.biases;
    pos += l.biases.size();
  }
  return flat;
}

void unpack_parameters(Network& net, const Vector& flat, std::size_t first_layer) {
  if (static_cast<std::size_t>(flat.size()) != trainable_parameter_count(net, first_layer)) {
    throw InvalidInput("unpack_parameters: size mismatch");
  }
  Eigen::Index pos = 0;
  for (std::size_t k = first_layer; k < net.layers.size(); ++k) {
    auto& l = net.layers[k];
    if (l.frozen) continue;
    l.weights.reshaped() = flat.segment(pos, l.weights.size());
    pos += l.weights.size();
    l.biases = flat.segment(pos, l.biases.size());
    pos += l.biases.size();
  }
}

Vector pack_gradients(const Network& net, const Gradients& grads, std::size_t first_layer) {
  Vector flat(static_cast<Eigen::Index>(trainable_parameter_count(net, first_layer)));
  Eigen::Index pos = 0;
  for (std::size_t k = first_layer; k < net.layers.size(); ++k) {
    const auto& l = net.layers[k];
    if (l.frozen) continue;
    flat.segment(pos, l.weights.size()) = grads.weights[k].reshaped();
    pos += l.weights.size();
    flat.segment(pos, l.biases.size()) = grads.biases[k];
    pos += l.biases.size();
  }
  return flat;
}

}  // namespace blindspot
