#include "blindspot/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "blindspot/error.hpp"
#include "blindspot/model_io.hpp"

namespace blindspot {

void ConvLayerSpec::validate() const {
  if (in_features == 0 || out_features == 0 || kernel_size == 0) {
    throw InvalidInput("conv layer: features and kernel size must be positive");
  }
  if (stride < 1) throw InvalidInput("conv layer: stride must be at least 1");
  if (kernels.size() != in_features * out_features) {
    throw InvalidInput("conv layer: expected " + std::to_string(in_features * out_features) +
                       " kernels, found " + std::to_string(kernels.size()));
  }
  for (const auto& k : kernels) {
    if (static_cast<std::size_t>(k.rows()) != kernel_size ||
        static_cast<std::size_t>(k.cols()) != kernel_size) {
      throw InvalidInput("conv layer: kernel is not " + std::to_string(kernel_size) + "x" +
                         std::to_string(kernel_size));
    }
    if (!k.allFinite()) throw InvalidInput("conv layer: non-finite kernel entries");
  }
}

FcBound fc_bound(const LayerSpec& layer, SigmoidBoundMode mode, double tol) {
  FcBound out;
  out.operator_norm = largest_singular_value(layer.weights, tol);
  double slope = 1.0;
  if (layer.kind == LayerKind::sigmoid) slope = 0.25;
  if (layer.kind == LayerKind::softmax) slope = 0.5;
  out.tightened = out.operator_norm * slope;
  out.used = mode == SigmoidBoundMode::tightened ? out.tightened : out.operator_norm;
  return out;
}

ConvBound conv_bound(const ConvLayerSpec& layer, std::size_t grid_points, double tol) {
  layer.validate();
  const std::size_t stride = layer.stride;
  if (grid_points == 0 || grid_points * stride < layer.kernel_size) {
    throw InvalidInput("conv_bound: grid_points * stride must cover the kernel support");
  }
  const std::size_t S = grid_points * stride;
  const auto N = static_cast<Eigen::Index>(layer.kernel_size);
  const std::size_t C = layer.in_features;
  const std::size_t D = layer.out_features;

  // phase(k, u) = exp(-2 pi i u k / S) for k in [0, S), u in [0, N).
  ComplexMatrix phase(static_cast<Eigen::Index>(S), N);
  for (std::size_t k = 0; k < S; ++k) {
    for (Eigen::Index u = 0; u < N; ++u) {
      const double angle = -2.0 * std::numbers::pi *
                           static_cast<double>((static_cast<std::size_t>(u) * k) % S) /
                           static_cast<double>(S);
      phase(static_cast<Eigen::Index>(k), u) = std::polar(1.0, angle);
    }
  }
  std::vector<ComplexMatrix> kernels;
  kernels.reserve(layer.kernels.size());
  for (const auto& k : layer.kernels) kernels.push_back(k.cast<std::complex<double>>());

  ConvBound best;
  best.bound = -1.0;
  ComplexMatrix block(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(C * stride * stride));
  for (std::size_t j1 = 0; j1 < grid_points; ++j1) {
    for (std::size_t j2 = 0; j2 < grid_points; ++j2) {
      for (std::size_t l1 = 0; l1 < stride; ++l1) {
        const auto row_phase = phase.row(static_cast<Eigen::Index>(j1 + l1 * grid_points));
        for (std::size_t l2 = 0; l2 < stride; ++l2) {
          const auto col_phase = phase.row(static_cast<Eigen::Index>(j2 + l2 * grid_points));
          for (std::size_t c = 0; c < C; ++c) {
            const auto col = static_cast<Eigen::Index>((c * stride + l1) * stride + l2);
            for (std::size_t d = 0; d < D; ++d) {
              const ComplexMatrix& w = kernels[c * D + d];
              block(static_cast<Eigen::Index>(d), col) =
                  (row_phase * w * col_phase.transpose())(0, 0);
            }
          }
        }
      }
      const double sigma = largest_singular_value(block, tol) / static_cast<double>(stride);
      if (sigma > best.bound) {
        best.bound = sigma;
        best.argmax_row = j1;
        best.argmax_col = j2;
      }
    }
  }
  return best;
}

double contractive_bound(ContractiveKind kind, const ContrastNormSpec& spec) {
  switch (kind) {
    case ContractiveKind::max_pool:
    case ContractiveKind::relu:
      return 1.0;
    case ContractiveKind::contrast_norm:
      if (!(spec.epsilon > 0.0)) throw InvalidInput("contrast_norm: epsilon must be positive");
      if (!(spec.gamma >= 0.5 && spec.gamma <= 1.0)) {
        throw InvalidInput("contrast_norm: gamma must lie in [0.5, 1]");
      }
      return std::pow(spec.epsilon, -spec.gamma);
  }
  return 1.0;
}

CsvWriter SpectralReport::table() const {
  CsvWriter csv({"Layer", "Size", "Stride", "Upper bound"});
  for (const auto& e : entries) csv.row({e.name, e.size, e.stride, format_number(e.bound, 6)});
  return csv;
}

namespace {

struct EntryBuilder {
  std::size_t conv = 0;
  std::size_t fc = 0;
  std::size_t other = 0;
  std::size_t grid_points;
  SigmoidBoundMode mode;

  SpectralEntry operator()(const LayerSpec& l) {
    const auto b = fc_bound(l, mode);
    return {"FC. " + std::to_string(++fc), std::string(layer_kind_name(l.kind)),
            std::to_string(l.in_dim()) + "x" + std::to_string(l.out_dim()), "N/A", b.used,
            b.operator_norm};
  }
  SpectralEntry operator()(const ConvLayerSpec& l) {
    const double b = conv_bound(l, grid_points).bound;
    const auto n = std::to_string(l.kernel_size);
    return {"Conv. " + std::to_string(++conv), "conv",
            std::to_string(l.in_features) + "x" + n + "x" + n + "x" +
                std::to_string(l.out_features),
            std::to_string(l.stride), b, b};
  }
  SpectralEntry operator()(const MaxPoolSpec&) {
    return {"MaxPool " + std::to_string(++other), "max_pool", "N/A", "N/A", 1.0, 1.0};
  }
  SpectralEntry operator()(const ReluSpec&) {
    return {"ReLU " + std::to_string(++other), "relu", "N/A", "N/A", 1.0, 1.0};
  }
  SpectralEntry operator()(const ContrastNormSpec& s) {
    const double b = contractive_bound(ContractiveKind::contrast_norm, s);
    return {"ContrastNorm " + std::to_string(++other), "contrast_norm", "N/A", "N/A", b, b};
  }
};

}  // namespace

SpectralReport network_bound(const std::vector<SpectralLayer>& layers, std::size_t grid_points,
                             SigmoidBoundMode mode) {
  if (layers.empty()) throw InvalidInput("network_bound: no layers");
  SpectralReport report;
  EntryBuilder builder{0, 0, 0, grid_points, mode};
  for (const auto& layer : layers) {
    report.entries.push_back(std::visit(builder, layer));
    report.product *= report.entries.back().bound;
  }
  return report;
}

std::vector<SpectralLayer> spectral_layers(const Network& net) {
  net.validate();
  return std::vector<SpectralLayer>(net.layers.begin(), net.layers.end());
}

SpectralReport network_bound(const Network& net, SigmoidBoundMode mode) {
  return network_bound(spectral_layers(net), 64, mode);
}

double empirical_lipschitz_probe(const Network& net, std::size_t samples, RngStream& rng) {
  if (samples == 0) throw InvalidInput("empirical_lipschitz_probe: samples must be positive");
  net.validate();
  const auto m = static_cast<Eigen::Index>(net.input_dim());
  constexpr std::size_t batch = 256;
  const double log_lo = std::log(1e-4);
  const double log_hi = std::log(1e-1);
  double best = 0.0;
  for (std::size_t done = 0; done < samples;) {
    const std::size_t n = std::min(batch, samples - done);
    Matrix x(m, static_cast<Eigen::Index>(n));
    Matrix x2(m, static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      for (Eigen::Index i = 0; i < m; ++i) x(i, col) = rng.uniform();
      Vector dir = gaussian(rng, static_cast<std::size_t>(m), 1.0);
      const double dn = dir.norm();
      if (dn == 0.0) dir(0) = 1.0;
      const double radius = std::exp(rng.uniform(log_lo, log_hi));
      x2.col(col) = x.col(col) + (radius / std::max(dn, 1e-300)) * dir;
    }
    const Matrix y = forward_batch(net, x);
    const Matrix y2 = forward_batch(net, x2);
    for (std::size_t j = 0; j < n; ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      const double denom = (x2.col(col) - x.col(col)).norm();
      if (denom == 0.0) continue;
      best = std::max(best, (y2.col(col) - y.col(col)).norm() / denom);
    }
    done += n;
  }
  return best;
}

namespace {

ConvLayerSpec conv_from_json(const nlohmann::json& lj, const std::string& path) {
  using namespace json_schema;
  reject_unknown_keys(lj, {"kind", "in_features", "out_features", "kernel_size", "stride",
                           "kernels"},
                      path);
  ConvLayerSpec conv;
  conv.in_features = require_count(lj, "in_features", path);
  conv.out_features = require_count(lj, "out_features", path);
  conv.kernel_size = require_count(lj, "kernel_size", path);
  conv.stride = require_count(lj, "stride", path);
  const auto& kernels = require(lj, "kernels", path);
  if (!kernels.is_array()) throw FormatError(path + ".kernels: expected an array");
  const std::size_t n = conv.kernel_size;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const std::string kp = path + ".kernels[" + std::to_string(i) + "]";
    if (!kernels[i].is_array() || kernels[i].size() != n * n) {
      throw FormatError(kp + ": expected " + std::to_string(n * n) + " numbers");
    }
    Matrix k(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        const auto& v = kernels[i][r * n + c];
        if (!v.is_number()) throw FormatError(kp + ": expected numbers");
        k(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v.get<double>();
      }
    }
    conv.kernels.push_back(std::move(k));
  }
  try {
    conv.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(path + ": " + e.what());
  }
  return conv;
}

}  // namespace

std::vector<SpectralLayer> spectral_layers_from_json(const nlohmann::json& doc) {
  using namespace json_schema;
  const std::string root = "$";
  if (!doc.is_object()) throw FormatError(root + ": expected an object");
  const auto& layers = require(doc, "layers", root);
  if (!layers.is_array() || layers.empty()) {
    throw FormatError(root + ".layers: expected a non-empty array");
  }
  std::vector<SpectralLayer> out;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const std::string path = root + ".layers[" + std::to_string(k) + "]";
    const auto& lj = layers[k];
    const auto& kind_j = require(lj, "kind", path);
    if (!kind_j.is_string()) throw FormatError(path + ".kind: expected a string");
    const std::string kind = kind_j.get<std::string>();
    if (kind == "conv") {
      out.emplace_back(conv_from_json(lj, path));
    } else if (kind == "max_pool") {
      reject_unknown_keys(lj, {"kind"}, path);
      out.emplace_back(MaxPoolSpec{});
    } else if (kind == "relu") {
      reject_unknown_keys(lj, {"kind"}, path);
      out.emplace_back(ReluSpec{});
    } else if (kind == "contrast_norm") {
      reject_unknown_keys(lj, {"kind", "epsilon", "gamma"}, path);
      out.emplace_back(ContrastNormSpec{require_number(lj, "epsilon", path),
                                        require_number(lj, "gamma", path)});
    } else {
      // Affine layers share the model schema.
      nlohmann::json single = {{"name", "layer"}, {"layers", nlohmann::json::array({lj})}};
      try {
        out.emplace_back(network_from_json(single).layers.front());
      } catch (const FormatError& e) {
        std::string msg = e.what();
        const std::string prefix = "$.layers[0]";
        if (const auto pos = msg.find(prefix); pos != std::string::npos) {
          msg.replace(pos, prefix.size(), path);
        }
        throw FormatError(msg);
      }
    }
  }
  return out;
}

std::vector<SpectralLayer> load_spectral_layers(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
  return spectral_layers_from_json(doc);
}

}  // namespace blindspot
