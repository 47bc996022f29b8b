#include "blindspot/model_io.hpp"

#include <cmath>
#include <cstdint>
#include <set>

#include "blindspot/error.hpp"

namespace blindspot {

using nlohmann::json;

namespace json_schema {

const json& require(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw FormatError(path + ": expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(path + "." + key + ": missing field");
  return *it;
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& path) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!ok.contains(key)) throw FormatError(path + "." + key + ": unknown field");
  }
}

double require_number(const json& obj, const char* key, const std::string& path) {
  const auto& v = require(obj, key, path);
  if (!v.is_number()) throw FormatError(path + "." + key + ": expected a number");
  return v.get<double>();
}

std::size_t require_count(const json& obj, const char* key, const std::string& path) {
  const auto& v = require(obj, key, path);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw FormatError(path + "." + key + ": expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::vector<double> require_numbers(const json& obj, const char* key, const std::string& path) {
  const auto& v = require(obj, key, path);
  if (!v.is_array()) throw FormatError(path + "." + key + ": expected an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) {
      throw FormatError(path + "." + key + "[" + std::to_string(i) + "]: expected a number");
    }
    out.push_back(v[i].get<double>());
  }
  return out;
}

}  // namespace json_schema

json network_to_json(const Network& net) {
  net.validate();
  json layers = json::array();
  for (const auto& l : net.layers) {
    std::vector<double> weights;
    weights.reserve(static_cast<std::size_t>(l.weights.size()));
    for (Eigen::Index i = 0; i < l.weights.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weights.cols(); ++j) weights.push_back(l.weights(i, j));
    }
    json layer = {{"kind", layer_kind_name(l.kind)},
                  {"rows", l.out_dim()},
                  {"cols", l.in_dim()},
                  {"weights", std::move(weights)},
                  {"biases", std::vector<double>(l.biases.begin(), l.biases.end())},
                  {"lambda", l.lambda}};
    if (l.frozen) layer["frozen"] = true;
    layers.push_back(std::move(layer));
  }
  json meta = json::object();
  for (const auto& [k, v] : net.training_meta) meta[k] = v;
  return {{"name", net.name}, {"layers", std::move(layers)}, {"training_meta", std::move(meta)}};
}

Network network_from_json(const json& doc) {
  using namespace json_schema;
  const std::string root = "$";
  if (!doc.is_object()) throw FormatError(root + ": expected an object");
  reject_unknown_keys(doc, {"name", "layers", "training_meta"}, root);

  Network net;
  const auto& name = require(doc, "name", root);
  if (!name.is_string()) throw FormatError(root + ".name: expected a string");
  net.name = name.get<std::string>();

  const auto& layers = require(doc, "layers", root);
  if (!layers.is_array()) throw FormatError(root + ".layers: expected an array");
  if (layers.empty()) throw FormatError(root + ".layers: a network needs at least one layer");

  for (std::size_t k = 0; k < layers.size(); ++k) {
    const std::string path = root + ".layers[" + std::to_string(k) + "]";
    const auto& lj = layers[k];
    if (!lj.is_object()) throw FormatError(path + ": expected an object");
    reject_unknown_keys(lj, {"kind", "rows", "cols", "weights", "biases", "lambda", "frozen"},
                        path);
    const auto& kind = require(lj, "kind", path);
    if (!kind.is_string()) throw FormatError(path + ".kind: expected a string");
    LayerSpec layer;
    try {
      layer.kind = parse_layer_kind(kind.get<std::string>());
    } catch (const FormatError& e) {
      throw FormatError(path + ".kind: " + e.what());
    }
    const std::size_t rows = require_count(lj, "rows", path);
    const std::size_t cols = require_count(lj, "cols", path);
    const auto weights = require_numbers(lj, "weights", path);
    const auto biases = require_numbers(lj, "biases", path);
    if (rows == 0 || cols == 0) throw FormatError(path + ": rows and cols must be positive");
    if (weights.size() != rows * cols) {
      throw FormatError(path + ".weights: expected " + std::to_string(rows * cols) +
                        " values, found " + std::to_string(weights.size()));
    }
    if (biases.size() != rows) {
      throw FormatError(path + ".biases: expected " + std::to_string(rows) + " values, found " +
                        std::to_string(biases.size()));
    }
    layer.lambda = require_number(lj, "lambda", path);
    if (!(layer.lambda >= 0.0)) throw FormatError(path + ".lambda: must be non-negative");
    if (const auto it = lj.find("frozen"); it != lj.end()) {
      if (!it->is_boolean()) throw FormatError(path + ".frozen: expected a boolean");
      layer.frozen = it->get<bool>();
    }
    layer.weights.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        layer.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            weights[i * cols + j];
      }
    }
    layer.biases = Eigen::Map<const Vector>(biases.data(), static_cast<Eigen::Index>(rows));
    net.layers.push_back(std::move(layer));
  }

  if (const auto it = doc.find("training_meta"); it != doc.end()) {
    if (!it->is_object()) throw FormatError(root + ".training_meta: expected an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_number()) {
        throw FormatError(root + ".training_meta." + k + ": expected a number");
      }
      net.training_meta[k] = v.get<double>();
    }
  }

  try {
    net.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("$.layers: ") + e.what());
  }
  return net;
}

void save_model(const Network& net, const std::filesystem::path& path) {
  write_text_file(path, network_to_json(net).dump(1) + "\n");
}

Network load_model(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
  return network_from_json(doc);
}

}  // namespace blindspot
