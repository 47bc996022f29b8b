#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "blindspot/network.hpp"

namespace blindspot {

// Model document:
//   {"name": str,
//    "layers": [{"kind": str, "rows": n, "cols": n, "weights": [row-major],
//                "biases": [...], "lambda": x, "frozen": bool?}, ...],
//    "training_meta": {str: number}}
// Doubles are written in shortest round-trip form, so load(save(n)) is bit-exact.
nlohmann::json network_to_json(const Network& net);
// Throws FormatError naming the offending field path (e.g. "layers[1].weights").
Network network_from_json(const nlohmann::json& doc);

void save_model(const Network& net, const std::filesystem::path& path);
Network load_model(const std::filesystem::path& path);

// Shared helpers for schema checks on JSON documents.
namespace json_schema {

const nlohmann::json& require(const nlohmann::json& obj, const char* key, const std::string& path);
void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                         const std::string& path);
double require_number(const nlohmann::json& obj, const char* key, const std::string& path);
std::size_t require_count(const nlohmann::json& obj, const char* key, const std::string& path);
std::vector<double> require_numbers(const nlohmann::json& obj, const char* key,
                                    const std::string& path);

}  // namespace json_schema

}  // namespace blindspot
