#pragma once

// JSON checkpoint format for Mlp parameters:
//
//   {"format": "strigger-mlp/1",
//    "layers": [{"in": 192, "out": 128, "activation": "tanh",
//                "weight": [... in*out row-major ...], "bias": [... out ...]}, ...]}

#include <fstream>
#include <string>

#include <json.hpp>

#include "strigger/nn/mlp.hpp"

namespace strigger::nn {

inline constexpr const char *kMlpFormat = "strigger-mlp/1";

inline nlohmann::json to_json(const Mlp &mlp) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto &l : mlp.layers()) {
    layers.push_back({{"in", l.in_dim()},
                      {"out", l.out_dim()},
                      {"activation", std::string(to_string(l.activation))},
                      {"weight", std::vector<double>(l.weight.values().begin(), l.weight.values().end())},
                      {"bias", std::vector<double>(l.bias.values().begin(), l.bias.values().end())}});
  }
  return {{"format", kMlpFormat}, {"layers", std::move(layers)}};
}

inline Mlp mlp_from_json(const nlohmann::json &j) {
  if (j.value("format", std::string{}) != kMlpFormat)
    throw UsageError("not an Mlp checkpoint (format tag missing or unknown)");
  std::vector<Layer> layers;
  for (const auto &l : j.at("layers")) {
    const auto in = l.at("in").get<std::size_t>();
    const auto out = l.at("out").get<std::size_t>();
    auto w = l.at("weight").get<std::vector<double>>();
    auto b = l.at("bias").get<std::vector<double>>();
    layers.push_back(Layer{Tensor({in, out}, std::move(w), true), Tensor({out}, std::move(b), true),
                           activation_from_string(l.at("activation").get<std::string>())});
  }
  return Mlp(std::move(layers));
}

inline void save_json(const nlohmann::json &j, const std::string &path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << j.dump(1) << '\n';
}

inline nlohmann::json load_json(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return nlohmann::json::parse(is);
}

} // namespace strigger::nn
