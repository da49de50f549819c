#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "strigger/nn/tensor.hpp"

namespace strigger::nn {

enum class Activation { tanh, relu, sigmoid, identity };

inline std::string_view to_string(Activation a) {
  switch (a) {
  case Activation::tanh: return "tanh";
  case Activation::relu: return "relu";
  case Activation::sigmoid: return "sigmoid";
  case Activation::identity: return "identity";
  }
  return "identity";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity") return Activation::identity;
  throw UsageError("unknown activation tag: " + std::string(s));
}

inline Tensor activate(const Tensor &x, Activation a) {
  switch (a) {
  case Activation::tanh: return tanh(x);
  case Activation::relu: return relu(x);
  case Activation::sigmoid: return sigmoid(x);
  case Activation::identity: return x;
  }
  return x;
}

struct Layer {
  Tensor weight; // [in x out], row-major
  Tensor bias;   // [out]
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

// Fully connected network. Copies are deep: two Mlp values never share weights.
class Mlp {
public:
  Mlp() = default;

  explicit Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

  // Glorot-uniform weights and zero biases. `sizes` lists every width including input.
  Mlp(const std::vector<std::size_t> &sizes, const std::vector<Activation> &activations,
      std::uint64_t seed) {
    if (sizes.size() < 2 || activations.size() != sizes.size() - 1)
      throw DimensionError("Mlp: need one activation per layer");
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const auto in = sizes[l], out = sizes[l + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      std::vector<double> w(in * out);
      for (auto &x : w) x = dist(rng);
      layers_.push_back(Layer{Tensor({in, out}, std::move(w), true),
                              Tensor::zeros({out}, true), activations[l]});
    }
  }

  Mlp(const Mlp &other) : layers_(clone_layers(other.layers_)) {}
  Mlp &operator=(const Mlp &other) {
    if (this != &other) layers_ = clone_layers(other.layers_);
    return *this;
  }
  Mlp(Mlp &&) noexcept = default;
  Mlp &operator=(Mlp &&) noexcept = default;

  const std::vector<Layer> &layers() const { return layers_; }
  std::vector<Layer> &layers() { return layers_; }
  std::size_t in_dim() const { return layers_.front().in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }

  Tensor forward(const Tensor &input) const {
    if (layers_.empty()) throw UsageError("forward on an empty Mlp");
    Tensor x = input;
    if (x.rank() == 1) x = reshape(x, {1, x.size()});
    if (x.cols() != in_dim())
      throw DimensionError("Mlp input width " + std::to_string(x.cols()) + ", expected " +
                           std::to_string(in_dim()));
    for (const auto &layer : layers_)
      x = activate(add_row(matmul(x, layer.weight), layer.bias), layer.activation);
    return x;
  }

  // Forward pass without recording; `input` holds `batch` rows of in_dim values.
  std::vector<double> infer(std::span<const double> input, std::size_t batch) const {
    if (layers_.empty()) throw UsageError("infer on an empty Mlp");
    if (input.size() != batch * in_dim())
      throw DimensionError("Mlp::infer: input of " + std::to_string(input.size()) +
                           " values for batch " + std::to_string(batch) + " x " +
                           std::to_string(in_dim()));
    detail::RowMat x = detail::ConstMapMat(input.data(), batch, in_dim());
    for (const auto &layer : layers_) {
      detail::RowMat y =
          x * detail::ConstMapMat(layer.weight.values().data(), layer.in_dim(), layer.out_dim());
      Eigen::Map<const Eigen::RowVectorXd> b(layer.bias.values().data(), layer.out_dim());
      y.rowwise() += b;
      switch (layer.activation) {
      case Activation::tanh: y = y.unaryExpr([](double v) { return std::tanh(v); }); break;
      case Activation::relu: y = y.array().max(0.0); break;
      case Activation::sigmoid: y = y.unaryExpr([](double v) { return sigmoid_value(v); }); break;
      case Activation::identity: break;
      }
      x = std::move(y);
    }
    return std::vector<double>(x.data(), x.data() + x.size());
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> ps;
    for (const auto &l : layers_) {
      ps.push_back(l.weight);
      ps.push_back(l.bias);
    }
    return ps;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto &l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  void zero_grad() {
    for (auto &l : layers_) {
      l.weight.zero_grad();
      l.bias.zero_grad();
    }
  }

private:
  static std::vector<Layer> clone_layers(const std::vector<Layer> &src) {
    std::vector<Layer> out;
    out.reserve(src.size());
    for (const auto &l : src) out.push_back(Layer{l.weight.clone(), l.bias.clone(), l.activation});
    return out;
  }

  void validate() const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto &l = layers_[i];
      if (l.weight.rank() != 2 || l.bias.size() != l.out_dim())
        throw DimensionError("Mlp layer " + std::to_string(i) + " has inconsistent bias");
      if (i + 1 < layers_.size() && l.out_dim() != layers_[i + 1].in_dim())
        throw DimensionError("Mlp layers " + std::to_string(i) + " and " + std::to_string(i + 1) +
                             " do not chain");
    }
  }

  std::vector<Layer> layers_;
};

} // namespace strigger::nn
