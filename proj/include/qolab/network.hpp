#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace qolab {

// Dense layer, weights row-major [out][in].
struct Layer {
  int in = 0;
  int out = 0;
  std::vector<double> weights;
  std::vector<double> biases;

  bool operator==(const Layer&) const = default;
};

// Multilayer perceptron: rectifier on hidden layers, identity scalar output.
struct NetworkParams {
  std::vector<Layer> layers;

  int input_size() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t parameter_count() const;
  // Flat views in layer order: weights then biases per layer.
  double& at(std::size_t flat_index);
  double at(std::size_t flat_index) const;
  void set_zero();
  bool operator==(const NetworkParams&) const = default;
};

// Row-major batch of equal-length feature vectors.
struct FeatureMatrix {
  int cols = 0;
  std::vector<double> data;

  explicit FeatureMatrix(int columns = 0) : cols(columns) {}
  std::size_t rows() const { return cols == 0 ? 0 : data.size() / static_cast<std::size_t>(cols); }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, static_cast<std::size_t>(cols)}; }
  std::span<double> append_row();
  void clear() { data.clear(); }
};

}  // namespace qolab
