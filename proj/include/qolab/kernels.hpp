#pragma once

// Data-parallel hot loops. Each kernel has a straightforward serial reference
// (kept for tests and benchmarks) and an OpenMP version. The OpenMP versions
// split work into a fixed number of chunks that do not depend on the thread
// count, so their results are bit-identical however many threads run.

#include <cstdint>
#include <span>
#include <vector>

#include "qolab/catalog.hpp"
#include "qolab/network.hpp"

namespace qolab::kernels {

// Per-sample activations kept for the backward pass.
struct Activations {
  std::vector<std::vector<double>> values;  // input of each layer, then output
};

double forward(const NetworkParams& net, std::span<const double> x, Activations* keep = nullptr);

// grad += scale * d(output)/d(params) for the sample recorded in `acts`.
void backward_accumulate(const NetworkParams& net, const Activations& acts, double scale, NetworkParams& grad);

struct BruteForceResult {
  double min_cost = 0.0;
  std::uint64_t plans = 0;
};

namespace serial {

void predict_batch(const NetworkParams& net, const FeatureMatrix& x, std::span<double> out);

// Gradient of sum_i weights[i] * f(x_i).
NetworkParams weighted_gradient(const NetworkParams& net, const FeatureMatrix& x, std::span<const double> weights);

// Minimum cost over every physical plan of every bushy join tree.
BruteForceResult brute_force_min_cost(const Catalog& catalog, const Query& query);

}  // namespace serial

namespace parallel {

inline constexpr int kGradientChunks = 8;

void predict_batch(const NetworkParams& net, const FeatureMatrix& x, std::span<double> out);
NetworkParams weighted_gradient(const NetworkParams& net, const FeatureMatrix& x, std::span<const double> weights);
BruteForceResult brute_force_min_cost(const Catalog& catalog, const Query& query);

}  // namespace parallel

int max_threads();

}  // namespace qolab::kernels
