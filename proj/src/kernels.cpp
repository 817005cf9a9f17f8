#include "qolab/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <limits>

#include "qolab/costmodel.hpp"
#include "qolab/errors.hpp"
#include "qolab/plans.hpp"

namespace qolab {

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.biases.size();
  return n;
}

double& NetworkParams::at(std::size_t k) {
  for (auto& l : layers) {
    if (k < l.weights.size()) return l.weights[k];
    k -= l.weights.size();
    if (k < l.biases.size()) return l.biases[k];
    k -= l.biases.size();
  }
  throw ContractError("parameter index out of range");
}

double NetworkParams::at(std::size_t k) const { return const_cast<NetworkParams*>(this)->at(k); }

void NetworkParams::set_zero() {
  for (auto& l : layers) {
    std::fill(l.weights.begin(), l.weights.end(), 0.0);
    std::fill(l.biases.begin(), l.biases.end(), 0.0);
  }
}

std::span<double> FeatureMatrix::append_row() {
  data.resize(data.size() + static_cast<std::size_t>(cols), 0.0);
  return {data.data() + data.size() - cols, static_cast<std::size_t>(cols)};
}

namespace kernels {

int max_threads() { return omp_get_max_threads(); }

namespace {

void dense(const Layer& layer, const double* in, double* out, bool relu) {
  for (int o = 0; o < layer.out; ++o) {
    const double* w = layer.weights.data() + static_cast<std::size_t>(o) * layer.in;
    double z = layer.biases[o];
    for (int i = 0; i < layer.in; ++i) z += w[i] * in[i];
    out[o] = relu && z < 0.0 ? 0.0 : z;
  }
}

NetworkParams zeros_like(const NetworkParams& net) {
  NetworkParams g = net;
  g.set_zero();
  return g;
}

void add_into(NetworkParams& dst, const NetworkParams& src) {
  for (std::size_t l = 0; l < dst.layers.size(); ++l) {
    auto& d = dst.layers[l];
    const auto& s = src.layers[l];
    for (std::size_t k = 0; k < d.weights.size(); ++k) d.weights[k] += s.weights[k];
    for (std::size_t k = 0; k < d.biases.size(); ++k) d.biases[k] += s.biases[k];
  }
}

}  // namespace

double forward(const NetworkParams& net, std::span<const double> x, Activations* keep) {
  if (static_cast<int>(x.size()) != net.input_size())
    throw ContractError("feature length " + std::to_string(x.size()) + " does not match network input " +
                        std::to_string(net.input_size()));
  const std::size_t count = net.layers.size();
  if (keep) {
    keep->values.resize(count + 1);
    keep->values[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < count; ++l) {
      keep->values[l + 1].resize(static_cast<std::size_t>(net.layers[l].out));
      dense(net.layers[l], keep->values[l].data(), keep->values[l + 1].data(), l + 1 < count);
    }
    return keep->values[count][0];
  }
  thread_local std::vector<double> a, b;
  a.assign(x.begin(), x.end());
  for (std::size_t l = 0; l < count; ++l) {
    b.resize(static_cast<std::size_t>(net.layers[l].out));
    dense(net.layers[l], a.data(), b.data(), l + 1 < count);
    std::swap(a, b);
  }
  return a[0];
}

void backward_accumulate(const NetworkParams& net, const Activations& acts, double scale, NetworkParams& grad) {
  thread_local std::vector<double> delta, prev;
  delta.assign(1, scale);
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const Layer& layer = net.layers[l];
    Layer& g = grad.layers[l];
    const std::vector<double>& in = acts.values[l];
    for (int o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      double* gw = g.weights.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) gw[i] += d * in[i];
      g.biases[o] += d;
    }
    if (l == 0) break;
    prev.assign(static_cast<std::size_t>(layer.in), 0.0);
    for (int o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* w = layer.weights.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) prev[i] += w[i] * d;
    }
    // Hidden inputs are rectifier outputs: derivative is 1 where positive.
    for (int i = 0; i < layer.in; ++i)
      if (!(in[i] > 0.0)) prev[i] = 0.0;
    std::swap(delta, prev);
  }
}

namespace serial {

void predict_batch(const NetworkParams& net, const FeatureMatrix& x, std::span<double> out) {
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = forward(net, x.row(i));
}

NetworkParams weighted_gradient(const NetworkParams& net, const FeatureMatrix& x, std::span<const double> weights) {
  NetworkParams grad = zeros_like(net);
  Activations acts;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    forward(net, x.row(i), &acts);
    backward_accumulate(net, acts, weights[i], grad);
  }
  return grad;
}

BruteForceResult brute_force_min_cost(const Catalog& catalog, const Query& query) {
  const auto trees = enumerate_join_trees(query);
  const CardinalityModel cards(catalog, query);
  BruteForceResult r{std::numeric_limits<double>::infinity(), 0};
  for (const auto& t : trees)
    for_each_physical_plan(catalog, query, *t, [&](const PhysicalPlan& p) {
      r.min_cost = std::min(r.min_cost, plan_cost(cards, p));
      ++r.plans;
    });
  return r;
}

}  // namespace serial

namespace parallel {

void predict_batch(const NetworkParams& net, const FeatureMatrix& x, std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(x.rows());
#pragma omp parallel for schedule(static) if (n >= 64)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = forward(net, x.row(static_cast<std::size_t>(i)));
}

NetworkParams weighted_gradient(const NetworkParams& net, const FeatureMatrix& x, std::span<const double> weights) {
  const std::size_t n = x.rows();
  const int chunks = static_cast<int>(std::min<std::size_t>(kGradientChunks, std::max<std::size_t>(n, 1)));
  std::vector<NetworkParams> partial(static_cast<std::size_t>(chunks), zeros_like(net));
#pragma omp parallel for schedule(static)
  for (int c = 0; c < chunks; ++c) {
    const std::size_t lo = n * static_cast<std::size_t>(c) / chunks;
    const std::size_t hi = n * static_cast<std::size_t>(c + 1) / chunks;
    Activations acts;
    for (std::size_t i = lo; i < hi; ++i) {
      forward(net, x.row(i), &acts);
      backward_accumulate(net, acts, weights[i], partial[static_cast<std::size_t>(c)]);
    }
  }
  for (int c = 1; c < chunks; ++c) add_into(partial[0], partial[static_cast<std::size_t>(c)]);
  return std::move(partial[0]);
}

namespace {

// One join tree flattened in post order, with every operator's cost
// precomputed per choice. Summation order matches plan_cost exactly.
struct FlatTree {
  struct Node {
    int left = -1;
    int right = -1;
    int digit = 0;                // odometer position of this node's choice
    std::vector<double> choices;  // scan: per access path; join: per operator
  };
  std::vector<Node> nodes;
  std::vector<std::size_t> radix;

  RelSet add(const JoinTree& t, const CardinalityModel& cards, const std::vector<std::vector<double>>& scan_costs) {
    Node n;
    RelSet set;
    if (t.is_leaf()) {
      const int local = cards.local_index(t.relation);
      n.choices = scan_costs[static_cast<std::size_t>(local)];
      set = RelSet{1} << local;
    } else {
      const RelSet l = add(*t.left, cards, scan_costs);
      n.left = static_cast<int>(nodes.size()) - 1;
      const RelSet r = add(*t.right, cards, scan_costs);
      n.right = static_cast<int>(nodes.size()) - 1;
      for (JoinOperator op : kJoinOperators) n.choices.push_back(cost::join(op, cards.rows(l), cards.rows(r)));
      set = l | r;
    }
    n.digit = static_cast<int>(radix.size());
    radix.push_back(n.choices.size());
    nodes.push_back(std::move(n));
    return set;
  }
};

}  // namespace

// Same plan space as the serial reference, visited tree by tree.
BruteForceResult brute_force_min_cost(const Catalog& catalog, const Query& query) {
  const auto trees = enumerate_join_trees(query);
  const CardinalityModel cards(catalog, query);
  std::vector<std::vector<double>> scan_costs(static_cast<std::size_t>(cards.size()));
  for (int i = 0; i < cards.size(); ++i)
    for (const auto& path : available_access_paths(catalog, query, cards.relation_id(i)))
      scan_costs[static_cast<std::size_t>(i)].push_back(cost::scan(path, cards.base_rows(i), cards.scan_rows(i)));
  std::vector<double> agg_costs;
  if (query.aggregate)
    for (AggregateOperator g : kAggregateOperators) agg_costs.push_back(cost::aggregate(g, cards.rows(cards.full())));

  double best = std::numeric_limits<double>::infinity();
  std::uint64_t plans = 0;
  const auto n = static_cast<std::ptrdiff_t>(trees.size());
#pragma omp parallel for schedule(dynamic, 16) reduction(min : best) reduction(+ : plans)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    FlatTree flat;
    flat.add(*trees[static_cast<std::size_t>(i)], cards, scan_costs);
    std::vector<std::size_t> digit(flat.radix.size(), 0);
    std::vector<double> value(flat.nodes.size());
    while (true) {
      for (std::size_t k = 0; k < flat.nodes.size(); ++k) {
        const auto& node = flat.nodes[k];
        const double own = node.choices[digit[static_cast<std::size_t>(node.digit)]];
        value[k] = node.left < 0 ? own : value[static_cast<std::size_t>(node.left)] +
                                             value[static_cast<std::size_t>(node.right)] + own;
      }
      const double total = value.back();
      if (agg_costs.empty()) {
        best = std::min(best, total);
        ++plans;
      } else {
        for (double g : agg_costs) best = std::min(best, total + g);
        plans += agg_costs.size();
      }
      std::size_t k = 0;
      while (k < digit.size() && ++digit[k] == flat.radix[k]) digit[k++] = 0;
      if (k == digit.size()) break;
    }
  }
  return {best, plans};
}

}  // namespace parallel
}  // namespace kernels
}  // namespace qolab
