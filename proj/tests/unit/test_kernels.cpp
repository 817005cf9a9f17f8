#include <omp.h>

#include "doctest.h"
#include "qolab/agent.hpp"
#include "qolab/catalog.hpp"
#include "qolab/kernels.hpp"

using namespace qolab;

namespace {

FeatureMatrix random_batch(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  FeatureMatrix x(cols);
  for (int i = 0; i < rows; ++i)
    for (auto& v : x.append_row()) v = uniform01(rng) * 2 - 1;
  return x;
}

struct ThreadCount {
  int saved = omp_get_max_threads();
  explicit ThreadCount(int n) { omp_set_num_threads(n); }
  ~ThreadCount() { omp_set_num_threads(saved); }
};

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("predict_batch serial vs parallel") {
  const auto net = init_network(40, {32, 16}, 3);
  const auto x = random_batch(257, 40, 4);
  std::vector<double> a(x.rows()), b(x.rows());
  kernels::serial::predict_batch(net, x, a);
  kernels::parallel::predict_batch(net, x, b);
  CHECK(a == b);
  for (std::size_t i = 0; i < x.rows(); i += 31) CHECK(a[i] == predict(net, x.row(i)));
}

TEST_CASE("weighted_gradient serial vs parallel") {
  const auto net = init_network(30, {16}, 5);
  const auto x = random_batch(100, 30, 6);
  std::vector<double> w(x.rows());
  Rng rng(7);
  for (auto& v : w) v = uniform01(rng) - 0.5;
  const auto gs = kernels::serial::weighted_gradient(net, x, w);
  const auto gp = kernels::parallel::weighted_gradient(net, x, w);
  REQUIRE(gs.parameter_count() == gp.parameter_count());
  for (std::size_t i = 0; i < gs.parameter_count(); ++i) CHECK(gp.at(i) == doctest::Approx(gs.at(i)).epsilon(1e-10));
}

TEST_CASE("parallel results do not depend on thread count") {
  const auto net = init_network(30, {16}, 5);
  const auto x = random_batch(77, 30, 6);
  std::vector<double> w(x.rows(), 0.3);
  NetworkParams g1, g4;
  {
    ThreadCount t(1);
    g1 = kernels::parallel::weighted_gradient(net, x, w);
  }
  {
    ThreadCount t(4);
    g4 = kernels::parallel::weighted_gradient(net, x, w);
  }
  CHECK(g1 == g4);
}

TEST_CASE("brute force serial vs parallel") {
  const auto cat = generate_catalog({}, 12);
  WorkloadSpec s;
  s.min_relations = 2;
  s.max_relations = 5;
  s.query_count = 15;
  for (const auto& q : generate_workload(cat, s, 13).queries) {
    const auto a = kernels::serial::brute_force_min_cost(cat, q);
    const auto b = kernels::parallel::brute_force_min_cost(cat, q);
    CHECK(a.min_cost == b.min_cost);
    CHECK(a.plans == b.plans);
  }
}

TEST_CASE("empty batch") {
  const auto net = init_network(4, {4}, 1);
  FeatureMatrix x(4);
  std::vector<double> out;
  kernels::parallel::predict_batch(net, x, out);
  const auto g = kernels::parallel::weighted_gradient(net, x, {});
  for (std::size_t i = 0; i < g.parameter_count(); ++i) CHECK(g.at(i) == 0.0);
}

}
