// Acceptance run: one PASS/FAIL line per criterion, exit status 1 on any FAIL.
// Usage: qolab_acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qolab/errors.hpp"
#include "qolab/experiment.hpp"
#include "qolab/kernels.hpp"

using namespace qolab;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// Shared world for the learning criteria: 12 relations, default latency model.
struct World {
  Catalog catalog;
  LatencyModel model;
  explicit World(const LatencyConfig& lc = {}) {
    CatalogConfig cc;
    cc.relation_count = 12;
    catalog = generate_catalog(cc, 7);
    model = build_latency_model(catalog, lc, 5);
  }
  Workload workload(int count, int lo, int hi, std::uint64_t seed) const {
    WorkloadSpec s;
    s.query_count = count;
    s.min_relations = lo;
    s.max_relations = hi;
    return generate_workload(catalog, s, seed);
  }
};

// ---- 1 -----------------------------------------------------------------------

Outcome expert_optimality() {
  const auto t0 = Clock::now();
  const auto cat = generate_catalog({}, 101);
  WorkloadSpec s;
  s.query_count = 120;
  s.min_relations = 2;
  s.max_relations = 6;
  const auto w = generate_workload(cat, s, 102);
  int mismatches = 0, six = 0;
  std::uint64_t plans = 0;
  for (const auto& q : w.queries) {
    const double dp = cost_plan(cat, q, optimize_dp(cat, q)).value;
    const auto bf = kernels::parallel::brute_force_min_cost(cat, q);
    plans += bf.plans;
    if (dp != bf.min_cost) ++mismatches;
    if (q.size() == 6) ++six;
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && t < 30.0,
          fmt("%zu queries (%d with 6 relations), %llu plans, %d mismatches, %.1fs", w.queries.size(), six,
              static_cast<unsigned long long>(plans), mismatches, t)};
}

// ---- 2 -----------------------------------------------------------------------

Outcome plan_counts() {
  const long expected[] = {2, 12, 120, 1680};
  std::string detail;
  bool ok = true;
  for (int n = 2; n <= 5; ++n) {
    Query q;
    for (int i = 0; i < n; ++i) q.relation_ids.push_back(i);
    const auto trees = enumerate_join_trees(q);
    std::set<std::string> distinct;
    for (const auto& t : trees) distinct.insert(to_string(*t));
    const bool good = static_cast<long>(trees.size()) == expected[n - 2] && distinct.size() == trees.size() &&
                      count_join_orderings(n) == expected[n - 2];
    ok = ok && good;
    detail += fmt("n=%d:%zu ", n, trees.size());
  }
  return {ok, detail};
}

// ---- 3 -----------------------------------------------------------------------

Outcome scaling_equation() {
  const BootstrapCalibration worked{10, 50, 100, 200};
  bool ok = scale_latency_reward(worked, 150) == 30.0;
  ok = ok && std::abs(scale_latency_reward(worked, 100) - 10) <= 1e-9 && std::abs(scale_latency_reward(worked, 200) - 50) <= 1e-9;

  Rng rng(33);
  double worst_boundary = 0, worst_linear = 0;
  for (int i = 0; i < 1000; ++i) {
    BootstrapCalibration c;
    c.cost_min = 1 + 1000 * uniform01(rng);
    c.cost_max = c.cost_min + 1 + 1000 * uniform01(rng);
    c.latency_min = 0.01 + 100 * uniform01(rng);
    c.latency_max = c.latency_min + 0.01 + 100 * uniform01(rng);
    worst_boundary = std::max({worst_boundary, std::abs(scale_latency_reward(c, c.latency_min) - c.cost_min),
                               std::abs(scale_latency_reward(c, c.latency_max) - c.cost_max)});
    // r(l) on the line through the endpoints: r(a + t(b-a)) = r(a) + t(r(b) - r(a)), t may extrapolate
    const double a = c.latency_min + 300 * (uniform01(rng) - 0.5);
    const double b = a + 1 + 100 * uniform01(rng);
    const double tt = 3 * uniform01(rng) - 1;
    const double lhs = scale_latency_reward(c, a + tt * (b - a));
    const double rhs = scale_latency_reward(c, a) + tt * (scale_latency_reward(c, b) - scale_latency_reward(c, a));
    worst_linear = std::max(worst_linear, std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)));
  }
  ok = ok && worst_boundary <= 1e-9 && worst_linear <= 1e-9;
  return {ok, fmt("r(150)=%.17g, max boundary error %.2e, max linearity error %.2e over 1000 triples",
                  scale_latency_reward(worked, 150), worst_boundary, worst_linear)};
}

// ---- 4 -----------------------------------------------------------------------

Outcome gradient_correctness() {
  Rng rng(44);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const int in = 2 + static_cast<int>(uniform_int(rng, 0, 10));
    std::vector<int> hidden;
    const int depth = 1 + static_cast<int>(uniform_int(rng, 0, 2));
    for (int d = 0; d < depth; ++d) hidden.push_back(2 + static_cast<int>(uniform_int(rng, 0, 8)));
    auto net = init_network(in, hidden, rng());
    // random biases keep units off the rectifier kink
    for (auto& l : net.layers)
      for (auto& b : l.biases) b = uniform01(rng) - 0.5;
    std::vector<double> x(in);
    for (auto& v : x) v = 2 * uniform01(rng) - 1;
    worst = std::max(worst, gradient_check(net, x, 4 * uniform01(rng) - 2));
  }
  return {worst <= 1e-4, fmt("max relative error %.3e over 100 networks", worst)};
}

// ---- 5 -----------------------------------------------------------------------

Outcome rank_disagreement() {
  const auto t0 = Clock::now();
  const auto cat = generate_catalog({}, 55);
  const auto model = build_latency_model(cat, {}, 56);
  WorkloadSpec s;
  s.query_count = 30;
  s.min_relations = 3;
  s.max_relations = 5;
  const auto w = generate_workload(cat, s, 57);
  constexpr int kSeeds = 20;
  auto median_latency = [&](const Query& q, const PhysicalPlan& p) {
    std::vector<double> l;
    for (int e = 0; e < kSeeds; ++e) l.push_back(simulate_latency(model, cat, q, p, mix_seed(500, e)).seconds);
    return median(l);
  };
  int found = 0, checked = 0;
  std::string example;
  for (const auto& q : w.queries) {
    ++checked;
    // exhaustive: the plan with the lowest estimated cost vs the plan with the lowest true cost
    double best_est = INFINITY, best_true = INFINITY;
    PhysicalPlan by_est, by_true;
    for (const auto& tree : enumerate_join_trees(q))
      for_each_physical_plan(cat, q, *tree, [&](const PhysicalPlan& p) {
        const double est = cost_plan(cat, q, p).value;
        const double tc = true_cost(model, cat, q, p);
        if (est < best_est) best_est = est, by_est = p;
        if (tc < best_true) best_true = tc, by_true = p;
      });
    const double est_true_plan = cost_plan(cat, q, by_true).value;
    if (best_est < est_true_plan && median_latency(q, by_est) > median_latency(q, by_true)) {
      if (!found)
        example = fmt("query %d (%zu relations): est %.4g vs %.4g, median latency %.4gs vs %.4gs", q.id, q.size(),
                      best_est, est_true_plan, median_latency(q, by_est), median_latency(q, by_true));
      ++found;
    }
  }
  const double t = seconds_since(t0);
  return {found > 0 && t < 60.0, fmt("%d of %d queries disagree; %s; %.1fs", found, checked, example.c_str(), t)};
}

// ---- 6 -----------------------------------------------------------------------

Outcome vanilla_scale_anchor() {
  const auto t0 = Clock::now();
  const World world;
  const auto w = world.workload(100, 4, 7, 11);
  EnvConfig ec;  // join order only, cost reward
  std::vector<double> finals;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    Environment env(ec, world.catalog);
    auto agent = ValueAgent::create(ec.feature_size(), {}, seed);
    TrainerConfig tc;
    tc.episodes = 10000;
    tc.exploration_seed = seed;
    tc.execution_seed = seed;
    const auto m = train_vanilla_cost(env, w, agent, tc);
    std::vector<double> tail;
    for (std::size_t i = m.records.size() - 500; i < m.records.size(); ++i) tail.push_back(m.records[i].cost_ratio);
    finals.push_back(median(tail));
    detail += fmt("seed %llu: %.4f  ", static_cast<unsigned long long>(seed), finals.back());
  }
  const double med = median(finals);
  const double t = seconds_since(t0);
  return {med <= 1.25 && t < 900.0, detail + fmt("median %.4f, %.0fs", med, t)};
}

// ---- 7 / 8 -------------------------------------------------------------------

std::vector<EpisodeHistory> corpus_for(Environment& env, const Workload& w) {
  return build_expert_corpus(env, w, ExpertKind::DynamicProgramming, 1000);
}

Outcome overhead_vs_lfd() {
  const auto t0 = Clock::now();
  const World world;
  const auto w = world.workload(100, 6, 7, 21);
  EnvConfig ec;
  ec.reward = RewardKind::Latency;
  TrainerConfig tc;
  tc.episodes = 1000;

  Environment naive_env(ec, world.catalog, &world.model);
  auto naive_agent = ValueAgent::create(ec.feature_size(), {}, 1);
  const auto naive = train_naive_latency(naive_env, w, naive_agent, tc);
  const double naive_frac = static_cast<double>(naive.timeouts()) / naive.records.size();

  Environment env(ec, world.catalog, &world.model);
  const auto corpus = corpus_for(env, w);
  auto agent = ValueAgent::create(ec.feature_size(), {}, 1);
  pretrain_from_demonstration(env, agent, corpus, {});
  const auto lfd = finetune_lfd(env, w, agent, corpus, tc);
  const double lfd_frac = static_cast<double>(lfd.metrics.timeouts()) / lfd.metrics.records.size();
  double worst = 0;
  for (const auto& r : lfd.metrics.records) worst = std::max(worst, r.latency_ratio);

  const bool ok = naive_frac >= 0.05 && lfd_frac < 0.01 && worst <= 10.0;
  return {ok, fmt("naive timeouts %.1f%%; lfd timeouts %.1f%%, worst latency ratio %.2f, slips %d; %.0fs",
                  100 * naive_frac, 100 * lfd_frac, worst, lfd.slips, seconds_since(t0))};
}

Outcome lfd_mimicry() {
  const auto t0 = Clock::now();
  const World world;
  EnvConfig ec;
  ec.reward = RewardKind::Latency;
  Environment env(ec, world.catalog, &world.model);
  const auto train = corpus_for(env, world.workload(500, 4, 7, 11));
  const auto held = corpus_for(env, world.workload(100, 4, 7, 99));
  auto agent = ValueAgent::create(ec.feature_size(), {}, 1);
  PretrainConfig pc;
  pc.passes = 20;
  const auto r = pretrain_from_demonstration(env, agent, train, pc);
  const double a_train = demonstration_agreement(env, agent, train);
  const double a_held = demonstration_agreement(env, agent, held);
  return {a_held >= 0.70, fmt("held-out agreement %.3f (train %.3f), final loss %.4g, %.0fs", a_held, a_train,
                              r.final_loss, seconds_since(t0))};
}

// ---- 9 -----------------------------------------------------------------------

Outcome bootstrap_switch() {
  const auto t0 = Clock::now();
  TrainerConfig tc;
  BootstrapConfig bc;
  bc.phase1_cap = 3000;
  bc.phase2_episodes = 100;
  EnvConfig ec;

  const World world;
  const auto w = world.workload(100, 4, 7, 11);
  Environment env(ec, world.catalog, &world.model);
  auto agent = ValueAgent::create(ec.feature_size(), {}, 1);
  const auto r = train_bootstrap(env, w, agent, tc, bc);
  std::vector<double> p2;
  for (const auto& rec : r.metrics.records)
    if (rec.phase == "phase2") p2.push_back(rec.cost_ratio);
  const double med2 = median(p2);

  // noise and estimation error off, linear latency
  LatencyConfig quiet;
  quiet.gamma = 1.0;
  quiet.noise_sigma = quiet.error_sigma = quiet.heavy_error_probability = quiet.heavy_error_sigma = 0.0;
  const World clean(quiet);
  Environment cenv(ec, clean.catalog, &clean.model);
  auto cagent = ValueAgent::create(ec.feature_size(), {}, 1);
  const auto cr = train_bootstrap(cenv, w, cagent, tc, bc);
  // phase-1 reward of a plan is its cost; fit the line through the extreme plans, check every episode
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < cr.phase2_rewards.size(); ++i)
    pts.emplace_back(cr.metrics.records[cr.phase1_episodes + i].agent_cost, cr.phase2_rewards[i]);
  const auto [lo, hi] = std::minmax_element(pts.begin(), pts.end());
  double worst = 0;
  bool fit = hi->first > lo->first;
  if (fit) {
    const double slope = (hi->second - lo->second) / (hi->first - lo->first);
    for (const auto& [c, rw] : pts)
      worst = std::max(worst, std::abs(rw - (lo->second + slope * (c - lo->first))) / std::max(1.0, std::abs(rw)));
  }
  std::vector<double> tail1, head2;
  for (const auto& rec : cr.metrics.records) (rec.phase == "phase1" ? tail1 : head2).push_back(rec.cost_ratio);
  tail1.erase(tail1.begin(), tail1.end() - std::min<std::ptrdiff_t>(100, tail1.size()));

  const bool ok = med2 <= 1.5 && fit && worst <= 1e-9;
  return {ok, fmt("phase-2 median cost ratio %.4f (phase 1: %lld episodes, converged %d); zero-noise affine residual "
                  "%.2e, phase-1 tail %.4f vs phase-2 head %.4f; %.0fs",
                  med2, static_cast<long long>(r.phase1_episodes), r.metrics.phase1_converged, worst, median(tail1),
                  median(head2), seconds_since(t0))};
}

// ---- 10 / 11 -----------------------------------------------------------------

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config(const fs::path& out, const std::string& kind) {
  return parse_config("{}", {"catalog.relation_count=10", "workload.query_count=30", "workload.min_relations=2",
                             "workload.max_relations=6", "trainer.kind=" + kind, "trainer.episodes=300",
                             "trainer.pretrain.passes=5", "trainer.bootstrap.phase1_cap=300",
                             "trainer.bootstrap.phase2_episodes=100", "trainer.curriculum.phase_budget=150",
                             "output_dir=" + out.string()});
}

Outcome curriculum_structure() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (auto kind : {CurriculumKind::Pipeline, CurriculumKind::Relations, CurriculumKind::Hybrid})
    for (int n = 1; n <= 12; ++n) {
      if (kind == CurriculumKind::Relations && n < 2) continue;
      const auto s = make_schedule(kind, n);
      try {
        validate_schedule(s);
      } catch (const ConfigError&) {
        ok = false;
      }
      for (std::size_t i = 1; i < s.phases.size(); ++i) {
        const auto &a = s.phases[i - 1], &b = s.phases[i];
        if (b.stages < a.stages || b.max_relations < a.max_relations) ok = false;
      }
      if (kind == CurriculumKind::Pipeline && s.phases.size() != 4) ok = false;
    }
  detail += ok ? "schedules monotone; " : "schedule invariant broken; ";

  const World world;
  const auto w = world.workload(100, 4, 7, 11);
  EnvConfig ec;
  TrainerConfig tc;
  tc.episodes = 2000;
  auto s = make_schedule(CurriculumKind::Pipeline, ec.max_relations);
  s.phase_budget = tc.episodes;
  auto a = ValueAgent::create(ec.feature_size(), {}, 1);
  auto b = a;
  Environment env(ec, world.catalog);
  const auto vanilla = train_vanilla_cost(env, w, a, tc);
  std::int64_t phase1 = -1;
  const auto cur = train_curriculum(world.catalog, w, nullptr, ec, b, s, tc, [&](std::size_t p, const ValueAgent&, std::int64_t seen) {
    if (p == 0) phase1 = seen;
  });
  bool same = phase1 > 0 && phase1 <= static_cast<std::int64_t>(vanilla.records.size());
  for (std::int64_t i = 0; same && i < phase1; ++i) {
    auto x = vanilla.records[i];
    x.phase = cur.records[i].phase;
    same = metrics_row(x) == metrics_row(cur.records[i]);
  }
  ok = ok && same;
  detail += fmt("phase 1 (%lld episodes) %s vanilla; ", static_cast<long long>(phase1), same ? "identical to" : "differs from");

  const fs::path dir = fs::temp_directory_path() / "qolab-acceptance-curriculum";
  fs::remove_all(dir);
  const auto cfg = small_config(dir, "curriculum:pipeline");
  cmd_generate(cfg);
  const auto run = cmd_train(cfg);
  std::size_t present = 0;
  for (const auto& p : run[0].phase_checkpoints) present += fs::exists(p);
  ok = ok && run[0].phase_checkpoints.size() == 4 && present == 4;
  detail += fmt("pipeline run wrote %zu phase checkpoints; %.0fs", present, seconds_since(t0));
  fs::remove_all(dir);
  return {ok, detail};
}

Outcome determinism() {
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / "qolab-acceptance-determinism";
  fs::remove_all(root);
  bool ok = true;
  std::string detail;
  for (const std::string kind : {"vanilla", "naive-latency", "lfd", "bootstrap", "curriculum:pipeline",
                                 "curriculum:relations", "curriculum:hybrid"}) {
    std::string bytes[2];
    for (int rep = 0; rep < 2; ++rep) {
      const auto dir = root / (kind.substr(kind.find(':') + 1) + "-" + std::to_string(rep));
      const auto cfg = small_config(dir, kind);
      cmd_generate(cfg);
      bytes[rep] = slurp(cmd_train(cfg)[0].metrics_path);
    }
    const bool same = !bytes[0].empty() && bytes[0] == bytes[1];
    ok = ok && same;
    detail += kind + (same ? " ok; " : " DIFFERS; ");
  }
  // concurrent replicas match their sequential counterparts
  const auto par_dir = root / "parallel";
  auto cfg = small_config(par_dir, "vanilla");
  cmd_generate(cfg);
  const auto par = cmd_train(cfg, 2);
  cfg.seeds.agent += 1;
  cfg.seeds.execution += 1;
  cfg.output_dir = (root / "sequential").string();
  cmd_generate(cfg);
  const bool replica = slurp(par[1].metrics_path) == slurp(cmd_train(cfg)[0].metrics_path);
  ok = ok && replica;
  detail += fmt("parallel replica %s; %.0fs", replica ? "ok" : "DIFFERS", seconds_since(t0));
  fs::remove_all(root);
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"expert optimality", expert_optimality},
      {"plan-space counts", plan_counts},
      {"scaling equation", scaling_equation},
      {"gradient correctness", gradient_correctness},
      {"rank disagreement", rank_disagreement},
      {"vanilla scale anchor", vanilla_scale_anchor},
      {"evaluation overhead vs lfd", overhead_vs_lfd},
      {"lfd mimicry", lfd_mimicry},
      {"bootstrap switch safety", bootstrap_switch},
      {"curriculum structure", curriculum_structure},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
