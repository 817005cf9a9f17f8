#include "qolab/trainers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "qolab/errors.hpp"
#include "qolab/expert.hpp"
#include "qolab/kernels.hpp"

namespace qolab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double median_of(std::vector<double> v) {
  if (v.empty()) return kNaN;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

std::string fmt_real(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_real(const std::string& s) {
  if (s.empty()) return kNaN;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

// Expert plans and costs, computed once per query id.
class ExpertCache {
 public:
  explicit ExpertCache(const Catalog& catalog) : catalog_(&catalog) {}
  const std::pair<PhysicalPlan, double>& get(const Query& q) {
    auto it = plans_.find(q.id);
    if (it == plans_.end()) {
      PhysicalPlan p = optimize_dp(*catalog_, q);
      const double c = cost_plan(*catalog_, q, p).value;
      it = plans_.emplace(q.id, std::make_pair(std::move(p), c)).first;
    }
    return it->second;
  }

 private:
  const Catalog* catalog_;
  std::map<int, std::pair<PhysicalPlan, double>> plans_;
};

struct PhaseRun {
  std::string label;
  std::vector<const Query*> queries;  // round robin from the first
  std::int64_t first_episode = 0;
  std::int64_t episodes = 0;
  double timeout_multiplier = std::numeric_limits<double>::infinity();
  bool clamp_to_budget = false;
  std::function<double(std::int64_t local)> epsilon;
  std::function<void(std::int64_t local)> before;
  // Returns true to end the phase after this episode.
  std::function<bool(const EpisodeRecord&, double target)> after;
};

// Shared rollout / replay / update machinery. One instance spans all phases
// of a run so the replay memory and random streams carry over.
class Loop {
 public:
  Loop(Environment& env, ValueAgent& agent, const TrainerConfig& cfg, std::uint64_t salt)
      : env_(&env),
        agent_(&agent),
        cfg_(cfg),
        experts_(env.catalog()),
        replay_(env.config().feature_size(), std::max<std::size_t>(cfg.replay_capacity, 1)),
        explore_(mix_seed(cfg.exploration_seed, salt)),
        sampler_(mix_seed(cfg.exploration_seed, salt + 0x51)),
        steps_(env.config().feature_size()) {
    if (agent.params.input_size() != env.config().feature_size())
      throw ContractError("agent input size does not match the environment feature size");
    if (cfg.updates_per_episode < 0) throw ConfigError("updates_per_episode must be >= 0");
  }

  void set_env(Environment& env) {
    if (env.config().feature_size() != env_->config().feature_size())
      throw ContractError("feature size changed between phases");
    env_ = &env;
  }

  const ReplayBuffer* expert = nullptr;
  double mix_fraction = 0.0;
  bool mixing = false;

  Metrics run(const PhaseRun& run) {
    Metrics m;
    if (run.queries.empty()) throw ConfigError("phase '" + run.label + "' has no queries");
    const Featurizer featurize = [this](const EnvState& s, const Action& a, std::span<double> out) {
      env_->featurize_into(s, a, out);
    };
    const LatencyModel* model = env_->latency_model();
    for (std::int64_t local = 0; local < run.episodes; ++local) {
      const auto t0 = std::chrono::steady_clock::now();
      if (run.before) run.before(local);
      const std::int64_t episode = run.first_episode + local;
      const Query& q = *run.queries[static_cast<std::size_t>(local % static_cast<std::int64_t>(run.queries.size()))];
      const double eps = run.epsilon(local);
      const std::uint64_t exec_seed = mix_seed(cfg_.execution_seed, static_cast<std::uint64_t>(episode));

      // roll out
      steps_.clear();
      EnvState s = env_->reset(q);
      while (!s.terminal) {
        const auto legal = env_->legal_actions(s);
        const Action a = select_action(agent_->params, s, legal, featurize, eps, explore_);
        if (legal.size() > 1) env_->featurize_into(s, a, steps_.append_row());
        s = env_->step(s, a);
      }
      const PhysicalPlan plan = env_->extract_plan(s);

      EpisodeRecord r;
      r.episode = episode;
      r.phase = run.label;
      r.query_id = q.id;
      r.epsilon = eps;
      const auto& [expert_plan, expert_cost] = experts_.get(q);
      r.agent_cost = cost_plan(env_->catalog(), q, plan).value;
      r.expert_cost = expert_cost;
      r.cost_ratio = expert_cost > 0.0 ? r.agent_cost / expert_cost : 1.0;
      r.latency_s = r.expert_latency_s = r.latency_ratio = kNaN;
      if (model) {
        r.latency_s = simulate_latency(*model, env_->catalog(), q, plan, exec_seed).seconds;
        r.expert_latency_s = simulate_latency(*model, env_->catalog(), q, expert_plan, exec_seed).seconds;
        r.latency_ratio = r.latency_s / r.expert_latency_s;
        r.timeout = r.latency_s > run.timeout_multiplier * r.expert_latency_s;
      }
      double target = -env_->episode_reward(plan, q, exec_seed);
      if (run.clamp_to_budget && r.timeout) target = run.timeout_multiplier * r.expert_latency_s;

      remember(target);
      r.loss = update();
      r.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      m.records.push_back(r);
      if (run.after && run.after(r, target)) break;
    }
    return m;
  }

 private:
  void remember(double target) {
    for (std::size_t i = 0; i < steps_.rows(); ++i) replay_.add(steps_.row(i), target);
    if (agent_->calibrated()) return;
    warmup_.push_back(target);
    if (static_cast<std::int64_t>(warmup_.size()) >= std::max<std::int64_t>(cfg_.warmup_episodes, 1)) {
      agent_->calibrate(warmup_);
      warmup_.clear();
    }
  }

  double update() {
    if (!agent_->calibrated() || replay_.size() == 0 || cfg_.updates_per_episode == 0) return 0.0;
    const auto batch = static_cast<std::size_t>(std::max(agent_->config.batch_size, 1));
    std::size_t from_expert = 0;
    if (mixing && expert && expert->size() > 0)
      from_expert = static_cast<std::size_t>(std::lround(mix_fraction * static_cast<double>(batch)));
    double loss = 0.0;
    for (int u = 0; u < cfg_.updates_per_episode; ++u) {
      batch_x_ = FeatureMatrix(env_->config().feature_size());
      raw_.clear();
      replay_.sample(batch - from_expert, sampler_, batch_x_, raw_);
      if (from_expert) expert->sample(from_expert, sampler_, batch_x_, raw_);
      for (double& t : raw_) t = agent_->normalize(t);
      loss += train_batch(agent_->params, agent_->trainer, batch_x_, raw_);
    }
    return loss / cfg_.updates_per_episode;
  }

  Environment* env_;
  ValueAgent* agent_;
  TrainerConfig cfg_;
  ExpertCache experts_;
  ReplayBuffer replay_;
  Rng explore_;
  Rng sampler_;
  FeatureMatrix steps_;
  FeatureMatrix batch_x_;
  std::vector<double> raw_;
  std::vector<double> warmup_;
};

std::vector<const Query*> all_queries(const Workload& w) {
  std::vector<const Query*> out;
  for (const auto& q : w.queries) out.push_back(&q);
  return out;
}

std::function<double(std::int64_t)> schedule_for(const ValueAgent& agent, const TrainerConfig& cfg,
                                                 std::int64_t total) {
  if (cfg.epsilon) {
    const double e = *cfg.epsilon;
    return [e](std::int64_t) { return e; };
  }
  return [&agent, total](std::int64_t local) { return agent.epsilon_at(local, total); };
}

}  // namespace

// ---- metrics ---------------------------------------------------------------

std::int64_t Metrics::timeouts() const {
  return std::count_if(records.begin(), records.end(), [](const EpisodeRecord& r) { return r.timeout; });
}

void Metrics::append(const Metrics& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
  phase1_converged = phase1_converged && other.phase1_converged;
  budget_exhausted_phases.insert(budget_exhausted_phases.end(), other.budget_exhausted_phases.begin(),
                                 other.budget_exhausted_phases.end());
}

std::string metrics_row(const EpisodeRecord& r) {
  std::string s = std::to_string(r.episode) + "," + r.phase + "," + std::to_string(r.query_id);
  for (double v : {r.agent_cost, r.expert_cost, r.cost_ratio, r.latency_s, r.expert_latency_s, r.latency_ratio, r.loss,
                   r.epsilon})
    s += "," + fmt_real(v);
  s += r.timeout ? ",1" : ",0";
  return s;
}

void write_metrics_csv(std::ostream& out, const Metrics& m, const std::string& comment) {
  if (!comment.empty()) out << "# " << comment << "\n";
  out << kMetricsHeader << "\n";
  for (const auto& r : m.records) out << metrics_row(r) << "\n";
}

void write_metrics_csv(const std::string& path, const Metrics& m, const std::string& comment) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(IoErrorKind::MissingFile, "cannot write " + path);
  write_metrics_csv(f, m, comment);
}

Metrics read_metrics_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(IoErrorKind::MissingFile, "no such metrics file: " + path);
  Metrics m;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kMetricsHeader) throw IoError(IoErrorKind::Malformed, path + ": unexpected metrics header");
      header = true;
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) fields.push_back(cell);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 12) throw IoError(IoErrorKind::Malformed, path + ":" + std::to_string(lineno) + ": expected 12 fields");
    try {
      EpisodeRecord r;
      r.episode = std::stoll(fields[0]);
      r.phase = fields[1];
      r.query_id = std::stoi(fields[2]);
      r.agent_cost = parse_real(fields[3]);
      r.expert_cost = parse_real(fields[4]);
      r.cost_ratio = parse_real(fields[5]);
      r.latency_s = parse_real(fields[6]);
      r.expert_latency_s = parse_real(fields[7]);
      r.latency_ratio = parse_real(fields[8]);
      r.loss = parse_real(fields[9]);
      r.epsilon = parse_real(fields[10]);
      r.timeout = fields[11] == "1";
      m.records.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw IoError(IoErrorKind::Malformed, path + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  if (!header) throw IoError(IoErrorKind::Malformed, path + ": missing metrics header");
  return m;
}

// ---- replay ----------------------------------------------------------------

ReplayBuffer::ReplayBuffer(int feature_size, std::size_t capacity) : cols_(feature_size), capacity_(capacity) {
  if (capacity == 0) throw ContractError("replay capacity must be >= 1");
}

void ReplayBuffer::add(std::span<const double> features, double raw_target) {
  if (static_cast<int>(features.size()) != cols_) throw ContractError("replay feature length mismatch");
  if (targets_.size() < capacity_) {
    rows_.insert(rows_.end(), features.begin(), features.end());
    targets_.push_back(raw_target);
    return;
  }
  std::copy(features.begin(), features.end(), rows_.begin() + static_cast<std::ptrdiff_t>(next_ * cols_));
  targets_[next_] = raw_target;
  next_ = (next_ + 1) % capacity_;
}

std::span<const double> ReplayBuffer::features(std::size_t i) const {
  return {rows_.data() + i * static_cast<std::size_t>(cols_), static_cast<std::size_t>(cols_)};
}

void ReplayBuffer::sample(std::size_t count, Rng& rng, FeatureMatrix& x, std::vector<double>& raw_targets) const {
  if (targets_.empty()) throw ContractError("sampling from an empty replay buffer");
  for (std::size_t k = 0; k < count; ++k) {
    const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(targets_.size()) - 1));
    const auto src = features(i);
    std::copy(src.begin(), src.end(), x.append_row().begin());
    raw_targets.push_back(targets_[i]);
  }
}

// ---- vanilla / naive -------------------------------------------------------

Metrics train_vanilla_cost(Environment& env, const Workload& workload, ValueAgent& agent, const TrainerConfig& config) {
  if (env.config().reward != RewardKind::Cost) throw ContractError("vanilla trainer needs the cost reward");
  if (config.episodes <= 0) return {};
  Loop loop(env, agent, config, 0);
  PhaseRun run;
  run.label = "vanilla";
  run.queries = all_queries(workload);
  run.episodes = config.episodes;
  run.epsilon = schedule_for(agent, config, config.episodes);
  return loop.run(run);
}

Metrics train_naive_latency(Environment& env, const Workload& workload, ValueAgent& agent, const TrainerConfig& config,
                            const NaiveLatencyConfig& naive) {
  if (env.config().reward != RewardKind::Latency) throw ContractError("naive trainer needs the latency reward");
  if (!env.latency_model()) throw ContractError("naive trainer needs a latency model");
  if (!(naive.budget_multiplier > 0.0)) throw ConfigError("latency budget must be > 0");
  if (config.episodes <= 0) return {};
  Loop loop(env, agent, config, 0);
  PhaseRun run;
  run.label = "naive-latency";
  run.queries = all_queries(workload);
  run.episodes = config.episodes;
  run.timeout_multiplier = naive.budget_multiplier;
  run.clamp_to_budget = true;
  run.epsilon = schedule_for(agent, config, config.episodes);
  return loop.run(run);
}

// ---- demonstrations --------------------------------------------------------

namespace {

struct DemoStep {
  std::size_t first_row = 0;
  std::size_t rows = 0;
  std::size_t expert = 0;  // offset of the demonstrated action
  double target = 0.0;
};

struct DemoSet {
  FeatureMatrix x;
  std::vector<DemoStep> steps;
  std::vector<std::size_t> history_of_step;
};

DemoSet build_demo_set(const Environment& env, std::span<const EpisodeHistory> corpus) {
  DemoSet d{FeatureMatrix(env.config().feature_size()), {}, {}};
  for (std::size_t h = 0; h < corpus.size(); ++h) {
    const auto& hist = corpus[h];
    if (!hist.latency_s) throw ContractError("demonstration without an observed latency");
    for (const auto& step : hist.steps) {
      const auto legal = env.legal_actions(step.state);
      DemoStep ds;
      ds.first_row = d.x.rows();
      ds.rows = legal.size();
      ds.target = *hist.latency_s;
      bool found = false;
      for (std::size_t i = 0; i < legal.size(); ++i) {
        env.featurize_into(step.state, legal[i], d.x.append_row());
        if (!found && legal[i].same_choice(step.action)) {
          ds.expert = i;
          found = true;
        }
      }
      if (!found) throw ContractError("demonstrated action is not legal in its recorded state");
      d.steps.push_back(ds);
      d.history_of_step.push_back(h);
    }
  }
  return d;
}

double expert_mse(const ValueAgent& agent, const DemoSet& d, std::span<const std::size_t> steps) {
  if (steps.empty()) return 0.0;
  FeatureMatrix x(d.x.cols);
  for (std::size_t s : steps) {
    const auto src = d.x.row(d.steps[s].first_row + d.steps[s].expert);
    std::copy(src.begin(), src.end(), x.append_row().begin());
  }
  std::vector<double> pred(steps.size());
  kernels::parallel::predict_batch(agent.params, x, pred);
  double loss = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double e = pred[i] - agent.normalize(d.steps[steps[i]].target);
    loss += e * e;
  }
  return loss / static_cast<double>(steps.size());
}

}  // namespace

PretrainResult pretrain_from_demonstration(const Environment& env, ValueAgent& agent,
                                           std::span<const EpisodeHistory> corpus, const PretrainConfig& config) {
  if (corpus.empty()) throw ContractError("pretraining needs a nonempty demonstration log");
  if (config.passes < 0 || config.batch_size < 1 || config.max_alternatives < 0)
    throw ConfigError("invalid pretraining configuration");
  PretrainResult result;
  if (config.passes == 0) return result;

  const DemoSet d = build_demo_set(env, corpus);
  if (!agent.calibrated()) {
    std::vector<double> lat;
    for (const auto& h : corpus) lat.push_back(*h.latency_s);
    agent.calibrate(lat);
  }

  Rng rng(mix_seed(config.seed, 0x9e7));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto held = corpus.size() > 1
                        ? static_cast<std::size_t>(std::floor(config.holdout_fraction * static_cast<double>(corpus.size())))
                        : 0;
  std::vector<bool> is_held(corpus.size(), false);
  for (std::size_t i = 0; i < held; ++i) is_held[order[i]] = true;
  std::vector<std::size_t> train, holdout;
  for (std::size_t s = 0; s < d.steps.size(); ++s) (is_held[d.history_of_step[s]] ? holdout : train).push_back(s);
  if (train.empty()) throw ContractError("demonstration log has no training steps");

  std::vector<double> targets(d.steps.size());
  for (std::size_t s = 0; s < d.steps.size(); ++s) targets[s] = agent.normalize(d.steps[s].target);

  const double lambda = config.margin_weight;
  FeatureMatrix x(d.x.cols);
  std::vector<double> pred, weights;
  struct Slot {
    std::size_t step;
    std::size_t expert_row;
    std::size_t alt_begin, alt_end;
  };
  std::vector<Slot> slots;
  std::vector<std::size_t> alts;

  for (int pass = 0; pass < config.passes; ++pass) {
    std::shuffle(train.begin(), train.end(), rng);
    double pass_loss = 0.0;
    int batches = 0;
    for (std::size_t begin = 0; begin < train.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(train.size(), begin + static_cast<std::size_t>(config.batch_size));
      const double bsz = static_cast<double>(end - begin);
      x.clear();
      slots.clear();
      for (std::size_t k = begin; k < end; ++k) {
        const DemoStep& ds = d.steps[train[k]];
        Slot sl{train[k], x.rows(), 0, 0};
        auto copy_row = [&](std::size_t offset) {
          const auto src = d.x.row(ds.first_row + offset);
          std::copy(src.begin(), src.end(), x.append_row().begin());
        };
        copy_row(ds.expert);
        sl.alt_begin = x.rows();
        if (lambda > 0.0 && ds.rows > 1) {
          alts.clear();
          for (std::size_t i = 0; i < ds.rows; ++i)
            if (i != ds.expert) alts.push_back(i);
          const std::size_t take = std::min(alts.size(), static_cast<std::size_t>(config.max_alternatives));
          for (std::size_t i = 0; i < take; ++i) {
            const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                                static_cast<std::int64_t>(alts.size()) - 1));
            std::swap(alts[i], alts[j]);
            copy_row(alts[i]);
          }
        }
        sl.alt_end = x.rows();
        slots.push_back(sl);
      }
      pred.resize(x.rows());
      kernels::parallel::predict_batch(agent.params, x, pred);
      weights.assign(x.rows(), 0.0);
      double loss = 0.0;
      for (const auto& sl : slots) {
        const double pe = pred[sl.expert_row];
        const double err = pe - targets[sl.step];
        loss += err * err / bsz;
        weights[sl.expert_row] += 2.0 * err / bsz;
        for (std::size_t r = sl.alt_begin; r < sl.alt_end; ++r) {
          const double gap = pe + config.margin - pred[r];
          if (gap <= 0.0) continue;
          loss += lambda * gap / bsz;
          weights[sl.expert_row] += lambda / bsz;
          weights[r] -= lambda / bsz;
        }
      }
      apply_gradient(agent.params, agent.trainer, kernels::parallel::weighted_gradient(agent.params, x, weights));
      pass_loss += loss;
      ++batches;
    }
    result.train_loss.push_back(pass_loss / batches);
    result.holdout_loss.push_back(expert_mse(agent, d, holdout));
  }
  result.final_loss = result.train_loss.back();
  return result;
}

double demonstration_agreement(const Environment& env, const ValueAgent& agent, std::span<const EpisodeHistory> corpus) {
  const Featurizer featurize = featurizer_for(env);
  std::size_t total = 0, agree = 0;
  for (const auto& h : corpus)
    for (const auto& step : h.steps) {
      const auto legal = env.legal_actions(step.state);
      if (legal.size() < 2) continue;
      const auto scores = score_actions(agent.params, step.state, legal, featurize);
      const auto best = static_cast<std::size_t>(std::min_element(scores.begin(), scores.end()) - scores.begin());
      ++total;
      if (legal[best].same_choice(step.action)) ++agree;
    }
  return total == 0 ? 1.0 : static_cast<double>(agree) / static_cast<double>(total);
}

SlipDetector::SlipDetector(int window, double tau, double recovery) : window_(window), tau_(tau), recovery_(recovery) {
  if (window < 1) throw ConfigError("slip window must be >= 1");
  if (!(recovery >= 1.0) || !(tau > recovery)) throw ConfigError("slip thresholds need tau > recovery >= 1");
}

double SlipDetector::median() const { return median_of({ratios_.begin(), ratios_.end()}); }

bool SlipDetector::observe(double ratio) {
  ratios_.push_back(ratio);
  if (static_cast<int>(ratios_.size()) > window_) ratios_.pop_front();
  if (static_cast<int>(ratios_.size()) < window_) return false;
  const double med = median();
  const bool fire = med > tau_;
  if (fire && !slipping_) {
    slipping_ = true;
    ++fired_;
  } else if (slipping_ && med <= recovery_) {
    slipping_ = false;
  }
  return fire;
}

FinetuneResult finetune_lfd(Environment& env, const Workload& workload, ValueAgent& agent,
                            std::span<const EpisodeHistory> corpus, const TrainerConfig& config,
                            const FinetuneConfig& finetune) {
  if (env.config().reward != RewardKind::Latency) throw ContractError("fine-tuning needs the latency reward");
  if (!env.latency_model()) throw ContractError("fine-tuning needs a latency model");
  if (!agent.calibrated()) throw ContractError("fine-tuning needs a pretrained agent");
  if (finetune.mix_fraction < 0.0 || finetune.mix_fraction > 1.0) throw ConfigError("mix fraction outside [0,1]");
  FinetuneResult out;
  if (config.episodes <= 0) return out;

  ReplayBuffer expert(env.config().feature_size(), std::max<std::size_t>(config.replay_capacity, 1));
  for (const auto& h : corpus) {
    if (!h.latency_s) throw ContractError("demonstration without an observed latency");
    for (const auto& step : h.steps) expert.add(env.featurize(step.state, step.action), *h.latency_s);
  }

  // tau = +inf disables the detector
  std::optional<SlipDetector> detector;
  if (std::isfinite(finetune.slip_tau)) detector.emplace(finetune.slip_window, finetune.slip_tau, finetune.slip_recovery);

  Loop loop(env, agent, config, 0);
  loop.expert = &expert;
  loop.mix_fraction = finetune.mix_fraction;
  PhaseRun run;
  run.label = "lfd";
  run.queries = all_queries(workload);
  run.episodes = config.episodes;
  run.timeout_multiplier = finetune.timeout_multiplier;
  run.epsilon = config.epsilon ? schedule_for(agent, config, config.episodes)
                               : std::function<double(std::int64_t)>([](std::int64_t) { return 0.0; });
  run.before = [&](std::int64_t local) {
    if (finetune.before_episode) finetune.before_episode(local, agent);
    out.mixing.push_back(loop.mixing);
  };
  run.after = [&](const EpisodeRecord& r, double) {
    if (detector) {
      detector->observe(r.latency_ratio);
      loop.mixing = detector->slipping();
    }
    return false;
  };
  out.metrics = loop.run(run);
  out.slips = detector ? detector->fired() : 0;
  return out;
}

// ---- bootstrapping ---------------------------------------------------------

BootstrapCalibration calibrate_bootstrap(std::span<const double> costs, std::span<const double> latencies) {
  if (costs.empty() || latencies.empty()) throw CalibrationError("empty calibration window");
  BootstrapCalibration c;
  const auto [cmin, cmax] = std::minmax_element(costs.begin(), costs.end());
  const auto [lmin, lmax] = std::minmax_element(latencies.begin(), latencies.end());
  c.cost_min = *cmin;
  c.cost_max = *cmax;
  c.latency_min = *lmin;
  c.latency_max = *lmax;
  if (!(c.cost_min < c.cost_max)) throw CalibrationError("calibration window has no cost range");
  if (!(c.latency_min < c.latency_max)) throw CalibrationError("calibration window has no latency range");
  validate_calibration(c);
  return c;
}

BootstrapCalibration calibrate_bootstrap(std::span<const EpisodeRecord> records, std::size_t window) {
  const std::size_t n = std::min(window, records.size());
  std::vector<double> costs, lats;
  for (std::size_t i = records.size() - n; i < records.size(); ++i) {
    costs.push_back(records[i].agent_cost);
    lats.push_back(records[i].latency_s);
  }
  return calibrate_bootstrap(costs, lats);
}

bool detect_convergence(std::span<const double> history, std::size_t window, double relative_epsilon) {
  if (window == 0 || history.size() < 2 * window) return false;
  const auto last = history.end() - static_cast<std::ptrdiff_t>(window);
  const auto prev = last - static_cast<std::ptrdiff_t>(window);
  const double k = static_cast<double>(window);
  const double m_last = std::accumulate(last, history.end(), 0.0) / k;
  const double m_prev = std::accumulate(prev, last, 0.0) / k;
  return std::abs(m_last - m_prev) <= relative_epsilon * std::abs(m_prev);
}

BootstrapResult train_bootstrap(const Environment& env, const Workload& workload, ValueAgent& agent,
                                const TrainerConfig& config, const BootstrapConfig& bootstrap) {
  if (!env.latency_model()) throw ContractError("bootstrapping needs a latency model");
  BootstrapResult out;
  EnvConfig c1 = env.config();
  c1.reward = RewardKind::Cost;
  c1.calibration.reset();
  Environment env1(c1, env.catalog(), env.latency_model());
  Loop loop(env1, agent, config, 0);

  std::vector<double> history;
  bool converged = false;
  PhaseRun p1;
  p1.label = "phase1";
  p1.queries = all_queries(workload);
  p1.episodes = bootstrap.phase1_cap;
  p1.epsilon = schedule_for(agent, config, bootstrap.phase1_cap);
  p1.after = [&](const EpisodeRecord&, double target) {
    history.push_back(target);
    converged = detect_convergence(history, bootstrap.convergence_window, bootstrap.convergence_epsilon);
    return converged;
  };
  out.metrics = loop.run(p1);
  out.metrics.phase1_converged = converged;
  out.phase1_episodes = static_cast<std::int64_t>(out.metrics.records.size());
  if (bootstrap.phase2_episodes <= 0) return out;

  out.calibration = calibrate_bootstrap(out.metrics.records, bootstrap.calibration_window);
  EnvConfig c2 = env.config();
  c2.reward = RewardKind::ScaledLatency;
  c2.calibration = out.calibration;
  Environment env2(c2, env.catalog(), env.latency_model());
  loop.set_env(env2);
  PhaseRun p2;
  p2.label = "phase2";
  p2.queries = all_queries(workload);
  p2.first_episode = out.phase1_episodes;
  p2.episodes = bootstrap.phase2_episodes;
  const double tail_eps = config.epsilon ? *config.epsilon : agent.config.epsilon_end;
  p2.epsilon = [tail_eps](std::int64_t) { return tail_eps; };
  p2.after = [&](const EpisodeRecord&, double target) {
    out.phase2_rewards.push_back(target);
    return false;
  };
  out.metrics.append(loop.run(p2));
  return out;
}

// ---- curricula -------------------------------------------------------------

const char* to_string(CurriculumKind kind) {
  switch (kind) {
    case CurriculumKind::Pipeline: return "pipeline";
    case CurriculumKind::Relations: return "relations";
    case CurriculumKind::Hybrid: return "hybrid";
  }
  return "?";
}

CurriculumKind parse_curriculum_kind(const std::string& text) {
  if (text == "pipeline") return CurriculumKind::Pipeline;
  if (text == "relations") return CurriculumKind::Relations;
  if (text == "hybrid") return CurriculumKind::Hybrid;
  throw ConfigError("unknown curriculum kind '" + text + "'");
}

CurriculumSchedule make_schedule(CurriculumKind kind, int max_relations, int relations_start) {
  if (max_relations < 1) throw ConfigError("curriculum max_relations must be >= 1");
  CurriculumSchedule s;
  s.kind = kind;
  switch (kind) {
    case CurriculumKind::Pipeline:
      for (int st = 1; st <= kStageCount; ++st) s.phases.push_back({st, max_relations});
      break;
    case CurriculumKind::Relations:
      if (relations_start < 1 || relations_start > max_relations)
        throw ConfigError("relations curriculum start must lie in [1, max_relations]");
      for (int r = relations_start; r <= max_relations; ++r) s.phases.push_back({kStageCount, r});
      break;
    case CurriculumKind::Hybrid: {
      int st = 1, r = std::min(2, max_relations);
      s.phases.push_back({st, r});
      while (st < kStageCount || r < max_relations) {
        st = std::min(kStageCount, st + 1);
        r = std::min(max_relations, r + 1);
        s.phases.push_back({st, r});
      }
      break;
    }
  }
  validate_schedule(s);
  return s;
}

void validate_schedule(const CurriculumSchedule& s) {
  if (s.phases.empty()) throw ConfigError("curriculum has no phases");
  if (s.advance_window == 0 || s.phase_budget < 1) throw ConfigError("curriculum window and budget must be >= 1");
  for (const auto& p : s.phases)
    if (p.stages < 1 || p.stages > kStageCount || p.max_relations < 1)
      throw ConfigError("curriculum phase outside the stage/relation ranges");
  for (std::size_t i = 1; i < s.phases.size(); ++i) {
    const auto& a = s.phases[i - 1];
    const auto& b = s.phases[i];
    bool ok = false;
    switch (s.kind) {
      case CurriculumKind::Pipeline: ok = b.stages > a.stages && b.max_relations == a.max_relations; break;
      case CurriculumKind::Relations:
        ok = a.stages == kStageCount && b.stages == kStageCount && b.max_relations > a.max_relations;
        break;
      case CurriculumKind::Hybrid:
        ok = b.stages >= a.stages && b.max_relations >= a.max_relations &&
             (b.stages > a.stages || b.max_relations > a.max_relations) &&
             (b.stages > a.stages || a.stages == kStageCount || b.max_relations == a.max_relations);
        break;
    }
    if (!ok)
      throw ConfigError(std::string(to_string(s.kind)) + " curriculum breaks monotonicity at phase " +
                        std::to_string(i + 1));
  }
  if (s.kind == CurriculumKind::Relations && s.phases.front().stages != kStageCount)
    throw ConfigError("relations curriculum must enable every stage");
}

PhaseStatus next_phase(const CurriculumSchedule& schedule, std::size_t phase, std::span<const double> ratios) {
  if (phase >= schedule.phases.size()) throw ContractError("curriculum phase index out of range");
  const PhaseDecision move = phase + 1 == schedule.phases.size() ? PhaseDecision::Done : PhaseDecision::Advance;
  if (ratios.size() >= schedule.advance_window) {
    const std::vector<double> tail(ratios.end() - static_cast<std::ptrdiff_t>(schedule.advance_window), ratios.end());
    if (median_of(tail) <= schedule.advance_ratio) return {move, false};
  }
  if (static_cast<std::int64_t>(ratios.size()) >= schedule.phase_budget) return {move, true};
  return {PhaseDecision::Stay, false};
}

Metrics train_curriculum(const Catalog& catalog, const Workload& workload, const LatencyModel* latency_model,
                         const EnvConfig& base, ValueAgent& agent, const CurriculumSchedule& schedule,
                         const TrainerConfig& config, const PhaseCallback& on_phase_end) {
  validate_schedule(schedule);
  Metrics out;
  std::unique_ptr<Environment> env;
  std::unique_ptr<Loop> loop;
  std::int64_t episode = 0;
  for (std::size_t p = 0; p < schedule.phases.size(); ++p) {
    const auto& ph = schedule.phases[p];
    EnvConfig cfg = base;
    cfg.enabled_stages = ph.stages;
    cfg.validate();
    std::vector<const Query*> queries;
    for (const auto& q : workload.queries)
      if (static_cast<int>(q.size()) <= ph.max_relations) queries.push_back(&q);
    const std::string label = std::string(to_string(schedule.kind)) + "-" + std::to_string(p + 1);
    if (queries.empty()) throw ConfigError("curriculum phase " + label + " has no queries within its relation bound");

    auto next_env = std::make_unique<Environment>(cfg, catalog, latency_model);
    if (!loop)
      loop = std::make_unique<Loop>(*next_env, agent, config, 0);
    else
      loop->set_env(*next_env);
    env = std::move(next_env);

    std::vector<double> ratios;
    bool exhausted = false;
    PhaseRun run;
    run.label = label;
    run.queries = queries;
    run.first_episode = episode;
    run.episodes = schedule.phase_budget;
    run.epsilon = schedule_for(agent, config, schedule.phase_budget);
    run.after = [&](const EpisodeRecord& r, double) {
      ratios.push_back(r.cost_ratio);
      const PhaseStatus st = next_phase(schedule, p, ratios);
      exhausted = st.budget_exhausted;
      return st.decision != PhaseDecision::Stay;
    };
    const Metrics m = loop->run(run);
    episode += static_cast<std::int64_t>(m.records.size());
    out.append(m);
    if (exhausted) out.budget_exhausted_phases.push_back(label);
    if (on_phase_end) on_phase_end(p, agent, episode);
  }
  return out;
}

}  // namespace qolab
