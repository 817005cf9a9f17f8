#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qolab/agent.hpp"
#include "qolab/env.hpp"
#include "qolab/history.hpp"
#include "qolab/reward.hpp"

namespace qolab {

inline constexpr const char* kMetricsHeader =
    "episode,phase,query_id,agent_cost,expert_cost,cost_ratio,latency_s,expert_latency_s,latency_ratio,loss,epsilon,"
    "timeout_flag";

struct EpisodeRecord {
  std::int64_t episode = 0;
  std::string phase;
  int query_id = -1;
  double agent_cost = 0.0;
  double expert_cost = 0.0;
  double cost_ratio = 0.0;
  double latency_s = 0.0;  // NaN when no latency model is attached
  double expert_latency_s = 0.0;
  double latency_ratio = 0.0;
  double loss = 0.0;
  double epsilon = 0.0;
  bool timeout = false;
  double wall_clock_s = 0.0;  // not written to CSV (breaks byte stability)
};

struct Metrics {
  std::vector<EpisodeRecord> records;
  bool phase1_converged = true;  // bootstrap only
  std::vector<std::string> budget_exhausted_phases;  // curriculum only

  std::int64_t timeouts() const;
  void append(const Metrics& other);
};

std::string metrics_row(const EpisodeRecord& r);
void write_metrics_csv(std::ostream& out, const Metrics& m, const std::string& comment = "");
void write_metrics_csv(const std::string& path, const Metrics& m, const std::string& comment = "");
Metrics read_metrics_csv(const std::string& path);

// Common loop settings. Seeds are explicit; nothing draws ambient randomness.
struct TrainerConfig {
  std::int64_t episodes = 1000;
  int updates_per_episode = 2;
  std::size_t replay_capacity = 20000;
  std::int64_t warmup_episodes = 50;  // targets collected before the scale is calibrated
  std::uint64_t exploration_seed = 1;
  std::uint64_t execution_seed = 1;
  std::optional<double> epsilon;  // fixed epsilon instead of the agent's schedule
};

// Uniform-replay sample store of (features, raw target).
class ReplayBuffer {
 public:
  ReplayBuffer(int feature_size, std::size_t capacity);
  void add(std::span<const double> features, double raw_target);
  std::size_t size() const { return targets_.size(); }
  // Draws `count` rows with replacement into `x` / `raw_targets` (appended).
  void sample(std::size_t count, Rng& rng, FeatureMatrix& x, std::vector<double>& raw_targets) const;
  std::span<const double> features(std::size_t i) const;
  double target(std::size_t i) const { return targets_[i]; }

 private:
  int cols_;
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<double> rows_;
  std::vector<double> targets_;
};

// ---- vanilla / naive latency ---------------------------------------------

Metrics train_vanilla_cost(Environment& env, const Workload& workload, ValueAgent& agent, const TrainerConfig& config);

struct NaiveLatencyConfig {
  double budget_multiplier = 20.0;  // per-episode budget = multiplier * expert latency
};

Metrics train_naive_latency(Environment& env, const Workload& workload, ValueAgent& agent, const TrainerConfig& config,
                            const NaiveLatencyConfig& naive = {});

// ---- learning from demonstration -----------------------------------------

struct PretrainConfig {
  int passes = 20;
  int batch_size = 64;  // decision steps per update
  // Large-margin term: an expert action's prediction should undercut every
  // alternative by `margin` (normalized units). Weight 0 is plain regression.
  double margin = 0.05;
  double margin_weight = 1.0;
  int max_alternatives = 8;  // alternatives sampled per step and update
  double holdout_fraction = 0.1;
  std::uint64_t seed = 1;
};

struct PretrainResult {
  std::vector<double> train_loss;    // per pass
  std::vector<double> holdout_loss;  // per pass, expert regression only
  double final_loss = 0.0;
};

PretrainResult pretrain_from_demonstration(const Environment& env, ValueAgent& agent,
                                           std::span<const EpisodeHistory> corpus, const PretrainConfig& config);

// Fraction of decision steps (with at least two legal actions) where the
// agent's argmin equals the demonstrated action.
double demonstration_agreement(const Environment& env, const ValueAgent& agent, std::span<const EpisodeHistory> corpus);

class SlipDetector {
 public:
  explicit SlipDetector(int window = 50, double tau = 1.2, double recovery = 1.05);
  // Feeds one latency ratio; returns true when the full window's median exceeds tau.
  bool observe(double ratio);
  bool slipping() const { return slipping_; }
  int fired() const { return fired_; }
  double median() const;
  int window() const { return window_; }

 private:
  int window_;
  double tau_;
  double recovery_;
  std::deque<double> ratios_;
  bool slipping_ = false;
  int fired_ = 0;
};

struct FinetuneConfig {
  int slip_window = 50;
  double slip_tau = 1.2;
  double slip_recovery = 1.05;
  double mix_fraction = 0.25;
  double timeout_multiplier = 20.0;  // only flags, the reward is not clamped
  // Called before each episode; test fixtures use it to perturb the agent.
  std::function<void(std::int64_t episode, ValueAgent&)> before_episode;
};

struct FinetuneResult {
  Metrics metrics;
  std::vector<bool> mixing;  // per episode: expert samples mixed into updates
  int slips = 0;
};

FinetuneResult finetune_lfd(Environment& env, const Workload& workload, ValueAgent& agent,
                            std::span<const EpisodeHistory> corpus, const TrainerConfig& config,
                            const FinetuneConfig& finetune = {});

// ---- bootstrapping ---------------------------------------------------------

BootstrapCalibration calibrate_bootstrap(std::span<const double> costs, std::span<const double> latencies);
// Extrema over the last `window` records.
BootstrapCalibration calibrate_bootstrap(std::span<const EpisodeRecord> records, std::size_t window = 200);

bool detect_convergence(std::span<const double> history, std::size_t window = 200, double relative_epsilon = 0.01);

struct BootstrapConfig {
  std::int64_t phase1_cap = 5000;
  std::size_t convergence_window = 200;
  double convergence_epsilon = 0.01;
  std::size_t calibration_window = 200;
  std::int64_t phase2_episodes = 1000;
};

struct BootstrapResult {
  Metrics metrics;
  BootstrapCalibration calibration;
  std::int64_t phase1_episodes = 0;
  std::vector<double> phase2_rewards;  // scaled-latency reward per phase-2 episode
};

// `env` supplies the catalog, latency model and stage/relation settings; the
// reward kind is overridden per phase.
BootstrapResult train_bootstrap(const Environment& env, const Workload& workload, ValueAgent& agent,
                                const TrainerConfig& config, const BootstrapConfig& bootstrap);

// ---- curricula -------------------------------------------------------------

enum class CurriculumKind { Pipeline, Relations, Hybrid };

struct CurriculumPhase {
  int stages = 1;
  int max_relations = 2;
  bool operator==(const CurriculumPhase&) const = default;
};

struct CurriculumSchedule {
  CurriculumKind kind = CurriculumKind::Pipeline;
  std::vector<CurriculumPhase> phases;
  std::size_t advance_window = 100;
  double advance_ratio = 1.1;
  std::int64_t phase_budget = 2000;
};

// Pipeline: (1..4 stages, max_relations). Relations: (4, start..max_relations).
// Hybrid: (1,2),(2,3),(3,4),(4,5), then (4, r) up to max_relations.
CurriculumSchedule make_schedule(CurriculumKind kind, int max_relations, int relations_start = 2);
// Throws ConfigError if the phase sequence breaks the kind's monotonicity rule.
void validate_schedule(const CurriculumSchedule& schedule);

enum class PhaseDecision { Stay, Advance, Done };

struct PhaseStatus {
  PhaseDecision decision = PhaseDecision::Stay;
  bool budget_exhausted = false;
};

// `ratios` are the cost ratios of the episodes run so far in phase `phase`.
PhaseStatus next_phase(const CurriculumSchedule& schedule, std::size_t phase, std::span<const double> ratios);

using PhaseCallback = std::function<void(std::size_t phase, const ValueAgent& agent, std::int64_t episodes_seen)>;

Metrics train_curriculum(const Catalog& catalog, const Workload& workload, const LatencyModel* latency_model,
                         const EnvConfig& base, ValueAgent& agent, const CurriculumSchedule& schedule,
                         const TrainerConfig& config, const PhaseCallback& on_phase_end = {});

const char* to_string(CurriculumKind kind);
CurriculumKind parse_curriculum_kind(const std::string& text);

}  // namespace qolab
