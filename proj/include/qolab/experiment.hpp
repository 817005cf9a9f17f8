#pragma once

// Config-driven orchestration behind the command-line tool: generate worlds,
// run trainers, evaluate checkpoints, aggregate metrics.

#include <cstdint>
#include <string>
#include <vector>

#include "qolab/agent.hpp"
#include "qolab/catalog.hpp"
#include "qolab/costmodel.hpp"
#include "qolab/env.hpp"
#include "qolab/expert.hpp"
#include "qolab/trainers.hpp"

namespace qolab {

struct SeedBlock {
  std::uint64_t catalog = 1;
  std::uint64_t workload = 2;
  std::uint64_t model = 3;
  std::uint64_t agent = 4;
  std::uint64_t execution = 5;
};

struct CurriculumSettings {
  int relations_start = 2;
  std::size_t advance_window = 100;
  double advance_ratio = 1.1;
  std::int64_t phase_budget = 2000;
};

struct EvalSettings {
  int execution_seeds = 5;
};

struct ExperimentConfig {
  CatalogConfig catalog;
  WorkloadSpec workload;
  LatencyConfig latency;
  EnvConfig env;
  AgentConfig agent;
  std::string trainer = "vanilla";
  TrainerConfig training;  // seeds inside are filled from `seeds`
  NaiveLatencyConfig naive;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  ExpertKind expert = ExpertKind::DynamicProgramming;
  BootstrapConfig bootstrap;
  CurriculumSettings curriculum;
  EvalSettings eval;
  std::string init_checkpoint;  // optional warm start
  SeedBlock seeds;
  std::string output_dir = "qolab-out";
};

// Structured-text (JSON) form. Unknown keys and bad values raise ConfigError
// naming the field, e.g. "catalog.relation_count".
std::string default_config_text();
ExperimentConfig parse_config(const std::string& json_text, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});
std::string config_to_json(const ExperimentConfig& config);
void validate_config(const ExperimentConfig& config);
// SHA-256 (hex) of the resolved config text.
std::string config_digest(const ExperimentConfig& config);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

struct ManifestEntry {
  std::string name;
  std::string path;  // relative to the output directory
  std::string sha256;
};

struct GenerateResult {
  std::vector<ManifestEntry> artifacts;
  std::string manifest_path;
};

GenerateResult cmd_generate(const ExperimentConfig& config);

struct World {
  Catalog catalog;
  Workload workload;
  LatencyModel latency_model;
};

// Loads the generated artifacts, checking them against the manifest digests.
World load_world(const std::string& output_dir);

struct TrainResult {
  std::string metrics_path;
  std::string checkpoint_path;
  std::vector<std::string> phase_checkpoints;
  std::string manifest_path;
  Metrics metrics;
};

// One run. `parallel_seeds` > 1 runs that many replicas concurrently, replica
// i with agent and execution seeds offset by i, each in <output_dir>/seed-i.
std::vector<TrainResult> cmd_train(const ExperimentConfig& config, int parallel_seeds = 1);

enum class EvalPolicy { Agent, Expert };

struct EvalRow {
  int query_id = 0;
  int relations = 0;
  double agent_cost = 0.0;
  double expert_cost = 0.0;
  double cost_ratio = 0.0;
  double agent_latency_s = 0.0;  // medians over the execution seeds
  double expert_latency_s = 0.0;
  double latency_ratio = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double median_cost_ratio = 0.0;
  double median_latency_ratio = 0.0;
};

EvalReport evaluate(const Environment& env, const ValueAgent* agent, const Workload& workload, EvalPolicy policy,
                    int execution_seeds, std::uint64_t execution_seed);
std::string eval_report_csv(const EvalReport& report, const std::string& comment);

// Loads the checkpoint (fingerprint-checked) and the world, writes the report.
EvalReport cmd_eval(const ExperimentConfig& config, const std::string& checkpoint_path, EvalPolicy policy,
                    const std::string& workload_path, const std::string& out_path);

// Tumbling windows of `window` episodes per input file, one series per file.
inline constexpr const char* kReportHeader =
    "run,window_start,window_end,episodes,median_cost_ratio,median_latency_ratio,timeouts";
std::string report_csv(const std::vector<std::string>& metrics_paths, std::size_t window = 100);
void cmd_report(const std::vector<std::string>& metrics_paths, std::size_t window, const std::string& out_path);

std::vector<EpisodeHistory> build_expert_corpus(Environment& env, const Workload& workload, ExpertKind expert,
                                                std::uint64_t execution_seed);

EvalPolicy parse_eval_policy(const std::string& text);

}  // namespace qolab
