#include "qolab/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "json_io.hpp"
#include "qolab/errors.hpp"
#include "qolab/history.hpp"

namespace qolab {

namespace fs = std::filesystem;
using detail::json;

namespace {

const std::set<std::string> kTrainerKinds = {"vanilla",           "naive-latency",        "lfd", "bootstrap",
                                             "curriculum:pipeline", "curriculum:relations", "curriculum:hybrid"};

// Reads one JSON object section, tracking which keys were consumed so that
// leftovers can be reported by their dotted path.
class Section {
 public:
  Section(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& dst) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& v = j_.at(key);
    const std::string name = prefix_ + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(name + ": expected true or false");
      dst = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t> || std::is_same_v<T, std::size_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(name + ": expected a non-negative integer");
      dst = v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(name + ": expected an integer");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max())
        throw ConfigError(name + ": integer out of range");
      dst = static_cast<T>(x);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(name + ": expected a number");
      dst = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(name + ": expected a string");
      dst = v.get<std::string>();
    } else {
      if (!v.is_array()) throw ConfigError(name + ": expected a list of integers");
      dst.clear();
      for (const auto& e : v) {
        if (!e.is_number_integer()) throw ConfigError(name + ": expected a list of integers");
        dst.push_back(e.get<int>());
      }
    }
  }

  void get_optional_real(const std::string& key, std::optional<double>& dst) {
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      seen_.insert(key);
      dst.reset();
      return;
    }
    double v = 0.0;
    get(key, v);
    dst = v;
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, prefix_ + key + ".");
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError(prefix_ + k + ": unknown config field");
  }

 private:
  std::string where() const { return prefix_.empty() ? "config" : prefix_.substr(0, prefix_.size() - 1); }
  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

json config_json(const ExperimentConfig& c) {
  json j;
  j["catalog"] = {{"relation_count", c.catalog.relation_count},   {"min_cardinality", c.catalog.min_cardinality},
                  {"max_cardinality", c.catalog.max_cardinality}, {"min_attributes", c.catalog.min_attributes},
                  {"max_attributes", c.catalog.max_attributes},   {"index_density", c.catalog.index_density},
                  {"edge_density", c.catalog.edge_density}};
  j["workload"] = {{"query_count", c.workload.query_count},
                   {"min_relations", c.workload.min_relations},
                   {"max_relations", c.workload.max_relations},
                   {"selection_density", c.workload.selection_density},
                   {"aggregate_probability", c.workload.aggregate_probability}};
  j["latency"] = {{"alpha", c.latency.alpha},
                  {"gamma", c.latency.gamma},
                  {"noise_sigma", c.latency.noise_sigma},
                  {"error_sigma", c.latency.error_sigma},
                  {"heavy_error_probability", c.latency.heavy_error_probability},
                  {"heavy_error_sigma", c.latency.heavy_error_sigma}};
  j["env"] = {{"enabled_stages", c.env.enabled_stages}, {"max_relations", c.env.max_relations}};
  j["agent"] = {{"hidden", c.agent.hidden},
                {"learning_rate", c.agent.learning_rate},
                {"momentum", c.agent.momentum},
                {"batch_size", c.agent.batch_size},
                {"epsilon_start", c.agent.epsilon_start},
                {"epsilon_end", c.agent.epsilon_end},
                {"epsilon_decay_fraction", c.agent.epsilon_decay_fraction}};
  json t = {{"kind", c.trainer},
            {"episodes", c.training.episodes},
            {"updates_per_episode", c.training.updates_per_episode},
            {"replay_capacity", c.training.replay_capacity},
            {"warmup_episodes", c.training.warmup_episodes},
            {"epsilon", c.training.epsilon ? json(*c.training.epsilon) : json(nullptr)},
            {"expert", c.expert == ExpertKind::Greedy ? "greedy" : "dp"},
            {"init_checkpoint", c.init_checkpoint}};
  t["naive"] = {{"budget_multiplier", c.naive.budget_multiplier}};
  t["pretrain"] = {{"passes", c.pretrain.passes},
                   {"batch_size", c.pretrain.batch_size},
                   {"margin", c.pretrain.margin},
                   {"margin_weight", c.pretrain.margin_weight},
                   {"max_alternatives", c.pretrain.max_alternatives},
                   {"holdout_fraction", c.pretrain.holdout_fraction}};
  t["finetune"] = {{"slip_window", c.finetune.slip_window},
                   {"slip_tau", c.finetune.slip_tau},
                   {"slip_recovery", c.finetune.slip_recovery},
                   {"mix_fraction", c.finetune.mix_fraction},
                   {"timeout_multiplier", c.finetune.timeout_multiplier}};
  t["bootstrap"] = {{"phase1_cap", c.bootstrap.phase1_cap},
                    {"convergence_window", c.bootstrap.convergence_window},
                    {"convergence_epsilon", c.bootstrap.convergence_epsilon},
                    {"calibration_window", c.bootstrap.calibration_window},
                    {"phase2_episodes", c.bootstrap.phase2_episodes}};
  t["curriculum"] = {{"relations_start", c.curriculum.relations_start},
                     {"advance_window", c.curriculum.advance_window},
                     {"advance_ratio", c.curriculum.advance_ratio},
                     {"phase_budget", c.curriculum.phase_budget}};
  j["trainer"] = t;
  j["eval"] = {{"execution_seeds", c.eval.execution_seeds}};
  j["seeds"] = {{"catalog", c.seeds.catalog},
                {"workload", c.seeds.workload},
                {"model", c.seeds.model},
                {"agent", c.seeds.agent},
                {"execution", c.seeds.execution}};
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig config_from_json(const json& root) {
  ExperimentConfig c;
  Section top(root, "");
  {
    auto s = top.sub("catalog");
    s.get("relation_count", c.catalog.relation_count);
    s.get("min_cardinality", c.catalog.min_cardinality);
    s.get("max_cardinality", c.catalog.max_cardinality);
    s.get("min_attributes", c.catalog.min_attributes);
    s.get("max_attributes", c.catalog.max_attributes);
    s.get("index_density", c.catalog.index_density);
    s.get("edge_density", c.catalog.edge_density);
    s.finish();
  }
  {
    auto s = top.sub("workload");
    s.get("query_count", c.workload.query_count);
    s.get("min_relations", c.workload.min_relations);
    s.get("max_relations", c.workload.max_relations);
    s.get("selection_density", c.workload.selection_density);
    s.get("aggregate_probability", c.workload.aggregate_probability);
    s.finish();
  }
  {
    auto s = top.sub("latency");
    s.get("alpha", c.latency.alpha);
    s.get("gamma", c.latency.gamma);
    s.get("noise_sigma", c.latency.noise_sigma);
    s.get("error_sigma", c.latency.error_sigma);
    s.get("heavy_error_probability", c.latency.heavy_error_probability);
    s.get("heavy_error_sigma", c.latency.heavy_error_sigma);
    s.finish();
  }
  {
    auto s = top.sub("env");
    s.get("enabled_stages", c.env.enabled_stages);
    s.get("max_relations", c.env.max_relations);
    s.finish();
  }
  {
    auto s = top.sub("agent");
    s.get("hidden", c.agent.hidden);
    s.get("learning_rate", c.agent.learning_rate);
    s.get("momentum", c.agent.momentum);
    s.get("batch_size", c.agent.batch_size);
    s.get("epsilon_start", c.agent.epsilon_start);
    s.get("epsilon_end", c.agent.epsilon_end);
    s.get("epsilon_decay_fraction", c.agent.epsilon_decay_fraction);
    s.finish();
  }
  {
    auto s = top.sub("trainer");
    s.get("kind", c.trainer);
    s.get("episodes", c.training.episodes);
    s.get("updates_per_episode", c.training.updates_per_episode);
    s.get("replay_capacity", c.training.replay_capacity);
    s.get("warmup_episodes", c.training.warmup_episodes);
    s.get_optional_real("epsilon", c.training.epsilon);
    std::string expert = "dp";
    s.get("expert", expert);
    if (expert == "dp")
      c.expert = ExpertKind::DynamicProgramming;
    else if (expert == "greedy")
      c.expert = ExpertKind::Greedy;
    else
      throw ConfigError("trainer.expert: expected \"dp\" or \"greedy\"");
    s.get("init_checkpoint", c.init_checkpoint);
    {
      auto n = s.sub("naive");
      n.get("budget_multiplier", c.naive.budget_multiplier);
      n.finish();
    }
    {
      auto p = s.sub("pretrain");
      p.get("passes", c.pretrain.passes);
      p.get("batch_size", c.pretrain.batch_size);
      p.get("margin", c.pretrain.margin);
      p.get("margin_weight", c.pretrain.margin_weight);
      p.get("max_alternatives", c.pretrain.max_alternatives);
      p.get("holdout_fraction", c.pretrain.holdout_fraction);
      p.finish();
    }
    {
      auto f = s.sub("finetune");
      f.get("slip_window", c.finetune.slip_window);
      f.get("slip_tau", c.finetune.slip_tau);
      f.get("slip_recovery", c.finetune.slip_recovery);
      f.get("mix_fraction", c.finetune.mix_fraction);
      f.get("timeout_multiplier", c.finetune.timeout_multiplier);
      f.finish();
    }
    {
      auto b = s.sub("bootstrap");
      b.get("phase1_cap", c.bootstrap.phase1_cap);
      b.get("convergence_window", c.bootstrap.convergence_window);
      b.get("convergence_epsilon", c.bootstrap.convergence_epsilon);
      b.get("calibration_window", c.bootstrap.calibration_window);
      b.get("phase2_episodes", c.bootstrap.phase2_episodes);
      b.finish();
    }
    {
      auto k = s.sub("curriculum");
      k.get("relations_start", c.curriculum.relations_start);
      k.get("advance_window", c.curriculum.advance_window);
      k.get("advance_ratio", c.curriculum.advance_ratio);
      k.get("phase_budget", c.curriculum.phase_budget);
      k.finish();
    }
    s.finish();
  }
  {
    auto s = top.sub("eval");
    s.get("execution_seeds", c.eval.execution_seeds);
    s.finish();
  }
  {
    auto s = top.sub("seeds");
    s.get("catalog", c.seeds.catalog);
    s.get("workload", c.seeds.workload);
    s.get("model", c.seeds.model);
    s.get("agent", c.seeds.agent);
    s.get("execution", c.seeds.execution);
    s.finish();
  }
  top.get("output_dir", c.output_dir);
  top.finish();
  return c;
}

void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;  // bare strings need no quotes
  }
  json* node = &root;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError(key + ": cannot override inside a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  (*node)[parts.back()] = value;
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + " " + what);
}

std::string manifest_comment(const ExperimentConfig& c) {
  return "format_version=" + std::to_string(kFormatVersion) + " config_digest=" + config_digest(c);
}

// Adds the config digest to a saved JSON artifact.
void stamp_digest(const std::string& path, const std::string& digest) {
  std::ifstream in(path, std::ios::binary);
  json doc = json::parse(in);
  doc["config_digest"] = digest;
  detail::write_text_file(path, doc.dump() + "\n");
}

json outputs_json(const std::string& dir, const std::vector<std::pair<std::string, std::string>>& files) {
  json out = json::array();
  for (const auto& [name, rel] : files)
    out.push_back({{"name", name}, {"path", rel}, {"sha256", sha256_file((fs::path(dir) / rel).string())}});
  return out;
}

double median_of(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

TrainResult train_one(const ExperimentConfig& cfg, const std::string& artifact_dir, const std::string& out_dir) {
  const World world = load_world(artifact_dir);
  fs::create_directories(out_dir);
  const std::string digest = config_digest(cfg);

  EnvConfig ec = cfg.env;
  const bool latency_reward = cfg.trainer == "naive-latency" || cfg.trainer == "lfd";
  ec.reward = latency_reward ? RewardKind::Latency : RewardKind::Cost;
  ec.validate();

  ValueAgent agent = cfg.init_checkpoint.empty()
                         ? ValueAgent::create(ec.feature_size(), cfg.agent, cfg.seeds.agent)
                         : load_checkpoint(cfg.init_checkpoint, ec.fingerprint()).agent;
  TrainerConfig tc = cfg.training;
  tc.exploration_seed = cfg.seeds.agent;
  tc.execution_seed = cfg.seeds.execution;

  TrainResult result;
  json extra = json::object();
  std::vector<std::pair<std::string, std::string>> files;
  std::string final_fingerprint = ec.fingerprint();
  auto checkpoint = [&](const ValueAgent& a, const std::string& fingerprint, std::int64_t seen, const std::string& rel) {
    Checkpoint ck{fingerprint, a, {seen, cfg.seeds.agent, "config_digest=" + digest}};
    save_checkpoint(ck, (fs::path(out_dir) / rel).string());
  };

  if (cfg.trainer == "vanilla") {
    Environment env(ec, world.catalog, &world.latency_model);
    result.metrics = train_vanilla_cost(env, world.workload, agent, tc);
  } else if (cfg.trainer == "naive-latency") {
    Environment env(ec, world.catalog, &world.latency_model);
    result.metrics = train_naive_latency(env, world.workload, agent, tc, cfg.naive);
    extra["timeouts"] = result.metrics.timeouts();
  } else if (cfg.trainer == "lfd") {
    Environment env(ec, world.catalog, &world.latency_model);
    const auto corpus = build_expert_corpus(env, world.workload, cfg.expert, mix_seed(cfg.seeds.execution, 0xC0));
    const std::string corpus_rel = "expert_corpus.jsonl";
    const std::string corpus_path = (fs::path(out_dir) / corpus_rel).string();
    fs::remove(corpus_path);
    for (const auto& h : corpus) append_history_log(corpus_path, h);
    files.emplace_back("expert_corpus", corpus_rel);
    PretrainConfig pc = cfg.pretrain;
    pc.seed = cfg.seeds.agent;
    const auto pre = pretrain_from_demonstration(env, agent, corpus, pc);
    extra["pretrain_train_loss"] = pre.train_loss;
    extra["pretrain_holdout_loss"] = pre.holdout_loss;
    extra["demonstration_agreement"] = demonstration_agreement(env, agent, corpus);
    const auto ft = finetune_lfd(env, world.workload, agent, corpus, tc, cfg.finetune);
    result.metrics = ft.metrics;
    extra["timeouts"] = result.metrics.timeouts();
    extra["slips"] = ft.slips;
  } else if (cfg.trainer == "bootstrap") {
    Environment env(ec, world.catalog, &world.latency_model);
    const auto b = train_bootstrap(env, world.workload, agent, tc, cfg.bootstrap);
    result.metrics = b.metrics;
    extra["phase1_episodes"] = b.phase1_episodes;
    extra["phase1_converged"] = b.metrics.phase1_converged;
    if (cfg.bootstrap.phase2_episodes > 0)
      extra["calibration"] = {{"cost_min", b.calibration.cost_min},
                              {"cost_max", b.calibration.cost_max},
                              {"latency_min", b.calibration.latency_min},
                              {"latency_max", b.calibration.latency_max}};
  } else {
    const CurriculumKind kind = parse_curriculum_kind(cfg.trainer.substr(cfg.trainer.find(':') + 1));
    CurriculumSchedule sched = make_schedule(kind, cfg.workload.max_relations, cfg.curriculum.relations_start);
    sched.advance_window = cfg.curriculum.advance_window;
    sched.advance_ratio = cfg.curriculum.advance_ratio;
    sched.phase_budget = cfg.curriculum.phase_budget;
    validate_schedule(sched);
    const PhaseCallback on_phase = [&](std::size_t p, const ValueAgent& a, std::int64_t seen) {
      EnvConfig pc = ec;
      pc.enabled_stages = sched.phases[p].stages;
      final_fingerprint = pc.fingerprint();
      const std::string rel = "checkpoint-phase-" + std::to_string(p + 1) + ".json";
      checkpoint(a, final_fingerprint, seen, rel);
      result.phase_checkpoints.push_back((fs::path(out_dir) / rel).string());
      files.emplace_back("checkpoint_phase_" + std::to_string(p + 1), rel);
    };
    result.metrics = train_curriculum(world.catalog, world.workload, &world.latency_model, ec, agent, sched, tc, on_phase);
    json phases = json::array();
    for (const auto& p : sched.phases) phases.push_back({{"stages", p.stages}, {"max_relations", p.max_relations}});
    extra["phases"] = phases;
    extra["budget_exhausted_phases"] = result.metrics.budget_exhausted_phases;
  }

  result.metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  write_metrics_csv(result.metrics_path, result.metrics, manifest_comment(cfg) + " trainer=" + cfg.trainer);
  files.emplace_back("metrics", "metrics.csv");
  checkpoint(agent, final_fingerprint, static_cast<std::int64_t>(result.metrics.records.size()), "checkpoint.json");
  result.checkpoint_path = (fs::path(out_dir) / "checkpoint.json").string();
  files.emplace_back("checkpoint", "checkpoint.json");

  json manifest = {{"format_version", kFormatVersion},
                   {"kind", "run_manifest"},
                   {"config_digest", digest},
                   {"config", config_json(cfg)},
                   {"artifact_dir", artifact_dir},
                   {"episodes", result.metrics.records.size()},
                   {"details", extra},
                   {"outputs", outputs_json(out_dir, files)}};
  result.manifest_path = (fs::path(out_dir) / "run_manifest.json").string();
  detail::write_text_file(result.manifest_path, manifest.dump(2) + "\n");
  return result;
}

}  // namespace

// ---- config ----------------------------------------------------------------

std::string config_to_json(const ExperimentConfig& config) { return config_json(config).dump(2) + "\n"; }

std::string default_config_text() { return config_to_json(ExperimentConfig{}); }

ExperimentConfig parse_config(const std::string& json_text, const std::vector<std::string>& overrides) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: expected an object");
  for (const auto& o : overrides) apply_override(root, o);
  ExperimentConfig c = config_from_json(root);
  validate_config(c);
  return c;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

void validate_config(const ExperimentConfig& c) {
  const auto& cat = c.catalog;
  require(cat.relation_count >= 2, "catalog.relation_count", "must be >= 2");
  require(cat.min_cardinality >= 1, "catalog.min_cardinality", "must be >= 1");
  require(cat.max_cardinality >= cat.min_cardinality, "catalog.max_cardinality", "must be >= catalog.min_cardinality");
  require(cat.min_attributes >= 1, "catalog.min_attributes", "must be >= 1");
  require(cat.max_attributes >= cat.min_attributes, "catalog.max_attributes", "must be >= catalog.min_attributes");
  require(cat.index_density >= 0.0 && cat.index_density <= 1.0, "catalog.index_density", "must be in [0,1]");
  require(cat.edge_density >= 0.0 && cat.edge_density <= 1.0, "catalog.edge_density", "must be in [0,1]");
  const auto& w = c.workload;
  require(w.query_count >= 1, "workload.query_count", "must be >= 1");
  require(w.min_relations >= 1, "workload.min_relations", "must be >= 1");
  require(w.max_relations >= w.min_relations, "workload.max_relations", "must be >= workload.min_relations");
  require(w.max_relations <= cat.relation_count, "workload.max_relations", "must be <= catalog.relation_count");
  require(w.selection_density >= 0.0 && w.selection_density <= 1.0, "workload.selection_density", "must be in [0,1]");
  require(w.aggregate_probability >= 0.0 && w.aggregate_probability <= 1.0, "workload.aggregate_probability",
          "must be in [0,1]");
  try {
    validate_latency_config(c.latency);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("latency: ") + e.what());
  }
  require(c.env.enabled_stages >= 1 && c.env.enabled_stages <= kStageCount, "env.enabled_stages", "must be in 1..4");
  require(c.env.max_relations >= w.max_relations && c.env.max_relations <= 63, "env.max_relations",
          "must be >= workload.max_relations and <= 63");
  const auto& a = c.agent;
  require(!a.hidden.empty() && std::all_of(a.hidden.begin(), a.hidden.end(), [](int h) { return h >= 1; }),
          "agent.hidden", "must be a nonempty list of sizes >= 1");
  require(a.learning_rate >= 0.0 && std::isfinite(a.learning_rate), "agent.learning_rate", "must be >= 0");
  require(a.momentum >= 0.0 && a.momentum < 1.0, "agent.momentum", "must be in [0,1)");
  require(a.batch_size >= 1, "agent.batch_size", "must be >= 1");
  require(a.epsilon_start >= 0.0 && a.epsilon_start <= 1.0, "agent.epsilon_start", "must be in [0,1]");
  require(a.epsilon_end >= 0.0 && a.epsilon_end <= 1.0, "agent.epsilon_end", "must be in [0,1]");
  require(a.epsilon_decay_fraction >= 0.0, "agent.epsilon_decay_fraction", "must be >= 0");
  require(kTrainerKinds.count(c.trainer) == 1, "trainer.kind",
          "must be one of vanilla, naive-latency, lfd, bootstrap, curriculum:pipeline, curriculum:relations, "
          "curriculum:hybrid");
  const auto& t = c.training;
  require(t.episodes >= 0, "trainer.episodes", "must be >= 0");
  require(t.updates_per_episode >= 0, "trainer.updates_per_episode", "must be >= 0");
  require(t.replay_capacity >= 1, "trainer.replay_capacity", "must be >= 1");
  require(t.warmup_episodes >= 0, "trainer.warmup_episodes", "must be >= 0");
  require(!t.epsilon || (*t.epsilon >= 0.0 && *t.epsilon <= 1.0), "trainer.epsilon", "must be null or in [0,1]");
  require(c.naive.budget_multiplier > 0.0, "trainer.naive.budget_multiplier", "must be > 0");
  require(c.pretrain.passes >= 0, "trainer.pretrain.passes", "must be >= 0");
  require(c.pretrain.batch_size >= 1, "trainer.pretrain.batch_size", "must be >= 1");
  require(c.pretrain.margin >= 0.0, "trainer.pretrain.margin", "must be >= 0");
  require(c.pretrain.margin_weight >= 0.0, "trainer.pretrain.margin_weight", "must be >= 0");
  require(c.pretrain.max_alternatives >= 0, "trainer.pretrain.max_alternatives", "must be >= 0");
  require(c.pretrain.holdout_fraction >= 0.0 && c.pretrain.holdout_fraction < 1.0, "trainer.pretrain.holdout_fraction",
          "must be in [0,1)");
  require(c.finetune.slip_window >= 1, "trainer.finetune.slip_window", "must be >= 1");
  require(c.finetune.slip_recovery >= 1.0, "trainer.finetune.slip_recovery", "must be >= 1");
  require(c.finetune.slip_tau > c.finetune.slip_recovery, "trainer.finetune.slip_tau",
          "must exceed trainer.finetune.slip_recovery");
  require(c.finetune.mix_fraction >= 0.0 && c.finetune.mix_fraction <= 1.0, "trainer.finetune.mix_fraction",
          "must be in [0,1]");
  require(c.bootstrap.phase1_cap >= 1, "trainer.bootstrap.phase1_cap", "must be >= 1");
  require(c.bootstrap.convergence_window >= 1, "trainer.bootstrap.convergence_window", "must be >= 1");
  require(c.bootstrap.calibration_window >= 2, "trainer.bootstrap.calibration_window", "must be >= 2");
  require(c.bootstrap.phase2_episodes >= 0, "trainer.bootstrap.phase2_episodes", "must be >= 0");
  require(c.curriculum.relations_start >= 1 && c.curriculum.relations_start <= w.max_relations,
          "trainer.curriculum.relations_start", "must be in [1, workload.max_relations]");
  require(c.curriculum.advance_window >= 1, "trainer.curriculum.advance_window", "must be >= 1");
  require(c.curriculum.phase_budget >= 1, "trainer.curriculum.phase_budget", "must be >= 1");
  require(c.eval.execution_seeds >= 1, "eval.execution_seeds", "must be >= 1");
  require(!c.output_dir.empty(), "output_dir", "must not be empty");
}

// Where the files go is not part of the experiment's identity.
std::string config_digest(const ExperimentConfig& config) {
  json j = config_json(config);
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

// ---- digests ---------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::MissingFile, "file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

// ---- generate --------------------------------------------------------------

GenerateResult cmd_generate(const ExperimentConfig& config) {
  validate_config(config);
  const fs::path dir(config.output_dir);
  fs::create_directories(dir);
  const Catalog catalog = generate_catalog(config.catalog, config.seeds.catalog);
  const Workload workload = generate_workload(catalog, config.workload, config.seeds.workload);
  const LatencyModel model = build_latency_model(catalog, config.latency, config.seeds.model);
  const std::string digest = config_digest(config);

  const std::vector<std::pair<std::string, std::string>> files = {
      {"catalog", "catalog.json"}, {"workload", "workload.json"}, {"latency_model", "latency_model.json"}};
  save_catalog(catalog, (dir / files[0].second).string());
  save_workload(workload, (dir / files[1].second).string());
  save_latency_model(model, (dir / files[2].second).string());
  for (const auto& [_, rel] : files) stamp_digest((dir / rel).string(), digest);

  GenerateResult r;
  const json outputs = outputs_json(dir.string(), files);
  for (const auto& o : outputs) r.artifacts.push_back({o["name"], o["path"], o["sha256"]});
  json manifest = {{"format_version", kFormatVersion},
                   {"kind", "manifest"},
                   {"config_digest", digest},
                   {"config", config_json(config)},
                   {"artifacts", outputs}};
  r.manifest_path = (dir / "manifest.json").string();
  detail::write_text_file(r.manifest_path, manifest.dump(2) + "\n");
  return r;
}

World load_world(const std::string& output_dir) {
  const fs::path dir(output_dir);
  const json manifest = detail::read_versioned_json((dir / "manifest.json").string(), "manifest");
  std::map<std::string, std::string> paths;
  detail::guarded_parse("manifest", [&] {
    for (const auto& a : manifest.at("artifacts")) {
      const std::string path = (dir / a.at("path").get<std::string>()).string();
      if (!fs::exists(path)) throw IoError(IoErrorKind::MissingFile, "artifact missing: " + path);
      if (sha256_file(path) != a.at("sha256").get<std::string>())
        throw IoError(IoErrorKind::Malformed, "artifact changed since generation (digest mismatch): " + path);
      paths[a.at("name").get<std::string>()] = path;
    }
    return 0;
  });
  for (const char* name : {"catalog", "workload", "latency_model"})
    if (!paths.count(name)) throw IoError(IoErrorKind::Malformed, std::string("manifest lists no ") + name);
  World w;
  w.catalog = load_catalog(paths["catalog"]);
  w.workload = load_workload(paths["workload"]);
  w.latency_model = load_latency_model(paths["latency_model"]);
  return w;
}

// ---- train -----------------------------------------------------------------

std::vector<TrainResult> cmd_train(const ExperimentConfig& config, int parallel_seeds) {
  validate_config(config);
  if (parallel_seeds < 1) throw ConfigError("--parallel-seeds must be >= 1");
  if (parallel_seeds == 1) return {train_one(config, config.output_dir, config.output_dir)};

  std::vector<TrainResult> results(static_cast<std::size_t>(parallel_seeds));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(parallel_seeds));
  std::vector<std::thread> workers;
  for (int i = 0; i < parallel_seeds; ++i)
    workers.emplace_back([&, i] {
      try {
        ExperimentConfig c = config;
        c.seeds.agent += static_cast<std::uint64_t>(i);
        c.seeds.execution += static_cast<std::uint64_t>(i);
        const std::string out = (fs::path(config.output_dir) / ("seed-" + std::to_string(i))).string();
        results[static_cast<std::size_t>(i)] = train_one(c, config.output_dir, out);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    });
  for (auto& t : workers) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

std::vector<EpisodeHistory> build_expert_corpus(Environment& env, const Workload& workload, ExpertKind expert,
                                                std::uint64_t execution_seed) {
  if (!env.latency_model()) throw ContractError("an expert corpus needs a latency model");
  std::vector<EpisodeHistory> out;
  for (const auto& q : workload.queries) {
    EpisodeHistory h = record_episode(env, q, expert);
    h.latency_s = simulate_latency(*env.latency_model(), env.catalog(), q, h.terminal_plan,
                                   mix_seed(execution_seed, static_cast<std::uint64_t>(q.id)))
                      .seconds;
    out.push_back(std::move(h));
  }
  return out;
}

// ---- eval ------------------------------------------------------------------

EvalPolicy parse_eval_policy(const std::string& text) {
  if (text == "agent") return EvalPolicy::Agent;
  if (text == "expert") return EvalPolicy::Expert;
  throw ConfigError("policy must be 'agent' or 'expert'");
}

EvalReport evaluate(const Environment& env_in, const ValueAgent* agent, const Workload& workload, EvalPolicy policy,
                    int execution_seeds, std::uint64_t execution_seed) {
  if (execution_seeds < 1) throw ConfigError("eval.execution_seeds must be >= 1");
  if (policy == EvalPolicy::Agent && !agent) throw ContractError("agent evaluation needs an agent");
  Environment env(env_in.config(), env_in.catalog(), env_in.latency_model());
  const LatencyModel* model = env.latency_model();
  const Featurizer featurize = featurizer_for(env);
  Rng unused(0);
  EvalReport rep;
  std::vector<double> cost_ratios, lat_ratios;
  for (const auto& q : workload.queries) {
    const PhysicalPlan expert = optimize_dp(env.catalog(), q);
    PhysicalPlan plan = expert;
    if (policy == EvalPolicy::Agent) {
      EnvState s = env.reset(q);
      while (!s.terminal) {
        const auto legal = env.legal_actions(s);
        s = env.step(s, select_action(agent->params, s, legal, featurize, 0.0, unused));
      }
      plan = env.extract_plan(s);
    }
    EvalRow row;
    row.query_id = q.id;
    row.relations = static_cast<int>(q.size());
    row.agent_cost = cost_plan(env.catalog(), q, plan).value;
    row.expert_cost = cost_plan(env.catalog(), q, expert).value;
    row.cost_ratio = row.agent_cost / row.expert_cost;
    row.agent_latency_s = row.expert_latency_s = row.latency_ratio = std::numeric_limits<double>::quiet_NaN();
    if (model) {
      std::vector<double> la, le;
      for (int k = 0; k < execution_seeds; ++k) {
        const std::uint64_t seed = mix_seed(mix_seed(execution_seed, static_cast<std::uint64_t>(q.id)), k);
        la.push_back(simulate_latency(*model, env.catalog(), q, plan, seed).seconds);
        le.push_back(simulate_latency(*model, env.catalog(), q, expert, seed).seconds);
      }
      row.agent_latency_s = median_of(la);
      row.expert_latency_s = median_of(le);
      row.latency_ratio = row.agent_latency_s / row.expert_latency_s;
    }
    cost_ratios.push_back(row.cost_ratio);
    lat_ratios.push_back(row.latency_ratio);
    rep.rows.push_back(row);
  }
  rep.median_cost_ratio = median_of(cost_ratios);
  rep.median_latency_ratio = median_of(lat_ratios);
  return rep;
}

std::string eval_report_csv(const EvalReport& report, const std::string& comment) {
  std::string s;
  if (!comment.empty()) s += "# " + comment + "\n";
  s += "query_id,relations,agent_cost,expert_cost,cost_ratio,agent_latency_s,expert_latency_s,latency_ratio\n";
  for (const auto& r : report.rows)
    s += std::to_string(r.query_id) + "," + std::to_string(r.relations) + "," + fmt(r.agent_cost) + "," +
         fmt(r.expert_cost) + "," + fmt(r.cost_ratio) + "," + fmt(r.agent_latency_s) + "," + fmt(r.expert_latency_s) +
         "," + fmt(r.latency_ratio) + "\n";
  s += "median,,,," + fmt(report.median_cost_ratio) + ",,," + fmt(report.median_latency_ratio) + "\n";
  return s;
}

EvalReport cmd_eval(const ExperimentConfig& config, const std::string& checkpoint_path, EvalPolicy policy,
                    const std::string& workload_path, const std::string& out_path) {
  validate_config(config);
  World world = load_world(config.output_dir);
  if (!workload_path.empty()) world.workload = load_workload(workload_path);
  EnvConfig ec = config.env;
  std::optional<Checkpoint> ck;
  if (policy == EvalPolicy::Agent) {
    if (checkpoint_path.empty()) throw ConfigError("--checkpoint is required for the agent policy");
    ck = load_checkpoint(checkpoint_path, ec.fingerprint());
  }
  const Environment env(ec, world.catalog, &world.latency_model);
  EvalReport rep = evaluate(env, ck ? &ck->agent : nullptr, world.workload, policy, config.eval.execution_seeds,
                            mix_seed(config.seeds.execution, 0xE7A1));
  const std::string out = out_path.empty() ? (fs::path(config.output_dir) / "eval.csv").string() : out_path;
  detail::write_text_file(out, eval_report_csv(rep, manifest_comment(config) + " policy=" +
                                                        (policy == EvalPolicy::Agent ? "agent" : "expert")));
  return rep;
}

// ---- report ----------------------------------------------------------------

std::string report_csv(const std::vector<std::string>& metrics_paths, std::size_t window) {
  if (metrics_paths.empty()) throw ConfigError("report needs at least one metrics file");
  if (window == 0) throw ConfigError("report window must be >= 1");
  std::string s = std::string("# format_version=") + std::to_string(kFormatVersion) + " window=" +
                  std::to_string(window) + "\n" + kReportHeader + "\n";
  for (const auto& path : metrics_paths) {
    const Metrics m = read_metrics_csv(path);
    for (std::size_t b = 0; b < m.records.size(); b += window) {
      const std::size_t e = std::min(m.records.size(), b + window);
      std::vector<double> cr, lr;
      std::int64_t timeouts = 0;
      for (std::size_t i = b; i < e; ++i) {
        cr.push_back(m.records[i].cost_ratio);
        lr.push_back(m.records[i].latency_ratio);
        timeouts += m.records[i].timeout ? 1 : 0;
      }
      s += path + "," + std::to_string(m.records[b].episode) + "," + std::to_string(m.records[e - 1].episode) + "," +
           std::to_string(e - b) + "," + fmt(median_of(cr)) + "," + fmt(median_of(lr)) + "," +
           std::to_string(timeouts) + "\n";
    }
  }
  return s;
}

void cmd_report(const std::vector<std::string>& metrics_paths, std::size_t window, const std::string& out_path) {
  const std::string text = report_csv(metrics_paths, window);
  if (out_path.empty() || out_path == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
    return;
  }
  detail::write_text_file(out_path, text);
}

}  // namespace qolab
