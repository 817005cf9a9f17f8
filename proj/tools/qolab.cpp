// qolab: generate worlds, train agents, evaluate checkpoints, aggregate metrics.
//
// Exit codes: 0 success, 1 usage or config error, 2 runtime error.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qolab/errors.hpp"
#include "qolab/experiment.hpp"

namespace {

const char* io_kind(qolab::IoErrorKind k) {
  switch (k) {
    case qolab::IoErrorKind::MissingFile: return "missing file";
    case qolab::IoErrorKind::Malformed: return "corrupt file";
    case qolab::IoErrorKind::VersionMismatch: return "format version mismatch";
    case qolab::IoErrorKind::FingerprintMismatch: return "environment fingerprint mismatch";
  }
  return "io error";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned query optimization experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
    cmd->add_option("--set", overrides, "Override a config field, e.g. --set trainer.episodes=10");
  };

  auto* gen = app.add_subcommand("generate", "Generate catalog, workload and latency model");
  add_config(gen);

  int parallel_seeds = 1;
  auto* train = app.add_subcommand("train", "Run the configured trainer");
  add_config(train);
  train->add_option("--parallel-seeds", parallel_seeds, "Run k replicas with offset agent/execution seeds")
      ->check(CLI::PositiveNumber);

  std::string checkpoint, policy = "agent", workload_path, eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (or the expert) against the DP optimizer");
  add_config(eval);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate");
  eval->add_option("--policy", policy, "agent or expert")->check(CLI::IsMember({"agent", "expert"}));
  eval->add_option("--workload", workload_path, "Workload file instead of the generated one");
  eval->add_option("-o,--out", eval_out, "Output CSV (default <output_dir>/eval.csv)");

  std::vector<std::string> metrics_files;
  std::size_t window = 100;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Windowed learning curves from metrics files");
  report->add_option("metrics", metrics_files, "Metrics CSV files")->required();
  report->add_option("-w,--window", window, "Tumbling window size")->check(CLI::PositiveNumber);
  report->add_option("-o,--out", report_out, "Output CSV (default stdout)");

  app.add_subcommand("print-config", "Print the default config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("print-config")) {
      std::cout << qolab::default_config_text();
      return 0;
    }
    if (app.got_subcommand(report)) {
      qolab::cmd_report(metrics_files, window, report_out);
      return 0;
    }
    const auto config = qolab::load_config(config_path, overrides);
    if (app.got_subcommand(gen)) {
      const auto r = qolab::cmd_generate(config);
      for (const auto& a : r.artifacts) std::cout << a.name << " " << a.path << " " << a.sha256 << "\n";
      std::cout << "manifest " << r.manifest_path << "\n";
    } else if (app.got_subcommand(train)) {
      for (const auto& r : qolab::cmd_train(config, parallel_seeds)) {
        std::cout << "metrics " << r.metrics_path << " (" << r.metrics.records.size() << " episodes)\n";
        std::cout << "checkpoint " << r.checkpoint_path << "\n";
        for (const auto& p : r.phase_checkpoints) std::cout << "phase checkpoint " << p << "\n";
      }
    } else if (app.got_subcommand(eval)) {
      const auto r = qolab::cmd_eval(config, checkpoint, qolab::parse_eval_policy(policy), workload_path, eval_out);
      std::printf("queries %zu  median cost ratio %.4f  median latency ratio %.4f\n", r.rows.size(), r.median_cost_ratio,
                  r.median_latency_ratio);
    }
  } catch (const qolab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const qolab::IoError& e) {
    std::cerr << io_kind(e.kind) << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
