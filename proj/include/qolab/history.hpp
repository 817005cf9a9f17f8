#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qolab/env.hpp"
#include "qolab/expert.hpp"

namespace qolab {

// One demonstrated decision: action a_i taken in state s_i.
struct HistoryStep {
  Action action;
  EnvState state;
};

struct EpisodeHistory {
  int query_id = -1;
  std::vector<HistoryStep> steps;
  PhysicalPlan terminal_plan;
  std::optional<double> latency_s;
};

// Decomposes the expert's plan into the environment's actions. When several
// expert decisions are available at once, the one with the smallest canonical
// action index goes first. Throws EncodingError if the plan is not reachable.
EpisodeHistory record_episode(Environment& env, const Query& query, ExpertKind expert);

// Replays the recorded actions from reset and returns the terminal plan.
PhysicalPlan replay_history(Environment& env, const Query& query, const EpisodeHistory& history);

// Append-only corpus: one JSON record per line. Loading replays every history
// through `env` to rebuild the state snapshots and checks they match.
std::string history_to_line(const EpisodeHistory& history);
void append_history_log(const std::string& path, const EpisodeHistory& history);
std::vector<EpisodeHistory> load_history_log(const std::string& path, Environment& env, const Workload& workload);

}  // namespace qolab
