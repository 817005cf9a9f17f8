#include "qolab/history.hpp"

#include <fstream>
#include <map>

#include "json.hpp"
#include "qolab/errors.hpp"

namespace qolab {

using nlohmann::json;

namespace {

struct ExpertJoin {
  RelSet left;
  RelSet right;
  JoinOperator op;
};

RelSet collect(const PhysicalPlan& plan, int id, const CardinalityModel& cards, std::map<RelSet, ExpertJoin>& joins,
               std::map<int, AccessPath>& access) {
  const auto& node = plan.node(id);
  if (node.is_scan()) {
    const int local = cards.local_index(node.relation_id);
    access[local] = node.access;
    return RelSet{1} << local;
  }
  const RelSet l = collect(plan, node.left, cards, joins, access);
  const RelSet r = collect(plan, node.right, cards, joins, access);
  joins[l | r] = {l, r, node.op};
  return l | r;
}

}  // namespace

EpisodeHistory record_episode(Environment& env, const Query& query, ExpertKind expert) {
  const PhysicalPlan plan = optimize(expert, env.catalog(), query);
  EpisodeHistory h;
  h.query_id = query.id;
  EnvState state = env.reset(query);
  const auto& cards = state.context->cards;
  std::map<RelSet, ExpertJoin> joins;
  std::map<int, AccessPath> access;
  collect(plan, plan.root, cards, joins, access);

  while (!state.terminal) {
    const auto legal = env.legal_actions(state);
    const Action* pick = nullptr;
    for (const auto& a : legal) {
      bool match = false;
      switch (a.kind) {
        case Action::Kind::JoinPair: {
          const RelSet x = state.nodes[state.forest[a.first]].set;
          const RelSet y = state.nodes[state.forest[a.second]].set;
          auto it = joins.find(x | y);
          match = it != joins.end() && ((it->second.left == x && it->second.right == y) ||
                                        (it->second.left == y && it->second.right == x));
          break;
        }
        case Action::Kind::AccessPath: match = access.at(a.relation) == a.path; break;
        case Action::Kind::JoinOperator: {
          const RelSet set = state.nodes[state.relation_count + a.node].set;
          match = joins.at(set).op == a.op;
          break;
        }
        case Action::Kind::Aggregate: match = plan.aggregate && *plan.aggregate == a.aggregate; break;
      }
      if (match) {
        pick = &a;
        break;
      }
    }
    if (!pick) throw EncodingError("expert plan " + plan.to_string() + " not expressible at state " + state.snapshot());
    h.steps.push_back({*pick, state});
    state = env.step(state, *pick);
  }
  h.terminal_plan = env.extract_plan(state);
  if (!(h.terminal_plan == plan))
    throw EncodingError("replayed plan " + h.terminal_plan.to_string() + " differs from expert plan " + plan.to_string());
  return h;
}

PhysicalPlan replay_history(Environment& env, const Query& query, const EpisodeHistory& history) {
  EnvState state = env.reset(query);
  for (const auto& step : history.steps) state = env.step(state, step.action);
  return env.extract_plan(state);
}

namespace {

json action_json(const Action& a) {
  json j = {{"index", a.index}};
  switch (a.kind) {
    case Action::Kind::JoinPair:
      j["kind"] = "join";
      j["pair"] = {a.first, a.second};
      break;
    case Action::Kind::AccessPath:
      j["kind"] = "access";
      j["relation"] = a.relation;
      j["index_attribute"] = a.path.kind == AccessKind::Index ? a.path.attribute_id : -1;
      break;
    case Action::Kind::JoinOperator:
      j["kind"] = "operator";
      j["node"] = a.node;
      j["op"] = to_string(a.op);
      break;
    case Action::Kind::Aggregate:
      j["kind"] = "aggregate";
      j["op"] = to_string(a.aggregate);
      break;
  }
  return j;
}

}  // namespace

std::string history_to_line(const EpisodeHistory& h) {
  json steps = json::array();
  for (const auto& s : h.steps) steps.push_back({{"action", action_json(s.action)}, {"state", s.state.snapshot()}});
  json j = {{"format_version", kFormatVersion},
            {"query_id", h.query_id},
            {"latency_s", h.latency_s ? json(*h.latency_s) : json()},
            {"plan", plan_to_json(h.terminal_plan)},
            {"steps", steps}};
  return j.dump();
}

void append_history_log(const std::string& path, const EpisodeHistory& history) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError(IoErrorKind::MissingFile, "cannot open history log: " + path);
  out << history_to_line(history) << '\n';
}

std::vector<EpisodeHistory> load_history_log(const std::string& path, Environment& env, const Workload& workload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::MissingFile, "history log not found: " + path);
  std::vector<EpisodeHistory> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(IoErrorKind::Malformed, "malformed history record at " + where);
    }
    try {
      if (j.at("format_version").get<int>() != kFormatVersion)
        throw IoError(IoErrorKind::VersionMismatch, "history record version mismatch at " + where);
      EpisodeHistory h;
      h.query_id = j.at("query_id").get<int>();
      if (!j.at("latency_s").is_null()) h.latency_s = j["latency_s"].get<double>();
      const Query& q = workload.query(h.query_id);
      EnvState state = env.reset(q);
      for (const auto& js : j.at("steps")) {
        const auto legal = env.legal_actions(state);
        const int idx = js.at("action").at("index").get<int>();
        if (idx < 0 || idx >= static_cast<int>(legal.size()) || js.at("state").get<std::string>() != state.snapshot() ||
            action_json(legal[idx]) != js.at("action"))
          throw IoError(IoErrorKind::Malformed, "history record does not replay at " + where);
        h.steps.push_back({legal[idx], state});
        state = env.step(state, legal[idx]);
      }
      h.terminal_plan = env.extract_plan(state);
      if (!(h.terminal_plan == plan_from_json(j.at("plan"))))
        throw IoError(IoErrorKind::Malformed, "history record terminal plan mismatch at " + where);
      out.push_back(std::move(h));
    } catch (const json::exception& e) {
      throw IoError(IoErrorKind::Malformed, "malformed history record at " + where + ": " + e.what());
    } catch (const ContractError& e) {
      throw IoError(IoErrorKind::Malformed, "history record does not replay at " + where + ": " + e.what());
    }
  }
  return out;
}

}  // namespace qolab
