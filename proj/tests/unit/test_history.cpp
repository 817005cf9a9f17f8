#include <fstream>

#include "doctest.h"
#include "qolab/errors.hpp"
#include "qolab/history.hpp"
#include "support.hpp"

using namespace qolab;

TEST_SUITE("history") {

TEST_CASE("four relations give three join actions") {
  const auto cat = testing::small_catalog();
  Environment env({}, cat);
  const auto q = testing::query_of(cat, 0, {0, 1, 2, 3});
  const auto h = record_episode(env, q, ExpertKind::DynamicProgramming);
  CHECK(h.steps.size() == 3);
  for (const auto& s : h.steps) CHECK(s.action.kind == Action::Kind::JoinPair);
  CHECK(h.terminal_plan == optimize_dp(cat, q));
}

TEST_CASE("replay reproduces the expert plan") {
  const auto cat = generate_catalog({}, 8);
  WorkloadSpec ws;
  ws.min_relations = 1;
  ws.max_relations = 7;
  ws.query_count = 60;
  const auto w = generate_workload(cat, ws, 9);
  for (int stages = 1; stages <= 4; ++stages) {
    EnvConfig cfg;
    cfg.enabled_stages = stages;
    Environment env(cfg, cat);
    for (auto kind : {ExpertKind::DynamicProgramming, ExpertKind::Greedy})
      for (const auto& q : w.queries) {
        const auto h = record_episode(env, q, kind);
        CHECK(h.terminal_plan == optimize(kind, cat, q));
        CHECK(replay_history(env, q, h) == h.terminal_plan);
      }
  }
}

TEST_CASE("single relation with all stages has no joins") {
  const auto cat = testing::small_catalog();
  EnvConfig cfg;
  cfg.enabled_stages = 4;
  Environment env(cfg, cat);
  auto q = testing::query_of(cat, 0, {0}, true);
  q.selection_predicates.push_back({0, 0, 0.5});
  const auto h = record_episode(env, q, ExpertKind::DynamicProgramming);
  REQUIRE(h.steps.size() == 2);
  CHECK(h.steps[0].action.kind == Action::Kind::AccessPath);
  CHECK(h.steps[1].action.kind == Action::Kind::Aggregate);
}

TEST_CASE("log round trip and tampering") {
  testing::TempDir dir("history");
  const auto cat = generate_catalog({}, 8);
  const auto w = generate_workload(cat, {}, 9);
  EnvConfig cfg;
  cfg.enabled_stages = 4;
  Environment env(cfg, cat);
  const auto path = dir.file("h.jsonl");
  std::vector<EpisodeHistory> written;
  for (int i = 0; i < 10; ++i) {
    auto h = record_episode(env, w.queries[i], ExpertKind::DynamicProgramming);
    h.latency_s = 0.5 + i;
    append_history_log(path, h);
    written.push_back(h);
  }
  const auto back = load_history_log(path, env, w);
  REQUIRE(back.size() == written.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(history_to_line(back[i]) == history_to_line(written[i]));
    CHECK(back[i].latency_s == written[i].latency_s);
  }

  // flip one join operator in the recorded plan
  std::string line = history_to_line(written[3]);
  auto pos = line.find("\"join\":\"hash\"");
  if (pos != std::string::npos)
    line.replace(pos, 13, "\"join\":\"nested_loop\"");
  else
    line.replace(line.find("\"join\":\"nested_loop\""), 20, "\"join\":\"hash\"");
  std::ofstream(dir.file("bad.jsonl")) << line << "\n";
  CHECK_THROWS_AS(load_history_log(dir.file("bad.jsonl"), env, w), IoError);

  std::ofstream(dir.file("junk.jsonl")) << "{\"format_version\": 1,\n";
  CHECK_THROWS_AS(load_history_log(dir.file("junk.jsonl"), env, w), IoError);
}

}
