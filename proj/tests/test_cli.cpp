#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "cli.hpp"
#include "lanechange/dil_service.hpp"
#include "lanechange/rng.hpp"

using namespace lanechange;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "lanechange");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json last_error(const Run& r) {
  const auto pos = r.err.rfind("{\"error\"");
  REQUIRE(pos != std::string::npos);
  return json::parse(r.err.substr(pos))["error"];
}

std::vector<indicators::DecisionRecord> synthetic_records(int n, int drivers,
                                                          std::uint64_t seed) {
  const sim::ScenarioConfig config;
  sim::Rng rng(seed);
  std::vector<indicators::DecisionRecord> out;
  for (int i = 0; i < n; ++i) {
    indicators::DecisionRecord r;
    r.state = sim::sample_initial_state(config, rng);
    r.indicators = indicators::compute_indicators(r.state, config);
    r.v_e = r.state.ego.v;
    r.decision = Action::kChange;
    r.wall_time_ms = 1700000000000 + i;
    r.driver_id = "d" + std::to_string(i % drivers);
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("config hash matches git hash-object") {
  CHECK(cli::git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(cli::git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("train with defaults writes manifest, config and metrics") {
  const auto dir = fresh_dir("lc_cli_train");
  const Run r = invoke({"train", "--out", (dir / "a").string(), "--episodes", "12",
                        "--seed", "4"});
  REQUIRE(r.code == cli::kOk);
  const json manifest = json::parse(slurp(dir / "a" / "manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["status"] == "completed");
  CHECK(manifest["seed"] == 4);
  CHECK(manifest["config_path"].is_null());
  CHECK(manifest["config_hash"] ==
        cli::git_blob_sha1(manifest["resolved_config"].dump()));
  CHECK(!manifest["finished_at"].is_null());

  const json config = json::parse(slurp(dir / "a" / "config.json"));
  CHECK(config["gamma"] == 0.98);
  CHECK(config["eta"] == 0.005);
  CHECK(config["M_r"] == 10000);
  CHECK(config["M_i"] == 2000);
  CHECK(config["M_m"] == 32);
  CHECK(config["N_u"] == 20);
  CHECK(config["N_s"] == 200);
  CHECK(config["epsilon_s"] == 0.8);
  CHECK(config["epsilon_e"] == 0.1);
  CHECK(config["N_e"] == 12);
  CHECK(config["profile"]["name"] == "Normal");

  std::istringstream metrics(slurp(dir / "a" / "metrics.csv"));
  int lines = 0;
  for (std::string line; std::getline(metrics, line);) ++lines;
  CHECK(lines == 13);

  SUBCASE("same seed gives byte-identical outputs") {
    REQUIRE(invoke({"train", "--out", (dir / "b").string(), "--episodes", "12",
                    "--seed", "4"}).code == cli::kOk);
    CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
    CHECK(slurp(dir / "a" / "checkpoint_final.json") ==
          slurp(dir / "b" / "checkpoint_final.json"));
  }
  SUBCASE("config file is hashed by its bytes") {
    const std::string text = "{\"gamma\": 0.9, \"N_e\": 3}\n";
    std::ofstream(dir / "c.json") << text;
    REQUIRE(invoke({"train", "--config", (dir / "c.json").string(), "--style",
                    "aggressive", "--out", (dir / "c").string()}).code == cli::kOk);
    const json m = json::parse(slurp(dir / "c" / "manifest.json"));
    CHECK(m["config_hash"] == cli::git_blob_sha1(text));
    CHECK(m["resolved_config"]["gamma"] == 0.9);
    CHECK(m["resolved_config"]["profile"]["name"] == "Aggressive");
  }
  fs::remove_all(dir);
}

TEST_CASE("eval is deterministic across thread counts and traces replay") {
  const auto dir = fresh_dir("lc_cli_eval");
  REQUIRE(invoke({"train", "--out", (dir / "t").string(), "--episodes", "5"}).code ==
          cli::kOk);
  const std::string ckpt = (dir / "t" / "checkpoint_final.json").string();
  const Run one = invoke({"eval", "--checkpoint", ckpt, "--episodes", "40",
                          "--states", "100", "--seed", "9", "--traces", "3",
                          "--out", (dir / "e1").string()});
  REQUIRE(one.code == cli::kOk);
  const Run three = invoke({"eval", "--checkpoint", ckpt, "--episodes", "40",
                            "--states", "100", "--seed", "9", "--threads", "3",
                            "--out", (dir / "e3").string()});
  REQUIRE(three.code == cli::kOk);
  CHECK(slurp(dir / "e1" / "summary.json") == slurp(dir / "e3" / "summary.json"));
  CHECK(slurp(dir / "e1" / "points.csv") == slurp(dir / "e3" / "points.csv"));
  const json summary = json::parse(one.out);
  REQUIRE(summary.size() == 2);
  CHECK(summary[0]["agent"] == "rl");
  CHECK(summary[1]["agent"] == "benchmark");

  for (int i = 0; i < 3; ++i) {
    const auto trace = dir / "e1" / "traces" / ("rl_episode_000" + std::to_string(i) + ".jsonl");
    REQUIRE(fs::exists(trace));
    CHECK(invoke({"replay", trace.string()}).code == cli::kOk);
  }
  fs::remove_all(dir);
}

TEST_CASE("replay round trip and mismatch exit code") {
  const auto dir = fresh_dir("lc_cli_replay");
  const sim::ScenarioConfig config;
  sim::Rng rng(21);
  sim::ScenarioState s = sim::sample_initial_state(config, rng);
  std::vector<json> lines;
  for (int k = 0; k < 60; ++k) {
    const Action a = k == 59 ? Action::kChange : Action::kKeep;
    const auto res = sim::step(s, a, config);
    lines.push_back(sim::trace_record_to_json({s, a, res.terminal}));
    if (res.terminal) break;
    s = res.state;
  }
  auto write = [&](const fs::path& p) {
    std::ofstream out(p);
    for (const auto& l : lines) out << l.dump() << '\n';
  };
  write(dir / "good.jsonl");
  const Run good = invoke({"replay", (dir / "good.jsonl").string()});
  CHECK(good.code == cli::kOk);
  CHECK(json::parse(good.out)["mismatches"] == 0);
  CHECK(json::parse(good.out)["steps_checked"].get<std::size_t>() == lines.size());

  REQUIRE(lines.size() > 10);
  lines[10]["ego"]["x"] = lines[10]["ego"]["x"].get<double>() + 1e-9;
  write(dir / "bad.jsonl");
  const Run bad = invoke({"replay", (dir / "bad.jsonl").string()});
  CHECK(bad.code == cli::kReplayMismatch);
  CHECK(last_error(bad)["kind"] == "replay_mismatch");
  fs::remove_all(dir);
}

TEST_CASE("fit reports correlations and clusters drivers") {
  const auto dir = fresh_dir("lc_cli_fit");
  indicators::write_records((dir / "records.jsonl").string(),
                            synthetic_records(300, 6, 13));
  const Run r = invoke({"fit", (dir / "records.jsonl").string(), "--out",
                        (dir / "me.json").string(), "--name", "Me", "--cluster", "3"});
  REQUIRE(r.code == cli::kOk);
  const json report = json::parse(r.out);
  CHECK(report["records"] == 300);
  CHECK(report["correlation"]["tf"]["n"] == 300);
  const auto profile = json::parse(slurp(dir / "me.json")).get<indicators::StyleProfile>();
  CHECK(profile.name == "Me");
  CHECK(profile.source == indicators::ProfileSource::kFitted);
  const json clusters = json::parse(slurp(dir / "me_clusters.json"));
  CHECK(clusters["drivers"].size() == 6);
  CHECK(clusters["labels"] == json({"Aggressive", "Normal", "Defensive"}));
  CHECK(fs::exists(dir / "manifest.json"));

  SUBCASE("a fitted profile trains") {
    CHECK(invoke({"train", "--style", (dir / "me.json").string(), "--episodes", "2",
                  "--out", (dir / "t").string()}).code == cli::kOk);
  }
  fs::remove_all(dir);
}

TEST_CASE("fit on a single record is rejected") {
  const auto dir = fresh_dir("lc_cli_fit1");
  indicators::write_records((dir / "one.jsonl").string(), synthetic_records(1, 1, 3));
  const Run r = invoke({"fit", (dir / "one.jsonl").string(), "--out",
                        (dir / "p.json").string()});
  CHECK(r.code != cli::kOk);
  CHECK(last_error(r).contains("message"));
  CHECK(!fs::exists(dir / "p.json"));
  fs::remove_all(dir);
}

TEST_CASE("fit consumes a driver-in-the-loop session log") {
  const auto dir = fresh_dir("lc_cli_dil");
  dil::ServiceConfig config;
  config.tick_rate_hz = 5000.0;
  config.log_dir = dir.string();
  dil::Server server(config);
  const int port = server.bind(0);
  std::thread loop([&] { server.serve(); });

  std::string log;
  {
    dil::LineChannel ch(dil::connect_tcp("127.0.0.1", port));
    ch.send({{"type", "start"}, {"driver_id", "p1"}, {"seed", 8}, {"episodes", 30}});
    int ticks = 0;
    while (true) {
      const auto line = ch.read_line(std::chrono::seconds(10));
      REQUIRE(line.has_value());
      const json m = json::parse(*line);
      if (m["type"] == "tick" && ++ticks == 3) ch.send({{"type", "lane_change"}});
      if (m["type"] == "episode_end") ticks = 0;
      if (m["type"] == "session_summary") {
        log = m["log"].get<std::string>();
        break;
      }
    }
  }
  server.stop();
  loop.join();

  const Run r = invoke({"fit", log, "--out", (dir / "p1.json").string(), "--name", "p1"});
  CHECK(r.code == cli::kOk);
  CHECK(json::parse(r.out)["records"].get<int>() > 10);
  fs::remove_all(dir);
}

TEST_CASE("invalid input maps to the validation exit code") {
  const auto dir = fresh_dir("lc_cli_bad");
  std::ofstream(dir / "unknown.json") << R"({"gamma": 0.98, "gama": 1})";
  const Run unknown = invoke({"train", "--config", (dir / "unknown.json").string(),
                              "--out", (dir / "x").string()});
  CHECK(unknown.code == cli::kValidationError);
  CHECK(last_error(unknown)["kind"] == "validation");
  CHECK(last_error(unknown)["message"].get<std::string>().find("gama") !=
        std::string::npos);

  std::ofstream(dir / "scenario.json") << R"({"dt": 0.1, "lanes": 3})";
  CHECK(invoke({"replay", "t.jsonl", "--scenario", (dir / "scenario.json").string()})
            .code == cli::kValidationError);
  CHECK(invoke({"train", "--style", "reckless", "--out", (dir / "y").string()}).code ==
        cli::kValidationError);
  CHECK(invoke({"train", "--out", (dir / "z").string(), "--episodes", "-1"}).code ==
        cli::kValidationError);
  CHECK(invoke({}).code == cli::kValidationError);
  CHECK(invoke({"eval", "--out", (dir / "w").string()}).code == cli::kValidationError);
  CHECK(invoke({"eval", "--checkpoint", (dir / "none.json").string(), "--out",
                (dir / "v").string()}).code != cli::kOk);
  fs::remove_all(dir);
}
