#include "cli.hpp"

#include <openssl/evp.h>
#include <signal.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "lanechange/agent.hpp"
#include "lanechange/dil_service.hpp"
#include "lanechange/eval.hpp"
#include "lanechange/json_util.hpp"
#include "lanechange/rng.hpp"

namespace lanechange::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Failure : std::runtime_error {
  Failure(int code, std::string kind, const std::string& message)
      : std::runtime_error(message), code(code), kind(std::move(kind)) {}
  int code;
  std::string kind;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure(kValidationError, "io", "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Failure(kValidationError, "validation",
                  where + ": invalid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Failure(kRuntimeError, "io", "cannot write " + path.string());
  out << text;
}

std::string utc_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}",
                     fmt::gmtime(std::chrono::system_clock::to_time_t(
                         std::chrono::system_clock::now())));
}

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  const char* env = std::getenv("LANECHANGE_LOG_LEVEL");
  const std::string name = env ? env : "info";
  static const std::map<std::string, spdlog::level::level_enum> levels = {
      {"error", spdlog::level::err},
      {"warn", spdlog::level::warn},
      {"info", spdlog::level::info},
      {"debug", spdlog::level::debug}};
  const auto it = levels.find(name);
  if (it == levels.end()) {
    throw Failure(kValidationError, "validation",
                  "LANECHANGE_LOG_LEVEL must be one of error, warn, info, "
                  "debug; got '" + name + "'");
  }
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto logger = std::make_shared<spdlog::logger>("lanechange", sink);
  logger->set_pattern("[%H:%M:%S.%e] [%l] %v");
  logger->set_level(it->second);
  return logger;
}

// Written before any other output, completed when the command succeeds.
class Manifest {
 public:
  Manifest(fs::path path, std::string command, std::string config_path,
           std::uint64_t seed, const json& resolved,
           const std::optional<std::string>& config_bytes, fs::path out_dir)
      : path_(std::move(path)) {
    doc_ = {{"command", std::move(command)},
            {"config_path", config_path.empty() ? json(nullptr) : json(config_path)},
            {"seed", seed},
            {"config_hash", git_blob_sha1(config_bytes ? *config_bytes
                                                       : resolved.dump())},
            {"resolved_config", resolved},
            {"output_dir", out_dir.string()},
            {"started_at", utc_now()},
            {"finished_at", nullptr},
            {"status", "running"}};
    flush();
  }
  void finish(const std::string& status = "completed") {
    doc_["finished_at"] = utc_now();
    doc_["status"] = status;
    flush();
  }

 private:
  void flush() { write_text(path_, doc_.dump(2) + "\n"); }
  fs::path path_;
  json doc_;
};

struct Context {
  std::ostream& out;
  std::shared_ptr<spdlog::logger> log;
};

agent::TrainingConfig load_training_config(const std::string& config_path,
                                           const std::string& style,
                                           std::optional<std::string>* bytes) {
  json j = json::object();
  if (!config_path.empty()) {
    std::string text = read_file(config_path);
    j = parse_json(text, config_path);
    if (bytes) *bytes = std::move(text);
  }
  if (!style.empty()) {
    if (!j.is_object()) {
      throw Failure(kValidationError, "validation",
                    "training config must be a JSON object");
    }
    j.erase("profile");
    j["style"] = style;
  }
  return j.get<agent::TrainingConfig>();
}

sim::ScenarioConfig load_scenario(const std::string& path) {
  if (path.empty()) return sim::ScenarioConfig{};
  sim::ScenarioConfig c =
      parse_json(read_file(path), path).get<sim::ScenarioConfig>();
  c.validate();
  return c;
}

double mae_or_nan(const std::vector<eval::LaneChangePoint>& points,
                  const indicators::StyleProfile& profile,
                  eval::Indicator which, const sim::ScenarioConfig& config) {
  try {
    return eval::mae(points, profile, which, config);
  } catch (const std::invalid_argument&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

// ---- fit -------------------------------------------------------------------

struct FitOptions {
  std::string records;
  std::string out;
  std::string name = "Fitted";
  std::string scenario;
  int cluster = 0;
  std::uint64_t seed = 0;
};

json correlation_json(const std::vector<indicators::DecisionRecord>& records,
                      int which) {
  std::vector<double> xs, ys;
  for (const auto& r : records) {
    if (r.decision != Action::kChange) continue;
    if (which == 1 && r.indicators.target_front_missing()) continue;
    if (which == 2 && !r.indicators.nb_relevant) continue;
    xs.push_back(r.v_e);
    ys.push_back(r.indicators.values()[static_cast<std::size_t>(which)]);
  }
  try {
    const auto c = indicators::pearson_correlation(xs, ys);
    return {{"r", c.r}, {"p_value", c.p_value}, {"n", xs.size()}};
  } catch (const std::invalid_argument&) {
    return {{"r", nullptr}, {"p_value", nullptr}, {"n", xs.size()}};
  }
}

json cluster_drivers(const std::vector<indicators::DecisionRecord>& records,
                     int k, std::uint64_t seed, spdlog::logger& log) {
  struct Acc {
    std::array<double, 3> sum{};
    std::array<int, 3> n{};
  };
  std::map<std::string, Acc> per_driver;
  for (const auto& r : records) {
    if (r.decision != Action::kChange) continue;
    Acc& a = per_driver[r.driver_id];
    const auto v = r.indicators.values();
    const std::array<bool, 3> ok{true, !r.indicators.target_front_missing(),
                                 r.indicators.nb_relevant};
    for (std::size_t i = 0; i < 3; ++i) {
      if (!ok[i]) continue;
      a.sum[i] += v[i];
      ++a.n[i];
    }
  }
  std::vector<std::string> drivers;
  std::vector<indicators::Feature> features;
  for (const auto& [id, a] : per_driver) {
    if (a.n[0] == 0 || a.n[1] == 0 || a.n[2] == 0) {
      log.warn("driver '{}' lacks a usable value for some indicator; skipped", id);
      continue;
    }
    drivers.push_back(id);
    features.push_back({a.sum[0] / a.n[0], a.sum[1] / a.n[1], a.sum[2] / a.n[2]});
  }
  const auto c = indicators::cluster_styles(features, k, seed);
  json out = {{"k", k}, {"iterations", c.iterations}};
  json list = json::array();
  for (std::size_t i = 0; i < drivers.size(); ++i) {
    const int cluster = c.assignment[i];
    list.push_back({{"driver_id", drivers[i]},
                    {"feature", features[i]},
                    {"cluster", cluster},
                    {"label", c.labels[static_cast<std::size_t>(cluster)]}});
  }
  out["drivers"] = std::move(list);
  out["centroids"] = c.centroids;
  out["labels"] = c.labels;
  out["degenerate"] = c.degenerate;
  return out;
}

int cmd_fit(const FitOptions& o, Context& ctx) {
  const sim::ScenarioConfig scenario = load_scenario(o.scenario);
  const fs::path out(o.out);
  const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  json resolved = {{"records", o.records}, {"name", o.name},
                   {"cluster", o.cluster}, {"scenario", scenario}};
  Manifest manifest(dir / "manifest.json", "fit", "", o.seed, resolved,
                    std::nullopt, dir);

  const auto records = indicators::read_records(o.records, scenario);
  ctx.log->info("read {} decision records from {}", records.size(), o.records);
  const auto profile = indicators::fit_profile_ols(records, scenario, o.name);
  write_text(out, json(profile).dump(2) + "\n");

  json report = {{"profile", profile},
                 {"records", records.size()},
                 {"correlation",
                  {{"tf", correlation_json(records, 0)},
                   {"tnf", correlation_json(records, 1)},
                   {"dvnb", correlation_json(records, 2)}}}};
  if (o.cluster > 0) {
    const json clusters = cluster_drivers(records, o.cluster, o.seed, *ctx.log);
    const fs::path cpath = dir / (out.stem().string() + "_clusters.json");
    write_text(cpath, clusters.dump(2) + "\n");
    report["clusters"] = cpath.string();
  }
  manifest.finish();
  ctx.out << report.dump(2) << '\n';
  return kOk;
}

// ---- train -----------------------------------------------------------------

struct TrainOptions {
  std::string config;
  std::string style;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> episodes;
};

int cmd_train(const TrainOptions& o, Context& ctx) {
  std::optional<std::string> bytes;
  agent::TrainingConfig config = load_training_config(o.config, o.style, &bytes);
  if (o.seed) config.seed = *o.seed;
  if (o.episodes) config.episodes = *o.episodes;
  config.validate();
  const fs::path dir(o.out);
  Manifest manifest(dir / "manifest.json", "train", o.config, config.seed,
                    json(config), bytes, dir);
  write_text(dir / "config.json", json(config).dump(2) + "\n");

  ctx.log->info("training style {} for {} episodes (seed {})",
                config.profile.name, config.episodes, config.seed);
  agent::TrainingHooks hooks;
  hooks.out_dir = dir.string();
  double window_reward = 0.0;
  int window = 0;
  hooks.on_episode = [&](const agent::EpisodeMetrics& m) {
    window_reward += m.step_reward;
    ++window;
    if ((m.episode + 1) % 500 == 0) {
      ctx.log->info("episode {}: mean step reward {:.3f} over the last {}",
                    m.episode + 1, window_reward / window, window);
      window_reward = 0.0;
      window = 0;
    }
  };
  agent::run_training(config, hooks);
  manifest.finish();
  ctx.out << json{{"metrics", (dir / "metrics.csv").string()},
                  {"checkpoint", (dir / "checkpoint_final.json").string()}}
                 .dump(2)
          << '\n';
  return kOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string config;
  std::string style;
  std::string out;
  int episodes = 500;
  int states = 1000;
  std::uint64_t seed = 0;
  int threads = 1;
  int traces = 0;
};

void write_trace(const fs::path& path, const eval::EpisodeOutcome& o) {
  std::ostringstream ss;
  for (std::size_t i = 0; i < o.records.size(); ++i) {
    sim::TraceRecord t;
    t.state = o.records[i].state;
    t.action = o.records[i].decision;
    t.terminal = i + 1 == o.records.size();
    ss << sim::trace_record_to_json(t).dump() << '\n';
  }
  write_text(path, ss.str());
}

int cmd_eval(const EvalOptions& o, Context& ctx) {
  std::optional<std::string> bytes;
  const agent::TrainingConfig config =
      load_training_config(o.config, o.style, &bytes);
  if (o.episodes < 1 || o.states < 1 || o.threads < 1 || o.traces < 0) {
    throw Failure(kValidationError, "validation",
                  "episodes, states and threads must be positive");
  }
  const fs::path dir(o.out);
  json resolved = {{"checkpoint", o.checkpoint}, {"training", config},
                   {"episodes", o.episodes}, {"states", o.states},
                   {"traces", o.traces}};
  Manifest manifest(dir / "manifest.json", "eval", o.config, o.seed, resolved,
                    bytes, dir);
  const qnet::NetworkParams params = qnet::load(o.checkpoint);
  const auto& sc = config.scenario;
  const auto& profile = config.profile;

  const eval::Policy rl = [&](const sim::ScenarioState& s) {
    return agent::rl_decide(params, s, sc);
  };
  const eval::Policy bench = [&](const sim::ScenarioState& s) {
    return agent::benchmark_decide(s, profile, config.reward, sc);
  };
  const eval::Policy reference = [&](const sim::ScenarioState& s) {
    return eval::reference_driver_decide(s, profile, {}, sc);
  };
  const auto rl_run = eval::run_rollouts(rl, eval::AgentKind::kRl, sc,
                                         o.episodes, o.seed, o.threads,
                                         o.traces > 0);
  const auto bm_run = eval::run_rollouts(bench, eval::AgentKind::kBenchmark, sc,
                                         o.episodes, o.seed, o.threads);
  const auto states = eval::sample_evaluation_states(sc, o.states, o.seed);
  const auto rl_agree = eval::agreement(reference, rl, states, sc);
  const auto bm_agree = eval::agreement(reference, bench, states, sc);

  auto summarize = [&](const std::string& agent_name,
                       const eval::RolloutResult& r,
                       const eval::AgreementReport& a) {
    eval::StyleSummary s;
    s.style = profile.name;
    s.agent = agent_name;
    s.mae = {mae_or_nan(r.points, profile, eval::Indicator::kTf, sc),
             mae_or_nan(r.points, profile, eval::Indicator::kTnf, sc),
             mae_or_nan(r.points, profile, eval::Indicator::kDvnb, sc)};
    s.accuracy = a.accuracy;
    s.n = static_cast<int>(r.points.size());
    return s;
  };
  const std::vector<eval::StyleSummary> summaries{
      summarize("rl", rl_run, rl_agree), summarize("benchmark", bm_run, bm_agree)};
  std::vector<eval::LaneChangePoint> all = rl_run.points;
  all.insert(all.end(), bm_run.points.begin(), bm_run.points.end());
  eval::export_results({{profile.name, all}}, summaries, dir.string());

  const int traces = std::min(o.traces, o.episodes);
  for (int i = 0; i < traces; ++i) {
    write_trace(dir / "traces" / fmt::format("rl_episode_{:04d}.jsonl", i),
                rl_run.outcomes[static_cast<std::size_t>(i)]);
  }
  for (const auto& s : summaries) {
    ctx.log->info("{} {}: {} lane changes, MAE tf {:.3f} tnf {:.3f} dvnb {:.3f}, "
                  "agreement {:.3f}",
                  s.style, s.agent, s.n, s.mae[0], s.mae[1], s.mae[2], s.accuracy);
  }
  manifest.finish();
  ctx.out << read_file((dir / "summary.json").string());
  return kOk;
}

// ---- compare ---------------------------------------------------------------

struct CompareOptions {
  std::string checkpoint;
  std::string config;
  std::string style;
  std::string out;
  int states = 1000;
  int out_of_domain = 100;
  std::uint64_t seed = 0;
};

json disagreement_json(const eval::Disagreement& d) {
  return {{"state", d.state},
          {"expected", to_string(d.expected)},
          {"actual", to_string(d.actual)},
          {"d_nb", d.d_nb},
          {"target_front_present", d.target_front_present},
          {"out_of_domain", d.out_of_domain}};
}

int cmd_compare(const CompareOptions& o, Context& ctx) {
  std::optional<std::string> bytes;
  const agent::TrainingConfig config =
      load_training_config(o.config, o.style, &bytes);
  if (o.states < 1 || o.out_of_domain < 0) {
    throw Failure(kValidationError, "validation",
                  "states must be positive and out-of-domain count >= 0");
  }
  std::optional<Manifest> manifest;
  if (!o.out.empty()) {
    json resolved = {{"checkpoint", o.checkpoint}, {"training", config},
                     {"states", o.states}, {"out_of_domain", o.out_of_domain}};
    manifest.emplace(fs::path(o.out) / "manifest.json", "compare", o.config,
                     o.seed, resolved, bytes, fs::path(o.out));
  }
  const qnet::NetworkParams params = qnet::load(o.checkpoint);
  const auto& sc = config.scenario;
  const auto& profile = config.profile;
  const eval::Policy rl = [&](const sim::ScenarioState& s) {
    return agent::rl_decide(params, s, sc);
  };
  const eval::Policy bench = [&](const sim::ScenarioState& s) {
    return agent::benchmark_decide(s, profile, config.reward, sc);
  };
  const eval::Policy reference = [&](const sim::ScenarioState& s) {
    return eval::reference_driver_decide(s, profile, {}, sc);
  };
  const auto states = eval::sample_evaluation_states(sc, o.states, o.seed);
  const auto ood = eval::sample_out_of_domain_states(
      sc, o.out_of_domain, derive_seed(o.seed, "out-of-domain"));

  auto summary = [](const eval::AgreementReport& r) {
    return json{{"accuracy", r.accuracy}, {"agree", r.agree}, {"total", r.total}};
  };
  const auto rl_ref = eval::agreement(reference, rl, states, sc);
  const auto bm_ref = eval::agreement(reference, bench, states, sc);
  const auto rl_bm = eval::agreement(bench, rl, states, sc);
  const auto rl_ood = eval::agreement(reference, rl, ood, sc);
  int flagged = 0;
  for (const auto& d : rl_ood.disagreements) flagged += d.out_of_domain;

  json report = {{"style", profile.name},
                 {"states", o.states},
                 {"rl_vs_reference", summary(rl_ref)},
                 {"benchmark_vs_reference", summary(bm_ref)},
                 {"rl_vs_benchmark", summary(rl_bm)},
                 {"out_of_domain",
                  {{"states", ood.size()},
                   {"disagreements", rl_ood.disagreements.size()},
                   {"flagged", flagged}}}};
  if (manifest) {
    const fs::path dir(o.out);
    std::ostringstream lines;
    for (const auto* r : {&rl_ref, &rl_ood}) {
      for (const auto& d : r->disagreements) {
        lines << disagreement_json(d).dump() << '\n';
      }
    }
    write_text(dir / "disagreements.jsonl", lines.str());
    write_text(dir / "report.json", report.dump(2) + "\n");
    manifest->finish();
  }
  ctx.log->info("{}: rl {:.3f} vs benchmark {:.3f} agreement with the reference "
                "driver", profile.name, rl_ref.accuracy, bm_ref.accuracy);
  ctx.out << report.dump(2) << '\n';
  return kOk;
}

// ---- serve -----------------------------------------------------------------

struct ServeOptions {
  int port = 8765;
  std::string scenario;
  std::string log_dir = "dil_logs";
  double tick_rate = 10.0;
  int max_episodes = 500;
};

int cmd_serve(const ServeOptions& o, Context& ctx) {
  dil::ServiceConfig config;
  config.scenario = load_scenario(o.scenario);
  config.tick_rate_hz = o.tick_rate;
  config.log_dir = o.log_dir;
  config.max_episodes = o.max_episodes;
  config.validate();
  Manifest manifest(fs::path(o.log_dir) / "manifest.json", "serve", o.scenario,
                    0, json(config), std::nullopt, fs::path(o.log_dir));

  // Handle SIGINT/SIGTERM synchronously; worker threads inherit the mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  dil::Server server(config);
  const int port = server.bind(o.port);
  ctx.out << json{{"port", port}, {"log_dir", o.log_dir}}.dump() << std::endl;
  ctx.log->info("dil-service listening on 127.0.0.1:{}", port);
  std::thread loop([&] { server.serve(); });
  int sig = 0;
  sigwait(&signals, &sig);
  ctx.log->info("signal {} received, shutting down", sig);
  server.stop();
  loop.join();
  manifest.finish();
  return kOk;
}

// ---- replay ----------------------------------------------------------------

struct ReplayOptions {
  std::string trace;
  std::string scenario;
};

int cmd_replay(const ReplayOptions& o, Context& ctx) {
  const sim::ScenarioConfig scenario = load_scenario(o.scenario);
  std::ifstream in(o.trace);
  if (!in) throw Failure(kValidationError, "io", "cannot read " + o.trace);
  std::vector<sim::TraceRecord> trace;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      trace.push_back(sim::trace_record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Failure(kValidationError, "validation",
                    fmt::format("{}:{}: {}", o.trace, line_no, e.what()));
    }
  }
  if (trace.empty()) {
    throw Failure(kValidationError, "validation", o.trace + ": empty trace");
  }
  const auto report = sim::replay_trace(trace, scenario);
  ctx.out << json{{"steps_checked", report.steps_checked},
                  {"mismatches", report.mismatches},
                  {"details", report.details}}
                 .dump(2)
          << '\n';
  if (report.mismatches > 0) {
    throw Failure(kReplayMismatch, "replay_mismatch",
                  fmt::format("{} of {} steps differ", report.mismatches,
                              report.steps_checked));
  }
  return kOk;
}

}  // namespace

std::string git_blob_sha1(std::string_view content) {
  const std::string header = fmt::format("blob {}", content.size());
  EVP_MD_CTX* md = EVP_MD_CTX_new();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestInit_ex(md, EVP_sha1(), nullptr);
  EVP_DigestUpdate(md, header.data(), header.size() + 1);  // with the NUL
  EVP_DigestUpdate(md, content.data(), content.size());
  EVP_DigestFinal_ex(md, digest, &len);
  EVP_MD_CTX_free(md);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

int run(int argc, const char* const* argv, std::ostream& out,
        std::ostream& err) {
  auto fail = [&](int code, const std::string& kind, const std::string& msg) {
    err << json{{"error", {{"kind", kind}, {"message", msg}}}}.dump() << '\n';
    return code;
  };

  CLI::App app{"Personalised lane-change decision toolkit"};
  app.require_subcommand(1);

  FitOptions fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a style profile from decision records");
  fit_cmd->add_option("records", fit.records, "Decision records (JSON Lines)")->required();
  fit_cmd->add_option("--out", fit.out, "Output profile JSON")->required();
  fit_cmd->add_option("--name", fit.name, "Profile name");
  fit_cmd->add_option("--cluster", fit.cluster, "Also cluster drivers into k styles");
  fit_cmd->add_option("--seed", fit.seed, "Clustering seed");
  fit_cmd->add_option("--scenario", fit.scenario, "Scenario config JSON");

  TrainOptions train;
  std::uint64_t train_seed = 0;
  int train_episodes = 0;
  auto* train_cmd = app.add_subcommand("train", "Train a DQN agent for one style");
  train_cmd->add_option("--config", train.config, "Training config JSON");
  train_cmd->add_option("--style", train.style,
                        "defensive | normal | aggressive | profile path");
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  auto* seed_opt = train_cmd->add_option("--seed", train_seed, "Override the config seed");
  auto* episodes_opt =
      train_cmd->add_option("--episodes", train_episodes, "Override N_e");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Roll out a checkpoint and export MAE");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--config", ev.config, "Training config JSON");
  eval_cmd->add_option("--style", ev.style);
  eval_cmd->add_option("--episodes", ev.episodes);
  eval_cmd->add_option("--states", ev.states, "Agreement states");
  eval_cmd->add_option("--seed", ev.seed);
  eval_cmd->add_option("--threads", ev.threads);
  eval_cmd->add_option("--traces", ev.traces, "Export traces of the first N episodes");
  eval_cmd->add_option("--out", ev.out)->required();

  CompareOptions cmp;
  auto* compare_cmd =
      app.add_subcommand("compare", "Agreement of RL and benchmark with the reference driver");
  compare_cmd->add_option("--checkpoint", cmp.checkpoint)->required();
  compare_cmd->add_option("--config", cmp.config, "Training config JSON");
  compare_cmd->add_option("--style", cmp.style);
  compare_cmd->add_option("--states", cmp.states);
  compare_cmd->add_option("--out-of-domain", cmp.out_of_domain);
  compare_cmd->add_option("--seed", cmp.seed);
  compare_cmd->add_option("--out", cmp.out, "Optional output directory");

  ServeOptions serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the driver-in-the-loop session server");
  serve_cmd->add_option("--port", serve.port, "0 picks a free port");
  serve_cmd->add_option("--scenario", serve.scenario, "Scenario config JSON");
  serve_cmd->add_option("--log", serve.log_dir, "Session log directory");
  serve_cmd->add_option("--tick-rate", serve.tick_rate, "Ticks per second");
  serve_cmd->add_option("--max-episodes", serve.max_episodes);

  ReplayOptions replay;
  auto* replay_cmd = app.add_subcommand("replay", "Re-simulate an exported trace");
  replay_cmd->add_option("trace", replay.trace)->required();
  replay_cmd->add_option("--scenario", replay.scenario, "Scenario config JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return fail(kValidationError, "usage", e.what());
  }

  try {
    Context ctx{out, make_logger(err)};
    if (*fit_cmd) return cmd_fit(fit, ctx);
    if (*train_cmd) {
      if (*seed_opt) train.seed = train_seed;
      if (*episodes_opt) train.episodes = train_episodes;
      return cmd_train(train, ctx);
    }
    if (*eval_cmd) return cmd_eval(ev, ctx);
    if (*compare_cmd) return cmd_compare(cmp, ctx);
    if (*serve_cmd) return cmd_serve(serve, ctx);
    if (*replay_cmd) return cmd_replay(replay, ctx);
    return fail(kValidationError, "usage", "no subcommand");
  } catch (const Failure& e) {
    return fail(e.code, e.kind, e.what());
  } catch (const ConfigError& e) {
    return fail(kValidationError, "validation", e.what());
  } catch (const json::exception& e) {
    return fail(kValidationError, "validation", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(kValidationError, "validation", e.what());
  } catch (const qnet::NumericError& e) {
    return fail(kRuntimeError, "numeric", e.what());
  } catch (const std::exception& e) {
    return fail(kRuntimeError, "runtime", e.what());
  }
}

}  // namespace lanechange::cli
