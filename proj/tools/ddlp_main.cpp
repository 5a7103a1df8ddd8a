// ddlp — one binary, five subcommands:
//   simulate   deterministic virtual-time run from a config's device profile
//   run        live run: CPU workers in-process + storage emulator over TCP
//   csd-serve  the storage-side emulator process (one connection, then exit)
//   toycheck   self-check of the built-in analytical scenario
//   report     comparison table (CSV + console) from saved trace files

#include <csignal>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>

#include "ddlp/config.hpp"
#include "ddlp/csd_server.hpp"
#include "ddlp/energy.hpp"
#include "ddlp/runtime.hpp"
#include "ddlp/simulator.hpp"
#include "ddlp/wire.hpp"

namespace fs = std::filesystem;
using namespace ddlp;

namespace {

// ---------------------------------------------------------------------------
// formatting

std::string fmt_seconds(double s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", s);
  std::string t(buf);
  while (t.size() > 1 && t.back() == '0') t.pop_back();
  if (!t.empty() && t.back() == '.') t.push_back('0');
  return t;
}

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void print_report_summary(const RunReport& r) {
  std::cout << "policy: " << r.policy << "  epochs: " << r.epochs << "  batches/epoch: " << r.n_batches
            << "\n";
  std::cout << "makespan: " << fmt_seconds(r.makespan) << " s  avg batch: " << fmt_seconds(r.avg_batch_time)
            << " s\n";
  std::cout << "cpu-path batches: " << r.n_cpu_trained << "  staged batches: " << r.n_csd_trained
            << "  wasted stagings: " << r.wasted_csd_batches << "\n";
  std::cout << "energy: " << fmt_fixed(r.energy_joules_per_batch, 3)
            << " J/batch  cost: $" << fmt_fixed(r.cost_dollars, 4)
            << "  host usage: " << fmt_seconds(r.host_usage_seconds_per_batch) << " s/batch\n";
  if (r.degraded) std::cout << "degraded: storage prong was lost mid-run; CPU prong covered the rest\n";
}

// ---------------------------------------------------------------------------
// config plumbing shared by the subcommands

struct Overrides {
  std::string policy;
  std::uint32_t epochs = 0;       // 0 = keep config value
  std::optional<std::uint64_t> seed;
  std::string out;
};

void apply_overrides(ExperimentConfig& cfg, const Overrides& ov, bool seed_is_transform_seed) {
  if (!ov.policy.empty()) cfg.policy = parse_policy(ov.policy);
  if (ov.epochs > 0) cfg.epochs = ov.epochs;
  if (ov.seed) {
    if (seed_is_transform_seed) {
      if (!cfg.runtime) throw std::invalid_argument("config: --seed needs a 'runtime' section");
      cfg.runtime->seed = *ov.seed;
    } else {
      cfg.dataset.seed = *ov.seed;
    }
  }
  if (!ov.out.empty()) cfg.out_dir = ov.out;
}

void apply_staging_env(ExperimentConfig& cfg) {
  if (const char* env = std::getenv("DDLP_STAGING_ROOT"); env && *env && cfg.runtime)
    cfg.runtime->staging_root = env;
}

// An empty staging root resolves to a fresh temp directory. Exported through
// the environment so an emulator child spawned from this process stages into
// the same location the controller was configured with.
std::optional<fs::path> resolve_staging_root(ExperimentConfig& cfg) {
  if (!cfg.runtime || !cfg.runtime->staging_root.empty()) return std::nullopt;
  fs::path root = fs::temp_directory_path() / ("ddlp-staging-" + std::to_string(::getpid()));
  fs::create_directories(root);
  cfg.runtime->staging_root = root.string();
  ::setenv("DDLP_STAGING_ROOT", root.c_str(), 1);
  return root;
}

fs::path ensure_out_dir(const ExperimentConfig& cfg) {
  fs::path dir = cfg.out_dir.value_or(".");
  fs::create_directories(dir);
  return dir;
}

void write_artifacts(const fs::path& dir, const std::string& tag, const Trace& trace,
                     const RunReport& report) {
  fs::path trace_path = dir / ("trace_" + tag + ".csv");
  fs::path report_path = dir / ("report_" + tag + ".json");
  {
    std::ofstream out(trace_path);
    if (!out) throw std::runtime_error("cannot write " + trace_path.string());
    trace.write_csv(out);
  }
  {
    std::ofstream out(report_path);
    if (!out) throw std::runtime_error("cannot write " + report_path.string());
    out << report.to_json() << "\n";
  }
  std::cout << "wrote " << trace_path.string() << ", " << report_path.string() << "\n";
}

// ---------------------------------------------------------------------------
// spawned emulator (for `run --spawn-csd`)

struct CsdChild {
  pid_t pid = -1;
  std::uint16_t port = 0;

  void kill_now() {
    if (pid <= 0) return;
    ::kill(pid, SIGKILL);
    ::waitpid(pid, nullptr, 0);
    pid = -1;
  }
  void wait_exit() {
    if (pid <= 0) return;
    ::waitpid(pid, nullptr, 0);
    pid = -1;
  }
};

/// Forks /proc/self/exe csd-serve <args...>; the child's stdout is a pipe and
/// its first line, "listening <port>", carries the ephemeral port back.
CsdChild spawn_csd_child(const std::vector<std::string>& extra_args) {
  int fds[2];
  if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
  pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    ::close(fds[0]);
    ::dup2(fds[1], STDOUT_FILENO);
    ::close(fds[1]);
    std::vector<std::string> args = {"ddlp", "csd-serve"};
    args.insert(args.end(), extra_args.begin(), extra_args.end());
    std::vector<char*> argv;
    argv.reserve(args.size() + 1);
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    ::execv("/proc/self/exe", argv.data());
    std::perror("execv");
    ::_exit(127);
  }
  ::close(fds[1]);
  std::string line;
  char c;
  while (::read(fds[0], &c, 1) == 1 && c != '\n') line.push_back(c);
  ::close(fds[0]);
  unsigned port = 0;
  if (std::sscanf(line.c_str(), "listening %u", &port) != 1 || port == 0 || port > 65535) {
    ::kill(pid, SIGKILL);
    ::waitpid(pid, nullptr, 0);
    throw std::runtime_error("emulator failed to start (got '" + line + "')");
  }
  return CsdChild{pid, static_cast<std::uint16_t>(port)};
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_simulate(const std::string& config_path, const Overrides& ov) {
  ExperimentConfig cfg = ExperimentConfig::load(config_path);
  apply_overrides(cfg, ov, /*seed_is_transform_seed=*/false);
  SimResult res = simulate(cfg.sim_config());
  finalize_energy(res.report, res.trace, cfg.power);
  print_report_summary(res.report);
  write_artifacts(ensure_out_dir(cfg), res.report.policy, res.trace, res.report);
  return 0;
}

/// Runs the configured policy, forking a local emulator first when asked.
RuntimeResult execute_run(const ExperimentConfig& cfg, const std::string& config_path,
                          bool spawn_csd) {
  if (!spawn_csd || !cfg.runtime_config().uses_csd()) return run_learning(cfg.runtime_config());
  CsdChild child = spawn_csd_child({"--config", config_path, "--port", "0", "--throttle",
                                    std::to_string(cfg.runtime->csd_throttle_seconds), "--seed",
                                    std::to_string(cfg.runtime->seed)});
  try {
    RuntimeConfig rc = cfg.runtime_config();
    rc.csd_port = child.port;
    RuntimeResult r = run_learning(rc);
    child.wait_exit();
    return r;
  } catch (...) {
    child.kill_now();
    throw;
  }
}

int cmd_run(const std::string& config_path, const Overrides& ov, bool spawn_csd, bool baseline,
            std::optional<double> throttle_override) {
  ExperimentConfig cfg = ExperimentConfig::load(config_path);
  apply_overrides(cfg, ov, /*seed_is_transform_seed=*/true);
  apply_staging_env(cfg);
  std::optional<fs::path> scratch_staging;
  if (cfg.policy != Policy::CpuOnly) scratch_staging = resolve_staging_root(cfg);
  if (throttle_override) {
    if (!cfg.runtime) throw std::invalid_argument("config: --csd-throttle needs a 'runtime' section");
    cfg.runtime->csd_throttle_seconds = *throttle_override;
  }
  fs::path dir = ensure_out_dir(cfg);

  std::optional<RunReport> baseline_report;
  if (baseline) {
    ExperimentConfig base = cfg;
    base.policy = Policy::CpuOnly;
    RuntimeResult res = run_learning(base.runtime_config());
    finalize_energy(res.report, res.trace, base.power);
    write_artifacts(dir, "cpu_baseline", res.trace, res.report);
    baseline_report = res.report;
  }

  RuntimeResult res = execute_run(cfg, config_path, spawn_csd);
  finalize_energy(res.report, res.trace, cfg.power);
  print_report_summary(res.report);
  if (res.calibration) {
    std::cout << "calibration: t_cpu " << fmt_seconds(res.calibration->t_cpu_avg) << " s, t_csd "
              << fmt_seconds(res.calibration->t_csd_avg) << " s, ratio "
              << fmt_fixed(res.calibration->ratio, 3) << ", split " << res.calibration->n_cpu << "/"
              << res.calibration->n_csd << "\n";
  }
  write_artifacts(dir, res.report.policy, res.trace, res.report);
  if (baseline_report) {
    double speedup = baseline_report->makespan / res.report.makespan - 1.0;
    std::cout << "speedup vs cpu-only baseline: " << percent_1dp(speedup) << "\n";
  }
  if (scratch_staging) {
    std::error_code ec;
    fs::remove_all(*scratch_staging, ec);
  }
  return 0;
}

int cmd_csd_serve(const std::string& config_path, std::optional<double> throttle,
                  std::optional<std::uint32_t> port, std::optional<std::uint64_t> seed) {
  ExperimentConfig cfg = ExperimentConfig::load(config_path);
  apply_staging_env(cfg);
  resolve_staging_root(cfg);
  CsdServerConfig sc = cfg.csd_server_config();
  if (throttle) sc.throttle_seconds = *throttle;
  if (port) {
    if (*port > 65535) throw std::invalid_argument("config: port exceeds 65535");
    sc.port = static_cast<std::uint16_t>(*port);
  }
  if (seed) sc.seed = *seed;
  csd_emulator_serve(sc, [](std::uint16_t bound) {
    std::printf("listening %u\n", bound);
    std::fflush(stdout);
  });
  return 0;
}

int cmd_toycheck() {
  // Built-in analytical scenario: 1000 batches of 1 sample, 0.25 s per CPU
  // path unit, 1 s per storage-side preprocess, 0.125 s per staged read.
  DatasetSpec spec;
  spec.n_samples = 1000;
  spec.batch_size = 1;
  spec.height = 8;
  spec.width = 8;
  DeviceProfile profile{250000, 1000000, 125000};

  auto run = [&](Policy p, CalibrationMode mode) {
    SimConfig sim;
    sim.spec = spec;
    sim.profile = profile;
    sim.policy = p;
    sim.calibration = mode;
    return simulate(sim);
  };

  int failures = 0;
  auto expect = [&](const std::string& what, Micros got, Micros want) {
    if (got == want) return;
    ++failures;
    std::cout << "FAIL " << what << ": expected " << fmt_seconds(micros_to_seconds(want))
              << " s, got " << fmt_seconds(micros_to_seconds(got)) << " s (delta "
              << fmt_seconds(micros_to_seconds(got - want)) << " s)\n";
  };

  SimResult cpu = run(Policy::CpuOnly, CalibrationMode::Exact);
  SimResult mte = run(Policy::Mte, CalibrationMode::Exact);
  SimResult mte_probe = run(Policy::Mte, CalibrationMode::Probe);
  SimResult wrr = run(Policy::Wrr, CalibrationMode::Exact);

  std::cout << "cpu-only makespan: " << fmt_seconds(micros_to_seconds(cpu.makespan)) << " s\n";
  std::cout << "mte makespan: " << fmt_seconds(micros_to_seconds(mte.makespan)) << " s (split "
            << mte.report.n_cpu_trained << "/" << mte.report.n_csd_trained << ")\n";
  std::cout << "wrr makespan: " << fmt_seconds(micros_to_seconds(wrr.makespan)) << " s\n";
  double improvement = micros_to_seconds(mte.makespan) / micros_to_seconds(wrr.makespan) - 1.0;
  std::cout << "wrr improvement over mte: " << percent_1dp(improvement) << "\n";

  expect("cpu-only makespan", cpu.makespan, 250000000);
  expect("mte makespan", mte.makespan, 225000000);
  expect("mte makespan (probe calibration)", mte_probe.makespan, 225000000);
  expect("wrr makespan", wrr.makespan, 222250000);
  if (mte.report.n_cpu_trained != 800 || mte.report.n_csd_trained != 200) {
    ++failures;
    std::cout << "FAIL mte split: expected 800/200, got " << mte.report.n_cpu_trained << "/"
              << mte.report.n_csd_trained << "\n";
  }
  if (percent_1dp(improvement) != "1.2%") {
    ++failures;
    std::cout << "FAIL improvement: expected 1.2%, got " << percent_1dp(improvement) << "\n";
  }

  // Independent fixed-step re-derivation; dt = 0.125 s divides all durations.
  SimConfig oracle_cfg;
  oracle_cfg.spec = spec;
  oracle_cfg.profile = profile;
  for (Policy p : {Policy::CpuOnly, Policy::Mte, Policy::Wrr}) {
    oracle_cfg.policy = p;
    Micros via_sim = run(p, CalibrationMode::Exact).makespan;
    expect(std::string("step-oracle agreement (") + to_string(p) + ")",
           step_oracle(oracle_cfg, 125000), via_sim);
  }

  if (failures == 0) {
    std::cout << "all checks passed\n";
    return 0;
  }
  std::cout << failures << " check(s) failed\n";
  return 1;
}

int cmd_report(const std::vector<std::string>& trace_paths, const std::string& config_path,
               const std::string& out_dir) {
  PowerModel pm;
  if (!config_path.empty()) pm = ExperimentConfig::load(config_path).power;

  struct Row {
    std::string name;
    RunReport report;
  };
  std::vector<Row> rows;
  for (const std::string& p : trace_paths) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open trace '" + p + "'");
    Trace trace = Trace::read_csv(in);
    if (trace.events.empty()) throw std::runtime_error("trace '" + p + "' has no events");
    std::uint64_t n_batches = 0;
    std::uint32_t epochs = 0;
    for (const TraceEvent& ev : trace.events) {
      n_batches = std::max(n_batches, ev.batch_index + 1);
      epochs = std::max(epochs, ev.epoch + 1);
    }
    std::string name = fs::path(p).stem().string();
    RunReport report = build_report(trace, n_batches, epochs, name);
    finalize_energy(report, trace, pm);
    rows.push_back({name, report});
  }

  fs::create_directories(out_dir);
  fs::path csv_path = fs::path(out_dir) / "comparison.csv";
  {
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("cannot write " + csv_path.string());
    out << "name,makespan_seconds,avg_batch_seconds,n_cpu,n_csd,wasted,"
           "energy_joules_per_batch,cost_dollars,host_usage_seconds_per_batch\n";
    for (const Row& r : rows) {
      out << r.name << ',' << fmt_seconds(r.report.makespan) << ','
          << fmt_seconds(r.report.avg_batch_time) << ',' << r.report.n_cpu_trained << ','
          << r.report.n_csd_trained << ',' << r.report.wasted_csd_batches << ','
          << fmt_fixed(r.report.energy_joules_per_batch, 6) << ','
          << fmt_fixed(r.report.cost_dollars, 6) << ','
          << fmt_seconds(r.report.host_usage_seconds_per_batch) << "\n";
    }
  }

  std::printf("%-24s %14s %12s %8s %8s %7s %14s %12s %14s\n", "name", "makespan_s", "avg_batch_s",
              "n_cpu", "n_csd", "wasted", "J_per_batch", "cost_$", "host_s_batch");
  for (const Row& r : rows) {
    std::printf("%-24s %14s %12s %8llu %8llu %7llu %14.3f %12.4f %14s\n", r.name.c_str(),
                fmt_seconds(r.report.makespan).c_str(), fmt_seconds(r.report.avg_batch_time).c_str(),
                static_cast<unsigned long long>(r.report.n_cpu_trained),
                static_cast<unsigned long long>(r.report.n_csd_trained),
                static_cast<unsigned long long>(r.report.wasted_csd_batches),
                r.report.energy_joules_per_batch, r.report.cost_dollars,
                fmt_seconds(r.report.host_usage_seconds_per_batch).c_str());
  }
  std::cout << "wrote " << csv_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heterogeneous data-preprocessing scheduler (CPU prong + storage-side prong)"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  bool spawn = false;
  bool baseline = false;
  std::optional<double> throttle;
  std::optional<std::uint32_t> port;
  std::optional<std::uint64_t> serve_seed;
  std::vector<std::string> trace_paths;
  std::string report_out = ".";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config JSON")->required();
    sub->add_option("--policy", ov.policy, "override policy: mte|wrr|cpu|csd")
        ->check(CLI::IsMember({"mte", "wrr", "cpu", "csd"}));
    sub->add_option("--epochs", ov.epochs, "override epoch count");
    sub->add_option("--seed", [&](const std::vector<std::string>& v) {
      ov.seed = std::stoull(v.at(0));
      return true;
    }, "override seed");
    sub->add_option("--out", ov.out, "output directory for trace/report files");
  };

  CLI::App* sim = app.add_subcommand("simulate", "deterministic virtual-time run");
  add_common(sim);

  CLI::App* run = app.add_subcommand("run", "live run against the storage emulator");
  add_common(run);
  run->add_flag("--spawn-csd", spawn, "fork the emulator locally on an ephemeral port");
  run->add_flag("--baseline", baseline, "also run cpu-only and print the speedup");
  run->add_option("--csd-throttle", [&](const std::vector<std::string>& v) {
    throttle = std::stod(v.at(0));
    return true;
  }, "extra seconds per emulator batch");

  CLI::App* serve = app.add_subcommand("csd-serve", "storage-side emulator (one connection)");
  serve->add_option("--config", config_path, "experiment config JSON")->required();
  serve->add_option("--throttle,--csd-throttle", [&](const std::vector<std::string>& v) {
    throttle = std::stod(v.at(0));
    return true;
  }, "extra seconds per batch");
  serve->add_option("--port", [&](const std::vector<std::string>& v) {
    port = static_cast<std::uint32_t>(std::stoul(v.at(0)));
    return true;
  }, "listen port override (0 = ephemeral)");
  serve->add_option("--seed", [&](const std::vector<std::string>& v) {
    serve_seed = std::stoull(v.at(0));
    return true;
  }, "transform seed override");

  CLI::App* toy = app.add_subcommand("toycheck", "self-check of the analytical scenario");
  (void)toy;

  CLI::App* rep = app.add_subcommand("report", "comparison table from saved traces");
  rep->add_option("traces", trace_paths, "trace CSV files")->required()->expected(-1);
  rep->add_option("--config", config_path, "config JSON supplying the power model");
  rep->add_option("--out", report_out, "directory for comparison.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(config_path, ov);
    if (run->parsed()) return cmd_run(config_path, ov, spawn, baseline, throttle);
    if (serve->parsed()) return cmd_csd_serve(config_path, throttle, port, serve_seed);
    if (toy->parsed()) return cmd_toycheck();
    if (rep->parsed()) {
      std::string rep_config = rep->count("--config") ? config_path : "";
      return cmd_report(trace_paths, rep_config, report_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
