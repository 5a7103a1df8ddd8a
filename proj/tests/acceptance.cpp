// Acceptance suite: one verdict line per criterion, nonzero exit if any
// selected criterion fails.
//
//   acceptance [--criterion N] [--ddlp PATH]
//
// Criteria 7 and 9 exec the ddlp binary (csd-serve subcommand) as a separate
// process; its path comes from --ddlp, the DDLP_BIN env var, or a sibling of
// this executable, in that order.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstdarg>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include "ddlp/config.hpp"
#include "ddlp/csd_server.hpp"
#include "ddlp/energy.hpp"
#include "ddlp/pipeline.hpp"
#include "ddlp/runtime.hpp"
#include "ddlp/scheduler.hpp"
#include "ddlp/simulator.hpp"
#include "ddlp/staging.hpp"
#include "ddlp/wire.hpp"

namespace fs = std::filesystem;
using namespace ddlp;

namespace {

// ---------------------------------------------------------------------------
// plumbing

std::string g_ddlp_bin;

std::string ddlp_bin() {
  if (!g_ddlp_bin.empty()) return g_ddlp_bin;
  if (const char* env = std::getenv("DDLP_BIN"); env && *env) return env;
  return (fs::read_symlink("/proc/self/exe").parent_path() / "ddlp").string();
}

fs::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() /
                 ("ddlp-accept-" + std::to_string(::getpid()) + "-" + tag + "-" +
                  std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

/// In-process emulator thread for the live-run sweeps (criterion 6): real
/// sockets and staging files, no process boundary needed.
class InprocServer {
 public:
  explicit InprocServer(CsdServerConfig cfg) {
    std::promise<std::uint16_t> ready;
    port_ = ready.get_future();
    thread_ = std::thread([cfg = std::move(cfg), ready = std::move(ready)]() mutable {
      try {
        csd_emulator_serve(cfg, [&ready](std::uint16_t p) { ready.set_value(p); });
      } catch (...) {
        try {
          ready.set_exception(std::current_exception());
        } catch (const std::future_error&) {  // already satisfied; server died later
        }
      }
    });
  }
  std::uint16_t port() { return port_.get(); }
  ~InprocServer() {
    if (thread_.joinable()) thread_.join();
  }

 private:
  std::future<std::uint16_t> port_;
  std::thread thread_;
};

/// External emulator process for the cross-process criteria (7 and 9).
struct ChildEmulator {
  pid_t pid = -1;
  std::uint16_t port = 0;

  void kill_hard() {
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

ChildEmulator spawn_emulator(const fs::path& config_path, double throttle_seconds) {
  int fds[2];
  if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
  pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    ::close(fds[0]);
    ::dup2(fds[1], STDOUT_FILENO);
    ::close(fds[1]);
    std::string bin = ddlp_bin();
    std::string cfg_arg = config_path.string();
    std::string throttle = std::to_string(throttle_seconds);
    const char* argv[] = {bin.c_str(), "csd-serve",   "--config", cfg_arg.c_str(),
                          "--port",    "0",           "--throttle", throttle.c_str(),
                          nullptr};
    ::execv(bin.c_str(), const_cast<char**>(argv));
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
  return ChildEmulator{pid, static_cast<std::uint16_t>(port)};
}

fs::path write_emulator_config(const fs::path& dir, const DatasetSpec& spec, PipelineId pipeline,
                               std::uint64_t transform_seed, const fs::path& staging_root) {
  ExperimentConfig cfg;
  cfg.dataset = spec;
  cfg.runtime = RuntimeSection{};
  cfg.runtime->pipeline = pipeline;
  cfg.runtime->seed = transform_seed;
  cfg.runtime->staging_root = staging_root.string();
  fs::path path = dir / "emulator.json";
  std::ofstream out(path);
  out << cfg.to_json();
  return path;
}

// Structural checks shared by the coverage criteria: exactly-once per epoch
// plus "a staged batch is consumed at most as often as it was staged" (a
// wasted staging must never be consumed).
bool coverage_ok(const Trace& trace, std::uint64_t n_batches, std::uint32_t epochs,
                 std::vector<std::string>& log, const std::string& what) {
  std::vector<std::string> violations = verify_trace(trace, n_batches, epochs);
  if (!violations.empty()) {
    log.push_back(what + ": " + violations.front() +
                  (violations.size() > 1 ? fmt(" (+%zu more)", violations.size() - 1) : ""));
    return false;
  }
  std::map<std::pair<std::uint32_t, std::uint64_t>, std::int64_t> staged_minus_consumed;
  for (const TraceEvent& ev : trace.events) {
    if (ev.source == SourceTag::CsdPre) staged_minus_consumed[{ev.epoch, ev.batch_index}]++;
    if (ev.source == SourceTag::GdsPath) staged_minus_consumed[{ev.epoch, ev.batch_index}]--;
  }
  for (const auto& [key, balance] : staged_minus_consumed) {
    if (balance < 0) {
      log.push_back(what + fmt(": epoch %u batch %llu consumed from staging more often than staged",
                               key.first, static_cast<unsigned long long>(key.second)));
      return false;
    }
  }
  return true;
}

bool consumed_exactly_once(const std::vector<ConsumedBatch>& consumed, std::uint64_t n_batches,
                           std::uint32_t epochs, std::vector<std::string>& log,
                           const std::string& what) {
  std::map<std::uint32_t, std::multiset<std::uint64_t>> per_epoch;
  for (const ConsumedBatch& b : consumed) per_epoch[b.epoch].insert(b.batch_index);
  if (per_epoch.size() != epochs) {
    log.push_back(what + fmt(": consumed batches span %zu epochs, expected %u", per_epoch.size(),
                             epochs));
    return false;
  }
  for (const auto& [epoch, ids] : per_epoch) {
    if (ids.size() != n_batches) {
      log.push_back(what + fmt(": epoch %u consumed %zu batches, expected %llu", epoch, ids.size(),
                               static_cast<unsigned long long>(n_batches)));
      return false;
    }
    for (std::uint64_t i = 0; i < n_batches; ++i) {
      if (ids.count(i) != 1) {
        log.push_back(what + fmt(": epoch %u covers batch %llu %zu times", epoch,
                                 static_cast<unsigned long long>(i), ids.count(i)));
        return false;
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// criteria

const DeviceProfile kToyProfile{250000, 1000000, 125000};

DatasetSpec toy_spec() {
  DatasetSpec spec;
  spec.n_samples = 1000;
  spec.batch_size = 1;
  spec.height = spec.width = 8;
  return spec;
}

SimConfig toy_config(Policy policy, CalibrationMode mode) {
  SimConfig cfg;
  cfg.spec = toy_spec();
  cfg.profile = kToyProfile;
  cfg.policy = policy;
  cfg.calibration = mode;
  return cfg;
}

// 1: the analytical static-split scenario lands on 225.0 s exactly with an
// 800/200 split, in both calibration modes.
bool criterion_1(std::vector<std::string>& log) {
  bool ok = true;
  for (CalibrationMode mode : {CalibrationMode::Exact, CalibrationMode::Probe}) {
    SimResult res = simulate(toy_config(Policy::Mte, mode));
    log.push_back(fmt("mte/%s: makespan %.6f s, split %llu/%llu", to_string(mode),
                      micros_to_seconds(res.makespan),
                      static_cast<unsigned long long>(res.report.n_cpu_trained),
                      static_cast<unsigned long long>(res.report.n_csd_trained)));
    ok = ok && res.makespan == 225000000 && res.report.n_cpu_trained == 800 &&
         res.report.n_csd_trained == 200;
  }
  return ok;
}

// 2: the round-robin variant lands on 222.25 s exactly and its gain over the
// static split prints as 1.2% at one decimal.
bool criterion_2(std::vector<std::string>& log) {
  SimResult mte = simulate(toy_config(Policy::Mte, CalibrationMode::Exact));
  SimResult wrr = simulate(toy_config(Policy::Wrr, CalibrationMode::Exact));
  double gain = static_cast<double>(mte.makespan) / static_cast<double>(wrr.makespan) - 1.0;
  log.push_back(fmt("wrr: makespan %.6f s, gain over mte %.4f%% -> prints \"%s\"",
                    micros_to_seconds(wrr.makespan), gain * 100.0, percent_1dp(gain).c_str()));
  return wrr.makespan == 222250000 && percent_1dp(gain) == "1.2%";
}

// 3: the energy model reproduces the reference per-batch energy grid within
// 0.5% from the reference per-batch times at 5 W / 85 W (17 x 5 W) / 0.25 W.
bool criterion_3(std::vector<std::string>& log) {
  struct Row {
    const char* model;
    double t_cpu0, t_cpu16, t_csd;  // reference seconds per batch
    double e_cpu0, e_cpu16, e_csd;  // reference joules per batch
  };
  // Frozen from the reference results grid; one energy cell (alexnet cpu0) is
  // internally inconsistent with its own timing row — see README.
  const Row rows[] = {
      {"wrn", 3.527, 1.779, 10.014, 17.63, 151.2, 2.504},
      {"resnet152", 3.376, 1.401, 10.315, 16.88, 119.1, 2.579},
      {"vit", 8.536, 7.497, 22.24, 42.68, 637.2, 5.560},
      {"vgg", 5.522, 2.418, 19.84, 27.61, 205.5, 4.960},
      {"alexnet", 48.48, 5.224, 155.1, 192.4, 443.7, 38.77},
  };
  const PowerModel one_proc{5.0, 1, 0.25, 0.095};
  const PowerModel seventeen_proc{5.0, 17, 0.25, 0.095};

  bool ok = true;
  auto cell = [&](const char* model, const char* name, double computed, double reference) {
    double rel = std::abs(computed - reference) / reference;
    bool cell_ok = rel <= 0.005;
    ok = ok && cell_ok;
    log.push_back(fmt("%-10s %-6s computed %8.3f J  reference %8.3f J  delta %6.2f%%  %s", model,
                      name, computed, reference, rel * 100.0, cell_ok ? "ok" : "MISMATCH"));
  };
  for (const Row& r : rows) {
    cell(r.model, "cpu0", energy_per_batch(r.t_cpu0, 0.0, one_proc, 1), r.e_cpu0);
    cell(r.model, "cpu16", energy_per_batch(r.t_cpu16, 0.0, seventeen_proc, 1), r.e_cpu16);
    cell(r.model, "csd", energy_per_batch(0.0, r.t_csd, one_proc, 1), r.e_csd);
  }
  if (!ok)
    log.push_back(
        "note: alexnet cpu0 is a defect in the reference grid itself: 48.48 s/batch x 5 W = 242.4 J"
        " vs the printed 192.4 J; the grid's own cost figure ($0.1589) matches 192.4 J, i.e. a"
        " 38.48 s/batch timing. The two reference values contradict each other, so this check"
        " cannot pass as stated.");
  return ok;
}

// 4: 100-epoch electricity costs derived from 1,281,167 images reproduce the
// reference totals within 1%.
bool criterion_4(std::vector<std::string>& log) {
  const std::uint64_t images = 1281167;
  const PowerModel one_proc{5.0, 1, 0.25, 0.095};
  struct Row {
    const char* model;
    double t_cpu0;
    std::uint64_t batch_size;
    double ref_cost;
  };
  const Row rows[] = {{"wrn", 3.527, 256, 0.2329}, {"vit", 8.536, 512, 0.2819}};
  bool ok = true;
  for (const Row& r : rows) {
    std::uint64_t batches = (images + r.batch_size - 1) / r.batch_size;
    double e = energy_per_batch(r.t_cpu0, 0.0, one_proc, 1);
    double cost = electricity_cost(e, batches, 100, 0.095);
    double rel = std::abs(cost - r.ref_cost) / r.ref_cost;
    bool row_ok = rel <= 0.01;
    ok = ok && row_ok;
    log.push_back(fmt("%-4s %llu batches/epoch x 100 epochs: $%.5f vs $%.4f (delta %.3f%%) %s",
                      r.model, static_cast<unsigned long long>(batches), cost, r.ref_cost,
                      rel * 100.0, row_ok ? "ok" : "MISMATCH"));
  }
  return ok;
}

// 5: the event simulator and the independent fixed-step oracle agree within
// one tick across randomized integer-millisecond configs.
bool criterion_5(std::vector<std::string>& log) {
  std::mt19937_64 rng(501);
  std::uniform_int_distribution<std::uint64_t> n_dist(1, 200);
  std::uniform_int_distribution<Micros> cpu_ms(1, 40);
  std::uniform_int_distribution<Micros> csd_ms(1, 160);
  const Micros dt = 1000;  // 1 ms ticks divide every duration below

  int checked = 0;
  for (int i = 0; i < 520; ++i) {
    SimConfig cfg;
    cfg.spec.n_samples = n_dist(rng);
    cfg.spec.batch_size = 1;
    cfg.spec.height = cfg.spec.width = 8;
    cfg.profile = DeviceProfile{cpu_ms(rng) * 1000, csd_ms(rng) * 1000, cpu_ms(rng) * 1000};
    cfg.policy = (i % 2 == 0) ? Policy::Mte : Policy::Wrr;
    cfg.epochs = 1 + static_cast<std::uint32_t>(i % 3 == 0);
    if (cfg.policy == Policy::Mte && i % 7 == 0) {
      std::uint64_t n = cfg.spec.n_batches();
      std::uint64_t n_cpu = std::uniform_int_distribution<std::uint64_t>(0, n)(rng);
      cfg.forced_split = Split{n_cpu, n - n_cpu};
    }
    Micros sim = simulate(cfg).makespan;
    Micros oracle = step_oracle(cfg, dt);
    ++checked;
    if (std::llabs(sim - oracle) > dt) {
      log.push_back(fmt(
          "config %d (n=%llu policy=%s t_cpu=%lld t_csd=%lld t_gds=%lld epochs=%u): sim %lld vs "
          "oracle %lld",
          i, static_cast<unsigned long long>(cfg.spec.n_samples), to_string(cfg.policy),
          static_cast<long long>(cfg.profile.t_cpu_path),
          static_cast<long long>(cfg.profile.t_csd_pre),
          static_cast<long long>(cfg.profile.t_gds_path), cfg.epochs, static_cast<long long>(sim),
          static_cast<long long>(oracle)));
      return false;
    }
  }
  log.push_back(fmt("%d randomized configs agree within %lld us", checked,
                    static_cast<long long>(dt)));
  return true;
}

// 6: exactly-once coverage across a large randomized simulator sweep plus
// live runtime executions; staged-then-wasted batches are never consumed.
bool criterion_6(std::vector<std::string>& log) {
  std::mt19937_64 rng(601);
  std::uniform_int_distribution<std::uint64_t> n_dist(1, 128);
  std::uniform_int_distribution<Micros> us(100, 200000);

  for (int i = 0; i < 1000; ++i) {
    SimConfig cfg;
    cfg.spec.n_samples = n_dist(rng);
    cfg.spec.batch_size = 1;
    cfg.spec.height = cfg.spec.width = 8;
    cfg.profile = DeviceProfile{us(rng), us(rng), us(rng)};
    cfg.policy = (i % 2 == 0) ? Policy::Mte : Policy::Wrr;
    cfg.epochs = 1 + static_cast<std::uint32_t>(i % 3);
    if (cfg.policy == Policy::Mte) {
      if (i % 4 == 0 && cfg.spec.n_batches() >= 20) cfg.calibration = CalibrationMode::Probe;
      if (i % 5 == 0) {
        std::uint64_t n = cfg.spec.n_batches();
        std::uint64_t n_cpu = std::uniform_int_distribution<std::uint64_t>(0, n)(rng);
        cfg.forced_split = Split{n_cpu, n - n_cpu};
      }
    }
    SimResult res = simulate(cfg);
    if (!coverage_ok(res.trace, cfg.spec.n_batches(), cfg.epochs, log, fmt("sim config %d", i)))
      return false;
    std::uint64_t staged = 0, consumed_gds = 0;
    for (const TraceEvent& ev : res.trace.events) {
      staged += ev.source == SourceTag::CsdPre;
      consumed_gds += ev.source == SourceTag::GdsPath;
    }
    if (staged < consumed_gds || res.report.wasted_csd_batches != staged - consumed_gds) {
      log.push_back(fmt("sim config %d: waste accounting off (staged %llu, consumed %llu, "
                        "reported waste %llu)",
                        i, static_cast<unsigned long long>(staged),
                        static_cast<unsigned long long>(consumed_gds),
                        static_cast<unsigned long long>(res.report.wasted_csd_batches)));
      return false;
    }
  }
  log.push_back("1000 randomized simulator configs: coverage + waste accounting clean");

  // Live executions: real worker pool, real emulator over TCP, real staging
  // files. Policy mix includes probe calibration and multi-epoch runs.
  std::uniform_int_distribution<std::uint64_t> live_n(6, 24);
  std::uniform_int_distribution<int> workers(1, 3);
  std::uniform_int_distribution<int> cost_us(0, 800);
  std::uniform_int_distribution<int> throttle_us(0, 2000);
  int live_runs = 24;
  for (int i = 0; i < live_runs; ++i) {
    RuntimeConfig rc;
    rc.spec.batch_size = 2;
    rc.spec.height = rc.spec.width = 32;
    rc.spec.seed = 3000 + i;
    rc.pipeline = (i % 3 == 0) ? PipelineId::ImageNet1 : PipelineId::Cifar;
    rc.cpu_workers = workers(rng);
    rc.consumer_cost_seconds = cost_us(rng) * 1e-6;
    rc.seed = 7000 + i;
    rc.epochs = 1 + static_cast<std::uint32_t>(i % 4 == 3);
    switch (i % 5) {
      case 0: {
        rc.policy = Policy::Mte;
        rc.spec.n_samples = 2 * live_n(rng);
        std::uint64_t n = rc.spec.n_batches();
        std::uint64_t n_cpu = std::uniform_int_distribution<std::uint64_t>(0, n)(rng);
        rc.forced_split = Split{n_cpu, n - n_cpu};
        break;
      }
      case 1:
        rc.policy = Policy::Mte;  // live probe calibration
        rc.spec.n_samples = 2 * (20 + static_cast<std::uint64_t>(i % 5));
        break;
      case 2:
      case 3:
        rc.policy = Policy::Wrr;
        rc.spec.n_samples = 2 * live_n(rng);
        break;
      case 4:
        rc.policy = (i % 2 == 0) ? Policy::CpuOnly : Policy::CsdOnly;
        rc.spec.n_samples = 2 * live_n(rng);
        break;
    }
    fs::path dir = fresh_dir(fmt("c6-%d", i));
    rc.staging_root = dir / "staging";
    std::string what = fmt("live run %d (%s)", i, to_string(rc.policy));
    try {
      RuntimeResult res;
      if (rc.uses_csd()) {
        CsdServerConfig sc;
        sc.spec = rc.spec;
        sc.pipeline = rc.pipeline;
        sc.seed = rc.seed;
        sc.staging_root = rc.staging_root;
        sc.throttle_seconds = throttle_us(rng) * 1e-6;
        InprocServer server(std::move(sc));
        rc.csd_port = server.port();
        res = run_learning(rc);
      } else {
        res = run_learning(rc);
      }
      if (res.report.degraded) {
        log.push_back(what + ": unexpectedly degraded");
        return false;
      }
      if (!coverage_ok(res.trace, rc.spec.n_batches(), rc.epochs, log, what)) return false;
      if (!consumed_exactly_once(res.consumed, rc.spec.n_batches(), rc.epochs, log, what))
        return false;
    } catch (const std::exception& e) {
      log.push_back(what + ": " + e.what());
      return false;
    }
    fs::remove_all(dir);
  }
  log.push_back(fmt("%d live runtime executions: coverage clean, exactly-once consumption",
                    live_runs));
  return true;
}

// 7: batches staged by the emulator in another process are bit-identical to
// the same batches preprocessed in this process.
bool criterion_7(std::vector<std::string>& log) {
  DatasetSpec spec;
  spec.n_samples = 128;
  spec.batch_size = 2;
  spec.height = 40;
  spec.width = 56;
  spec.seed = 909;
  const std::uint64_t transform_seed = 4242;

  // 32 distinct batch ids, 8 per pipeline (distinct so staging filenames
  // cannot collide inside the shared store).
  std::mt19937_64 rng(701);
  std::vector<std::uint64_t> ids(spec.n_batches());
  for (std::uint64_t i = 0; i < ids.size(); ++i) ids[i] = i;
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(32);

  fs::path dir = fresh_dir("c7");
  fs::path config = write_emulator_config(dir, spec, PipelineId::Cifar, transform_seed,
                                          dir / "staging");
  ChildEmulator child = spawn_emulator(config, 0.0);
  int matched = 0;
  try {
    wire::Socket sock = wire::connect_to("127.0.0.1", child.port);
    sock.send_message(wire::Hello{});
    std::optional<wire::Message> hello = sock.recv_message();
    if (!hello) throw wire::ProtocolError("emulator closed before handshake");
    wire::expect_hello(*hello);

    const PipelineId pipelines[] = {PipelineId::Cifar, PipelineId::ImageNet1,
                                    PipelineId::ImageNet2, PipelineId::ImageNet3};
    for (int p = 0; p < 4; ++p) {
      wire::PreprocessRange range;
      range.indices.assign(ids.begin() + p * 8, ids.begin() + (p + 1) * 8);
      range.pipeline_id = to_string(pipelines[p]);
      range.seed = transform_seed;
      sock.send_message(range);
      for (int k = 0; k < 8; ++k) {
        std::optional<wire::Message> msg = sock.recv_message();
        if (!msg || !std::holds_alternative<wire::BatchStaged>(*msg)) {
          log.push_back(fmt("pipeline %s: expected a staging announcement, got %s",
                            to_string(pipelines[p]),
                            msg ? wire::message_type_name(*msg) : "EOF"));
          child.kill_hard();
          return false;
        }
        const auto& staged = std::get<wire::BatchStaged>(*msg);
        BatchPayload from_emulator = StagingStore::read_file(staged.path);
        BatchPayload reference = run_pipeline(pipelines[p], gen_batch(spec, staged.batch_id),
                                              transform_seed, staged.batch_id);
        if (from_emulator.checksum != reference.checksum ||
            staged.checksum != reference.checksum || from_emulator.data != reference.data) {
          log.push_back(fmt("pipeline %s batch %llu: emulator checksum %016llx vs in-process "
                            "%016llx",
                            to_string(pipelines[p]),
                            static_cast<unsigned long long>(staged.batch_id),
                            static_cast<unsigned long long>(from_emulator.checksum),
                            static_cast<unsigned long long>(reference.checksum)));
          child.kill_hard();
          return false;
        }
        ++matched;
      }
    }
  } catch (const std::exception& e) {
    log.push_back(std::string("emulator session failed: ") + e.what());
    child.kill_hard();
    return false;
  }
  child.wait_exit();
  fs::remove_all(dir);
  log.push_back(fmt("%d (pipeline, batch) pairs bit-identical across the process boundary",
                    matched));
  return matched == 32;
}

// 8: makespan ordering on randomized profiles with staged reads no slower
// than the CPU path. Asserted exactly (integer microseconds, no tolerance):
//   - mte <= cpu-only where the static split's integer rounding cannot make
//     the storage prong overshoot (ratio in [1,8], n >= 60);
//   - wrr <= cpu-only for arbitrary storage-side slowdowns (the round-robin
//     consumer is work-conserving, and each staged read it takes costs no
//     more than the CPU-path unit it replaces);
//   - wrr <= mte + (t_cpu - t_gds): greedy consumption can lose at most the
//     one staging that lands inside the consumer's final unit, where the
//     static split would have briefly waited for it instead. Strict
//     wrr <= mte is not a theorem (the boundary race is real); its
//     empirical rate is reported alongside.
bool criterion_8(std::vector<std::string>& log) {
  std::mt19937_64 rng(801);
  std::uniform_int_distribution<Micros> cpu_us(1000, 50000);
  std::uniform_real_distribution<double> ratio(1.0, 8.0);
  std::uniform_int_distribution<std::uint64_t> n_chain(60, 200);
  std::uniform_int_distribution<std::uint64_t> n_wide(2, 200);
  std::uniform_int_distribution<Micros> csd_wide(1000, 400000);

  auto makespan = [](const DatasetSpec& spec, const DeviceProfile& prof, Policy policy) {
    SimConfig cfg;
    cfg.spec = spec;
    cfg.profile = prof;
    cfg.policy = policy;
    return simulate(cfg).makespan;
  };

  int strict = 0;
  for (int i = 0; i < 300; ++i) {
    DatasetSpec spec;
    spec.n_samples = n_chain(rng);
    spec.batch_size = 1;
    spec.height = spec.width = 8;
    DeviceProfile prof;
    prof.t_cpu_path = cpu_us(rng);
    prof.t_csd_pre =
        static_cast<Micros>(std::llround(ratio(rng) * static_cast<double>(prof.t_cpu_path)));
    prof.t_gds_path = std::uniform_int_distribution<Micros>(1, prof.t_cpu_path)(rng);
    Micros cpu = makespan(spec, prof, Policy::CpuOnly);
    Micros mte = makespan(spec, prof, Policy::Mte);
    Micros wrr = makespan(spec, prof, Policy::Wrr);
    strict += wrr <= mte;
    if (!(mte <= cpu && wrr <= cpu && wrr <= mte + (prof.t_cpu_path - prof.t_gds_path))) {
      log.push_back(fmt("ordering violated (n=%llu t_cpu=%lld t_csd=%lld t_gds=%lld): wrr %lld, "
                        "mte %lld, cpu %lld",
                        static_cast<unsigned long long>(spec.n_samples),
                        static_cast<long long>(prof.t_cpu_path),
                        static_cast<long long>(prof.t_csd_pre),
                        static_cast<long long>(prof.t_gds_path), static_cast<long long>(wrr),
                        static_cast<long long>(mte), static_cast<long long>(cpu)));
      return false;
    }
  }
  log.push_back(fmt("300 profiles: mte <= cpu-only and wrr <= mte + one batch swap hold exactly; "
                    "wrr <= mte strictly in %d/300",
                    strict));

  for (int i = 0; i < 200; ++i) {
    DatasetSpec spec;
    spec.n_samples = n_wide(rng);
    spec.batch_size = 1;
    spec.height = spec.width = 8;
    DeviceProfile prof;
    prof.t_cpu_path = cpu_us(rng);
    prof.t_csd_pre = csd_wide(rng);
    prof.t_gds_path = std::uniform_int_distribution<Micros>(1, prof.t_cpu_path)(rng);
    Micros cpu = makespan(spec, prof, Policy::CpuOnly);
    Micros wrr = makespan(spec, prof, Policy::Wrr);
    if (wrr > cpu) {
      log.push_back(fmt("wrr > cpu-only (n=%llu t_cpu=%lld t_csd=%lld t_gds=%lld): %lld vs %lld",
                        static_cast<unsigned long long>(spec.n_samples),
                        static_cast<long long>(prof.t_cpu_path),
                        static_cast<long long>(prof.t_csd_pre),
                        static_cast<long long>(prof.t_gds_path), static_cast<long long>(wrr),
                        static_cast<long long>(cpu)));
      return false;
    }
  }
  log.push_back("200 profiles with arbitrary storage slowdown: wrr <= cpu-only holds exactly");
  return true;
}

// 9: SIGKILLing the emulator process mid-epoch leaves a degraded-flagged run
// that still covers every batch exactly once.
bool criterion_9(std::vector<std::string>& log) {
  struct Trial {
    Policy policy;
    std::uint64_t n_batches;
    std::optional<Split> split;
    bool probe_mode;  // kill lands during calibration
    int kill_after_ms;
    double consumer_cost;
  };
  // The static-split runs park the consumer on the reserved tail, so a cheap
  // per-batch cost leaves them mid-wait at the kill. The round-robin consumer
  // never waits, so those runs need a per-batch cost large enough that
  // n_batches * cost comfortably exceeds the kill delay.
  const Trial trials[] = {
      {Policy::Mte, 24, Split{16, 8}, false, 120, 0.0005},
      {Policy::Wrr, 24, std::nullopt, false, 100, 0.006},
      {Policy::Mte, 24, Split{18, 6}, false, 150, 0.0005},
      {Policy::Wrr, 20, std::nullopt, false, 80, 0.006},
      {Policy::Mte, 24, std::nullopt, true, 120, 0.0005},  // killed mid-calibration
  };

  int t_index = 0;
  for (const Trial& t : trials) {
    RuntimeConfig rc;
    rc.spec.n_samples = 2 * t.n_batches;
    rc.spec.batch_size = 2;
    rc.spec.height = rc.spec.width = 32;
    rc.spec.seed = 500 + t_index;
    rc.pipeline = PipelineId::Cifar;
    rc.policy = t.policy;
    rc.cpu_workers = 2;
    rc.consumer_cost_seconds = t.consumer_cost;
    rc.seed = 600 + t_index;
    rc.forced_split = t.split;
    fs::path dir = fresh_dir(fmt("c9-%d", t_index));
    rc.staging_root = dir / "staging";
    // Throttled so the storage prong needs ~40 ms per batch: at the kill
    // instant only part of the tail is staged and the run is mid-epoch.
    fs::path config = write_emulator_config(dir, rc.spec, rc.pipeline, rc.seed, rc.staging_root);
    ChildEmulator child = spawn_emulator(config, 0.040);
    rc.csd_port = child.port;

    std::string what = fmt("trial %d (%s%s)", t_index, to_string(t.policy),
                           t.probe_mode ? ", probe calibration" : "");
    std::promise<RuntimeResult> done;
    std::future<RuntimeResult> result = done.get_future();
    std::thread runner([&rc, &done] {
      try {
        done.set_value(run_learning(rc));
      } catch (...) {
        done.set_exception(std::current_exception());
      }
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(t.kill_after_ms));
    child.kill_hard();
    runner.join();

    try {
      RuntimeResult res = result.get();
      if (!res.report.degraded) {
        log.push_back(what + ": degraded flag not set");
        return false;
      }
      if (!coverage_ok(res.trace, t.n_batches, 1, log, what)) return false;
      if (!consumed_exactly_once(res.consumed, t.n_batches, 1, log, what)) return false;
      if (t.probe_mode && res.calibration.has_value()) {
        log.push_back(what + ": calibration reported complete despite mid-calibration kill");
        return false;
      }
      log.push_back(fmt("%s: degraded, %llu cpu / %llu staged, coverage exact", what.c_str(),
                        static_cast<unsigned long long>(res.report.n_cpu_trained),
                        static_cast<unsigned long long>(res.report.n_csd_trained)));
    } catch (const std::exception& e) {
      log.push_back(what + ": run failed: " + e.what());
      return false;
    }
    fs::remove_all(dir);
    ++t_index;
  }
  return true;
}

// ---------------------------------------------------------------------------

struct Criterion {
  int id;
  const char* title;
  double budget_seconds;
  bool (*run)(std::vector<std::string>&);
};

const Criterion kCriteria[] = {
    {1, "static split: analytical scenario lands on 225.0 s with an 800/200 split", 1.0,
     criterion_1},
    {2, "round robin: analytical scenario lands on 222.25 s, prints a 1.2% gain", 1.0, criterion_2},
    {3, "energy model reproduces the reference per-batch energy grid within 0.5%", 5.0,
     criterion_3},
    {4, "cost model reproduces reference 100-epoch electricity costs within 1%", 5.0, criterion_4},
    {5, "simulator agrees with the fixed-step oracle on 520 randomized configs", 60.0, criterion_5},
    {6, "exactly-once coverage over 1000 simulated + 24 live randomized runs", 300.0, criterion_6},
    {7, "emulator stagings are bit-identical to in-process preprocessing (32 pairs)", 60.0,
     criterion_7},
    {8, "makespan dominance: neither policy loses to cpu-only; wrr trails mte by "
        "at most one batch swap",
     60.0, criterion_8},
    {9, "emulator SIGKILL mid-epoch: coverage exact, run flagged degraded", 60.0, criterion_9},
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else if (std::strcmp(argv[i], "--ddlp") == 0 && i + 1 < argc) {
      g_ddlp_bin = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N] [--ddlp PATH]\n", argv[0]);
      return 2;
    }
  }

  int failures = 0;
  int ran = 0;
  for (const Criterion& c : kCriteria) {
    if (only != 0 && c.id != only) continue;
    ++ran;
    std::vector<std::string> log;
    auto t0 = std::chrono::steady_clock::now();
    bool ok = false;
    try {
      ok = c.run(log);
    } catch (const std::exception& e) {
      log.push_back(std::string("unhandled error: ") + e.what());
    }
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (elapsed > c.budget_seconds) {
      log.push_back(fmt("over time budget: %.2f s > %.0f s", elapsed, c.budget_seconds));
      ok = false;
    }
    std::printf("[%d] %s  %s (%.2f s)\n", c.id, ok ? "PASS" : "FAIL", c.title, elapsed);
    for (const std::string& line : log) std::printf("      %s\n", line.c_str());
    failures += !ok;
  }
  if (ran == 0) {
    std::fprintf(stderr, "no such criterion\n");
    return 2;
  }
  std::printf("%d/%d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
