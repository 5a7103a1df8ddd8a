#include "ddlp/config.hpp"

#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ddlp {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("config: " + what); }

const json& require_object(const json& j, const std::string& ctx) {
  if (!j.is_object()) fail("'" + ctx + "' must be a JSON object");
  return j;
}

/// Unknown keys are rejected rather than ignored: a typo that silently falls
/// back to a default is the worst way to lose an experiment.
void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& ctx) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      std::string keys;
      for (const char* k : allowed) {
        if (!keys.empty()) keys += ", ";
        keys += k;
      }
      fail("unknown key '" + item.key() + "' in " + ctx + " (allowed: " + keys + ")");
    }
  }
}

std::uint64_t get_u64(const json& j, const char* key, std::uint64_t fallback, const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  fail(std::string("'") + key + "' in " + ctx + " must be a non-negative integer");
}

template <typename T>
T get_uint(const json& j, const char* key, T fallback, const std::string& ctx) {
  std::uint64_t v = get_u64(j, key, fallback, ctx);
  if (v > std::numeric_limits<T>::max())
    fail(std::string("'") + key + "' in " + ctx + " exceeds " +
         std::to_string(std::numeric_limits<T>::max()));
  return static_cast<T>(v);
}

double get_nonneg_double(const json& j, const char* key, double fallback, const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) fail(std::string("'") + key + "' in " + ctx + " must be a number");
  double d = v.get<double>();
  if (d < 0.0) fail(std::string("'") + key + "' in " + ctx + " must be non-negative");
  return d;
}

std::string get_string(const json& j, const char* key, const std::string& fallback,
                       const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_string()) fail(std::string("'") + key + "' in " + ctx + " must be a string");
  return v.get<std::string>();
}

DatasetSpec parse_dataset(const json& j) {
  require_object(j, "dataset");
  check_keys(j, {"n_samples", "batch_size", "height", "width", "channels", "seed"}, "'dataset'");
  if (!j.contains("n_samples")) fail("'dataset' requires 'n_samples'");
  DatasetSpec spec;
  spec.n_samples = get_u64(j, "n_samples", 0, "'dataset'");
  spec.batch_size = get_u64(j, "batch_size", spec.batch_size, "'dataset'");
  spec.height = get_uint<std::uint32_t>(j, "height", spec.height, "'dataset'");
  spec.width = get_uint<std::uint32_t>(j, "width", spec.width, "'dataset'");
  spec.channels = get_uint<std::uint32_t>(j, "channels", spec.channels, "'dataset'");
  spec.seed = get_u64(j, "seed", spec.seed, "'dataset'");
  return spec;
}

DeviceProfile parse_profile(const json& j) {
  require_object(j, "profile");
  check_keys(j, {"t_cpu_path_seconds", "t_csd_pre_seconds", "t_gds_path_seconds"}, "'profile'");
  for (const char* k : {"t_cpu_path_seconds", "t_csd_pre_seconds", "t_gds_path_seconds"})
    if (!j.contains(k)) fail(std::string("'profile' requires '") + k + "'");
  DeviceProfile p;
  p.t_cpu_path = seconds_to_micros(get_nonneg_double(j, "t_cpu_path_seconds", 0.0, "'profile'"));
  p.t_csd_pre = seconds_to_micros(get_nonneg_double(j, "t_csd_pre_seconds", 0.0, "'profile'"));
  p.t_gds_path = seconds_to_micros(get_nonneg_double(j, "t_gds_path_seconds", 0.0, "'profile'"));
  return p;
}

Split parse_split(const json& j) {
  require_object(j, "forced_split");
  check_keys(j, {"n_cpu", "n_csd"}, "'forced_split'");
  if (!j.contains("n_cpu") || !j.contains("n_csd"))
    fail("'forced_split' requires both 'n_cpu' and 'n_csd'");
  return Split{get_u64(j, "n_cpu", 0, "'forced_split'"), get_u64(j, "n_csd", 0, "'forced_split'")};
}

RuntimeSection parse_runtime(const json& j) {
  require_object(j, "runtime");
  check_keys(j,
             {"pipeline", "cpu_workers", "csd_host", "csd_port", "staging_root",
              "consumer_cost_seconds", "seed", "csd_throttle_seconds"},
             "'runtime'");
  RuntimeSection r;
  if (j.contains("pipeline")) {
    const json& v = j.at("pipeline");
    if (!v.is_string()) fail("'pipeline' in 'runtime' must be a string");
    r.pipeline = parse_pipeline_id(v.get<std::string>());
  }
  r.cpu_workers = get_uint<std::uint32_t>(j, "cpu_workers", r.cpu_workers, "'runtime'");
  r.csd_host = get_string(j, "csd_host", r.csd_host, "'runtime'");
  r.csd_port = get_uint<std::uint16_t>(j, "csd_port", r.csd_port, "'runtime'");
  r.staging_root = get_string(j, "staging_root", r.staging_root, "'runtime'");
  r.consumer_cost_seconds =
      get_nonneg_double(j, "consumer_cost_seconds", r.consumer_cost_seconds, "'runtime'");
  r.seed = get_u64(j, "seed", r.seed, "'runtime'");
  r.csd_throttle_seconds =
      get_nonneg_double(j, "csd_throttle_seconds", r.csd_throttle_seconds, "'runtime'");
  return r;
}

PowerModel parse_power(const json& j) {
  require_object(j, "power");
  check_keys(j, {"p_cpu_process", "n_processes", "p_csd", "price_per_kwh"}, "'power'");
  PowerModel pm;
  pm.p_cpu_process = get_nonneg_double(j, "p_cpu_process", pm.p_cpu_process, "'power'");
  pm.n_processes = get_uint<std::uint32_t>(j, "n_processes", pm.n_processes, "'power'");
  pm.p_csd = get_nonneg_double(j, "p_csd", pm.p_csd, "'power'");
  pm.price_per_kwh = get_nonneg_double(j, "price_per_kwh", pm.price_per_kwh, "'power'");
  return pm;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(std::string("not valid JSON: ") + e.what());
  }
  require_object(j, "config");
  check_keys(j,
             {"dataset", "policy", "epochs", "profile", "calibration", "forced_split", "runtime",
              "power", "out_dir"},
             "the top level");
  if (!j.contains("dataset")) fail("'dataset' section is required");

  ExperimentConfig cfg;
  try {
    cfg.dataset = parse_dataset(j.at("dataset"));
    if (j.contains("policy")) {
      const json& v = j.at("policy");
      if (!v.is_string()) fail("'policy' must be a string");
      cfg.policy = parse_policy(v.get<std::string>());
    }
    cfg.epochs = get_uint<std::uint32_t>(j, "epochs", cfg.epochs, "the top level");
    if (j.contains("profile")) cfg.profile = parse_profile(j.at("profile"));
    if (j.contains("calibration")) {
      const json& v = j.at("calibration");
      if (!v.is_string()) fail("'calibration' must be a string");
      cfg.calibration = parse_calibration_mode(v.get<std::string>());
    }
    if (j.contains("forced_split")) cfg.forced_split = parse_split(j.at("forced_split"));
    if (j.contains("runtime")) cfg.runtime = parse_runtime(j.at("runtime"));
    if (j.contains("power")) cfg.power = parse_power(j.at("power"));
    if (j.contains("out_dir")) cfg.out_dir = get_string(j, "out_dir", "", "the top level");
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception& e) {
    fail(e.what());
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["dataset"] = {{"n_samples", dataset.n_samples}, {"batch_size", dataset.batch_size},
                  {"height", dataset.height},       {"width", dataset.width},
                  {"channels", dataset.channels},   {"seed", dataset.seed}};
  j["policy"] = to_string(policy);
  j["epochs"] = epochs;
  j["calibration"] = to_string(calibration);
  if (profile) {
    j["profile"] = {{"t_cpu_path_seconds", micros_to_seconds(profile->t_cpu_path)},
                    {"t_csd_pre_seconds", micros_to_seconds(profile->t_csd_pre)},
                    {"t_gds_path_seconds", micros_to_seconds(profile->t_gds_path)}};
  }
  if (forced_split) {
    j["forced_split"] = {{"n_cpu", forced_split->n_cpu}, {"n_csd", forced_split->n_csd}};
  }
  if (runtime) {
    j["runtime"] = {{"pipeline", to_string(runtime->pipeline)},
                    {"cpu_workers", runtime->cpu_workers},
                    {"csd_host", runtime->csd_host},
                    {"csd_port", runtime->csd_port},
                    {"staging_root", runtime->staging_root},
                    {"consumer_cost_seconds", runtime->consumer_cost_seconds},
                    {"seed", runtime->seed},
                    {"csd_throttle_seconds", runtime->csd_throttle_seconds}};
  }
  j["power"] = {{"p_cpu_process", power.p_cpu_process},
                {"n_processes", power.n_processes},
                {"p_csd", power.p_csd},
                {"price_per_kwh", power.price_per_kwh}};
  if (out_dir) j["out_dir"] = *out_dir;
  return j.dump(2) + "\n";
}

SimConfig ExperimentConfig::sim_config() const {
  if (!profile) fail("a 'profile' section is required to simulate");
  SimConfig sim;
  sim.spec = dataset;
  sim.profile = *profile;
  sim.policy = policy;
  sim.epochs = epochs;
  sim.calibration = calibration;
  sim.forced_split = forced_split;
  return sim;
}

RuntimeConfig ExperimentConfig::runtime_config() const {
  if (!runtime) fail("a 'runtime' section is required for a live run");
  RuntimeConfig rc;
  rc.spec = dataset;
  rc.pipeline = runtime->pipeline;
  rc.policy = policy;
  rc.cpu_workers = runtime->cpu_workers;
  rc.csd_host = runtime->csd_host;
  rc.csd_port = runtime->csd_port;
  rc.staging_root = runtime->staging_root;
  rc.consumer_cost_seconds = runtime->consumer_cost_seconds;
  rc.seed = runtime->seed;
  rc.epochs = epochs;
  rc.forced_split = forced_split;
  return rc;
}

CsdServerConfig ExperimentConfig::csd_server_config() const {
  if (!runtime) fail("a 'runtime' section is required to serve");
  CsdServerConfig sc;
  sc.spec = dataset;
  sc.pipeline = runtime->pipeline;
  sc.seed = runtime->seed;
  sc.host = runtime->csd_host;
  sc.port = runtime->csd_port;
  sc.staging_root = runtime->staging_root;
  sc.throttle_seconds = runtime->csd_throttle_seconds;
  return sc;
}

}  // namespace ddlp
