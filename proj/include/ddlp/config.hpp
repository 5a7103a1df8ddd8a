#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "ddlp/core.hpp"
#include "ddlp/csd_server.hpp"
#include "ddlp/energy.hpp"
#include "ddlp/pipeline.hpp"
#include "ddlp/runtime.hpp"
#include "ddlp/scheduler.hpp"
#include "ddlp/simulator.hpp"

namespace ddlp {

/// Live-run knobs of an experiment config; the dataset, policy and epochs are
/// shared with the simulator sections. `csd_throttle_seconds` configures the
/// emulator process reading the same file.
struct RuntimeSection {
  PipelineId pipeline = PipelineId::Cifar;
  std::uint32_t cpu_workers = 1;
  std::string csd_host = "127.0.0.1";
  std::uint16_t csd_port = 0;
  std::string staging_root;
  double consumer_cost_seconds = 0.0;
  std::uint64_t seed = 0;
  double csd_throttle_seconds = 0.0;
};

/// One experiment, as a JSON file with a fixed, documented key set. Parsing
/// rejects unknown keys at every level; serializing a parsed config and
/// re-parsing yields an identical config.
struct ExperimentConfig {
  DatasetSpec dataset;
  Policy policy = Policy::Mte;
  std::uint32_t epochs = 1;
  std::optional<DeviceProfile> profile;  // simulated-device section
  CalibrationMode calibration = CalibrationMode::Exact;
  std::optional<Split> forced_split;
  std::optional<RuntimeSection> runtime;
  PowerModel power;  // defaults apply when the section is absent
  std::optional<std::string> out_dir;

  /// Throws std::invalid_argument with a schema diagnostic.
  static ExperimentConfig parse(const std::string& json_text);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string to_json() const;  // canonical form (sorted keys, full sections)

  /// Views for the execution engines; throw std::invalid_argument when the
  /// needed section is missing.
  SimConfig sim_config() const;
  RuntimeConfig runtime_config() const;
  CsdServerConfig csd_server_config() const;
};

}  // namespace ddlp
