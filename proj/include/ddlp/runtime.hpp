#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ddlp/core.hpp"
#include "ddlp/pipeline.hpp"
#include "ddlp/scheduler.hpp"

namespace ddlp {

/// One live training run: CPU workers run transform pipelines in-process, the
/// computational-storage emulator preprocesses the dataset tail in its own
/// process reached over TCP, and a consumer thread stands in for the GPU by
/// checksum-verifying every batch (head batches from the worker pool, tail
/// batches read directly from the staging files) plus a fixed synthetic
/// compute delay.
struct RuntimeConfig {
  DatasetSpec spec;
  PipelineId pipeline = PipelineId::Cifar;
  Policy policy = Policy::Mte;
  std::uint32_t cpu_workers = 1;
  std::string csd_host = "127.0.0.1";
  std::uint16_t csd_port = 0;
  std::filesystem::path staging_root;
  double consumer_cost_seconds = 0.0;  // emulated GPU compute per batch
  std::uint64_t seed = 0;              // transform rng seed
  std::uint32_t epochs = 1;
  /// Static split for the measure-then-split policy; omitting it runs the
  /// live two-sided probe calibration instead.
  std::optional<Split> forced_split;

  bool uses_csd() const {
    return policy == Policy::Mte || policy == Policy::Wrr || policy == Policy::CsdOnly;
  }
  void validate() const;  // throws std::invalid_argument
};

struct ConsumedBatch {
  std::uint64_t batch_index = 0;
  std::uint32_t epoch = 0;
  SourceTag source = SourceTag::CpuPath;
  std::uint64_t checksum = 0;
};

struct RuntimeResult {
  Trace trace;
  RunReport report;  // energy fields left to the caller's power model
  std::optional<CalibrationReport> calibration;
  std::vector<ConsumedBatch> consumed;  // in consumption order, all epochs
};

/// Drives the scheduling state machine with real events: worker completions,
/// staging announcements from the socket, and consumer completions, all
/// serialized through one controller queue. Exactly-once coverage holds even
/// when the emulator dies mid-epoch (remaining tail work moves to the CPU
/// prong and the report is marked degraded).
/// Throws wire::ConnectionError when the emulator is unreachable at start.
RuntimeResult run_learning(const RuntimeConfig& cfg);

}  // namespace ddlp
