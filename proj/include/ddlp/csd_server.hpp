#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "ddlp/core.hpp"
#include "ddlp/pipeline.hpp"

namespace ddlp {

/// Configuration of the computational-storage emulator process. The dataset
/// description and default transform seed arrive out of band (same config
/// file on both sides); the wire carries batch ids, not tensors.
struct CsdServerConfig {
  DatasetSpec spec;
  PipelineId pipeline = PipelineId::ImageNet2;
  std::uint64_t seed = 0;  // transform rng seed for probe batches
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 = ephemeral, reported via on_listening
  std::filesystem::path staging_root;
  double throttle_seconds = 0.0;  // fixed extra delay per batch (slow silicon)
  /// Fault injection for crash-tolerance tests: drop the connection without
  /// ceremony after this many staged batches.
  std::optional<std::uint64_t> fail_after_stagings;

  void validate() const;  // throws std::invalid_argument
};

/// Serves exactly one controller connection, then returns. Handshakes with
/// Hello, preprocesses ProbeReq / PreprocessRange batches one at a time in
/// request order, stages each batch durably before announcing it, honours
/// Stop between batches (abandons the rest of the range, replies Ack), and
/// returns when the controller closes the connection.
/// `on_listening` fires once the port is bound (ephemeral-port discovery).
void csd_emulator_serve(const CsdServerConfig& cfg,
                        const std::function<void(std::uint16_t)>& on_listening = {});

}  // namespace ddlp
