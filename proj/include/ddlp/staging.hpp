#pragma once

#include <cstdint>
#include <filesystem>

#include "ddlp/pipeline.hpp"

namespace ddlp {

/// Directory of staged batches, one file per batch id, named batch_<id>.ddlp
/// in the BatchPayload binary format. Writes go to a temp file, are fsynced,
/// then renamed into place, so a published file is always complete; repeated
/// puts of the same id simply replace the file.
class StagingStore {
 public:
  explicit StagingStore(std::filesystem::path root);  // creates the directory

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path_for(std::uint64_t batch_id) const;

  /// Durably writes the payload; returns the published path.
  std::filesystem::path put(const BatchPayload& payload) const;

  /// Reads + validates (magic/version/checksum). Throws std::runtime_error
  /// on a missing or corrupt file.
  BatchPayload get(std::uint64_t batch_id) const;
  static BatchPayload read_file(const std::filesystem::path& path);

 private:
  std::filesystem::path root_;
};

}  // namespace ddlp
