#include "ddlp/staging.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ddlp {

namespace fs = std::filesystem;

StagingStore::StagingStore(fs::path root) : root_(std::move(root)) {
  if (root_.empty()) throw std::invalid_argument("staging root must not be empty");
  fs::create_directories(root_);
}

fs::path StagingStore::path_for(std::uint64_t batch_id) const {
  return root_ / ("batch_" + std::to_string(batch_id) + ".ddlp");
}

namespace {

void sync_fd_or_throw(const fs::path& path) {
  int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0)
    throw std::runtime_error("staging: open for fsync failed: " + path.string() + ": " +
                             std::strerror(errno));
  int rc = ::fsync(fd);
  int saved = errno;
  ::close(fd);
  if (rc != 0)
    throw std::runtime_error("staging: fsync failed: " + path.string() + ": " +
                             std::strerror(saved));
}

}  // namespace

fs::path StagingStore::put(const BatchPayload& payload) const {
  const fs::path final_path = path_for(payload.batch_id);
  const fs::path tmp_path = final_path.string() + ".tmp";
  {
    std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("staging: cannot open " + tmp_path.string());
    payload.write(out);
    if (!out) throw std::runtime_error("staging: write failed: " + tmp_path.string());
  }
  sync_fd_or_throw(tmp_path);
  std::error_code ec;
  fs::rename(tmp_path, final_path, ec);
  if (ec) throw std::runtime_error("staging: rename failed: " + ec.message());
  return final_path;
}

BatchPayload StagingStore::get(std::uint64_t batch_id) const {
  return read_file(path_for(batch_id));
}

BatchPayload StagingStore::read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("staging: cannot open " + path.string());
  return BatchPayload::read(in);
}

}  // namespace ddlp
