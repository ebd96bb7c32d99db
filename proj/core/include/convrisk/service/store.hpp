#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "convrisk/service/session.hpp"

namespace convrisk::service {

// Single-file session store: an append-only log of JSON lines, one full
// session snapshot per line. Opening replays the log (last snapshot of an
// id wins) and compacts it when it carries many superseded snapshots. An
// empty path keeps everything in memory.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path path = {});

  std::optional<Session> get(const std::string& id) const;
  std::vector<Session> all() const;  // ordered by id
  void put(const Session& session);
  // Next unused id, "s000001" style.
  std::string next_id();
  // Rewrites the log with one line per session (atomic rename).
  void compact();

  std::size_t log_lines() const;

 private:
  void append(const std::string& line);

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::string, Session> sessions_;
  std::size_t lines_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace convrisk::service
