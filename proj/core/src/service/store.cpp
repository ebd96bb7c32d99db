#include "convrisk/service/store.hpp"

#include <cstdio>
#include <fstream>

#include "convrisk/error.hpp"

namespace convrisk::service {

using nlohmann::json;

namespace {

std::uint64_t id_number(const std::string& id) {
  if (id.size() < 2 || id[0] != 's') return 0;
  try {
    return std::stoull(id.substr(1));
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace

SessionStore::SessionStore(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty() || !std::filesystem::exists(path_)) return;
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw LoadError("cannot open session store " + path_.string());
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    try {
      auto s = session_from_json(json::parse(line));
      counter_ = std::max(counter_, id_number(s.id));
      sessions_[s.id] = std::move(s);
      ++lines_;
    } catch (const json::exception& e) {
      // A torn final write is tolerated; anything earlier is corruption.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw LoadError(path_.string() + ": " + ParseError(e.what(), row).what());
    }
  }
  in.close();
  if (lines_ > 2 * sessions_.size() + 64) compact();
}

std::optional<Session> SessionStore::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second;
}

std::vector<Session> SessionStore::all() const {
  std::lock_guard lock(mu_);
  std::vector<Session> out;
  out.reserve(sessions_.size());
  for (const auto& [id, s] : sessions_) out.push_back(s);
  return out;
}

void SessionStore::put(const Session& session) {
  std::lock_guard lock(mu_);
  append(to_json(session).dump());
  sessions_[session.id] = session;
  counter_ = std::max(counter_, id_number(session.id));
}

std::string SessionStore::next_id() {
  std::lock_guard lock(mu_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(++counter_));
  return buf;
}

void SessionStore::append(const std::string& line) {
  ++lines_;
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  out << line << '\n';
  out.flush();
  if (!out) throw Error("failed to write session store " + path_.string());
}

void SessionStore::compact() {
  std::lock_guard lock(mu_);
  lines_ = sessions_.size();
  if (path_.empty()) return;
  auto tmp = path_;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    for (const auto& [id, s] : sessions_) out << to_json(s).dump() << '\n';
    out.flush();
    if (!out) throw Error("failed to write " + tmp.string());
  }
  std::filesystem::rename(tmp, path_);
}

std::size_t SessionStore::log_lines() const {
  std::lock_guard lock(mu_);
  return lines_;
}

}  // namespace convrisk::service
