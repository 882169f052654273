#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "latgen/error.hpp"
#include "latgen/fs_util.hpp"
#include "latgen/latent.hpp"

namespace latgen {

inline constexpr int kAnchorStoreSchemaVersion = 1;

struct AnchorSetSummary {
  std::string name;
  std::set<std::string> tags;
  std::size_t member_count = 0;
  std::size_t dim = 0;
  LatentSpace space = LatentSpace::UniformCube;
  std::string created_at;
};

// Named anchor sets persisted as one JSON document:
//   {"schema_version": 1, "store_version": N,
//    "sets": [{"name", "tags", "members": [<latent text>...], "created_at"}]}
// Every mutation rewrites the file atomically and bumps store_version. A
// mutation finding a store_version other than the one it last saw refuses to
// write, which is how a second writer on the same file is detected.
class AnchorStore {
 public:
  explicit AnchorStore(fs::path path) : path_(std::move(path)) { reload(); }

  const fs::path& path() const noexcept { return path_; }
  std::uint64_t version() const noexcept { return version_; }

  void reload() {
    entries_.clear();
    version_ = 0;
    std::error_code ec;
    if (!fs::exists(path_, ec)) return;
    const Parsed parsed = parse(read_file(path_));
    entries_ = parsed.entries;
    version_ = parsed.version;
  }

  void put(const AnchorSet& set, bool overwrite = false) {
    set.validate();
    Entry entry{set, timestamp_now()};
    entry.set.tags = normalize_tags(set.tags);
    auto it = find(set.name);
    if (it != entries_.end() && !overwrite) {
      fail(ErrorCode::Conflict, "anchor set '" + set.name + "' already exists");
    }
    auto next = entries_;
    if (it != entries_.end()) {
      next[static_cast<std::size_t>(it - entries_.begin())] = std::move(entry);
    } else {
      next.push_back(std::move(entry));
    }
    commit(std::move(next));
  }

  AnchorSet get(const std::string& name) const {
    auto it = find(name);
    if (it == entries_.end()) fail(ErrorCode::NotFound, "anchor set '" + name + "' not found");
    return it->set;
  }

  bool contains(const std::string& name) const { return find(name) != entries_.end(); }

  // All-of semantics: a set is listed only if it carries every filter tag.
  std::vector<AnchorSetSummary> list(const std::set<std::string>& tag_filter = {}) const {
    const auto wanted = normalize_tags(tag_filter);
    std::vector<AnchorSetSummary> out;
    for (const auto& e : entries_) {
      if (!std::includes(e.set.tags.begin(), e.set.tags.end(), wanted.begin(), wanted.end())) continue;
      out.push_back({e.set.name, e.set.tags, e.set.members.size(), e.set.members.front().dim(),
                     e.set.members.front().space(), e.created_at});
    }
    return out;
  }

  void remove(const std::string& name) {
    auto it = find(name);
    if (it == entries_.end()) fail(ErrorCode::NotFound, "anchor set '" + name + "' not found");
    auto next = entries_;
    next.erase(next.begin() + (it - entries_.begin()));
    commit(std::move(next));
  }

  static std::set<std::string> normalize_tags(const std::set<std::string>& tags) {
    std::set<std::string> out;
    for (auto t : tags) {
      std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
      if (!t.empty()) out.insert(std::move(t));
    }
    return out;
  }

 private:
  using Json = nlohmann::json;

  struct Entry {
    AnchorSet set;
    std::string created_at;
  };

  struct Parsed {
    std::vector<Entry> entries;
    std::uint64_t version = 0;
  };

  std::vector<Entry>::const_iterator find(const std::string& name) const {
    return std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.set.name == name; });
  }

  static std::string timestamp_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
    return buf;
  }

  Parsed parse(const std::string& text) const {
    Json doc;
    try {
      doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
      fail(ErrorCode::Format, "corrupt anchor store '" + path_.string() + "' at byte offset " + std::to_string(e.byte),
           std::to_string(e.byte));
    }
    Parsed out;
    std::size_t index = 0;
    try {
      if (doc.at("schema_version").get<int>() != kAnchorStoreSchemaVersion) {
        fail(ErrorCode::Format, "unsupported anchor store schema_version");
      }
      out.version = doc.at("store_version").get<std::uint64_t>();
      for (const auto& s : doc.at("sets")) {
        Entry e;
        e.set.name = s.at("name").get<std::string>();
        e.set.tags = s.at("tags").get<std::set<std::string>>();
        for (const auto& m : s.at("members")) e.set.members.push_back(parse_latent(m.get<std::string>()));
        e.created_at = s.value("created_at", "");
        e.set.validate();
        out.entries.push_back(std::move(e));
        ++index;
      }
    } catch (const Json::exception& e) {
      fail(ErrorCode::Format, "corrupt anchor store '" + path_.string() + "' (set " + std::to_string(index) +
                                  "): " + e.what());
    } catch (const Error& e) {
      fail(ErrorCode::Format, "corrupt anchor store '" + path_.string() + "' (set " + std::to_string(index) +
                                  "): " + e.message());
    }
    return out;
  }

  std::uint64_t on_disk_version() const {
    std::error_code ec;
    if (!fs::exists(path_, ec)) return 0;
    return parse(read_file(path_)).version;
  }

  void commit(std::vector<Entry> next) {
    if (on_disk_version() != version_) {
      fail(ErrorCode::Conflict, "anchor store '" + path_.string() + "' was modified by another writer");
    }
    Json sets = Json::array();
    for (const auto& e : next) {
      Json members = Json::array();
      for (const auto& m : e.set.members) members.push_back(serialize_latent(m));
      sets.push_back({{"name", e.set.name}, {"tags", e.set.tags}, {"members", members}, {"created_at", e.created_at}});
    }
    const Json doc = {
        {"schema_version", kAnchorStoreSchemaVersion}, {"store_version", version_ + 1}, {"sets", std::move(sets)}};
    if (path_.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(path_.parent_path(), ec);
    }
    write_file_atomic(path_, doc.dump(2) + "\n");
    entries_ = std::move(next);
    ++version_;
  }

  fs::path path_;
  std::vector<Entry> entries_;
  std::uint64_t version_ = 0;
};

}  // namespace latgen
