#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace affspace {

/// Ordered key=value pairs: UTF-8 text, one pair per line, `#` starts a
/// comment, surrounding whitespace is ignored. Used for dataset manifests,
/// run configs and checkpoint headers.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin = "<text>");
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);
  void set(const std::string& key, double value);
  void set(const std::string& key, long long value);
  void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }

  bool contains(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string str() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::string origin_ = "<text>";
};

/// Shortest round-tripping decimal form of a double.
std::string format_double(double v);

}  // namespace affspace
