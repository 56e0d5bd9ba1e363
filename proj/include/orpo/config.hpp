#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace orpo {

// A small TOML subset: [section] / [a.b] headers, key = value lines, '#'
// comments. Values are strings, booleans, numbers or flat arrays of numbers.
struct ConfigEntry {
  std::string key;  // fully qualified, e.g. "dynamics.hidden"
  std::string raw;  // value text with comments stripped
  int line = 0;
};

std::vector<ConfigEntry> parse_config_text(const std::string& text);
std::vector<ConfigEntry> read_config_file(const std::filesystem::path& path);
// "key=value" from the command line.
ConfigEntry parse_override(const std::string& text);

// Conversions throw ValidationError naming the key on malformed input.
bool config_bool(const ConfigEntry& e);
std::int64_t config_int(const ConfigEntry& e);
double config_double(const ConfigEntry& e);
// Quoted TOML string; bare words are accepted for command-line overrides.
std::string config_string(const ConfigEntry& e);
std::vector<double> config_double_list(const ConfigEntry& e);
std::vector<int> config_int_list(const ConfigEntry& e);
std::vector<std::uint64_t> config_u64_list(const ConfigEntry& e);

// Shortest text that reads back to the same double.
std::string format_double(double v);
std::string format_list(const std::vector<double>& v);
std::string format_list(const std::vector<int>& v);
std::string format_list(const std::vector<std::uint64_t>& v);

std::uint64_t fnv1a64(const std::string& data);

}  // namespace orpo
