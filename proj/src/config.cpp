#include "orpo/config.hpp"

#include "orpo/binary_io.hpp"
#include "orpo/numkit.hpp"

#include <charconv>
#include <cmath>
#include <cctype>
#include <sstream>

namespace orpo {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  return k.front() != '.' && k.back() != '.';
}

[[noreturn]] void bad(const ConfigEntry& e, const std::string& what) {
  std::string where = e.line > 0 ? " (line " + std::to_string(e.line) + ")" : "";
  throw ValidationError("config key '" + e.key + "'" + where + ": " + what + ", got '" + e.raw + "'");
}

double parse_number(const std::string& text, bool* ok) {
  std::string t;
  for (char c : text)
    if (c != '_') t += c;
  double v = 0.0;
  const char* first = t.data();
  if (!t.empty() && t.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  *ok = !t.empty() && ec == std::errc() && ptr == t.data() + t.size() && std::isfinite(v);
  return v;
}

std::vector<std::string> split_array(const ConfigEntry& e) {
  const std::string s = trim(e.raw);
  if (s.size() < 2 || s.front() != '[' || s.back() != ']') bad(e, "expected an array");
  std::vector<std::string> items;
  std::stringstream ss(s.substr(1, s.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

}  // namespace

std::vector<ConfigEntry> parse_config_text(const std::string& text) {
  std::vector<ConfigEntry> out;
  std::istringstream in(text);
  std::string line, section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ValidationError("config line " + std::to_string(number) + ": bad section header");
      section = trim(body.substr(1, body.size() - 2));
      if (!valid_key(section)) throw ValidationError("config line " + std::to_string(number) + ": bad section name");
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ValidationError("config line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    if (!valid_key(key)) throw ValidationError("config line " + std::to_string(number) + ": bad key");
    ConfigEntry e{section.empty() ? key : section + "." + key, trim(body.substr(eq + 1)), number};
    if (e.raw.empty()) throw ValidationError("config line " + std::to_string(number) + ": missing value");
    for (const auto& prev : out)
      if (prev.key == e.key) throw ValidationError("config key '" + e.key + "' defined twice");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ConfigEntry> read_config_file(const std::filesystem::path& path) {
  return parse_config_text(read_file(path));
}

ConfigEntry parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ValidationError("override '" + text + "' is not key=value");
  ConfigEntry e{trim(text.substr(0, eq)), trim(text.substr(eq + 1)), 0};
  if (!valid_key(e.key) || e.raw.empty()) throw ValidationError("override '" + text + "' is malformed");
  return e;
}

bool config_bool(const ConfigEntry& e) {
  if (e.raw == "true") return true;
  if (e.raw == "false") return false;
  bad(e, "expected true or false");
}

std::int64_t config_int(const ConfigEntry& e) {
  bool ok = false;
  const double v = parse_number(e.raw, &ok);
  if (!ok || v != std::floor(v) || std::abs(v) > 9.0e15) bad(e, "expected an integer");
  return static_cast<std::int64_t>(v);
}

double config_double(const ConfigEntry& e) {
  bool ok = false;
  const double v = parse_number(e.raw, &ok);
  if (!ok) bad(e, "expected a number");
  return v;
}

std::string config_string(const ConfigEntry& e) {
  const std::string& s = e.raw;
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  if (s.find_first_of("\"[]= ") != std::string::npos) bad(e, "expected a string");
  return s;
}

std::vector<double> config_double_list(const ConfigEntry& e) {
  std::vector<double> out;
  for (const auto& item : split_array(e)) out.push_back(config_double({e.key, item, e.line}));
  return out;
}

std::vector<int> config_int_list(const ConfigEntry& e) {
  std::vector<int> out;
  for (const auto& item : split_array(e)) {
    const auto v = config_int({e.key, item, e.line});
    if (v < INT32_MIN || v > INT32_MAX) bad(e, "integer out of range");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::vector<std::uint64_t> config_u64_list(const ConfigEntry& e) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_array(e)) {
    const auto v = config_int({e.key, item, e.line});
    if (v < 0) bad(e, "expected non-negative integers");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, ptr);
  // Keep reals visibly real so a reader can tell them from integers.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string format_list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s + "]";
}

std::string format_list(const std::vector<int>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

std::string format_list(const std::vector<std::uint64_t>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace orpo
