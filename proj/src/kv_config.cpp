#include "s3ta/kv_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "s3ta/errors.hpp"

namespace s3ta {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& text, const char* kind) {
  const std::string t = trim(text);
  T value{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw InvalidArgument(std::string("expected ") + kind + ", got '" + text + "'");
  return value;
}

}  // namespace

KvMap parse_kv_text(const std::string& text) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw InvalidArgument("config line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second)
      throw InvalidArgument("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return kv;
}

KvMap read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_kv_text(ss.str());
}

std::string format_kv(const KvMap& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + '\n';
  return out;
}

KvMap kv_section(const KvMap& kv, const std::string& prefix) {
  KvMap out;
  const std::string p = prefix + '.';
  for (const auto& [k, v] : kv)
    if (k.compare(0, p.size(), p) == 0) out.emplace(k.substr(p.size()), v);
  return out;
}

int parse_int(const std::string& text) { return parse_number<int>(text, "integer"); }

std::uint64_t parse_u64(const std::string& text) { return parse_number<std::uint64_t>(text, "unsigned integer"); }

double parse_double(const std::string& text) {
  // Accept fractions such as 16/255, which is how epsilons are usually written.
  const std::string t = trim(text);
  if (const auto slash = t.find('/'); slash != std::string::npos) {
    const double den = parse_number<double>(t.substr(slash + 1), "number");
    if (den == 0.0) throw InvalidArgument("division by zero in '" + text + "'");
    return parse_number<double>(t.substr(0, slash), "number") / den;
  }
  return parse_number<double>(t, "number");
}

bool parse_bool(const std::string& text) {
  std::string t = trim(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw InvalidArgument("expected boolean, got '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(item));
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(item));
  return out;
}

}  // namespace s3ta
