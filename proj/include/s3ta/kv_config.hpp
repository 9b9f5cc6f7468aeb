#pragma once

// Flat "section.key = value" text configuration, '#' starts a comment.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace s3ta {

using KvMap = std::map<std::string, std::string>;

/// Parses key = value lines. Throws InvalidArgument on malformed lines or
/// duplicate keys.
KvMap parse_kv_text(const std::string& text);
KvMap read_kv_file(const std::string& path);
std::string format_kv(const KvMap& kv);

/// Keys starting with `prefix` + '.', with the prefix stripped.
KvMap kv_section(const KvMap& kv, const std::string& prefix);

int parse_int(const std::string& text);
std::uint64_t parse_u64(const std::string& text);
double parse_double(const std::string& text);
bool parse_bool(const std::string& text);
/// Comma-separated list of integers, e.g. "10,100,250".
std::vector<int> parse_int_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);

}  // namespace s3ta
