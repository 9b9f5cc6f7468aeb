#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace s3ta {

/// Whole file as bytes. Throws IoError.
std::string read_file(const std::string& path);

/// Writes to "<path>.tmp.<pid>" and renames over `path`, so readers never
/// see a partial file. Throws IoError.
void write_file_atomic(const std::string& path, std::string_view contents);

/// Creates the directory and its parents if missing. Throws IoError.
void ensure_directory(const std::string& path);

}  // namespace s3ta
