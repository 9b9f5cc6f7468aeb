#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace s3ta::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumerical = 4;

/// Runs one command. `args` excludes the program name; `env` supplies the
/// S3TA_* overrides.
int run(const std::vector<std::string>& args, const std::map<std::string, std::string>& env, std::ostream& out,
        std::ostream& err);

/// run() over the process arguments and environment.
int run_main(int argc, char** argv);

}  // namespace s3ta::cli
