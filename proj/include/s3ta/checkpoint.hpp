#pragma once

// Single-file checkpoint, all integers little-endian:
//
//   "S3TA"                       magic
//   u32 version                  kCheckpointVersion
//   u32 n, n bytes               text block: ModelConfig lines, then
//                                "meta.<key> = <value>" lines
//   u32 count                    manifest entries, in layout order:
//     u32 len, len bytes         array name
//     u8 dtype                   0 = float32
//     u32 rank, rank x u64       shape
//     u64 offset                 byte offset into the data section
//   data section                 raw float32 arrays

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "s3ta/config.hpp"
#include "s3ta/kv_config.hpp"
#include "s3ta/parameters.hpp"

namespace s3ta {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ManifestRecord {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::uint64_t offset = 0;
  std::uint64_t bytes = 0;
};

struct Checkpoint {
  ModelConfig config;
  KvMap meta;
  std::vector<ManifestRecord> manifest;
  ParameterSet<float> params;
};

std::string encode_checkpoint(const ModelConfig& config, const ParameterSet<float>& params, const KvMap& meta = {});
/// Throws FormatError (truncation, bad magic, inconsistent manifest) or
/// UnsupportedVersion. Nothing is returned on failure.
Checkpoint decode_checkpoint(std::string_view bytes);

/// Atomic: written to a temporary file, then renamed.
void save_checkpoint(const std::string& path, const ModelConfig& config, const ParameterSet<float>& params,
                     const KvMap& meta = {});
Checkpoint load_checkpoint(const std::string& path);

}  // namespace s3ta
