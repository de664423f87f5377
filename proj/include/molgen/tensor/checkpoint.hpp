// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "molgen/tensor/param_store.hpp"

namespace molgen::tensor {

MOLGEN_DEFINE_ERROR(CheckpointError);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers and floats little-endian:
///
///   "MOLGENCK"  u32 version  u64 header_bytes  header
///   u64 adam_steps  u32 parameter_count
///   per parameter:
///     u32 name_bytes  name  u8 trainable  u32 rank  u64 extents[rank]
///     f64 value[n]  u8 has_moments  [f64 adam_m[n]  f64 adam_v[n]]
///
/// The header is `key=value` lines with `\` and newline escaped, used for
/// hyper-parameters, vocabulary and training state.
struct Checkpoint {
  std::map<std::string, std::string> header;
  ParamStore params;
};

void write_checkpoint(std::ostream& out, const std::map<std::string, std::string>& header,
                      const ParamStore& params);
Checkpoint read_checkpoint(std::istream& in);

/// Atomic (temp file + rename).
void save_checkpoint(const std::filesystem::path& path,
                     const std::map<std::string, std::string>& header, const ParamStore& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace molgen::tensor
