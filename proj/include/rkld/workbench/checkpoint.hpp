// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "rkld/tinylm/model.hpp"

namespace rkld::wb {

inline constexpr char kCheckpointMagic[8] = {'R', 'K', 'L', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Provenance {
  std::string stage;   // "finetune", "retrain", "strengthen", "unlearn"
  std::size_t epoch = 0;
  std::string method;  // unlearning label, empty for base models
  std::uint32_t parent_checksum = 0;

  bool operator==(const Provenance&) const = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  lm::LanguageModel model;
  Provenance provenance;
  std::uint32_t checksum = 0;  // crc32 over everything before the trailer
};

// Layout: magic, u32 version, u32 header length, JSON header (config, tensor
// directory, provenance), little-endian 32-bit reals, u32 crc32 trailer.
std::string serialize_checkpoint(const lm::LanguageModel& model, const Provenance& prov);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

/// Writes atomically (temporary file then rename) and returns the checksum.
std::uint32_t save_checkpoint(const std::string& path, const lm::LanguageModel& model,
                              const Provenance& prov);

/// Throws IoError, CorruptionError (bad magic, truncation, checksum or header)
/// or VersionError.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rkld::wb
