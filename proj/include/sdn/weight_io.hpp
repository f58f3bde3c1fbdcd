#pragma once

// SDNW weight files:
//
//   "SDNW"  u16 version  u32 manifest_len  manifest (UTF-8 key=value lines)
//   u32 layer_count, then per layer:
//     u16 id_len  id  u8 kind (0 conv, 1 fc)  [u32 stride  u32 padding]
//     tensor weights  tensor bias       (tensor = u8 rank, u32 dims..., f32 values...)
//   optional velocity section with the same per-layer layout (momentum state)
//   u32 CRC32 of every preceding byte
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <optional>

#include "sdn/network.hpp"

namespace sdn {

inline constexpr std::uint16_t kWeightFormatVersion = 1;

// A weight store plus training position; what trainer checkpoints contain.
struct Checkpoint {
  WeightStore weights;
  std::int64_t iteration = 0;
  std::optional<WeightStore> velocity;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

// Distinct failures: IoError (unreadable), FormatError (bad magic or layout),
// VersionError, ChecksumError (including truncation past the header),
// TruncatedError, SpecMismatchError (expected_landmarks disagrees).
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<int> expected_landmarks = {});

inline void save_weights(const WeightStore& ws, const std::filesystem::path& path) {
  save_checkpoint({ws, 0, std::nullopt}, path);
}

inline WeightStore load_weights(const std::filesystem::path& path, std::optional<int> expected_landmarks = {}) {
  return load_checkpoint(path, expected_landmarks).weights;
}

}  // namespace sdn
