#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "quadtrack/policy.hpp"

namespace quadtrack {

/// Trained networks, their normalizers and the run configuration.
///
/// File layout (all integers little-endian):
///   "QTRKCKPT"                      8 bytes
///   u32 version                     currently 1
///   u32 tensor count
///   u64 metadata length, then UTF-8 JSON metadata
///   per tensor: u16 name length, name, u8 dtype (1 = f32, 2 = f64),
///               u64 rows, u64 cols, u64 byte offset into the data block
///   u64 data length, then the data block (column-major IEEE-754)
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ActorCritic<float> net;
  nlohmann::json metadata = nlohmann::json::object();  // config snapshot, iteration, ...
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace quadtrack
