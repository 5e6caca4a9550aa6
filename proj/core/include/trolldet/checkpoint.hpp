#pragma once

// Binary checkpoints for trained assemblies.
//
// Layout (little-endian): "TGCK", u16 version, u32 description length and a
// JSON description (assembly spec, vocabulary, seed, epoch), u32 group
// count, then per group: u32 name length, name bytes, u32 rank, rank x u32
// dims, and the values as float32 in row-major order.

#include <trolldet/model.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace trolldet {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelAssembly model;
  std::vector<std::string> vocabulary;  // id order; may be empty
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
/// Throws FormatError on bad magic, version mismatch, truncation or
/// trailing bytes, and ShapeError when a group disagrees with the
/// described assembly.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace trolldet
