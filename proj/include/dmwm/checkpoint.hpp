#pragma once

// Versioned binary container: magic, format version, a JSON manifest, raw
// little-endian double blocks in manifest order and an FNV-1a checksum.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmwm/tensor.hpp"

namespace dmwm::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

struct Block {
  std::string name;
  Tensor value;
  bool operator==(const Block&) const = default;
};

struct Container {
  nlohmann::json meta;
  std::vector<Block> blocks;

  // Throws FormatError when absent.
  const Tensor& block(const std::string& name) const;
};

std::vector<char> encode(const Container& c);
// Throws FormatError (bad magic, checksum, manifest), VersionError or TruncatedError.
Container decode(std::vector<char> bytes, const std::string& context);

void save(const std::filesystem::path& path, const Container& c);
Container load(const std::filesystem::path& path);

}  // namespace dmwm::checkpoint
