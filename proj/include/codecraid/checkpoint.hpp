#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace codecraid {

// Single binary blob: magic, version, architecture hash, seed, a kind tag,
// a JSON metadata string, then the flat little-endian parameter vector.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string kind;  // "toy-codec", "toy-victim"
  std::uint32_t version = kVersion;
  std::uint64_t arch_hash = 0;
  std::uint64_t seed = 0;
  std::string meta_json = "{}";
  std::vector<double> params;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

std::uint64_t hash_string(const std::string& s);

}  // namespace codecraid
