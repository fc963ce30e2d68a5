#include "codecraid/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "codecraid/error.hpp"

namespace codecraid {

namespace {

constexpr char kMagic[8] = {'C', 'R', 'A', 'I', 'D', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ConfigError("truncated checkpoint: " + path.string());
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const std::filesystem::path& path) {
  const auto n = get<std::uint32_t>(is, path);
  if (n > (1u << 24)) throw ConfigError("corrupt checkpoint string: " + path.string());
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw ConfigError("truncated checkpoint: " + path.string());
  return s;
}

}  // namespace

std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw RuntimeError("cannot write checkpoint: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put(os, version);
  put(os, arch_hash);
  put(os, seed);
  put_string(os, kind);
  put_string(os, meta_json);
  put<std::uint64_t>(os, params.size());
  os.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!os) throw RuntimeError("short write: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("missing checkpoint: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw ConfigError("not a checkpoint: " + path.string());
  Checkpoint c;
  c.version = get<std::uint32_t>(is, path);
  if (c.version != kVersion) throw ConfigError("unsupported checkpoint version in " + path.string());
  c.arch_hash = get<std::uint64_t>(is, path);
  c.seed = get<std::uint64_t>(is, path);
  c.kind = get_string(is, path);
  c.meta_json = get_string(is, path);
  const auto n = get<std::uint64_t>(is, path);
  if (n > (1ull << 32)) throw ConfigError("corrupt checkpoint size: " + path.string());
  c.params.resize(n);
  if (!is.read(reinterpret_cast<char*>(c.params.data()), static_cast<std::streamsize>(n * sizeof(double))))
    throw ConfigError("truncated checkpoint: " + path.string());
  return c;
}

}  // namespace codecraid
