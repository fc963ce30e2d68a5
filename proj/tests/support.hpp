#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "codecraid/channel.hpp"
#include "codecraid/waveform.hpp"

namespace codecraid::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// Shell-script transcoders standing in for opus/mp3/aac. "copy" passes the
// WAV through (16-bit round trip only); "gain" halves the signal; "fail"
// exits non-zero.
std::filesystem::path write_fake_transcoder(const std::filesystem::path& dir, const std::string& mode);
TranscoderConfig fake_transcoders(const std::filesystem::path& dir, const std::string& mode = "copy");

Waveform random_waveform(std::mt19937_64& rng, std::size_t n, int rate = 24000, double stddev = 0.1);

// Relative error with a floor on the denominator.
double rel_err(double a, double b, double floor = 1e-8);

}  // namespace codecraid::test
