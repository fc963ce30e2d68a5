#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <sys/stat.h>
#include <unistd.h>

namespace codecraid::test {

TempDir::TempDir() {
  static std::mt19937_64 rng(std::random_device{}());
  for (;;) {
    path_ = std::filesystem::temp_directory_path() / ("codecraid-test-" + std::to_string(::getpid()) + "-" +
                                                      std::to_string(rng() % 1000000000));
    if (std::filesystem::create_directory(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::filesystem::path write_fake_transcoder(const std::filesystem::path& dir, const std::string& mode) {
  const auto p = dir / ("fake_" + mode);
  std::ofstream s(p);
  s << "#!/bin/sh\n";
  if (mode == "fail") {
    s << "echo 'codec exploded' >&2\nexit 1\n";
  } else if (mode == "gain") {
    // Packed file is the WAV itself; decode halves every 16-bit sample.
    s << "if [ \"$1\" = enc ]; then cp \"$2\" \"$3\"; else\n"
         "python3 - \"$2\" \"$3\" <<'PY'\n"
         "import sys, wave, array\n"
         "r = wave.open(sys.argv[1], 'rb'); p = r.getparams(); a = array.array('h', r.readframes(p.nframes)); r.close()\n"
         "a = array.array('h', [v // 2 for v in a])\n"
         "w = wave.open(sys.argv[2], 'wb'); w.setparams(p); w.writeframes(a.tobytes()); w.close()\n"
         "PY\nfi\n";
  } else {
    s << "cp \"$2\" \"$3\"\n";
  }
  s.close();
  ::chmod(p.c_str(), 0755);
  return p;
}

TranscoderConfig fake_transcoders(const std::filesystem::path& dir, const std::string& mode) {
  const auto exe = write_fake_transcoder(dir, mode).string();
  TranscoderConfig cfg;
  for (auto f : {CodecFamily::opus, CodecFamily::mp3, CodecFamily::aac_lc}) {
    TranscoderTemplate t;
    t.encode_cmd = exe + " enc {in} {out} {bitrate_kbps}";
    t.decode_cmd = exe + " dec {in} {out} {bitrate_kbps}";
    t.compressed_ext = ".pak";
    cfg.set(f, t);
  }
  return cfg;
}

Waveform random_waveform(std::mt19937_64& rng, std::size_t n, int rate, double stddev) {
  std::normal_distribution<double> g(0.0, stddev);
  Waveform w({}, rate);
  w.samples.resize(n);
  for (double& v : w.samples) v = std::clamp(g(rng), -0.99, 0.99);
  return w;
}

double rel_err(double a, double b, double floor) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}); }

}  // namespace codecraid::test
