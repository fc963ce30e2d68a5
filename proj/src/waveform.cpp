#include "codecraid/waveform.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "codecraid/error.hpp"

namespace codecraid {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

void put_u16(std::ostream& os, std::uint16_t v) {
  const std::array<char, 2> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b.data(), 2);
}

}  // namespace

void Waveform::validate() const {
  if (sample_rate_hz <= 0) throw ConfigError("waveform: non-positive sample rate");
  if (samples.empty()) throw ConfigError("waveform: empty");
  for (double s : samples)
    if (!std::isfinite(s)) throw ConfigError("waveform: non-finite sample");
}

Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("missing file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw ConfigError("not a RIFF/WAVE file: " + path.string());

  int channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(len, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0 && avail >= 16) {
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      // WAVE_FORMAT_EXTENSIBLE carries the real format tag in the sub-format GUID.
      if (format == 0xFFFE && avail >= 26) format = read_u16(chunk + 32);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = avail;
    }
    pos = body + len + (len & 1u);
  }
  if (format == 0 || data == nullptr) throw ConfigError("malformed wav (no fmt/data chunk): " + path.string());
  if (format != 1 || bits != 16)
    throw ConfigError("unsupported encoding (need 16-bit PCM): " + path.string());
  if (channels != 1) throw ConfigError("multichannel input not supported: " + path.string());
  if (rate == 0) throw ConfigError("wav has zero sample rate: " + path.string());

  Waveform w;
  w.sample_rate_hz = static_cast<int>(rate);
  const std::size_t n = data_len / 2;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = static_cast<std::int16_t>(read_u16(data + 2 * i));
    w.samples[i] = static_cast<double>(v) / 32768.0;
  }
  return w;
}

std::int16_t quantize_pcm16(double sample) {
  const double c = std::clamp(sample, -1.0, 1.0);
  const double q = std::round(c * 32768.0);
  return static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
}

void save_wav(const Waveform& w, const std::filesystem::path& path) {
  if (w.sample_rate_hz <= 0) throw ConfigError("save_wav: non-positive sample rate");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write wav: " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (double s : w.samples) put_u16(out, static_cast<std::uint16_t>(quantize_pcm16(s)));
  if (!out) throw RuntimeError("short write: " + path.string());
}

Waveform operator+(const Waveform& a, const Waveform& b) {
  Waveform r = a;
  const std::size_t n = std::min(a.size(), b.size());
  r.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.samples[i] += b.samples[i];
  return r;
}

Waveform operator-(const Waveform& a, const Waveform& b) {
  Waveform r = a;
  const std::size_t n = std::min(a.size(), b.size());
  r.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.samples[i] -= b.samples[i];
  return r;
}

Waveform scaled(const Waveform& w, double gain) {
  Waveform r = w;
  for (double& s : r.samples) s *= gain;
  return r;
}

double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

double rms(std::span<const double> x) { return x.empty() ? 0.0 : std::sqrt(energy(x) / x.size()); }

double linf(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace codecraid
