#include "codecraid/channel.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "codecraid/dsp.hpp"
#include "codecraid/error.hpp"

namespace codecraid {

std::string to_string(CodecFamily f) {
  switch (f) {
    case CodecFamily::opus: return "opus";
    case CodecFamily::mp3: return "mp3";
    case CodecFamily::aac_lc: return "aac_lc";
    case CodecFamily::toy: return "toy";
    case CodecFamily::identity: return "identity";
  }
  return "?";
}

CodecFamily parse_family(const std::string& s) {
  if (s == "opus") return CodecFamily::opus;
  if (s == "mp3") return CodecFamily::mp3;
  if (s == "aac_lc" || s == "aac") return CodecFamily::aac_lc;
  if (s == "toy") return CodecFamily::toy;
  if (s == "identity" || s == "clean") return CodecFamily::identity;
  throw ConfigError("unknown codec family: " + s);
}

std::string CodecChannelSpec::label() const {
  if (family == CodecFamily::identity) return "identity";
  return to_string(family) + "@" + std::to_string(bitrate_kbps);
}

CodecChannelSpec CodecChannelSpec::parse(const std::string& label) {
  CodecChannelSpec s;
  const auto at = label.find('@');
  s.family = parse_family(label.substr(0, at));
  if (at != std::string::npos) {
    try {
      s.bitrate_kbps = std::stoi(label.substr(at + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad bitrate in channel label: " + label);
    }
  }
  s.validate();
  return s;
}

const std::vector<int>& supported_bitrates(CodecFamily f) {
  static const std::vector<int> opus{16, 24, 32, 64, 128, 192};
  static const std::vector<int> lossy{64, 96, 128, 192};
  static const std::vector<int> none;
  switch (f) {
    case CodecFamily::opus: return opus;
    case CodecFamily::mp3:
    case CodecFamily::aac_lc: return lossy;
    default: return none;
  }
}

void CodecChannelSpec::validate() const {
  if (family == CodecFamily::identity) return;
  if (family == CodecFamily::toy) {
    if (bitrate_kbps < 8) throw ConfigError("toy codec bitrate must be >= 8 kbps: " + label());
    return;
  }
  const auto& ok = supported_bitrates(family);
  if (std::find(ok.begin(), ok.end(), bitrate_kbps) == ok.end())
    throw ConfigError("unsupported bitrate for " + to_string(family) + ": " + std::to_string(bitrate_kbps));
}

BitrateGrid::BitrateGrid(std::vector<int> kbps) : kbps_(std::move(kbps)) {
  if (kbps_.empty()) throw ConfigError("bitrate grid is empty");
  for (std::size_t i = 0; i < kbps_.size(); ++i) {
    if (kbps_[i] <= 0) throw ConfigError("bitrate grid entries must be positive");
    if (i > 0 && kbps_[i] <= kbps_[i - 1]) throw ConfigError("bitrate grid must be strictly increasing");
  }
}

BitrateGrid BitrateGrid::training_default() { return BitrateGrid({16, 24, 32, 64, 128}); }

int sample_bitrate(const BitrateGrid& grid, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, grid.size() - 1);
  return grid.bitrates()[pick(rng)];
}

double ToyLossyCodecParams::cutoff_fraction(int kbps) const {
  if (auto it = cutoff_override.find(kbps); it != cutoff_override.end()) return it->second;
  return std::min(1.0, static_cast<double>(kbps) / cutoff_full_kbps);
}

long ToyLossyCodecParams::quant_levels(int kbps) const {
  if (auto it = levels_override.find(kbps); it != levels_override.end()) return it->second;
  const int e = std::min(max_level_exponent, level_exponent_base + kbps / level_step_kbps);
  return 1L << e;
}

void ToyLossyCodecParams::validate() const {
  if (window_len < 4 || hop == 0 || hop > window_len / 2) throw ConfigError("toy codec: bad STFT parameters");
  if (!(floor_db < ceiling_db)) throw ConfigError("toy codec: floor must be below ceiling");
  double prev_c = 0.0;
  for (const auto& [b, c] : cutoff_override) {
    if (!(c > 0.0 && c <= 1.0)) throw ConfigError("toy codec: cutoff fraction must be in (0, 1]");
    if (c < prev_c) throw ConfigError("toy codec: cutoff must be non-decreasing in bitrate");
    prev_c = c;
  }
  long prev_l = 0;
  for (const auto& [b, l] : levels_override) {
    if (l < 2) throw ConfigError("toy codec: quant levels must be >= 2");
    if (l < prev_l) throw ConfigError("toy codec: quant levels must be non-decreasing in bitrate");
    prev_l = l;
  }
}

Waveform toy_lossy_roundtrip(const Waveform& w, int kbps, const ToyLossyCodecParams& p) {
  auto spec = stft(w.samples, w.sample_rate_hz, p.window_len, p.hop, true);
  const double cutoff = p.cutoff_fraction(kbps);
  const long levels = p.quant_levels(kbps);
  const double step = (p.ceiling_db - p.floor_db) / static_cast<double>(levels - 1);
  // A full-scale sine peaks at window_len / 4 in a Hann-windowed bin.
  const double ref = static_cast<double>(p.window_len) / 4.0;
  const auto keep_bins = static_cast<std::size_t>(std::floor(cutoff * static_cast<double>(spec.bins - 1) + 1e-9)) + 1;
  for (std::size_t f = 0; f < spec.num_frames; ++f) {
    for (std::size_t k = 0; k < spec.bins; ++k) {
      Complex& c = spec.at(f, k);
      if (k >= keep_bins) {
        c = 0.0;
        continue;
      }
      const double mag = std::abs(c);
      if (mag <= 0.0) continue;
      const double db = 20.0 * std::log10(mag / ref);
      if (db < p.floor_db) {
        c = 0.0;
        continue;
      }
      const double q = std::min(std::round((db - p.floor_db) / step), static_cast<double>(levels - 1));
      const double qmag = ref * std::pow(10.0, (p.floor_db + q * step) / 20.0);
      c *= qmag / mag;
    }
  }
  return Waveform(istft(spec), w.sample_rate_hz);
}

TranscoderConfig TranscoderConfig::from_json_text(const std::string& text) {
  TranscoderConfig cfg;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("transcoder config: ") + e.what());
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "executable_dir") {
      cfg.executable_dir = it.value().get<std::string>();
      continue;
    }
    const CodecFamily fam = parse_family(it.key());
    if (!it.value().is_object()) throw ConfigError("transcoder config: family entry must be an object");
    TranscoderTemplate t;
    for (auto f = it.value().begin(); f != it.value().end(); ++f) {
      const std::string v = f.value().is_string() ? f.value().get<std::string>() : f.value().dump();
      if (f.key() == "encode_cmd") t.encode_cmd = v;
      else if (f.key() == "decode_cmd") t.decode_cmd = v;
      else if (f.key() == "compressed_ext") t.compressed_ext = v;
      else t.extra[f.key()] = v;
    }
    if (t.encode_cmd.empty() || t.decode_cmd.empty())
      throw ConfigError("transcoder config: " + it.key() + " needs encode_cmd and decode_cmd");
    cfg.templates_[fam] = std::move(t);
  }
  if (!cfg.executable_dir) {
    if (const char* env = std::getenv("CODECRAID_TRANSCODER_DIR"); env && *env) cfg.executable_dir = env;
  }
  return cfg;
}

TranscoderConfig TranscoderConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("missing transcoder config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

const TranscoderTemplate* TranscoderConfig::find(CodecFamily f) const {
  auto it = templates_.find(f);
  return it == templates_.end() ? nullptr : &it->second;
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
}

bool is_executable(const std::filesystem::path& p) { return ::access(p.c_str(), X_OK) == 0 && !std::filesystem::is_directory(p); }

// Resolves the leading program token against the transcoder dir and $PATH.
std::string resolve_program(std::string cmd, const std::optional<std::filesystem::path>& dir) {
  const auto start = cmd.find_first_not_of(" \t");
  if (start == std::string::npos) throw ConfigError("empty transcoder command");
  const auto end = cmd.find_first_of(" \t", start);
  const std::string prog = cmd.substr(start, end == std::string::npos ? std::string::npos : end - start);
  std::optional<std::filesystem::path> found;
  if (dir && is_executable(*dir / prog)) {
    found = *dir / prog;
  } else if (prog.find('/') != std::string::npos) {
    if (is_executable(prog)) found = prog;
  } else if (const char* path = std::getenv("PATH")) {
    std::stringstream ss(path);
    for (std::string d; std::getline(ss, d, ':');)
      if (!d.empty() && is_executable(std::filesystem::path(d) / prog)) {
        found = std::filesystem::path(d) / prog;
        break;
      }
  }
  if (!found) throw RuntimeError("transcoder executable missing: " + prog);
  cmd.replace(start, prog.size(), shell_quote(found->string()));
  return cmd;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<unsigned long> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("codecraid-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

void run_command(const std::string& cmd, const std::filesystem::path& err_file) {
  const std::string full = cmd + " >/dev/null 2> " + shell_quote(err_file.string());
  const int status = std::system(full.c_str());
  if (status == 0) return;
  std::string err;
  if (std::ifstream in(err_file); in) {
    std::stringstream ss;
    ss << in.rdbuf();
    err = ss.str();
  }
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  throw RuntimeError("transcoder failed (exit " + std::to_string(code) + "): " + cmd + "\n" + err);
}

}  // namespace

std::vector<double> align_to(std::span<const double> ref, std::span<const double> test, int max_lag) {
  int best_lag = 0;
  double best = -std::numeric_limits<double>::infinity();
  const auto n = static_cast<long>(ref.size());
  const auto m = static_cast<long>(test.size());
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    double acc = 0.0;
    const long lo = std::max(0L, -static_cast<long>(lag));
    const long hi = std::min(n, m - lag);
    for (long i = lo; i < hi; ++i) acc += ref[static_cast<std::size_t>(i)] * test[static_cast<std::size_t>(i + lag)];
    // Prefer the smallest |lag| on ties.
    const bool first = lag == -max_lag;
    if (first || acc > best + 1e-12 * std::abs(best) || (acc == best && std::abs(lag) < std::abs(best_lag))) {
      best = acc;
      best_lag = lag;
    }
  }
  std::vector<double> out(ref.size(), 0.0);
  for (long i = 0; i < n; ++i) {
    const long j = i + best_lag;
    if (j >= 0 && j < m) out[static_cast<std::size_t>(i)] = test[static_cast<std::size_t>(j)];
  }
  return out;
}

Waveform external_roundtrip(const Waveform& w, const CodecChannelSpec& spec, const TranscoderConfig& cfg) {
  const TranscoderTemplate* t = cfg.find(spec.family);
  if (!t) throw ConfigError("no transcoder template configured for " + to_string(spec.family));
  TempDir tmp;
  const auto in = tmp.path() / "in.wav";
  const auto packed = tmp.path() / ("packed" + t->compressed_ext);
  const auto out = tmp.path() / "out.wav";
  const auto err = tmp.path() / "stderr.txt";
  save_wav(w, in);

  const auto expand = [&](std::string cmd, const std::filesystem::path& src, const std::filesystem::path& dst) {
    replace_all(cmd, "{in}", shell_quote(src.string()));
    replace_all(cmd, "{out}", shell_quote(dst.string()));
    replace_all(cmd, "{bitrate_kbps}", std::to_string(spec.bitrate_kbps));
    replace_all(cmd, "{sample_rate_hz}", std::to_string(w.sample_rate_hz));
    for (const auto& [k, v] : t->extra) replace_all(cmd, "{" + k + "}", v);
    return resolve_program(cmd, cfg.executable_dir);
  };
  run_command(expand(t->encode_cmd, in, packed), err);
  run_command(expand(t->decode_cmd, packed, out), err);

  Waveform decoded = load_wav(out);
  if (decoded.sample_rate_hz != w.sample_rate_hz) decoded = resample(decoded, w.sample_rate_hz);
  const double mismatch = std::abs(static_cast<double>(decoded.size()) - static_cast<double>(w.size()));
  if (mismatch > 0.01 * static_cast<double>(w.size()))
    throw RuntimeError("transcoder output length mismatch: " + std::to_string(decoded.size()) + " vs " +
                       std::to_string(w.size()) + " (" + spec.label() + ")");
  return Waveform(align_to(w.samples, decoded.samples, 64), w.sample_rate_hz);
}

Waveform ChannelBank::apply(const Waveform& w, const CodecChannelSpec& spec) const {
  switch (spec.family) {
    case CodecFamily::identity: return w;
    case CodecFamily::toy:
      if (spec.bitrate_kbps < 8) throw ConfigError("toy codec bitrate must be >= 8 kbps");
      return toy_lossy_roundtrip(w, spec.bitrate_kbps, toy_);
    default:
      if (!transcoders_) throw ConfigError("external codec " + spec.label() + " requested but no transcoder config");
      return external_roundtrip(w, spec, *transcoders_);
  }
}

Waveform apply_channel(const Waveform& w, const CodecChannelSpec& spec) {
  static const ChannelBank bank;
  return bank.apply(w, spec);
}

SteChannel::SteChannel(const ChannelBank& bank, CodecChannelSpec spec) : bank_(&bank), spec_(spec) {
  spec_.validate();
}

SteChannel ste_wrap(const ChannelBank& bank, const CodecChannelSpec& spec) { return SteChannel(bank, spec); }

}  // namespace codecraid
