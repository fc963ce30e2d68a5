#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "codecraid/waveform.hpp"

namespace codecraid {

enum class CodecFamily { opus, mp3, aac_lc, toy, identity };

std::string to_string(CodecFamily f);
CodecFamily parse_family(const std::string& s);

struct CodecChannelSpec {
  CodecFamily family = CodecFamily::identity;
  int bitrate_kbps = 0;

  bool is_external() const {
    return family == CodecFamily::opus || family == CodecFamily::mp3 || family == CodecFamily::aac_lc;
  }
  // "toy@16", "opus@64", "identity".
  std::string label() const;
  static CodecChannelSpec parse(const std::string& label);
  // Throws ConfigError when the bitrate is outside the family's supported set.
  void validate() const;

  friend bool operator==(const CodecChannelSpec&, const CodecChannelSpec&) = default;
};

const std::vector<int>& supported_bitrates(CodecFamily f);  // empty for toy/identity

class BitrateGrid {
 public:
  explicit BitrateGrid(std::vector<int> kbps);
  static BitrateGrid training_default();  // {16, 24, 32, 64, 128}

  const std::vector<int>& bitrates() const { return kbps_; }
  std::size_t size() const { return kbps_.size(); }

 private:
  std::vector<int> kbps_;
};

using Rng = std::mt19937_64;

// b ~ Uniform(grid).
int sample_bitrate(const BitrateGrid& grid, Rng& rng);

// Desk-scale lossy channel: band truncation above cutoff_fraction(b) of
// Nyquist plus log-magnitude quantization to quant_levels(b) steps.
struct ToyLossyCodecParams {
  std::size_t window_len = 512;
  std::size_t hop = 128;
  double floor_db = -80.0;
  double ceiling_db = 20.0;
  double cutoff_full_kbps = 48.0;  // cutoff_fraction = min(1, b / cutoff_full_kbps)
  int level_exponent_base = 4;     // quant_levels = 2^(base + floor(b / level_step_kbps))
  int level_step_kbps = 16;
  int max_level_exponent = 20;
  std::map<int, double> cutoff_override;
  std::map<int, long> levels_override;

  double cutoff_fraction(int kbps) const;
  long quant_levels(int kbps) const;
  void validate() const;  // monotonicity and range invariants over the overrides
};

Waveform toy_lossy_roundtrip(const Waveform& w, int kbps, const ToyLossyCodecParams& p);

// Command templates for one external codec family. Placeholders: {in},
// {out}, {bitrate_kbps}.
struct TranscoderTemplate {
  std::string encode_cmd;
  std::string decode_cmd;
  std::string compressed_ext = ".bin";
  std::map<std::string, std::string> extra;  // free fields (application mode, frame size, ...) usable as {key}
};

class TranscoderConfig {
 public:
  TranscoderConfig() = default;
  static TranscoderConfig load(const std::filesystem::path& path);
  static TranscoderConfig from_json_text(const std::string& text);

  const TranscoderTemplate* find(CodecFamily f) const;
  void set(CodecFamily f, TranscoderTemplate t) { templates_[f] = std::move(t); }
  // Prefix for executable lookup; defaults to $CODECRAID_TRANSCODER_DIR.
  std::optional<std::filesystem::path> executable_dir;

 private:
  std::map<CodecFamily, TranscoderTemplate> templates_;
};

Waveform external_roundtrip(const Waveform& w, const CodecChannelSpec& spec, const TranscoderConfig& cfg);

// Shifts `test` by the lag in [-max_lag, max_lag] that maximizes its
// cross-correlation with `ref`, then trims/zero-pads it to ref's length.
std::vector<double> align_to(std::span<const double> ref, std::span<const double> test, int max_lag = 64);

// Holds everything needed to run any channel family.
class ChannelBank {
 public:
  ChannelBank() = default;
  explicit ChannelBank(ToyLossyCodecParams toy) : toy_(std::move(toy)) {}
  ChannelBank(ToyLossyCodecParams toy, TranscoderConfig transcoders)
      : toy_(std::move(toy)), transcoders_(std::move(transcoders)) {}

  // Same rate and exact length as the input.
  Waveform apply(const Waveform& w, const CodecChannelSpec& spec) const;

  const ToyLossyCodecParams& toy_params() const { return toy_; }
  const std::optional<TranscoderConfig>& transcoders() const { return transcoders_; }

 private:
  ToyLossyCodecParams toy_;
  std::optional<TranscoderConfig> transcoders_;
};

// Uses default toy parameters and no external transcoders.
Waveform apply_channel(const Waveform& w, const CodecChannelSpec& spec);

// Straight-through wrapper: the forward value is the real channel output,
// the backward pass is the identity.
class SteChannel {
 public:
  SteChannel(const ChannelBank& bank, CodecChannelSpec spec);

  Waveform forward(const Waveform& x) const { return bank_->apply(x, spec_); }
  std::vector<double> backward(std::span<const double> grad_out) const { return {grad_out.begin(), grad_out.end()}; }
  const CodecChannelSpec& spec() const { return spec_; }

 private:
  const ChannelBank* bank_;
  CodecChannelSpec spec_;
};

SteChannel ste_wrap(const ChannelBank& bank, const CodecChannelSpec& spec);

}  // namespace codecraid
