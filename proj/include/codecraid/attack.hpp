#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "codecraid/channel.hpp"
#include "codecraid/neural_codec.hpp"
#include "codecraid/nn.hpp"
#include "codecraid/victim.hpp"
#include "codecraid/waveform.hpp"

namespace codecraid {

enum class AttackDomain { latent, waveform };
enum class StepKind { clean, codec_eot };

std::string to_string(AttackDomain d);
std::string to_string(StepKind k);

struct AttackConfig {
  AttackDomain domain = AttackDomain::latent;
  double epsilon = 1.0;          // latent units or PCM units, per domain
  std::optional<double> alpha;   // unset: 0.2 (latent) or epsilon / 5 (waveform)
  std::size_t steps = 1000;
  double warmup_ratio = 0.3;
  BitrateGrid eot_grid = BitrateGrid::training_default();
  CodecFamily train_family = CodecFamily::toy;
  std::uint64_t seed = 0;

  double effective_alpha() const;
  std::size_t warmup_steps() const;  // floor(w * S)
  void validate() const;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are a ConfigError.
  static AttackConfig from_json(const nlohmann::json& j);
};

// clean if t <= floor(wS); otherwise codec_eot on odd t, clean on even t.
StepKind schedule_select(std::size_t t, const AttackConfig& cfg);

struct ScheduleCounts {
  std::size_t warmup_clean = 0;
  std::size_t codec_eot = 0;
  std::size_t alternating_clean = 0;
};
ScheduleCounts schedule_counts(const AttackConfig& cfg);

struct AttackState {
  std::vector<double> delta;  // flattened latent (d x F row-major) or waveform samples
  nn::Adam optimizer;
  std::size_t t = 0;
  std::vector<double> loss_history;
  std::vector<int> bitrate_history;  // 0 on clean steps
  std::vector<StepKind> step_kinds;
  std::vector<double> linf_history;  // ||delta||_inf after each projection

  AttackState() = default;
  explicit AttackState(std::size_t n);
};

// One Adam update of state.delta with step size alpha. Projection is the
// caller's job.
void optimizer_step(AttackState& state, std::span<const double> gradient, double alpha);

void linf_project(std::span<double> delta, double epsilon);
double linf_norm(std::span<const double> v);

struct AttackResult {
  Waveform adversarial;
  std::vector<double> final_delta;
  std::size_t delta_dims = 0;    // d for latent, 1 for waveform
  std::size_t delta_frames = 0;  // F for latent, samples for waveform
  std::vector<double> loss_history;
  std::vector<int> bitrate_history;
  std::vector<StepKind> step_kinds;
  std::vector<double> linf_history;
  double clean_channel_snr_db = 0.0;  // adversarial vs carrier
  AttackConfig config;
  double wall_time_s = 0.0;
  std::uint64_t victim_checksum = 0;
  std::uint64_t codec_checksum = 0;

  double initial_loss() const { return loss_history.empty() ? 0.0 : loss_history.front(); }
  double final_loss() const { return loss_history.empty() ? 0.0 : loss_history.back(); }
  std::uint64_t delta_checksum() const { return nn::checksum(final_delta); }
};

// Latent-space PGD with the two-stage schedule and STE-EoT over the
// training family. Carrier must be at the codec's native rate.
AttackResult run_latent_attack(const Waveform& carrier, const TargetSpec& target, const LatentCodec& codec,
                               const VictimModel& victim, const AttackConfig& cfg, const ChannelBank& bank);

// Same schedule and optimizer on x + delta' directly.
AttackResult run_waveform_attack(const Waveform& carrier, const TargetSpec& target, const VictimModel& victim,
                                 const AttackConfig& cfg, const ChannelBank& bank);

struct BudgetSearch {
  double epsilon = 0.0;
  double snr_db = 0.0;
  std::size_t iterations = 0;
  std::vector<std::pair<double, double>> probes;  // (epsilon, snr) in evaluation order
};

// Bisection over a monotone-decreasing snr(epsilon) until it lands within
// tolerance_db of target_snr_db. Throws RuntimeError when [lo, hi] does not
// bracket the target, when the probes are not monotone, or when
// max_iterations is exhausted.
BudgetSearch bisect_budget(const std::function<double(double)>& snr_at, double target_snr_db, double lo, double hi,
                           std::size_t max_iterations = 12, double tolerance_db = 1.0);

struct SnrMatchOptions {
  double lo = 1e-4;
  double hi = 2.0;
  std::optional<std::size_t> probe_steps;  // unset: S / 4
  std::size_t max_iterations = 12;
  double tolerance_db = 1.0;
};

// Finds the waveform budget whose attack output has the reference result's
// clean-channel SNR. Each candidate is a short waveform attack.
BudgetSearch snr_match_budget(const AttackResult& reference, const Waveform& carrier, const TargetSpec& target,
                              const VictimModel& victim, const AttackConfig& waveform_cfg, const ChannelBank& bank,
                              const SnrMatchOptions& opt = {});

// adversarial.wav, delta.bin, loss_history.csv, config.json.
void write_attack_bundle(const AttackResult& r, const std::filesystem::path& dir,
                         const nlohmann::json& extra = nlohmann::json::object());

// Raw delta blob: "CRAIDDLT", u64 dims, u64 frames, doubles.
void save_delta(const std::filesystem::path& path, std::span<const double> delta, std::size_t dims, std::size_t frames);
std::vector<double> load_delta(const std::filesystem::path& path, std::size_t* dims = nullptr,
                               std::size_t* frames = nullptr);

}  // namespace codecraid
