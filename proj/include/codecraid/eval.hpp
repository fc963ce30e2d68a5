#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "codecraid/attack.hpp"
#include "codecraid/channel.hpp"
#include "codecraid/metrics.hpp"
#include "codecraid/neural_codec.hpp"
#include "codecraid/victim.hpp"
#include "codecraid/waveform.hpp"

namespace codecraid {

enum class CarrierClass { speech, music };
std::string to_string(CarrierClass c);
CarrierClass parse_carrier_class(const std::string& s);

struct Carrier {
  std::string id;
  Waveform audio;
  CarrierClass cls = CarrierClass::speech;
  std::string target;  // raw target text
};

struct SyntheticScenarioOptions {
  std::size_t n = 20;
  std::uint64_t seed = 0;
  double speech_fraction = 0.5;
  double clip_seconds = 0.4;
  int sample_rate_hz = 24000;
  std::size_t target_tokens = 2;
  std::string target_pool = "aeioumn";  // letters targets are drawn from
};

struct ScenarioSpec {
  std::string name;
  std::vector<Carrier> carriers;
  std::string victim_id;  // checkpoint path
  std::string codec_id;   // checkpoint path; may be empty for waveform-only work
  std::vector<std::string> grid;  // channel labels; empty means the caller's default

  void validate() const;  // non-empty, one non-empty target per carrier, unique ids

  // Manifest: {"name", "victim", "codec", "grid"?, "target"?, "carriers":
  // [{"path", "class", "target"?, "id"?}]}. A top-level target applies to
  // carriers without one. Relative paths resolve against the manifest's
  // directory. Unknown keys are rejected.
  static ScenarioSpec load(const std::filesystem::path& manifest);
  static ScenarioSpec from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

  // Synthetic speech/music carriers with random targets from the pool.
  // When a victim is given, targets its clean output already contains are
  // redrawn so the clean baseline stays at zero.
  static ScenarioSpec synthetic(const std::string& name, const SyntheticScenarioOptions& opt,
                                const VictimModel* victim = nullptr);
};

// Evaluation cells; cells[0] is always the clean (identity) cell.
class EvalGrid {
 public:
  explicit EvalGrid(std::vector<CodecChannelSpec> cells);
  static EvalGrid toy_default();    // clean, toy@{16,24,32,64,128}
  static EvalGrid full_default();  // clean, opus trained grid + opus@192, mp3/aac @{64,96,128,192}
  static EvalGrid from_labels(const std::vector<std::string>& labels);

  const std::vector<CodecChannelSpec>& cells() const { return cells_; }
  std::vector<std::string> labels() const;
  EvalGrid without_external() const;
  bool has_external() const;
  // Lowest-bitrate toy cell, if any.
  std::optional<CodecChannelSpec> lowest_toy() const;

 private:
  std::vector<CodecChannelSpec> cells_;
};

struct EvalCell {
  CodecChannelSpec spec;
  std::size_t n = 0;
  std::size_t successes = 0;
  std::size_t channel_failures = 0;  // excluded from n unless strict
  double asr = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct CellOutcome {
  bool success = false;
  bool channel_failed = false;
  std::string output;  // victim transcript, or the channel error
};

struct CarrierOutcome {
  std::string carrier_id;
  std::string target;
  std::vector<CellOutcome> cells;  // parallel to EvalGrid::cells()
};

struct GridEvaluation {
  std::vector<EvalCell> cells;
  std::vector<CarrierOutcome> outcomes;
  std::optional<double> clean_vs_lowest_gap() const;  // clean ASR - lowest toy ASR
};

struct EvalOptions {
  bool strict = false;  // count channel failures as non-success
  std::size_t jobs = 1;
};

// Wilson score interval. Throws ConfigError when n == 0 or successes > n.
std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n, double confidence = 0.95);

// Two-sided standard normal quantile for the given central confidence.
double normal_quantile_two_sided(double confidence);

GridEvaluation evaluate_grid(std::span<const Waveform> adversarial, const ScenarioSpec& scenario, const EvalGrid& grid,
                             const VictimModel& victim, const ChannelBank& bank, const EvalOptions& opt = {});

// Concatenates outcomes from several evaluations over the same grid (e.g.
// one per seed) and recounts every cell. Carrier ids get a "#k" suffix.
GridEvaluation pool_evaluations(std::span<const GridEvaluation> runs, const EvalOptions& opt = {});

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions are
// rethrown on the caller's thread (lowest index first).
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

// Everything an attack sweep needs besides the configs.
struct AttackStack {
  const LatentCodec* codec = nullptr;  // required for latent attacks
  const VictimModel* victim = nullptr;
  const ChannelBank* bank = nullptr;
};

// One attack per carrier; carrier i uses seed cfg.seed * 1000003 + i.
std::vector<AttackResult> run_attacks(const ScenarioSpec& scenario, const AttackConfig& cfg, const AttackStack& stack,
                                      std::size_t jobs = 1);

struct RunRecord {
  std::string id;
  std::string scenario;
  nlohmann::json config;
  GridEvaluation evaluation;
  std::vector<std::string> grid_labels;
  std::vector<AudioQualityReport> quality;  // per carrier
  std::vector<double> final_losses;         // per carrier
  std::vector<double> snr_db;               // per carrier, clean channel
  std::string started_utc;
  std::string finished_utc;
  std::string version;
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
};

std::string utc_timestamp();
std::string version_stamp();

// Attacks every carrier, evaluates the grid and fills quality reports.
RunRecord attack_and_evaluate(const std::string& id, const ScenarioSpec& scenario, const AttackConfig& cfg,
                              const EvalGrid& grid, const AttackStack& stack, const EvalOptions& opt,
                              std::vector<AttackResult>* results_out = nullptr);

struct PairedRow {
  std::string label;
  double asr_a = 0.0;
  double asr_b = 0.0;
  double delta() const { return asr_a - asr_b; }
  // "A", "B" or "=": which arm has the higher ASR in this cell.
  std::string higher() const;
};

struct PairedRecord {
  std::string name_a;
  std::string name_b;
  RunRecord a;
  RunRecord b;
  std::vector<PairedRow> rows;
};

// Builds rows from two records over the same grid; throws ConfigError when
// the grids differ.
std::vector<PairedRow> pair_rows(const RunRecord& a, const RunRecord& b);

// EoT arm uses base_cfg; the no-EoT arm differs only by warmup_ratio = 1.
PairedRecord ablate_eot(const ScenarioSpec& scenario, const AttackConfig& base_cfg, const EvalGrid& grid,
                        const AttackStack& stack, const EvalOptions& opt);

struct CapacityRow {
  std::size_t word_count = 0;
  std::size_t tokens = 0;
  bool capacity_exceeded = false;  // target longer than the victim's output frames
  std::vector<std::size_t> successes;  // parallel to grid cells
  std::size_t n = 0;
  double mean_final_loss = 0.0;
};

struct CapacityOptions {
  std::vector<std::size_t> word_counts{1, 2, 4, 8, 16};
  std::string word_pool = "aeioumn";  // single-letter pseudo-words
  std::uint64_t seed = 0;
};

// Space-separated pseudo-word target with `words` words drawn from the pool.
std::string pseudo_word_target(std::size_t words, const std::string& pool, std::uint64_t seed);

// Every carrier attacked once per word count with a seeded pseudo-word
// target; counts successes per grid cell.
std::vector<CapacityRow> capacity_sweep(const ScenarioSpec& carriers, const CapacityOptions& copt,
                                        const AttackConfig& cfg, const EvalGrid& grid, const AttackStack& stack,
                                        const EvalOptions& opt);

struct SnrMatchRow {
  std::string carrier_id;
  double snr_latent_db = 0.0;
  double snr_waveform_db = 0.0;
  double epsilon_waveform = 0.0;
  std::size_t iterations = 0;
  bool matched() const { return std::abs(snr_latent_db - snr_waveform_db) < 1.0; }
};

struct CompareRecord {
  PairedRecord paired;  // a = latent, b = waveform
  std::vector<SnrMatchRow> snr_rows;
};

// Latent attack per carrier, SNR-matched waveform budget per carrier, then
// the waveform attack at that budget. When the full-length waveform run
// misses the 1 dB window the budget is refined with full-length probes.
CompareRecord compare_latent_waveform(const ScenarioSpec& scenario, const AttackConfig& latent_cfg,
                                      const AttackConfig& waveform_cfg, const EvalGrid& grid, const AttackStack& stack,
                                      const EvalOptions& opt, const SnrMatchOptions& match = {});

struct MetricStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

struct QualityStats {
  std::size_t n = 0;
  MetricStats snr_db, snr_delta_db, si_sdr_db, lsd_db, delta_lufs_db;
};

QualityStats quality_table(std::span<const AudioQualityReport> reports);

// Tables. Column order: clean | trained-grid bitrates | held-out families.
std::string asr_table_csv(const GridEvaluation& ev);
std::string asr_table_markdown(const GridEvaluation& ev, const std::string& title,
                               const std::vector<std::string>& notes = {});
std::string paired_table_csv(const PairedRecord& p);
std::string paired_table_markdown(const PairedRecord& p, const std::string& title);
std::string capacity_table_csv(const std::vector<CapacityRow>& rows, const EvalGrid& grid);
std::string capacity_table_markdown(const std::vector<CapacityRow>& rows, const EvalGrid& grid);
// Per-carrier transcripts per cell.
std::string outcomes_csv(const GridEvaluation& ev);
std::string snr_match_csv(const std::vector<SnrMatchRow>& rows);
std::string quality_table_csv(const QualityStats& q, const std::string& label);

// runs/<id>/record.json, tables/, audio/.
void write_run(const RunRecord& r, const std::filesystem::path& run_dir, std::span<const AttackResult> results,
               const ScenarioSpec& scenario);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace codecraid
