#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "codecraid/error.hpp"
#include "codecraid/eval.hpp"
#include "codecraid/synth.hpp"
#include "support.hpp"

using namespace codecraid;

namespace {

// Output depends only on the sign of the mean sample, so channel effects
// that keep DC keep the verdict.
class ScriptedVictim final : public VictimModel {
 public:
  ScriptedVictim(std::string positive, std::string negative, std::size_t frames = 1000)
      : positive_(std::move(positive)), negative_(std::move(negative)), frames_(frames) {}
  int input_sample_rate_hz() const override { return 16000; }
  const Vocabulary& vocabulary() const override { return Vocabulary::toy(); }
  std::size_t output_frames(std::size_t) const override { return frames_; }
  LossAndGrad target_loss(const Waveform& w, const TargetSpec&, bool want_grad) const override {
    LossAndGrad r;
    r.loss = 1.0;
    if (want_grad) r.grad.assign(w.size(), 0.0);
    return r;
  }
  std::string generate(const Waveform& w) const override {
    double s = 0;
    for (double v : w.samples) s += v;
    return s >= 0 ? positive_ : negative_;
  }
  Embedding embed(const Waveform&) const override { return {{0.0}}; }
  std::uint64_t parameter_checksum() const override { return 1; }

 private:
  std::string positive_, negative_;
  std::size_t frames_;
};

ScenarioSpec dc_scenario(const std::vector<double>& levels, const std::string& target = "ma") {
  ScenarioSpec s;
  s.name = "dc";
  s.victim_id = "scripted";
  for (std::size_t i = 0; i < levels.size(); ++i)
    s.carriers.push_back({"c" + std::to_string(i), Waveform(std::vector<double>(4800, levels[i]), 24000),
                          CarrierClass::music, target});
  return s;
}

std::vector<Waveform> audio_of(const ScenarioSpec& s) {
  std::vector<Waveform> out;
  for (const auto& c : s.carriers) out.push_back(c.audio);
  return out;
}

}  // namespace

TEST(Wilson, KnownValues) {
  // Closed forms at the extremes: high(0, n) = z^2 / (n + z^2) and
  // low(n, n) = n / (n + z^2).
  const double z = 1.959963984540054;
  auto [lo0, hi0] = wilson_interval(0, 50);
  EXPECT_DOUBLE_EQ(lo0, 0.0);
  EXPECT_NEAR(hi0, z * z / (50 + z * z), 1e-9);
  auto [lo1, hi1] = wilson_interval(50, 50);
  EXPECT_NEAR(lo1, 50 / (50 + z * z), 1e-9);
  EXPECT_DOUBLE_EQ(hi1, 1.0);
  // p = 1/2: centre 1/2, half-width z sqrt(n/4 + z^2/4) / (n + z^2).
  auto [lo2, hi2] = wilson_interval(10, 20);
  const double hw = z * std::sqrt(20 / 4.0 + z * z / 4.0) / (20 + z * z);
  EXPECT_NEAR(lo2, 0.5 - hw, 1e-9);
  EXPECT_NEAR(hi2, 0.5 + hw, 1e-9);
  EXPECT_THROW(wilson_interval(0, 0), ConfigError);
  EXPECT_THROW(wilson_interval(3, 2), ConfigError);
}

TEST(Wilson, PropertiesHold) {
  for (std::size_t n : {1ul, 7ul, 20ul, 100ul}) {
    double prev_lo = -1;
    for (std::size_t k = 0; k <= n; ++k) {
      auto [lo, hi] = wilson_interval(k, n);
      const double p = static_cast<double>(k) / n;
      EXPECT_LE(lo, p + 1e-12);
      EXPECT_GE(hi, p - 1e-12);
      EXPECT_GE(lo, 0.0);
      EXPECT_LE(hi, 1.0);
      EXPECT_GT(lo, prev_lo - 1e-12);
      prev_lo = lo;
      auto [mlo, mhi] = wilson_interval(n - k, n);
      EXPECT_NEAR(lo, 1.0 - mhi, 1e-12);
      EXPECT_NEAR(hi, 1.0 - mlo, 1e-12);
    }
  }
  EXPECT_NEAR(normal_quantile_two_sided(0.95), 1.959964, 1e-5);
}

TEST(Evaluate, AlwaysAndNeverTargetVictims) {
  const auto s = dc_scenario({0.1, 0.1, 0.1, 0.1});
  const auto adv = audio_of(s);
  const auto grid = EvalGrid::toy_default();
  const auto always = evaluate_grid(adv, s, grid, ScriptedVictim("xx ma yy", "xx ma yy"), ChannelBank());
  const auto never = evaluate_grid(adv, s, grid, ScriptedVictim("zz", "zz"), ChannelBank());
  for (const auto& c : always.cells) {
    EXPECT_EQ(c.n, 4u);
    EXPECT_DOUBLE_EQ(c.asr, 1.0);
  }
  for (const auto& c : never.cells) EXPECT_DOUBLE_EQ(c.asr, 0.0);
  EXPECT_DOUBLE_EQ(*always.clean_vs_lowest_gap(), 0.0);
}

TEST(Evaluate, CountsMixedOutcomes) {
  const auto s = dc_scenario({0.1, -0.1, 0.1, -0.1, 0.1});
  const auto ev = evaluate_grid(audio_of(s), s, EvalGrid({}), ScriptedVictim("ma", "no"), ChannelBank());
  ASSERT_EQ(ev.cells.size(), 1u);
  EXPECT_EQ(ev.cells[0].successes, 3u);
  EXPECT_DOUBLE_EQ(ev.cells[0].asr, 0.6);
  auto [lo, hi] = wilson_interval(3, 5);
  EXPECT_DOUBLE_EQ(ev.cells[0].ci_low, lo);
  EXPECT_DOUBLE_EQ(ev.cells[0].ci_high, hi);
  EXPECT_EQ(ev.outcomes[1].cells[0].output, "no");
}

TEST(Evaluate, ChannelFailuresStrictAndLenient) {
  test::TempDir dir;
  const ChannelBank bank({}, test::fake_transcoders(dir.path(), "fail"));
  const auto s = dc_scenario({0.1, 0.1, 0.1});
  const auto grid = EvalGrid::from_labels({"opus@64"});
  ScriptedVictim victim("ma", "ma");
  const auto lenient = evaluate_grid(audio_of(s), s, grid, victim, bank);
  const auto& c = lenient.cells[1];
  EXPECT_EQ(c.channel_failures, 3u);
  EXPECT_EQ(c.n, 0u);
  EXPECT_DOUBLE_EQ(c.ci_low, 0.0);
  EXPECT_DOUBLE_EQ(c.ci_high, 1.0);
  EXPECT_TRUE(lenient.outcomes[0].cells[1].channel_failed);
  const auto strict = evaluate_grid(audio_of(s), s, grid, victim, bank, {.strict = true});
  EXPECT_EQ(strict.cells[1].n, 3u);
  EXPECT_EQ(strict.cells[1].successes, 0u);
  EXPECT_EQ(strict.cells[0].successes, 3u);
}

TEST(Evaluate, PrefixSuccessesAreMonotone) {
  std::vector<double> levels;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 12; ++i) levels.push_back(0.1 * u(rng));
  const auto full = dc_scenario(levels);
  ScriptedVictim victim("ma", "no");
  std::size_t prev = 0;
  for (std::size_t k = 1; k <= levels.size(); ++k) {
    ScenarioSpec s = full;
    s.carriers.resize(k);
    const auto ev = evaluate_grid(audio_of(s), s, EvalGrid({}), victim, ChannelBank());
    EXPECT_GE(ev.cells[0].successes, prev);
    prev = ev.cells[0].successes;
  }
}

TEST(Evaluate, ParallelMatchesSerial) {
  const auto s = dc_scenario({0.1, -0.1, 0.2, -0.3, 0.1, 0.05});
  ScriptedVictim victim("ma", "no");
  const auto a = evaluate_grid(audio_of(s), s, EvalGrid::toy_default(), victim, ChannelBank(), {.jobs = 1});
  const auto b = evaluate_grid(audio_of(s), s, EvalGrid::toy_default(), victim, ChannelBank(), {.jobs = 3});
  EXPECT_EQ(asr_table_csv(a), asr_table_csv(b));
  EXPECT_EQ(outcomes_csv(a), outcomes_csv(b));
}

TEST(Evaluate, PoolingRecounts) {
  const auto s = dc_scenario({0.1, -0.1});
  ScriptedVictim victim("ma", "no");
  const auto ev = evaluate_grid(audio_of(s), s, EvalGrid({}), victim, ChannelBank());
  const std::vector<GridEvaluation> runs{ev, ev, ev};
  const auto pooled = pool_evaluations(runs);
  EXPECT_EQ(pooled.cells[0].n, 6u);
  EXPECT_EQ(pooled.cells[0].successes, 3u);
  EXPECT_EQ(pooled.outcomes[4].carrier_id, "c0#2");
}

TEST(Grid, OrderingAndDuplicates) {
  const auto g = EvalGrid::from_labels({"mp3@64", "opus@192", "toy@16", "opus@64", "aac@96"});
  EXPECT_EQ(g.labels(), (std::vector<std::string>{"identity", "opus@64", "toy@16", "opus@192", "mp3@64", "aac_lc@96"}));
  EXPECT_THROW(EvalGrid::from_labels({"toy@16", "toy@16"}), ConfigError);
  EXPECT_TRUE(g.has_external());
  EXPECT_EQ(g.without_external().labels(), (std::vector<std::string>{"identity", "toy@16"}));
  EXPECT_EQ(g.lowest_toy()->bitrate_kbps, 16);
  EXPECT_EQ(EvalGrid::full_default().cells().size(), 15u);
}

TEST(Paired, MismatchedGridsRejected) {
  RunRecord a, b;
  a.grid_labels = {"identity", "toy@16"};
  b.grid_labels = {"identity", "toy@24"};
  EXPECT_THROW(pair_rows(a, b), ConfigError);
  PairedRow r{"x", 0.5, 0.25};
  EXPECT_EQ(r.higher(), "A");
  EXPECT_DOUBLE_EQ(r.delta(), 0.25);
  EXPECT_EQ((PairedRow{"x", 0.2, 0.2}).higher(), "=");
}

TEST(Quality, MeanAndPopulationStd) {
  std::vector<AudioQualityReport> q(2);
  q[0].snr_db = 10;
  q[1].snr_db = 20;
  q[0].lsd_db = 1;
  q[1].lsd_db = 1;
  const auto s = quality_table(q);
  EXPECT_EQ(s.n, 2u);
  EXPECT_DOUBLE_EQ(s.snr_db.mean, 15.0);
  EXPECT_DOUBLE_EQ(s.snr_db.std, 5.0);
  EXPECT_DOUBLE_EQ(s.lsd_db.std, 0.0);
  EXPECT_ANY_THROW(quality_table(std::span<const AudioQualityReport>{}));
}

TEST(Capacity, FlagsTargetsLongerThanFrames) {
  const auto s = dc_scenario({0.1, 0.2});
  ScriptedVictim victim("a e i o u m n", "", 4);
  AttackConfig cfg;
  cfg.domain = AttackDomain::waveform;
  cfg.epsilon = 0.001;
  cfg.steps = 2;
  const ChannelBank bank;
  CapacityOptions copt;
  copt.word_counts = {1, 2, 4};
  const auto rows = capacity_sweep(s, copt, cfg, EvalGrid({}), {nullptr, &victim, &bank}, {});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_FALSE(rows[0].capacity_exceeded);
  EXPECT_EQ(rows[1].tokens, 3u);
  EXPECT_FALSE(rows[1].capacity_exceeded);
  EXPECT_TRUE(rows[2].capacity_exceeded);  // 7 tokens > 4 frames
  // Exceeded rows count every carrier as a failure.
  EXPECT_EQ(rows[2].n, 2u);
  EXPECT_EQ(rows[2].successes[0], 0u);
  EXPECT_EQ(rows[0].n, 2u);
}

TEST(Capacity, PseudoWordTargets) {
  const auto t = pseudo_word_target(4, "aeioumn", 3);
  EXPECT_EQ(t.size(), 7u);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i % 2) EXPECT_EQ(t[i], ' ');
    else EXPECT_NE(std::string("aeioumn").find(t[i]), std::string::npos);
  }
  EXPECT_EQ(t, pseudo_word_target(4, "aeioumn", 3));
}

TEST(Scenario, ManifestLoadAndErrors) {
  test::TempDir dir;
  save_wav(synth::sine(440, 0.3, 24000, 4800), dir / "a.wav");
  save_wav(synth::sine(660, 0.3, 24000, 4800), dir / "b.wav");
  const auto write = [&](const std::string& text) {
    std::ofstream(dir / "m.json") << text;
    return dir / "m.json";
  };
  auto s = ScenarioSpec::load(write(R"({"name": "t", "victim": "v.ckpt", "codec": "c.ckpt", "target": "ma",
    "carriers": [{"path": "a.wav", "class": "speech"}, {"path": "b.wav", "class": "music", "target": "Open!"}]})"));
  ASSERT_EQ(s.carriers.size(), 2u);
  EXPECT_EQ(s.carriers[0].target, "ma");
  EXPECT_EQ(s.carriers[1].target, "Open!");
  EXPECT_EQ(s.carriers[1].cls, CarrierClass::music);
  EXPECT_NE(s.carriers[0].id, s.carriers[1].id);
  EXPECT_THROW(ScenarioSpec::load(write(R"({"name": "t", "victim": "v", "carriers": [{"path": "nope.wav", "class": "speech", "target": "a"}]})")),
               ConfigError);
  EXPECT_THROW(ScenarioSpec::load(write(R"({"name": "t", "victim": "v", "bogus": 1, "carriers": []})")), ConfigError);
  EXPECT_THROW(ScenarioSpec::load(write(R"({"name": "t", "victim": "v", "carriers": [{"path": "a.wav", "class": "speech"}]})")),
               ConfigError);
  EXPECT_THROW(ScenarioSpec::load(dir / "missing.json"), ConfigError);
}

TEST(Scenario, SyntheticIsDeterministicAndBalanced) {
  SyntheticScenarioOptions opt;
  opt.n = 10;
  const auto a = ScenarioSpec::synthetic("s", opt), b = ScenarioSpec::synthetic("s", opt);
  ASSERT_EQ(a.carriers.size(), 10u);
  std::size_t speech = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(a.carriers[i].audio.samples, b.carriers[i].audio.samples);
    EXPECT_EQ(a.carriers[i].target, b.carriers[i].target);
    EXPECT_EQ(normalize_text(a.carriers[i].target).size(), 2u);
    speech += a.carriers[i].cls == CarrierClass::speech;
  }
  EXPECT_EQ(speech, 5u);
  EXPECT_NO_THROW(a.validate());
}

TEST(Scenario, SyntheticAvoidsTargetsInCleanOutput) {
  SyntheticScenarioOptions opt;
  opt.n = 6;
  opt.target_tokens = 1;
  // Clean output contains every pool letter but 'n', so each target must be "n".
  ScriptedVictim victim("aeioum", "aeioum");
  const auto s = ScenarioSpec::synthetic("s", opt, &victim);
  for (const auto& c : s.carriers) EXPECT_EQ(c.target, "n");
}

TEST(Tables, AsrCsvLayout) {
  const auto s = dc_scenario({0.1, -0.1});
  const auto ev = evaluate_grid(audio_of(s), s, EvalGrid::from_labels({"toy@16"}), ScriptedVictim("ma", "no"), ChannelBank());
  const auto csv = asr_table_csv(ev);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "metric,identity,toy@16");
  EXPECT_NE(csv.find("asr,0.5"), std::string::npos);
}
