#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "codecraid/error.hpp"
#include "codecraid/synth.hpp"
#include "codecraid/victim.hpp"
#include "support.hpp"

using namespace codecraid;

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize_text("  Hello,   WORLD!! "), "hello world");
  EXPECT_EQ(normalize_text("human-made"), "human made");
  EXPECT_EQ(normalize_text("humanmade"), "humanmade");
  EXPECT_EQ(normalize_text("a\t\nb"), "a b");
  EXPECT_EQ(normalize_text("...!?"), "");
}

TEST(SubstringMatch, Examples) {
  EXPECT_TRUE(substring_match("please OPEN the door now", "open the door"));
  EXPECT_TRUE(substring_match("xxopenyy", "open"));
  EXPECT_FALSE(substring_match("open then door", "open the door"));
  EXPECT_TRUE(substring_match("Open, the door.", "open the door"));
  EXPECT_FALSE(substring_match("", "a"));
  EXPECT_THROW(substring_match("abc", " !! "), ConfigError);
}

TEST(Vocabulary, ToyLayout) {
  const auto& v = Vocabulary::toy();
  EXPECT_EQ(v.size(), 32u);
  EXPECT_EQ(v.blank(), 0);
  EXPECT_EQ(v.symbol(v.id('a')), 'a');
  EXPECT_EQ(v.id('#'), -1);
  EXPECT_GE(v.id(' '), 1);
}

TEST(Vocabulary, SidecarRoundTrip) {
  test::TempDir dir;
  Vocabulary v("_ abc");
  v.save_sidecar(dir / "v.vocab");
  EXPECT_EQ(Vocabulary::load_sidecar(dir / "v.vocab").symbols(), "_ abc");
}

TEST(TargetSpec, TokenizesAndRejects) {
  const auto t = TargetSpec::from_text("Ma, Ma", Vocabulary::toy());
  EXPECT_EQ(t.text, "ma ma");
  EXPECT_EQ(t.token_ids.size(), 5u);
  EXPECT_THROW(TargetSpec::from_text("???", Vocabulary::toy()), ConfigError);
  EXPECT_THROW(TargetSpec::from_text("ñ", Vocabulary::toy()), ConfigError);
}

TEST(Alignment, CentredSlots) {
  EXPECT_EQ(aligned_frame(0, 1, 10), 5u);
  EXPECT_EQ(aligned_frame(0, 2, 10), 2u);
  EXPECT_EQ(aligned_frame(1, 2, 10), 7u);
  // Distinct and strictly increasing whenever tokens <= frames.
  for (std::size_t n = 1; n <= 40; ++n) {
    std::size_t prev = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto f = aligned_frame(i, n, 40);
      ASSERT_LT(f, 40u);
      if (i > 0) ASSERT_GT(f, prev);
      prev = f;
    }
  }
}

TEST(Collapse, RepeatsAndBlanks) {
  const auto& v = Vocabulary::toy();
  const int a = v.id('a'), b = v.id('b');
  EXPECT_EQ(collapse_frames({0, a, a, 0, a, b, b, 0}, v), "aab");
  EXPECT_EQ(collapse_frames({0, 0, 0}, v), "");
}

TEST(ToyVictim, FrameCountsAndRate) {
  ToyTokenVictim victim;
  EXPECT_EQ(victim.output_frames(399), 0u);
  EXPECT_EQ(victim.output_frames(400), 1u);
  EXPECT_EQ(victim.output_frames(16000), 98u);
  EXPECT_THROW(victim.generate(Waveform(std::vector<double>(24000, 0.0), 24000)), ConfigError);
  EXPECT_THROW(victim.generate(Waveform(std::vector<double>(100, 0.0), 16000)), ConfigError);
}

TEST(ToyVictim, TargetLossGradientMatchesFiniteDifferences) {
  ToyTokenVictim victim;
  std::mt19937_64 rng(1);
  const auto x = test::random_waveform(rng, 2000, 16000, 0.1);
  const auto t = TargetSpec::from_text("ma", victim.vocabulary());
  const auto lg = victim.target_loss(x, t, true);
  ASSERT_EQ(lg.grad.size(), x.size());
  EXPECT_GT(lg.loss, 0.0);
  for (std::size_t i : {0ul, 401ul, 999ul, 1777ul}) {
    auto xp = x, xm = x;
    xp.samples[i] += 1e-6;
    xm.samples[i] -= 1e-6;
    const double fd = (victim.target_loss(xp, t, false).loss - victim.target_loss(xm, t, false).loss) / 2e-6;
    EXPECT_LT(test::rel_err(lg.grad[i], fd, 1e-4), 1e-3) << i;
  }
}

TEST(ToyVictim, TargetLongerThanFramesIsRejected) {
  ToyTokenVictim victim;
  const Waveform w(std::vector<double>(720, 0.01), 16000);  // 3 frames
  EXPECT_THROW(victim.target_loss(w, TargetSpec::from_text("abcd", victim.vocabulary())), ConfigError);
}

TEST(ToyVictim, EmbedAndLogitShapes) {
  ToyTokenVictim victim;
  std::mt19937_64 rng(2);
  const auto x = test::random_waveform(rng, 4000, 16000);
  const auto l = victim.logits(x);
  EXPECT_EQ(l.channels, 32u);
  EXPECT_EQ(l.length, victim.output_frames(4000));
  EXPECT_EQ(victim.embed(x).vector.size(), victim.config().hidden);
}

TEST(ToyVictim, SaveLoadPreservesOutputs) {
  test::TempDir dir;
  ToyVictimConfig cfg;
  cfg.seed = 9;
  ToyTokenVictim victim(cfg);
  victim.save(dir / "v.ckpt");
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "v.ckpt.vocab"));
  const auto back = ToyTokenVictim::load(dir / "v.ckpt");
  EXPECT_EQ(back.parameter_checksum(), victim.parameter_checksum());
  std::mt19937_64 rng(3);
  const auto x = test::random_waveform(rng, 4000, 16000);
  EXPECT_EQ(back.generate(x), victim.generate(x));
}

TEST(PhoneLabels, NearestFrameToCentre) {
  ToyVictimConfig cfg;
  const auto& v = Vocabulary::toy();
  // Frame f covers [f*hop, f*hop + window); its centre is at (f*160 + 200) / 16000 s.
  const auto labels = phone_frame_labels({{'a', 0.1}, {'m', 0.3}}, 38, cfg, v);
  ASSERT_EQ(labels.size(), 38u);
  EXPECT_EQ(labels[9], v.id('a'));   // (9*160+200)/16000 = 0.1025
  EXPECT_EQ(labels[29], v.id('m'));  // (29*160+200)/16000 = 0.3025
  int nonblank = 0;
  for (int l : labels) nonblank += l != 0;
  EXPECT_EQ(nonblank, 2);
}
