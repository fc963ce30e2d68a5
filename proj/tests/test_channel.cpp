#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "codecraid/channel.hpp"
#include "codecraid/dsp.hpp"
#include "codecraid/error.hpp"
#include "codecraid/metrics.hpp"
#include "codecraid/synth.hpp"
#include "support.hpp"

using namespace codecraid;

TEST(ChannelSpec, ParseAndLabelRoundTrip) {
  for (const char* l : {"identity", "toy@16", "opus@64", "mp3@128", "aac_lc@96"})
    EXPECT_EQ(CodecChannelSpec::parse(l).label(), l);
  EXPECT_EQ(CodecChannelSpec::parse("aac@64").family, CodecFamily::aac_lc);
  EXPECT_EQ(CodecChannelSpec::parse("clean").family, CodecFamily::identity);
}

TEST(ChannelSpec, RejectsUnsupported) {
  EXPECT_THROW(CodecChannelSpec::parse("opus@48"), ConfigError);
  EXPECT_THROW(CodecChannelSpec::parse("mp3@16"), ConfigError);
  EXPECT_THROW(CodecChannelSpec::parse("toy@4"), ConfigError);
  EXPECT_THROW(CodecChannelSpec::parse("vorbis@64"), ConfigError);
  EXPECT_THROW(CodecChannelSpec::parse("opus@abc"), ConfigError);
}

TEST(BitrateGrid, RejectsBadGrids) {
  EXPECT_THROW(BitrateGrid({}), ConfigError);
  EXPECT_THROW(BitrateGrid({16, 16}), ConfigError);
  EXPECT_THROW(BitrateGrid({32, 16}), ConfigError);
  EXPECT_THROW(BitrateGrid({0, 16}), ConfigError);
  EXPECT_EQ(BitrateGrid::training_default().bitrates(), (std::vector<int>{16, 24, 32, 64, 128}));
}

TEST(BitrateGrid, SamplingIsUniform) {
  const auto g = BitrateGrid::training_default();
  Rng rng(7);
  std::map<int, int> counts;
  const int n = 50000;
  for (int i = 0; i < n; ++i) ++counts[sample_bitrate(g, rng)];
  ASSERT_EQ(counts.size(), 5u);
  // Chi-square with 4 dof; 18.47 is the 0.999 quantile.
  double chi2 = 0;
  for (auto [b, c] : counts) chi2 += std::pow(c - n / 5.0, 2) / (n / 5.0);
  EXPECT_LT(chi2, 18.47);
}

TEST(ToyCodec, ParamsMonotone) {
  ToyLossyCodecParams p;
  EXPECT_NO_THROW(p.validate());
  double prev_c = 0;
  long prev_l = 0;
  for (int b : {8, 16, 24, 32, 64, 128, 192}) {
    EXPECT_GE(p.cutoff_fraction(b), prev_c);
    EXPECT_GE(p.quant_levels(b), prev_l);
    prev_c = p.cutoff_fraction(b);
    prev_l = p.quant_levels(b);
  }
  EXPECT_DOUBLE_EQ(p.cutoff_fraction(16), 16.0 / 48.0);
  EXPECT_DOUBLE_EQ(p.cutoff_fraction(128), 1.0);
  p.cutoff_override = {{16, 0.5}, {32, 0.4}};
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(ToyCodec, KeepsLengthAndRemovesContentAboveCutoff) {
  // toy@16 at 24 kHz keeps up to 16/48 of 12 kHz = 4 kHz.
  const std::size_t n = 12000;
  const auto lo = synth::sine(1000.0, 0.3, 24000, n);
  const auto hi = synth::sine(8000.0, 0.3, 24000, n);
  const auto out_lo = toy_lossy_roundtrip(lo, 16, {});
  const auto out_hi = toy_lossy_roundtrip(hi, 16, {});
  ASSERT_EQ(out_lo.size(), n);
  ASSERT_EQ(out_hi.size(), n);
  EXPECT_GT(snr_db(lo, out_lo), 15.0);
  EXPECT_LT(rms(out_hi.view()), 1e-2 * rms(hi.view()));  // below -40 dB
  // At 128 kbps the high sine passes.
  EXPECT_GT(snr_db(hi, toy_lossy_roundtrip(hi, 128, {})), 15.0);
}

TEST(ToyCodec, HigherBitrateIsNoWorse) {
  Rng rng(3);
  const auto w = synth::music(rng, 24000, 0.5);
  double prev = -1e9;
  for (int b : {16, 32, 64, 128}) {
    const double s = snr_db(w, toy_lossy_roundtrip(w, b, {}));
    EXPECT_GE(s, prev - 0.5) << b;
    prev = s;
  }
}

TEST(Ste, ForwardIsChannelBackwardIsIdentity) {
  ChannelBank bank;
  const auto ste = ste_wrap(bank, CodecChannelSpec::parse("toy@16"));
  Rng rng(4);
  const auto x = test::random_waveform(rng, 4000);
  EXPECT_EQ(ste.forward(x).samples, bank.apply(x, ste.spec()).samples);
  const auto g = test::random_waveform(rng, 4000).samples;
  EXPECT_EQ(ste.backward(g), g);
}

TEST(External, CopyTranscoderIsPcm16Transparent) {
  test::TempDir dir;
  ChannelBank bank({}, test::fake_transcoders(dir.path(), "copy"));
  Rng rng(5);
  const auto x = test::random_waveform(rng, 4800);
  const auto y = bank.apply(x, CodecChannelSpec::parse("opus@64"));
  ASSERT_EQ(y.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.samples[i], x.samples[i], 1.0 / 32767.0);
}

TEST(External, GainTranscoderOutputIsUsed) {
  test::TempDir dir;
  ChannelBank bank({}, test::fake_transcoders(dir.path(), "gain"));
  const auto x = synth::sine(440.0, 0.5, 24000, 4800);
  const auto y = bank.apply(x, CodecChannelSpec::parse("mp3@128"));
  EXPECT_NEAR(rms(y.view()) / rms(x.view()), 0.5, 1e-3);
}

TEST(External, FailingTranscoderRaisesRuntimeError) {
  test::TempDir dir;
  ChannelBank bank({}, test::fake_transcoders(dir.path(), "fail"));
  const auto x = synth::sine(440.0, 0.5, 24000, 4800);
  try {
    bank.apply(x, CodecChannelSpec::parse("aac@64"));
    FAIL() << "expected RuntimeError";
  } catch (const RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find("codec exploded"), std::string::npos);
  }
}

TEST(External, MissingConfigOrExecutable) {
  const auto x = synth::sine(440.0, 0.5, 24000, 480);
  EXPECT_THROW(ChannelBank().apply(x, CodecChannelSpec::parse("opus@64")), ConfigError);
  TranscoderConfig cfg;
  cfg.set(CodecFamily::opus, {"no-such-program-xyz {in} {out}", "no-such-program-xyz {in} {out}", ".bin", {}});
  EXPECT_THROW(ChannelBank({}, cfg).apply(x, CodecChannelSpec::parse("opus@64")), RuntimeError);
}

TEST(External, ConfigJsonParsing) {
  const auto cfg = TranscoderConfig::from_json_text(
      R"({"opus": {"encode_cmd": "a {in} {out}", "decode_cmd": "b {in} {out}", "application": "audio"}})");
  ASSERT_NE(cfg.find(CodecFamily::opus), nullptr);
  EXPECT_EQ(cfg.find(CodecFamily::opus)->extra.at("application"), "audio");
  EXPECT_EQ(cfg.find(CodecFamily::mp3), nullptr);
  EXPECT_THROW(TranscoderConfig::from_json_text(R"({"opus": {"encode_cmd": "a"}})"), ConfigError);
  EXPECT_THROW(TranscoderConfig::from_json_text("{bad"), ConfigError);
}

TEST(AlignTo, RecoversKnownShift) {
  Rng rng(6);
  const auto ref = test::random_waveform(rng, 2000).samples;
  for (int lag : {-17, 0, 9, 40}) {
    std::vector<double> test(ref.size(), 0.0);
    for (long i = 0; i < static_cast<long>(ref.size()); ++i) {
      const long j = i + lag;
      if (j >= 0 && j < static_cast<long>(ref.size())) test[static_cast<std::size_t>(j)] = ref[static_cast<std::size_t>(i)];
    }
    const auto out = align_to(ref, test, 64);
    ASSERT_EQ(out.size(), ref.size());
    for (std::size_t i = 100; i < ref.size() - 100; ++i) ASSERT_DOUBLE_EQ(out[i], ref[i]) << lag;
  }
}
