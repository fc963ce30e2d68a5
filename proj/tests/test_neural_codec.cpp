#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "codecraid/checkpoint.hpp"
#include "codecraid/error.hpp"
#include "codecraid/neural_codec.hpp"
#include "codecraid/synth.hpp"
#include "support.hpp"

using namespace codecraid;

namespace {

ToyCodecConfig small_config() {
  ToyCodecConfig c;
  c.latent_dim = 4;
  c.strides = {2, 4};
  c.channels = {4, 6};
  c.stem_channels = 4;
  c.seed = 3;
  return c;
}

// Encodes to i.i.d. unit Gaussians, seeded by the input length.
class GaussianCodec final : public LatentCodec {
 public:
  std::size_t latent_dim() const override { return 8; }
  std::size_t hop_samples() const override { return 10; }
  int native_sample_rate_hz() const override { return 16000; }
  LatentTensor encode(const Waveform& w) const override {
    std::mt19937_64 rng(w.size());
    std::normal_distribution<double> g;
    LatentTensor z(8, (w.size() + 9) / 10, frame_rate_hz());
    for (double& v : z.flat()) v = g(rng);
    return z;
  }
  Waveform decode(const LatentTensor& z) const override { return Waveform(std::vector<double>(z.frames() * 10), 16000); }
  EncodePass encode_with_grad(const Waveform&) const override { throw RuntimeError("unused"); }
  DecodePass decode_with_grad(const LatentTensor&) const override { throw RuntimeError("unused"); }
  std::uint64_t parameter_checksum() const override { return 0; }
};

}  // namespace

TEST(ToyCodec, ShapesFollowHop) {
  ToyLatentCodec codec(small_config());
  ASSERT_EQ(codec.hop_samples(), 8u);
  std::mt19937_64 rng(1);
  for (std::size_t n : {8ul, 100ul, 801ul}) {
    const auto z = codec.encode(test::random_waveform(rng, n));
    EXPECT_EQ(z.dims(), 4u);
    EXPECT_EQ(z.frames(), (n + 7) / 8);
    EXPECT_DOUBLE_EQ(z.frame_rate_hz, 24000.0 / 8.0);
    EXPECT_EQ(codec.decode(z).size(), z.frames() * 8);
  }
}

TEST(ToyCodec, DefaultHopIs320) { EXPECT_EQ(ToyCodecConfig{}.hop(), 320u); }

TEST(ToyCodec, DeterministicForSeedAndDistinctAcrossSeeds) {
  auto a = small_config(), b = small_config();
  EXPECT_EQ(ToyLatentCodec(a).parameter_checksum(), ToyLatentCodec(b).parameter_checksum());
  b.seed = 4;
  EXPECT_NE(ToyLatentCodec(a).parameter_checksum(), ToyLatentCodec(b).parameter_checksum());
}

TEST(ToyCodec, RejectsWrongRateAndShape) {
  ToyLatentCodec codec(small_config());
  EXPECT_THROW(codec.encode(Waveform(std::vector<double>(100, 0.0), 16000)), ConfigError);
  EXPECT_THROW(codec.decode(LatentTensor(3, 5, 3000.0)), ConfigError);
}

TEST(ToyCodec, DecodeGradientMatchesFiniteDifferences) {
  ToyLatentCodec codec(small_config());
  std::mt19937_64 rng(2);
  auto z = codec.encode(test::random_waveform(rng, 160));
  const auto pass = codec.decode_with_grad(z);
  const auto w = test::random_waveform(rng, pass.output.size(), 24000, 1.0).samples;
  const auto gz = pass.backward(w);
  auto loss = [&](const LatentTensor& zz) {
    const auto y = codec.decode(zz);
    double l = 0;
    for (std::size_t i = 0; i < y.size(); ++i) l += w[i] * y.samples[i];
    return l;
  };
  std::uniform_int_distribution<std::size_t> pick(0, z.flat().size() - 1);
  for (int k = 0; k < 12; ++k) {
    const auto i = pick(rng);
    auto zp = z, zm = z;
    zp.flat()[i] += 1e-6;
    zm.flat()[i] -= 1e-6;
    EXPECT_LT(test::rel_err(gz.flat()[i], (loss(zp) - loss(zm)) / 2e-6, 1e-6), 1e-5) << i;
  }
}

TEST(ToyCodec, EncodeGradientMatchesFiniteDifferences) {
  ToyLatentCodec codec(small_config());
  std::mt19937_64 rng(3);
  const auto x = test::random_waveform(rng, 96);
  const auto pass = codec.encode_with_grad(x);
  LatentTensor wz(pass.output.dims(), pass.output.frames(), pass.output.frame_rate_hz);
  std::normal_distribution<double> g;
  for (double& v : wz.flat()) v = g(rng);
  const auto gx = pass.backward(wz);
  auto loss = [&](const Waveform& in) {
    const auto z = codec.encode(in);
    double l = 0;
    for (std::size_t i = 0; i < z.flat().size(); ++i) l += wz.flat()[i] * z.flat()[i];
    return l;
  };
  for (std::size_t i : {0ul, 13ul, 50ul, 95ul}) {
    auto xp = x, xm = x;
    xp.samples[i] += 1e-6;
    xm.samples[i] -= 1e-6;
    EXPECT_LT(test::rel_err(gx[i], (loss(xp) - loss(xm)) / 2e-6, 1e-6), 1e-5) << i;
  }
}

TEST(ToyCodec, CheckpointRoundTrip) {
  test::TempDir dir;
  ToyLatentCodec codec(small_config());
  codec.mark_trained();
  codec.save(dir / "c.ckpt");
  const auto back = ToyLatentCodec::load(dir / "c.ckpt");
  EXPECT_EQ(back.parameter_checksum(), codec.parameter_checksum());
  EXPECT_TRUE(back.trained());
  std::mt19937_64 rng(4);
  const auto x = test::random_waveform(rng, 200);
  EXPECT_EQ(back.encode(x).flat().size(), codec.encode(x).flat().size());
  const auto za = back.encode(x), zb = codec.encode(x);
  for (std::size_t i = 0; i < za.flat().size(); ++i) EXPECT_DOUBLE_EQ(za.flat()[i], zb.flat()[i]);
}

TEST(ToyCodec, LoadRejectsForeignCheckpoint) {
  test::TempDir dir;
  Checkpoint c;
  c.kind = "toy-victim";
  c.save(dir / "v.ckpt");
  EXPECT_THROW(ToyLatentCodec::load(dir / "v.ckpt"), ConfigError);
  EXPECT_THROW(ToyLatentCodec::load(dir / "missing.ckpt"), ConfigError);
}

TEST(Sigma, UnitGaussianCodecGivesOne) {
  GaussianCodec codec;
  std::vector<Waveform> cal;
  for (std::size_t n = 10000; n < 10020; ++n) cal.emplace_back(std::vector<double>(n, 0.0), 16000);
  EXPECT_NEAR(estimate_sigma(codec, cal), 1.0, 0.02);
  EXPECT_THROW(estimate_sigma(codec, std::span<const Waveform>{}), ConfigError);
}

TEST(Sigma, ScaleBudgetExamples) {
  EXPECT_DOUBLE_EQ(scale_budget(1.0, 2.0, 4.0), 2.0);
  EXPECT_DOUBLE_EQ(scale_budget(0.5, 1.0, 0.1), 0.05);
  EXPECT_THROW(scale_budget(1.0, 0.0, 1.0), ConfigError);
}

TEST(SpectralLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto out = test::random_waveform(rng, 600).samples;
  const auto tgt = test::random_waveform(rng, 600).samples;
  const std::vector<std::size_t> windows{64, 128};
  std::vector<double> grad(out.size());
  const double l0 = multiscale_spectral_loss(out, tgt, grad, windows);
  EXPECT_GT(l0, 0.0);
  std::vector<double> scratch(out.size());
  for (std::size_t i : {3ul, 100ul, 333ul, 599ul}) {
    auto p = out, m = out;
    p[i] += 1e-6;
    m[i] -= 1e-6;
    const double fd = (multiscale_spectral_loss(p, tgt, scratch, windows) - multiscale_spectral_loss(m, tgt, scratch, windows)) / 2e-6;
    EXPECT_LT(test::rel_err(grad[i], fd, 1e-5), 1e-3) << i;
  }
  EXPECT_NEAR(multiscale_spectral_loss(tgt, tgt, scratch, windows), 0.0, 1e-12);
}

TEST(ToyCodec, BriefTrainingImprovesHeldOutSnr) {
  ToyLatentCodec codec(small_config());
  CodecTrainOptions opt;
  opt.steps = 60;
  opt.batch = 2;
  opt.clip_seconds = 0.1;
  const auto rep = train_toy_codec(codec, opt);
  EXPECT_EQ(rep.loss_history.size(), 60u);
  EXPECT_GT(rep.heldout_snr_after_db, rep.heldout_snr_before_db);
  EXPECT_TRUE(codec.trained());
}
