#pragma once

#include <random>
#include <string>
#include <vector>

#include "codecraid/waveform.hpp"

namespace codecraid::synth {

using Rng = std::mt19937_64;

// A phone spoken in a synthetic utterance: its letter and time span.
struct PhoneEvent {
  char letter;
  double start_s;
  double end_s;
  double center_s() const { return 0.5 * (start_s + end_s); }
};

struct LabelledClip {
  Waveform audio;
  std::vector<PhoneEvent> phones;  // empty for non-speech material
  std::string transcript() const;
  bool is_speech() const { return !phones.empty(); }
};

// Letters the formant synthesizer can produce.
const std::string& phone_inventory();

// Formant "speech": voiced phones (vowels, nasals) by additive harmonic
// synthesis shaped by formant resonances, unvoiced phones (fricatives,
// plosive bursts) by band-limited noise.
LabelledClip speech(Rng& rng, int sample_rate_hz, double duration_s, int min_phones = 2, int max_phones = 3);
LabelledClip speech_from_letters(Rng& rng, int sample_rate_hz, double duration_s, const std::string& letters);

Waveform music(Rng& rng, int sample_rate_hz, double duration_s);
Waveform sines(Rng& rng, int sample_rate_hz, double duration_s);
Waveform chirp(Rng& rng, int sample_rate_hz, double duration_s);
Waveform filtered_noise(Rng& rng, int sample_rate_hz, double duration_s);
Waveform white_noise(Rng& rng, int sample_rate_hz, std::size_t n, double stddev = 0.1);
Waveform sine(double freq_hz, double amplitude, int sample_rate_hz, std::size_t n, double phase = 0.0);

// Mixed corpus used to train the toy latent codec.
Waveform codec_training_clip(Rng& rng, int sample_rate_hz, double duration_s);

}  // namespace codecraid::synth
