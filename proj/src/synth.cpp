#include "diar/synth.hpp"

#include <algorithm>
#include <cmath>

#include "diar/error.hpp"
#include "diar/rng.hpp"

namespace diar {

namespace {

constexpr double kPeakDbfs = -3.0;

double formant_envelope(const SyntheticSpeaker& s, double f) {
    double g = 0.1;
    for (int m = 0; m < 3; ++m) {
        const double d = (f - s.formant_hz[m]) / s.formant_bw[m];
        g += std::exp(-0.5 * d * d);
    }
    return g;
}

} // namespace

std::vector<SyntheticSpeaker> make_speakers(int n, uint64_t seed) {
    if (n < 1) raise(errc::validation, "make_speakers: n must be >= 1");
    if (n > 22)
        raise(errc::validation,
              "make_speakers: cannot place more than 22 speakers in [80, 300] Hz "
              "with 10 Hz separation");

    Rng rng(seed);

    // Exact sampling of f0s with minimum gap 10 Hz: draw in the slack
    // interval, sort, then re-insert the mandatory gaps. A random permutation
    // afterwards decouples speaker index from pitch order.
    const double slack = (300.0 - 80.0) - 10.0 * (n - 1);
    std::vector<double> f0(n);
    for (auto& v : f0) v = rng.uniform(0.0, slack);
    std::sort(f0.begin(), f0.end());
    for (int i = 0; i < n; ++i) f0[i] += 80.0 + 10.0 * i;
    rng.shuffle(f0);

    std::vector<SyntheticSpeaker> speakers;
    speakers.reserve(n);
    for (int i = 0; i < n; ++i) {
        SyntheticSpeaker s;
        s.id = i;
        s.f0_hz = f0[i];
        s.formant_hz[0] = rng.uniform(300.0, 900.0);
        s.formant_hz[1] = rng.uniform(1000.0, 2400.0);
        s.formant_hz[2] = rng.uniform(2600.0, 3800.0);
        s.formant_bw[0] = rng.uniform(60.0, 120.0);
        s.formant_bw[1] = rng.uniform(80.0, 160.0);
        s.formant_bw[2] = rng.uniform(100.0, 200.0);
        s.noise_mix = rng.uniform(0.05, 0.25);
        s.seed = rng.next_u64();
        speakers.push_back(s);
    }
    return speakers;
}

AudioBuffer render(const SyntheticSpeaker& speaker, double duration_s, uint64_t seed) {
    if (duration_s <= 0.0) raise(errc::validation, "render: duration must be positive");

    const int rate = kModelSampleRate;
    const size_t n = static_cast<size_t>(std::llround(duration_s * rate));
    Rng rng(speaker.seed ^ (seed * 0x9E3779B97F4A7C15ull + 0x7F4A7C15ull));

    // Harmonic amplitudes from the formant envelope with a mild spectral
    // tilt; the fundamental is then raised above every overtone so the
    // long-term spectral peak sits at f0.
    const int max_harmonic = static_cast<int>(7000.0 / speaker.f0_hz);
    std::vector<double> amp(max_harmonic + 1, 0.0);
    std::vector<double> phase(max_harmonic + 1, 0.0);
    double overtone_peak = 0.0;
    for (int k = 1; k <= max_harmonic; ++k) {
        amp[k] = formant_envelope(speaker, k * speaker.f0_hz) / std::sqrt(static_cast<double>(k));
        phase[k] = rng.uniform(0.0, 2.0 * M_PI);
        if (k >= 2) overtone_peak = std::max(overtone_peak, amp[k]);
    }
    amp[1] = std::max(amp[1], 1.5 * overtone_peak);

    // Prosody keeps the signal non-stationary: slow pitch drift plus
    // vibrato, and a syllable-rate amplitude envelope on the voiced part.
    // Stationary tones would leave nothing for per-bin feature
    // normalization to see.
    const double drift_rate = rng.uniform(0.2, 0.6);
    const double drift_phase = rng.uniform(0.0, 2.0 * M_PI);
    const double vibrato_rate = rng.uniform(3.0, 6.0);
    const double vibrato_phase = rng.uniform(0.0, 2.0 * M_PI);
    const double syllable_rate = rng.uniform(2.0, 4.5);
    const double syllable_phase = rng.uniform(0.0, 2.0 * M_PI);

    std::vector<double> fundamental_phase(n, 0.0);
    std::vector<double> envelope(n, 0.0);
    double phi = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        const double mod = 1.0 + 0.025 * std::sin(2.0 * M_PI * drift_rate * t + drift_phase) +
                           0.012 * std::sin(2.0 * M_PI * vibrato_rate * t + vibrato_phase);
        fundamental_phase[i] = phi;
        phi += 2.0 * M_PI * speaker.f0_hz * mod / rate;
        const double syl = std::sin(2.0 * M_PI * syllable_rate * t + syllable_phase);
        envelope[i] = 0.35 + 0.65 * std::pow(std::max(0.0, syl), 0.7);
    }

    std::vector<double> voiced(n, 0.0);
    const double amp_floor = 0.005 * amp[1];
    for (int k = 1; k <= max_harmonic; ++k) {
        const double a = amp[k];
        if (a < amp_floor) continue;
        const double ph = phase[k];
        for (size_t i = 0; i < n; ++i)
            voiced[i] += a * std::sin(k * fundamental_phase[i] + ph);
    }
    for (size_t i = 0; i < n; ++i) voiced[i] *= envelope[i];

    // Band-passed noise floor: one-pole high-pass at ~300 Hz into a one-pole
    // low-pass at ~6 kHz.
    std::vector<double> noise(n, 0.0);
    const double hp_a = std::exp(-2.0 * M_PI * 300.0 / rate);
    const double lp_a = std::exp(-2.0 * M_PI * 6000.0 / rate);
    double hp_state = 0.0, prev_in = 0.0, lp_state = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double white = rng.normal();
        hp_state = hp_a * (hp_state + white - prev_in);
        prev_in = white;
        lp_state = lp_a * lp_state + (1.0 - lp_a) * hp_state;
        noise[i] = lp_state;
    }

    auto rms = [](const std::vector<double>& x) {
        double acc = 0.0;
        for (double v : x) acc += v * v;
        return std::sqrt(acc / std::max<size_t>(1, x.size()));
    };
    const double voiced_rms = rms(voiced);
    const double noise_rms = rms(noise);

    const double mix = speaker.noise_mix;
    std::vector<double> signal(n, 0.0);
    for (size_t i = 0; i < n; ++i)
        signal[i] = (1.0 - mix) * voiced[i] / voiced_rms +
                    (noise_rms > 0.0 ? mix * noise[i] / noise_rms : 0.0);

    double peak = 0.0;
    for (double v : signal) peak = std::max(peak, std::abs(v));
    const double target = std::pow(10.0, kPeakDbfs / 20.0);
    const double gain = peak > 0.0 ? target / peak : 0.0;

    AudioBuffer out;
    out.sample_rate = rate;
    out.channels = 1;
    out.samples.resize(n);
    for (size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(signal[i] * gain);
    return out;
}

std::pair<AudioBuffer, Timeline> make_dialogue(const std::vector<SyntheticSpeaker>& speakers,
                                               const std::vector<TurnPlan>& plan,
                                               const std::string& file_id) {
    if (plan.empty()) raise(errc::validation, "make_dialogue: need at least one turn");

    AudioBuffer audio;
    audio.sample_rate = kModelSampleRate;
    audio.channels = 1;
    Timeline timeline;
    timeline.file_id = file_id;

    size_t cursor = 0;
    for (size_t i = 0; i < plan.size(); ++i) {
        const TurnPlan& turn = plan[i];
        if (turn.speaker_index < 0 || turn.speaker_index >= static_cast<int>(speakers.size()))
            raise(errc::validation, "make_dialogue: speaker index out of range");
        const SyntheticSpeaker& s = speakers[turn.speaker_index];
        AudioBuffer rendered = render(s, turn.duration_s, /*seed=*/i + 1);
        audio.samples.insert(audio.samples.end(), rendered.samples.begin(),
                             rendered.samples.end());
        const size_t next = cursor + rendered.samples.size();
        timeline.turns.push_back({static_cast<double>(cursor) / kModelSampleRate,
                                  static_cast<double>(next) / kModelSampleRate,
                                  "spk" + std::to_string(s.id)});
        cursor = next;
    }
    return {std::move(audio), std::move(timeline)};
}

} // namespace diar
