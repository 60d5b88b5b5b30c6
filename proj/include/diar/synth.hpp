#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "diar/audio.hpp"
#include "diar/timeline.hpp"

namespace diar {

// Parametric voice: harmonic stack at f0 shaped by three formant resonances
// plus a band-passed noise floor. Stands in for real corpora so tests stay
// deterministic and license-clean.
struct SyntheticSpeaker {
    int id = 0;
    double f0_hz = 0.0;
    std::array<double, 3> formant_hz{};
    std::array<double, 3> formant_bw{};
    double noise_mix = 0.0;
    uint64_t seed = 0;
};

// Seeded speaker population with pairwise f0 separation >= 10 Hz.
// Throws when n exceeds what the separation constraint allows (> 22).
std::vector<SyntheticSpeaker> make_speakers(int n, uint64_t seed);

// 16 kHz render, peak-normalized to -3 dBFS. Bit-identical for equal seeds.
AudioBuffer render(const SyntheticSpeaker& speaker, double duration_s, uint64_t seed);

struct TurnPlan {
    int speaker_index = 0;
    double duration_s = 0.0;
};

// Concatenated turns plus the exact reference timeline (boundaries at
// sample precision). Labels are "spk<id>".
std::pair<AudioBuffer, Timeline> make_dialogue(const std::vector<SyntheticSpeaker>& speakers,
                                               const std::vector<TurnPlan>& plan,
                                               const std::string& file_id = "dialogue");

} // namespace diar
