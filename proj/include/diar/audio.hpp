#pragma once

#include <cstddef>
#include <vector>

namespace diar {

constexpr int kModelSampleRate = 16000;
constexpr double kSegmentSeconds = 3.072;
constexpr double kSegmentHopSeconds = 0.250;
// 3.072 s at 16 kHz.
constexpr int kSegmentSamples = 49152;

// Raw audio. Samples are interleaved when channels > 1 (loader output);
// every analysis operation requires mono.
struct AudioBuffer {
    std::vector<float> samples;
    int sample_rate = 0;
    int channels = 1;

    size_t frame_count() const { return channels > 0 ? samples.size() / channels : 0; }
    double duration() const {
        return sample_rate > 0 ? static_cast<double>(frame_count()) / sample_rate : 0.0;
    }
};

// One fixed-length analysis excerpt.
struct SegmentWindow {
    double start_time = 0.0;
    std::vector<float> samples;
};

// Average across channels; mono input is returned unchanged.
AudioBuffer to_mono(const AudioBuffer& in);

// Windowed-sinc polyphase resampler, cutoff at 0.45x the narrower Nyquist.
// Equal rates return a copy.
AudioBuffer resample(const AudioBuffer& in, int target_rate = kModelSampleRate);

// Fixed 3.072 s windows every 250 ms. Requires mono 16 kHz input; streams
// shorter than one window yield no segments.
std::vector<SegmentWindow> segment_stream(const AudioBuffer& in,
                                          double window_seconds = kSegmentSeconds,
                                          double hop_seconds = kSegmentHopSeconds);

} // namespace diar
