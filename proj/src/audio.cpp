#include "diar/audio.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "diar/error.hpp"

namespace diar {

AudioBuffer to_mono(const AudioBuffer& in) {
    if (in.channels <= 0)
        raise(errc::validation, "to_mono: channel count must be >= 1");
    if (in.channels == 1) return in;

    AudioBuffer out;
    out.sample_rate = in.sample_rate;
    out.channels = 1;
    const size_t frames = in.frame_count();
    out.samples.resize(frames);
    const float inv = 1.0f / static_cast<float>(in.channels);
    for (size_t f = 0; f < frames; ++f) {
        float acc = 0.0f;
        const float* frame = in.samples.data() + f * in.channels;
        for (int c = 0; c < in.channels; ++c) acc += frame[c];
        out.samples[f] = acc * inv;
    }
    return out;
}

namespace {

// Blackman-Harris 4-term, tau in [-1, 1].
double bh_window(double tau) {
    return 0.35875 + 0.48829 * std::cos(M_PI * tau) +
           0.14128 * std::cos(2.0 * M_PI * tau) +
           0.01168 * std::cos(3.0 * M_PI * tau);
}

double sinc(double x) {
    if (std::abs(x) < 1e-12) return 1.0;
    double px = M_PI * x;
    return std::sin(px) / px;
}

// Lowpass interpolation kernel sampled on a dense phase grid; evaluation
// between grid points is linear. half_width is in source samples.
struct SincTable {
    int taps_per_side;
    int phases;
    std::vector<double> values; // [phase][tap], tap index 0..2*taps_per_side

    SincTable(double cutoff_cycles_per_sample, int zero_crossings, int n_phases)
        : phases(n_phases) {
        double half_width = zero_crossings / (2.0 * cutoff_cycles_per_sample);
        taps_per_side = static_cast<int>(std::ceil(half_width));
        int width = 2 * taps_per_side + 1;
        values.resize(static_cast<size_t>(phases + 1) * width);
        for (int p = 0; p <= phases; ++p) {
            double frac = static_cast<double>(p) / phases;
            for (int k = -taps_per_side; k <= taps_per_side; ++k) {
                double t = k - frac;
                double tau = t / half_width;
                double v = 0.0;
                if (tau > -1.0 && tau < 1.0)
                    v = 2.0 * cutoff_cycles_per_sample *
                        sinc(2.0 * cutoff_cycles_per_sample * t) * bh_window(tau);
                values[static_cast<size_t>(p) * width + (k + taps_per_side)] = v;
            }
        }
    }

    int width() const { return 2 * taps_per_side + 1; }
};

} // namespace

AudioBuffer resample(const AudioBuffer& in, int target_rate) {
    if (target_rate <= 0)
        raise(errc::validation, "resample: target rate must be positive");
    if (in.channels != 1)
        raise(errc::validation, "resample: mono input required (call to_mono first)");
    if (in.sample_rate == target_rate) return in;

    const double src = in.sample_rate;
    const double dst = target_rate;
    const size_t in_len = in.samples.size();
    const size_t out_len =
        static_cast<size_t>(std::llround(static_cast<double>(in_len) * dst / src));

    AudioBuffer out;
    out.sample_rate = target_rate;
    out.channels = 1;
    out.samples.resize(out_len);
    if (in_len == 0) return out;

    // Cutoff at 0.45x the narrower Nyquist, in cycles per source sample.
    const double cutoff = 0.45 * 0.5 * std::min(src, dst) / src;
    static constexpr int kZeroCrossings = 16;
    static constexpr int kPhases = 256;
    SincTable table(cutoff, kZeroCrossings, kPhases);
    const int side = table.taps_per_side;
    const int width = table.width();

    const double step = src / dst;
    for (size_t n = 0; n < out_len; ++n) {
        const double pos = static_cast<double>(n) * step;
        const long base = static_cast<long>(std::floor(pos));
        const double frac = pos - static_cast<double>(base);

        const double fp = frac * kPhases;
        const int p0 = static_cast<int>(fp);
        const double blend = fp - p0;
        const double* row0 = table.values.data() + static_cast<size_t>(p0) * width;
        const double* row1 = table.values.data() + static_cast<size_t>(p0 + 1) * width;

        double acc = 0.0;
        double gain = 0.0;
        for (int k = -side; k <= side; ++k) {
            const double h = row0[k + side] + blend * (row1[k + side] - row0[k + side]);
            gain += h;
            const long idx = base + k;
            if (idx < 0 || idx >= static_cast<long>(in_len)) continue;
            acc += h * in.samples[static_cast<size_t>(idx)];
        }
        out.samples[n] = gain != 0.0 ? static_cast<float>(acc / gain) : 0.0f;
    }
    return out;
}

std::vector<SegmentWindow> segment_stream(const AudioBuffer& in, double window_seconds,
                                          double hop_seconds) {
    if (in.channels != 1)
        raise(errc::validation, "segment_stream: mono input required");
    if (in.sample_rate != kModelSampleRate)
        raise(errc::validation, "segment_stream: input must be at 16 kHz (resample first)");

    const size_t window = static_cast<size_t>(std::llround(window_seconds * in.sample_rate));
    const size_t hop = static_cast<size_t>(std::llround(hop_seconds * in.sample_rate));
    const size_t len = in.samples.size();

    std::vector<SegmentWindow> out;
    if (window == 0 || hop == 0 || len < window) return out;

    const size_t count = (len - window) / hop + 1;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        SegmentWindow w;
        w.start_time = static_cast<double>(i * hop) / in.sample_rate;
        w.samples.assign(in.samples.begin() + static_cast<long>(i * hop),
                         in.samples.begin() + static_cast<long>(i * hop + window));
        out.push_back(std::move(w));
    }
    return out;
}

} // namespace diar
