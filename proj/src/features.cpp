#include "diar/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <mutex>

#include "diar/error.hpp"
#include "diar/fft.hpp"

namespace diar {

namespace {

constexpr double kSampleRate = 16000.0;
constexpr double kBinHz = kSampleRate / kFftSize; // 31.25
constexpr double kLogFloor = 1e-6;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// ERB-rate scale (Glasberg-Moore).
double hz_to_erb_rate(double hz) { return 21.4 * std::log10(1.0 + 0.00437 * hz); }
double erb_rate_to_hz(double erb) { return (std::pow(10.0, erb / 21.4) - 1.0) / 0.00437; }

int nearest_bin(double hz) {
    int bin = static_cast<int>(std::lround(hz / kBinHz));
    return std::clamp(bin, 0, kSpecBins - 1);
}

// Triangular rows with unit peak; centers are the interior points of an
// (n+2)-point grid in warped coordinates. to_hz maps grid values back to Hz.
template <class ToHz>
FilterBank triangle_bank(int n_filters, double grid_lo, double grid_hi, ToHz&& to_hz) {
    FilterBank bank;
    bank.weights.assign(static_cast<size_t>(n_filters) * kSpecBins, 0.0);
    bank.center_hz.resize(n_filters);

    std::vector<double> edges(n_filters + 2);
    for (int i = 0; i < n_filters + 2; ++i)
        edges[i] = to_hz(grid_lo + (grid_hi - grid_lo) * i / (n_filters + 1));

    for (int b = 0; b < n_filters; ++b) {
        const double lo = edges[b], center = edges[b + 1], hi = edges[b + 2];
        bank.center_hz[b] = center;
        double* row = bank.weights.data() + static_cast<size_t>(b) * kSpecBins;
        for (int k = 0; k < kSpecBins; ++k) {
            const double f = k * kBinHz;
            if (f > lo && f <= center)
                row[k] = (f - lo) / (center - lo);
            else if (f > center && f < hi)
                row[k] = (hi - f) / (hi - center);
        }
        // Narrow low-frequency triangles can straddle no bin center; keep
        // every filter non-empty.
        bool empty = true;
        for (int k = 0; k < kSpecBins; ++k)
            if (row[k] > 0.0) { empty = false; break; }
        if (empty) row[nearest_bin(center)] = 1.0;
    }
    return bank;
}

} // namespace

const char* feature_kind_name(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::sftf: return "sftf";
        case FeatureKind::log_mel: return "logmel";
        case FeatureKind::gammatone: return "gammatone";
        case FeatureKind::cqt: return "cqt";
    }
    return "unknown";
}

FeatureKind feature_kind_from_name(const std::string& name) {
    if (name == "sftf" || name == "stft") return FeatureKind::sftf;
    if (name == "logmel" || name == "log-mel" || name == "mel") return FeatureKind::log_mel;
    if (name == "gammatone") return FeatureKind::gammatone;
    if (name == "cqt") return FeatureKind::cqt;
    raise(errc::validation, "unknown feature kind: " + name);
}

std::vector<float> pre_emphasis(std::span<const float> x, float coeff) {
    if (coeff < 0.0f || coeff >= 1.0f)
        raise(errc::validation, "pre-emphasis coefficient must be in [0, 1)");
    std::vector<float> y(x.size());
    if (x.empty()) return y;
    y[0] = x[0];
    for (size_t n = 1; n < x.size(); ++n) y[n] = x[n] - coeff * x[n - 1];
    return y;
}

MagnitudeSpectrogram stft_magnitude(std::span<const float> samples) {
    MagnitudeSpectrogram spec;
    if (samples.size() < static_cast<size_t>(kFftSize)) return spec;

    const int frames =
        static_cast<int>((samples.size() - kFftSize) / kFrameHop) + 1;
    spec.frames = frames;
    spec.values.assign(static_cast<size_t>(kSpecBins) * frames, 0.0f);

    static const std::vector<double> window = [] {
        std::vector<double> w(kFftSize);
        for (int n = 0; n < kFftSize; ++n)
            w[n] = 0.54 - 0.46 * std::cos(2.0 * M_PI * n / (kFftSize - 1));
        return w;
    }();

    RealFft fft(kFftSize);
    std::vector<double> frame(kFftSize);
    std::vector<std::complex<double>> bins(kSpecBins);
    for (int t = 0; t < frames; ++t) {
        const float* src = samples.data() + static_cast<size_t>(t) * kFrameHop;
        for (int n = 0; n < kFftSize; ++n) frame[n] = window[n] * src[n];
        fft.transform(frame.data(), bins.data());
        for (int k = 0; k < kSpecBins; ++k)
            spec.values[static_cast<size_t>(k) * frames + t] =
                static_cast<float>(std::abs(bins[k]));
    }
    return spec;
}

FilterBank mel_bank(int n_filters, double f_lo, double f_hi) {
    return triangle_bank(n_filters, hz_to_mel(f_lo), hz_to_mel(f_hi), mel_to_hz);
}

double erb_hz(double f_hz) { return 24.7 * (4.37 * f_hz / 1000.0 + 1.0); }

FilterBank gammatone_bank(int n_filters, double f_lo, double f_hi) {
    FilterBank bank;
    bank.weights.assign(static_cast<size_t>(n_filters) * kSpecBins, 0.0);
    bank.center_hz.resize(n_filters);

    // Equal spacing on the ERB-rate scale, starting at f_lo and stopping
    // one step short of f_hi so centers stay inside the analysis band.
    const double e_lo = hz_to_erb_rate(f_lo);
    const double e_hi = hz_to_erb_rate(f_hi);
    for (int b = 0; b < n_filters; ++b) {
        const double fc = erb_rate_to_hz(e_lo + (e_hi - e_lo) * b / n_filters);
        bank.center_hz[b] = fc;
        // 4th-order gammatone magnitude response, bandwidth 1.019 * ERB(fc).
        const double bw = 1.019 * erb_hz(fc);
        double* row = bank.weights.data() + static_cast<size_t>(b) * kSpecBins;
        double peak = 0.0;
        for (int k = 0; k < kSpecBins; ++k) {
            const double d = (k * kBinHz - fc) / bw;
            row[k] = std::pow(1.0 + d * d, -2.0);
            peak = std::max(peak, row[k]);
        }
        for (int k = 0; k < kSpecBins; ++k) row[k] /= peak;
    }
    return bank;
}

FilterBank cqt_bank(int octaves, int bins_per_octave, double f_min) {
    const int n_filters = octaves * bins_per_octave;
    const double q = 1.0 / (std::exp2(1.0 / bins_per_octave) - 1.0);

    FilterBank bank;
    bank.weights.assign(static_cast<size_t>(n_filters) * kSpecBins, 0.0);
    bank.center_hz.resize(n_filters);

    for (int b = 0; b < n_filters; ++b) {
        const double fc = f_min * std::exp2(static_cast<double>(b) / bins_per_octave);
        bank.center_hz[b] = fc;

        // Frequency-domain kernel: DTFT magnitude of a Hann-windowed complex
        // exponential whose length gives bandwidth fc / Q, truncated to the
        // analysis FFT size.
        const int len = std::clamp<int>(
            static_cast<int>(std::lround(q * kSampleRate / fc)), 2, kFftSize);
        double* row = bank.weights.data() + static_cast<size_t>(b) * kSpecBins;
        double peak = 0.0;
        for (int k = 0; k < kSpecBins; ++k) {
            const double df = k * kBinHz - fc;
            std::complex<double> acc(0.0, 0.0);
            const double phase_step = -2.0 * M_PI * df / kSampleRate;
            for (int n = 0; n < len; ++n) {
                const double w = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / (len - 1));
                acc += w * std::polar(1.0, phase_step * n);
            }
            row[k] = std::abs(acc);
            peak = std::max(peak, row[k]);
        }
        for (int k = 0; k < kSpecBins; ++k) row[k] /= peak;
    }
    return bank;
}

FeatureMatrix apply_bank(const MagnitudeSpectrogram& spec, const FilterBank& bank,
                         FeatureKind kind, bool log_compress) {
    const int n_filters = static_cast<int>(bank.center_hz.size());
    if (bank.weights.size() != static_cast<size_t>(n_filters) * kSpecBins)
        raise(errc::shape_mismatch, "filter bank weight matrix has wrong shape");
    if (spec.values.size() != static_cast<size_t>(kSpecBins) * spec.frames)
        raise(errc::shape_mismatch, "spectrogram has wrong shape");

    FeatureMatrix out;
    out.kind = kind;
    out.rows = n_filters;
    out.cols = spec.frames;
    out.values.assign(static_cast<size_t>(n_filters) * spec.frames, 0.0f);

    for (int b = 0; b < n_filters; ++b) {
        const double* w = bank.weights.data() + static_cast<size_t>(b) * kSpecBins;
        for (int t = 0; t < spec.frames; ++t) {
            double acc = 0.0;
            for (int k = 0; k < kSpecBins; ++k)
                acc += w[k] * spec.values[static_cast<size_t>(k) * spec.frames + t];
            out.at(b, t) = static_cast<float>(log_compress ? std::log(kLogFloor + acc) : acc);
        }
    }
    return out;
}

namespace {

const FilterBank& linear_bank() {
    static const FilterBank bank =
        triangle_bank(kFeatureBins, 0.0, kSampleRate / 2.0, [](double f) { return f; });
    return bank;
}

} // namespace

FeatureMatrix sftf_96(const MagnitudeSpectrogram& spec) {
    return apply_bank(spec, linear_bank(), FeatureKind::sftf, true);
}

FeatureMatrix normalize(const FeatureMatrix& feat) {
    if (feat.cols < 2)
        raise(errc::validation, "normalize requires at least two frames");

    FeatureMatrix out = feat;
    out.normalized = true;
    for (int r = 0; r < feat.rows; ++r) {
        double mean = 0.0;
        for (int c = 0; c < feat.cols; ++c) mean += feat.at(r, c);
        mean /= feat.cols;
        double var = 0.0;
        for (int c = 0; c < feat.cols; ++c) {
            const double d = feat.at(r, c) - mean;
            var += d * d;
        }
        var /= feat.cols;
        if (var <= 0.0) {
            for (int c = 0; c < feat.cols; ++c) out.at(r, c) = 0.0f;
        } else {
            const double inv = 1.0 / std::sqrt(var);
            for (int c = 0; c < feat.cols; ++c)
                out.at(r, c) = static_cast<float>((feat.at(r, c) - mean) * inv);
        }
    }
    return out;
}

const FilterBank& bank_for(FeatureKind kind) {
    static std::once_flag mel_once, gt_once, cqt_once;
    static FilterBank mel, gt, cqt;
    switch (kind) {
        case FeatureKind::log_mel:
            std::call_once(mel_once, [] { mel = mel_bank(); });
            return mel;
        case FeatureKind::gammatone:
            std::call_once(gt_once, [] { gt = gammatone_bank(); });
            return gt;
        case FeatureKind::cqt:
            std::call_once(cqt_once, [] { cqt = cqt_bank(); });
            return cqt;
        case FeatureKind::sftf:
            return linear_bank();
    }
    raise(errc::validation, "unknown feature kind");
}

FeatureMatrix extract_features(std::span<const float> segment, FeatureKind kind) {
    const std::vector<float> emphasized = pre_emphasis(segment);
    const MagnitudeSpectrogram spec = stft_magnitude(emphasized);
    if (kind == FeatureKind::sftf) return sftf_96(spec);
    return apply_bank(spec, bank_for(kind), kind, true);
}

void write_feature_bin(const FeatureMatrix& feat, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(errc::io_error, "cannot write feature file: " + path);
    const uint8_t kind = static_cast<uint8_t>(feat.kind);
    const uint32_t rows = static_cast<uint32_t>(feat.rows);
    const uint32_t cols = static_cast<uint32_t>(feat.cols);
    out.write(reinterpret_cast<const char*>(&kind), 1);
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    out.write(reinterpret_cast<const char*>(feat.values.data()),
              static_cast<std::streamsize>(feat.values.size() * sizeof(float)));
    if (!out) raise(errc::io_error, "short write to feature file: " + path);
}

FeatureMatrix read_feature_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(errc::io_error, "cannot open feature file: " + path);
    uint8_t kind = 0;
    uint32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&kind), 1);
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    if (!in || kind > 3) raise(errc::unsupported_format, "bad feature file header: " + path);
    FeatureMatrix feat;
    feat.kind = static_cast<FeatureKind>(kind);
    feat.rows = static_cast<int>(rows);
    feat.cols = static_cast<int>(cols);
    feat.values.resize(static_cast<size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(feat.values.data()),
            static_cast<std::streamsize>(feat.values.size() * sizeof(float)));
    if (!in) raise(errc::truncated_data, "truncated feature file: " + path);
    return feat;
}

void write_feature_csv(const FeatureMatrix& feat, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(errc::io_error, "cannot write feature file: " + path);
    out << "# kind=" << feature_kind_name(feat.kind) << " rows=" << feat.rows
        << " cols=" << feat.cols << "\n";
    for (int r = 0; r < feat.rows; ++r) {
        for (int c = 0; c < feat.cols; ++c) {
            if (c) out << ',';
            out << feat.at(r, c);
        }
        out << "\n";
    }
}

} // namespace diar
