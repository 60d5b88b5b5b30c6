#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace diar {

constexpr int kFeatureBins = 96;
constexpr int kFftSize = 512;
constexpr int kFrameHop = 256;
constexpr int kSpecBins = kFftSize / 2 + 1; // 257
// Frames produced by one 3.072 s segment: (49152 - 512) / 256 + 1.
constexpr int kSegmentFrames = 191;

enum class FeatureKind : uint8_t { sftf = 0, log_mel = 1, gammatone = 2, cqt = 3 };

const char* feature_kind_name(FeatureKind kind);
FeatureKind feature_kind_from_name(const std::string& name);

// 257 x T magnitude spectrogram, bins-major row layout.
struct MagnitudeSpectrogram {
    int frames = 0;
    std::vector<float> values; // [kSpecBins][frames]

    float at(int bin, int frame) const {
        return values[static_cast<size_t>(bin) * frames + frame];
    }
};

// 96 x T perceptually weighted spectrogram.
struct FeatureMatrix {
    FeatureKind kind = FeatureKind::sftf;
    int rows = 0;
    int cols = 0;
    bool normalized = false;
    std::vector<float> values; // row-major [rows][cols]

    float at(int r, int c) const {
        return values[static_cast<size_t>(r) * cols + c];
    }
    float& at(int r, int c) {
        return values[static_cast<size_t>(r) * cols + c];
    }
};

// 96 filters sampled at the 257 FFT bin frequencies.
struct FilterBank {
    std::vector<double> weights; // [kFeatureBins][kSpecBins]
    std::vector<double> center_hz;

    double weight(int band, int bin) const {
        return weights[static_cast<size_t>(band) * kSpecBins + bin];
    }
};

// y[0] = x[0]; y[n] = x[n] - coeff * x[n-1].
std::vector<float> pre_emphasis(std::span<const float> x, float coeff = 0.97f);

// Hamming-windowed 512-point FFT magnitudes, hop 256. Input is expected to
// be mono 16 kHz with pre-emphasis already applied.
MagnitudeSpectrogram stft_magnitude(std::span<const float> samples);

FilterBank mel_bank(int n_filters = kFeatureBins, double f_lo = 0.0, double f_hi = 8000.0);
FilterBank gammatone_bank(int n_filters = kFeatureBins, double f_lo = 80.0,
                          double f_hi = 8000.0);
FilterBank cqt_bank(int octaves = 4, int bins_per_octave = 24, double f_min = 80.0);

// Glasberg-Moore equivalent rectangular bandwidth at centre frequency f.
double erb_hz(double f_hz);

// values = bank x spec; optionally ln(1e-6 + x) elementwise.
FeatureMatrix apply_bank(const MagnitudeSpectrogram& spec, const FilterBank& bank,
                         FeatureKind kind, bool log_compress);

// 257 linear bins pooled into 96 triangular linear-frequency bands,
// log-compressed, so the SFTF baseline shares the network input shape.
FeatureMatrix sftf_96(const MagnitudeSpectrogram& spec);

// Per-bin zero mean / unit variance across frames; zero-variance bins -> 0.
FeatureMatrix normalize(const FeatureMatrix& feat);

// Shared immutable bank per kind (not meaningful for FeatureKind::sftf).
const FilterBank& bank_for(FeatureKind kind);

// pre-emphasis -> STFT -> bank (or linear pooling) -> log compression.
FeatureMatrix extract_features(std::span<const float> segment, FeatureKind kind);

// Little-endian dump: {kind u8, rows u32, cols u32} then row-major f32.
void write_feature_bin(const FeatureMatrix& feat, const std::string& path);
FeatureMatrix read_feature_bin(const std::string& path);
void write_feature_csv(const FeatureMatrix& feat, const std::string& path);

} // namespace diar
