#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "diar/error.hpp"
#include "diar/features.hpp"
#include "diar/rng.hpp"
#include "test_util.hpp"

using namespace diar;
using testutil::sine;

namespace {

std::vector<float> noise(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> x(n);
    for (auto& v : x) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return x;
}

MagnitudeSpectrogram random_spec(int frames, uint64_t seed) {
    Rng rng(seed);
    MagnitudeSpectrogram s;
    s.frames = frames;
    s.values.resize(static_cast<size_t>(kSpecBins) * frames);
    for (auto& v : s.values) v = static_cast<float>(rng.uniform(0.0, 2.0));
    return s;
}

} // namespace

TEST_CASE("pre_emphasis closed forms") {
    SUBCASE("DC input") {
        std::vector<float> x(8, 1.0f);
        auto y = pre_emphasis(x);
        CHECK(y[0] == 1.0f);
        for (size_t i = 1; i < y.size(); ++i)
            CHECK(y[i] == doctest::Approx(0.03).epsilon(1e-6));
    }
    SUBCASE("impulse response") {
        std::vector<float> x = {1.0f, 0.0f, 0.0f};
        auto y = pre_emphasis(x);
        CHECK(y[0] == 1.0f);
        CHECK(y[1] == doctest::Approx(-0.97));
        CHECK(y[2] == 0.0f);
    }
    SUBCASE("white noise gains high-frequency share") {
        auto x = noise(16000, 42);
        auto y = pre_emphasis(x);
        auto hf_fraction = [](const std::vector<float>& s) {
            MagnitudeSpectrogram spec = stft_magnitude(s);
            double hf = 0.0, total = 0.0;
            for (int k = 0; k < kSpecBins; ++k)
                for (int t = 0; t < spec.frames; ++t) {
                    const double e = static_cast<double>(spec.at(k, t)) * spec.at(k, t);
                    total += e;
                    if (k >= kSpecBins / 2) hf += e;
                }
            return hf / total;
        };
        CHECK(hf_fraction(y) > hf_fraction(x));
    }
    SUBCASE("bad coefficient") {
        std::vector<float> x = {1.0f};
        CHECK_THROWS_AS(pre_emphasis(x, 1.0f), Error);
    }
}

TEST_CASE("stft_magnitude") {
    SUBCASE("all zeros") {
        std::vector<float> x(kSegmentSamples, 0.0f);
        MagnitudeSpectrogram spec = stft_magnitude(x);
        CHECK(spec.frames == kSegmentFrames);
        for (float v : spec.values) CHECK(v == 0.0f);
    }
    SUBCASE("1000 Hz sine peaks at bin 32 in every frame") {
        auto tone = sine(1000.0, 3.072, 16000);
        MagnitudeSpectrogram spec = stft_magnitude(tone.samples);
        REQUIRE(spec.frames == kSegmentFrames);
        for (int t = 0; t < spec.frames; ++t) {
            int peak = 0;
            for (int k = 1; k < kSpecBins; ++k)
                if (spec.at(k, t) > spec.at(peak, t)) peak = k;
            CHECK(peak == 32);
        }
    }
    SUBCASE("frame count formula") {
        std::vector<float> x(kSegmentSamples, 0.1f);
        CHECK(stft_magnitude(x).frames == 191);
        std::vector<float> y(kFftSize, 0.1f);
        CHECK(stft_magnitude(y).frames == 1);
    }
    SUBCASE("energy concentration within +/-2 bins, worst-case half-bin offset") {
        // bin 32.5 = 1015.625 Hz
        auto tone = sine(1015.625, 3.072, 16000);
        MagnitudeSpectrogram spec = stft_magnitude(tone.samples);
        for (int t = 0; t < spec.frames; t += 10) {
            double total = 0.0, near = 0.0;
            for (int k = 0; k < kSpecBins; ++k) {
                const double e = static_cast<double>(spec.at(k, t)) * spec.at(k, t);
                total += e;
                if (std::abs(k - 32.5) <= 2.0) near += e;
            }
            CHECK(near / total >= 0.99);
        }
    }
}

TEST_CASE("mel bank construction") {
    FilterBank bank = mel_bank();
    REQUIRE(bank.center_hz.size() == kFeatureBins);

    SUBCASE("centers strictly ascending inside (0, 8000)") {
        for (size_t i = 1; i < bank.center_hz.size(); ++i)
            CHECK(bank.center_hz[i] > bank.center_hz[i - 1]);
        CHECK(bank.center_hz.front() > 0.0);
        CHECK(bank.center_hz.back() < 8000.0);
    }
    SUBCASE("adjacent triangles cover the band") {
        const double bin_hz = 16000.0 / 512;
        for (int k = 0; k < kSpecBins; ++k) {
            const double f = k * bin_hz;
            if (f <= bank.center_hz.front() || f >= bank.center_hz.back()) continue;
            double sum = 0.0;
            for (int b = 0; b < kFeatureBins; ++b) sum += bank.weight(b, k);
            CHECK(sum > 0.0);
        }
    }
    SUBCASE("center k recomputed from the Mel formula") {
        auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
        auto mel_inv = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
        const double lo = mel(0.0), hi = mel(8000.0);
        for (int k = 0; k < kFeatureBins; ++k) {
            const double expected = mel_inv(lo + (hi - lo) * (k + 1) / (kFeatureBins + 1));
            CHECK(bank.center_hz[k] == doctest::Approx(expected).epsilon(1e-9));
        }
    }
    SUBCASE("every row has a positive weight") {
        for (int b = 0; b < kFeatureBins; ++b) {
            double mx = 0.0;
            for (int k = 0; k < kSpecBins; ++k) mx = std::max(mx, bank.weight(b, k));
            CHECK(mx > 0.0);
        }
    }
}

TEST_CASE("gammatone bank") {
    FilterBank bank = gammatone_bank();
    REQUIRE(bank.center_hz.size() == kFeatureBins);
    const double bin_hz = 16000.0 / 512;

    SUBCASE("ERB formula value at 1 kHz") {
        CHECK(erb_hz(1000.0) == doctest::Approx(132.639).epsilon(1e-4));
    }
    SUBCASE("peak 1 at the bin nearest each center") {
        for (int b = 0; b < kFeatureBins; ++b) {
            int arg = 0;
            double mx = 0.0;
            for (int k = 0; k < kSpecBins; ++k)
                if (bank.weight(b, k) > mx) { mx = bank.weight(b, k); arg = k; }
            CHECK(mx == doctest::Approx(1.0));
            CHECK(arg == static_cast<int>(std::lround(bank.center_hz[b] / bin_hz)));
        }
    }
    SUBCASE("bandwidth grows with center frequency") {
        auto width_above = [&](int b, double level) {
            int count = 0;
            for (int k = 0; k < kSpecBins; ++k)
                if (bank.weight(b, k) > level) ++count;
            return count;
        };
        CHECK(width_above(kFeatureBins - 1, 1.0 / std::sqrt(2.0)) >
              width_above(0, 1.0 / std::sqrt(2.0)));
    }
    SUBCASE("channel nearest 1 kHz recomputed from the Glasberg-Moore formula") {
        int b = 0;
        for (int i = 1; i < kFeatureBins; ++i)
            if (std::abs(bank.center_hz[i] - 1000.0) < std::abs(bank.center_hz[b] - 1000.0))
                b = i;
        const double fc = bank.center_hz[b];
        const double bw = 1.019 * (24.7 * (4.37 * fc / 1000.0 + 1.0));
        std::vector<double> expected(kSpecBins);
        double peak = 0.0;
        for (int k = 0; k < kSpecBins; ++k) {
            const double d = (k * bin_hz - fc) / bw;
            expected[k] = std::pow(1.0 + d * d, -2.0);
            peak = std::max(peak, expected[k]);
        }
        for (int k = 0; k < kSpecBins; ++k)
            CHECK(bank.weight(b, k) == doctest::Approx(expected[k] / peak).epsilon(1e-12));
    }
}

TEST_CASE("cqt bank geometry") {
    FilterBank bank = cqt_bank();
    REQUIRE(bank.center_hz.size() == 96);

    CHECK(bank.center_hz[0] == doctest::Approx(80.0));
    CHECK(bank.center_hz[24] == doctest::Approx(160.0).epsilon(1e-12));
    CHECK(bank.center_hz[95] ==
          doctest::Approx(80.0 * std::pow(2.0, 95.0 / 24.0)).epsilon(1e-12));
    CHECK(bank.center_hz[95] == doctest::Approx(1243.57).epsilon(1e-4));

    SUBCASE("constant ratio 2^(1/24) to 1e-12") {
        const double ratio = std::pow(2.0, 1.0 / 24.0);
        for (int k = 1; k < 96; ++k)
            CHECK(std::abs(bank.center_hz[k] / bank.center_hz[k - 1] - ratio) < 1e-12);
    }
    SUBCASE("rows peak-normalized") {
        for (int b = 0; b < 96; ++b) {
            double mx = 0.0;
            for (int k = 0; k < kSpecBins; ++k) mx = std::max(mx, bank.weight(b, k));
            CHECK(mx == doctest::Approx(1.0));
        }
    }
}

TEST_CASE("apply_bank") {
    SUBCASE("zero spectrogram, log floor") {
        MagnitudeSpectrogram spec;
        spec.frames = 5;
        spec.values.assign(static_cast<size_t>(kSpecBins) * 5, 0.0f);
        FeatureMatrix out = apply_bank(spec, bank_for(FeatureKind::log_mel),
                                       FeatureKind::log_mel, true);
        CHECK(out.rows == 96);
        CHECK(out.cols == 5);
        for (float v : out.values)
            CHECK(v == doctest::Approx(std::log(1e-6)).epsilon(1e-6));
        CHECK(std::log(1e-6) == doctest::Approx(-13.8155).epsilon(1e-4));
    }
    SUBCASE("matrix product recomputation") {
        MagnitudeSpectrogram spec = random_spec(7, 10);
        const FilterBank& bank = bank_for(FeatureKind::gammatone);
        FeatureMatrix out = apply_bank(spec, bank, FeatureKind::gammatone, false);
        Rng rng(4);
        for (int trial = 0; trial < 50; ++trial) {
            const int b = static_cast<int>(rng.below(96));
            const int t = static_cast<int>(rng.below(7));
            double acc = 0.0;
            for (int k = 0; k < kSpecBins; ++k) acc += bank.weight(b, k) * spec.at(k, t);
            CHECK(out.at(b, t) == doctest::Approx(acc).epsilon(1e-6));
        }
    }
    SUBCASE("linearity before log compression") {
        MagnitudeSpectrogram a = random_spec(6, 1), b = random_spec(6, 2);
        const double alpha = 0.7, beta = 1.9;
        MagnitudeSpectrogram mix = a;
        for (size_t i = 0; i < mix.values.size(); ++i)
            mix.values[i] = static_cast<float>(alpha * a.values[i] + beta * b.values[i]);
        const FilterBank& bank = bank_for(FeatureKind::cqt);
        FeatureMatrix fa = apply_bank(a, bank, FeatureKind::cqt, false);
        FeatureMatrix fb = apply_bank(b, bank, FeatureKind::cqt, false);
        FeatureMatrix fm = apply_bank(mix, bank, FeatureKind::cqt, false);
        for (size_t i = 0; i < fm.values.size(); ++i) {
            const double expected = alpha * fa.values[i] + beta * fb.values[i];
            CHECK(fm.values[i] == doctest::Approx(expected).epsilon(1e-6));
        }
    }
    SUBCASE("shape mismatch") {
        MagnitudeSpectrogram bad = random_spec(3, 1);
        bad.values.pop_back();
        CHECK_THROWS_AS(apply_bank(bad, bank_for(FeatureKind::cqt), FeatureKind::cqt, true),
                        Error);
    }
}

TEST_CASE("sftf_96 linear pooling") {
    SUBCASE("zero input -> log floor") {
        MagnitudeSpectrogram spec;
        spec.frames = 3;
        spec.values.assign(static_cast<size_t>(kSpecBins) * 3, 0.0f);
        FeatureMatrix out = sftf_96(spec);
        for (float v : out.values)
            CHECK(v == doctest::Approx(std::log(1e-6)).epsilon(1e-6));
    }
    SUBCASE("single-bin impulse lands in 1-2 bands") {
        MagnitudeSpectrogram spec;
        spec.frames = 1;
        spec.values.assign(kSpecBins, 0.0f);
        spec.values[100] = 1.0f;
        FeatureMatrix out = sftf_96(spec);
        int nonzero = 0;
        for (int b = 0; b < 96; ++b)
            if (out.at(b, 0) > std::log(1e-6) + 1e-6) ++nonzero;
        CHECK(nonzero >= 1);
        CHECK(nonzero <= 2);
    }
    SUBCASE("broadband energy conserved within 5% (pre-log)") {
        MagnitudeSpectrogram spec = random_spec(4, 77);
        FeatureMatrix out = sftf_96(spec);
        for (int t = 0; t < 4; ++t) {
            double band_sum = 0.0;
            for (int b = 0; b < 96; ++b)
                band_sum += std::exp(static_cast<double>(out.at(b, t))) - 1e-6;
            double bin_sum = 0.0;
            for (int k = 0; k < kSpecBins; ++k) bin_sum += spec.at(k, t);
            CHECK(band_sum == doctest::Approx(bin_sum).epsilon(0.05));
        }
    }
}

TEST_CASE("normalize") {
    SUBCASE("constant matrix -> zeros") {
        FeatureMatrix f;
        f.rows = 3;
        f.cols = 5;
        f.values.assign(15, 2.5f);
        FeatureMatrix out = normalize(f);
        CHECK(out.normalized);
        for (float v : out.values) CHECK(v == 0.0f);
    }
    SUBCASE("row (0,2) -> (-1,1)") {
        FeatureMatrix f;
        f.rows = 1;
        f.cols = 2;
        f.values = {0.0f, 2.0f};
        FeatureMatrix out = normalize(f);
        CHECK(out.values[0] == doctest::Approx(-1.0));
        CHECK(out.values[1] == doctest::Approx(1.0));
    }
    SUBCASE("random matrix statistics") {
        Rng rng(9);
        FeatureMatrix f;
        f.rows = 96;
        f.cols = 191;
        f.values.resize(96 * 191);
        for (auto& v : f.values) v = static_cast<float>(rng.uniform(-3.0, 7.0));
        FeatureMatrix out = normalize(f);
        for (int r = 0; r < 96; ++r) {
            double mean = 0.0;
            for (int c = 0; c < 191; ++c) mean += out.at(r, c);
            mean /= 191;
            double var = 0.0;
            for (int c = 0; c < 191; ++c) {
                const double d = out.at(r, c) - mean;
                var += d * d;
            }
            var /= 191;
            CHECK(std::abs(mean) < 1e-6);
            CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);
        }
    }
    SUBCASE("too few frames") {
        FeatureMatrix f;
        f.rows = 2;
        f.cols = 1;
        f.values = {1.0f, 2.0f};
        CHECK_THROWS_AS(normalize(f), Error);
    }
}

TEST_CASE("all four kinds produce 96 x 191 from one segment") {
    auto tone = sine(420.0, 3.072, 16000);
    REQUIRE(tone.samples.size() == kSegmentSamples);
    for (FeatureKind kind : {FeatureKind::sftf, FeatureKind::log_mel, FeatureKind::gammatone,
                             FeatureKind::cqt}) {
        FeatureMatrix f = extract_features(tone.samples, kind);
        CHECK(f.rows == 96);
        CHECK(f.cols == 191);
        CHECK(f.kind == kind);
        for (float v : f.values) CHECK(std::isfinite(v));
    }
}

TEST_CASE("feature binary dump round trip") {
    testutil::TempDir tmp("feat");
    auto tone = sine(420.0, 3.072, 16000);
    FeatureMatrix f = extract_features(tone.samples, FeatureKind::cqt);
    write_feature_bin(f, tmp.path("f.bin"));
    FeatureMatrix g = read_feature_bin(tmp.path("f.bin"));
    CHECK(g.kind == f.kind);
    CHECK(g.rows == f.rows);
    CHECK(g.cols == f.cols);
    CHECK(g.values == f.values);
}
