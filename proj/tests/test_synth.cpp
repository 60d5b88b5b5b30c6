#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diar/error.hpp"
#include "diar/features.hpp"
#include "diar/metrics.hpp"
#include "diar/synth.hpp"

using namespace diar;

TEST_CASE("make_speakers") {
    SUBCASE("same seed, identical speakers") {
        auto a = make_speakers(8, 7);
        auto b = make_speakers(8, 7);
        REQUIRE(a.size() == 8);
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].f0_hz == b[i].f0_hz);
            CHECK(a[i].formant_hz == b[i].formant_hz);
            CHECK(a[i].noise_mix == b[i].noise_mix);
            CHECK(a[i].seed == b[i].seed);
        }
    }
    SUBCASE("pairwise f0 separation") {
        auto s = make_speakers(2, 3);
        CHECK(std::abs(s[0].f0_hz - s[1].f0_hz) >= 10.0);
        auto many = make_speakers(22, 5);
        for (size_t i = 0; i < many.size(); ++i)
            for (size_t j = i + 1; j < many.size(); ++j)
                CHECK(std::abs(many[i].f0_hz - many[j].f0_hz) >= 10.0);
    }
    SUBCASE("parameter ranges") {
        for (const auto& s : make_speakers(8, 7)) {
            CHECK(s.f0_hz >= 80.0);
            CHECK(s.f0_hz <= 300.0);
            CHECK(s.formant_hz[0] < s.formant_hz[1]);
            CHECK(s.formant_hz[1] < s.formant_hz[2]);
            CHECK(s.formant_hz[2] < 8000.0);
            CHECK(s.noise_mix >= 0.0);
            CHECK(s.noise_mix <= 1.0);
        }
    }
    SUBCASE("separation constraint cap") {
        CHECK_THROWS_AS(make_speakers(23, 1), Error);
        CHECK_THROWS_AS(make_speakers(0, 1), Error);
    }
}

TEST_CASE("render") {
    auto speakers = make_speakers(3, 11);

    SUBCASE("deterministic, bit-identical") {
        AudioBuffer a = render(speakers[0], 4.0, 5);
        AudioBuffer b = render(speakers[0], 4.0, 5);
        CHECK(a.samples == b.samples);
        AudioBuffer c = render(speakers[0], 4.0, 6);
        CHECK(a.samples != c.samples);
    }
    SUBCASE("peak at -3 dBFS, 16 kHz, sane amplitudes") {
        AudioBuffer a = render(speakers[1], 3.5, 1);
        CHECK(a.sample_rate == 16000);
        float peak = 0.0f;
        for (float v : a.samples) peak = std::max(peak, std::abs(v));
        CHECK(peak == doctest::Approx(std::pow(10.0, -3.0 / 20.0)).epsilon(1e-3));
    }
    SUBCASE("long-term spectral peak at f0 (within 2 bins)") {
        for (const auto& s : speakers) {
            AudioBuffer a = render(s, 4.0, 2);
            MagnitudeSpectrogram spec = stft_magnitude(a.samples);
            std::vector<double> avg(kSpecBins, 0.0);
            for (int k = 0; k < kSpecBins; ++k)
                for (int t = 0; t < spec.frames; ++t) avg[k] += spec.at(k, t);
            int peak = 0;
            for (int k = 1; k < kSpecBins; ++k)
                if (avg[k] > avg[peak]) peak = k;
            const double expected = s.f0_hz / (16000.0 / 512);
            CHECK(std::abs(peak - expected) <= 2.0);
        }
    }
    SUBCASE("distinct speakers, distinct long-term spectra") {
        AudioBuffer a = render(speakers[0], 3.0, 1);
        AudioBuffer b = render(speakers[1], 3.0, 1);
        MagnitudeSpectrogram sa = stft_magnitude(a.samples);
        MagnitudeSpectrogram sb = stft_magnitude(b.samples);
        double l2 = 0.0;
        for (int k = 0; k < kSpecBins; ++k) {
            double ma = 0.0, mb = 0.0;
            for (int t = 0; t < sa.frames; ++t) ma += sa.at(k, t);
            for (int t = 0; t < sb.frames; ++t) mb += sb.at(k, t);
            l2 += (ma / sa.frames - mb / sb.frames) * (ma / sa.frames - mb / sb.frames);
        }
        CHECK(l2 > 0.0);
    }
}

TEST_CASE("make_dialogue") {
    auto speakers = make_speakers(2, 21);
    auto [audio, timeline] = make_dialogue(speakers, {{0, 10.0}, {1, 10.0}});

    CHECK(audio.duration() == doctest::Approx(20.0));
    REQUIRE(timeline.turns.size() == 2);
    CHECK(timeline.turns[0].speaker == "spk0");
    CHECK(timeline.turns[1].speaker == "spk1");

    SUBCASE("boundaries match cumulative durations exactly") {
        CHECK(timeline.turns[0].start == 0.0);
        CHECK(timeline.turns[0].end == doctest::Approx(10.0).epsilon(1e-12));
        CHECK(timeline.turns[1].start == timeline.turns[0].end);
        CHECK(timeline.turns[1].end ==
              doctest::Approx(audio.samples.size() / 16000.0).epsilon(1e-12));
    }
    SUBCASE("reference scores zero against itself") {
        CHECK(der(timeline, timeline, 0.25).der == 0.0);
    }
    SUBCASE("bad plan rejected") {
        CHECK_THROWS_AS(make_dialogue(speakers, {}), Error);
        CHECK_THROWS_AS(make_dialogue(speakers, {{5, 1.0}}), Error);
    }
}
