#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diar/error.hpp"
#include "diar/rng.hpp"
#include "diar/tracker.hpp"

using namespace diar;

TEST_CASE("aggregate") {
    SUBCASE("single vector") {
        Embedding e = aggregate({{0.2f, 0.8f}});
        CHECK(e.values[0] == doctest::Approx(0.25));
        CHECK(e.values[1] == doctest::Approx(1.0));
        CHECK(e.normalized);
        CHECK(!e.degenerate);
    }
    SUBCASE("two vectors, class-wise sum then max-normalize") {
        Embedding e = aggregate({{0.2f, 0.8f}, {0.6f, 0.4f}});
        CHECK(e.values[0] == doctest::Approx(0.666667).epsilon(1e-6));
        CHECK(e.values[1] == doctest::Approx(1.0));
    }
    SUBCASE("all-zero input is degenerate") {
        Embedding e = aggregate({{0.0f, 0.0f}, {0.0f, 0.0f}});
        CHECK(e.degenerate);
        for (float v : e.values) CHECK(v == 0.0f);
    }
    SUBCASE("empty input is an error") {
        CHECK_THROWS_AS(aggregate({}), Error);
    }
    SUBCASE("negative activations rejected") {
        CHECK_THROWS_AS(aggregate({{0.5f, -0.1f}}), Error);
    }
    SUBCASE("max is 1 and scale invariance") {
        Rng rng(8);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<std::vector<float>> vecs;
            for (int i = 0; i < 5; ++i) {
                std::vector<float> v(6);
                for (auto& x : v) x = static_cast<float>(rng.uniform(0.01, 2.0));
                vecs.push_back(v);
            }
            Embedding a = aggregate(vecs);
            float mx = 0.0f;
            for (float v : a.values) {
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
                mx = std::max(mx, v);
            }
            CHECK(mx == doctest::Approx(1.0));

            const float scale = static_cast<float>(rng.uniform(0.1, 10.0));
            auto scaled = vecs;
            for (auto& v : scaled)
                for (auto& x : v) x *= scale;
            Embedding b = aggregate(scaled);
            for (size_t i = 0; i < a.values.size(); ++i)
                CHECK(b.values[i] == doctest::Approx(a.values[i]).epsilon(1e-5));
        }
    }
}

TEST_CASE("cosine_similarity") {
    auto emb = [](std::vector<float> v) {
        Embedding e;
        e.values = std::move(v);
        e.normalized = true;
        return e;
    };
    CHECK(cosine_similarity(emb({0.3f, 0.7f, 0.1f}), emb({0.3f, 0.7f, 0.1f})) ==
          doctest::Approx(1.0));
    CHECK(cosine_similarity(emb({1.0f, 0.0f}), emb({0.0f, 1.0f})) == doctest::Approx(0.0));
    CHECK(cosine_similarity(emb({1.0f, 0.0f}), emb({1.0f, 1.0f})) ==
          doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
    CHECK(cosine_similarity(emb({1.0f, 0.0f}), emb({1.0f, 1.0f})) ==
          doctest::Approx(0.707107).epsilon(1e-6));

    SUBCASE("symmetry and scale invariance") {
        Rng rng(5);
        for (int trial = 0; trial < 30; ++trial) {
            std::vector<float> a(4), b(4);
            for (auto& v : a) v = static_cast<float>(rng.uniform(0.01, 1.0));
            for (auto& v : b) v = static_cast<float>(rng.uniform(0.01, 1.0));
            const double sab = cosine_similarity(emb(a), emb(b));
            const double sba = cosine_similarity(emb(b), emb(a));
            CHECK(sab == doctest::Approx(sba).epsilon(1e-12));
            auto a2 = a;
            auto b2 = b;
            const float alpha = static_cast<float>(rng.uniform(0.1, 5.0));
            const float beta = static_cast<float>(rng.uniform(0.1, 5.0));
            for (auto& v : a2) v *= alpha;
            for (auto& v : b2) v *= beta;
            CHECK(cosine_similarity(emb(a2), emb(b2)) == doctest::Approx(sab).epsilon(1e-5));
        }
    }
    SUBCASE("zero-norm input") {
        CHECK_THROWS_AS(cosine_similarity(emb({0.0f, 0.0f}), emb({1.0f, 0.0f})), Error);
    }
}

namespace {

Embedding normalized(std::vector<float> v) {
    Embedding e;
    e.values = std::move(v);
    e.normalized = true;
    return e;
}

} // namespace

TEST_CASE("registry assignment, distance mode") {
    SpeakerRegistry reg(0.4, ThresholdMode::distance);

    SUBCASE("empty registry enrolls S0") {
        const int id = reg.assign(normalized({1.0f, 0.0f, 0.0f}));
        CHECK(id == 0);
        CHECK(reg.speaker_id(0) == "S0");
        CHECK(reg.speaker_count() == 1);
    }
    SUBCASE("identical embedding stays with the existing speaker") {
        Embedding e = normalized({0.2f, 1.0f, 0.1f});
        reg.assign(e);
        const int id = reg.assign(e);
        CHECK(id == 0);
        CHECK(reg.speaker_count() == 1);
        CHECK(reg.segment_count(0) == 2);
    }
    SUBCASE("orthogonal embedding enrolls a new speaker") {
        reg.assign(normalized({1.0f, 0.0f, 0.0f}));
        const int id = reg.assign(normalized({0.0f, 1.0f, 0.0f}));
        CHECK(id == 1);
        CHECK(reg.speaker_count() == 2);
    }
    SUBCASE("running mean stays max-normalized") {
        reg.assign(normalized({1.0f, 0.5f}));
        reg.assign(normalized({1.0f, 0.3f}));
        const Embedding& rep = reg.representative(0);
        CHECK(rep.values[0] == doctest::Approx(1.0));
        CHECK(rep.values[1] == doctest::Approx(0.4));
    }
    SUBCASE("degenerate embedding is an error via assign") {
        Embedding zero;
        zero.values = {0.0f, 0.0f};
        zero.normalized = true;
        zero.degenerate = true;
        CHECK_THROWS_AS(reg.assign(zero), Error);
    }
    SUBCASE("determinism: same state, same embedding, same id") {
        SpeakerRegistry a(0.4, ThresholdMode::distance), b(0.4, ThresholdMode::distance);
        Rng rng(6);
        for (int i = 0; i < 40; ++i) {
            std::vector<float> v(5);
            for (auto& x : v) x = static_cast<float>(rng.uniform(0.0, 1.0));
            Embedding e = aggregate({v});
            if (e.degenerate) continue;
            CHECK(a.assign(e) == b.assign(e));
        }
    }
}

TEST_CASE("registry assignment, literal mode") {
    // the sentence as written: similarity above threshold means NEW speaker
    SpeakerRegistry reg(0.4, ThresholdMode::literal);
    Embedding e = normalized({0.2f, 1.0f});
    CHECK(reg.assign(e) == 0);
    // identical embedding: similarity 1 > 0.4 -> enrolls another speaker
    CHECK(reg.assign(e) == 1);
    CHECK(reg.speaker_count() == 2);
    // near-orthogonal embedding: similarity below 0.4 -> mapped to nearest
    const int id = reg.assign(normalized({1.0f, 0.05f}));
    CHECK(id < 2);
    CHECK(reg.speaker_count() == 2);
}

TEST_CASE("constant synthetic source enrolls exactly one speaker") {
    SpeakerRegistry reg(0.4, ThresholdMode::distance);
    Embedding e = aggregate({{0.31f, 0.9f, 0.12f, 0.05f}});
    for (int i = 0; i < 200; ++i) reg.assign(e);
    CHECK(reg.speaker_count() == 1);
}

TEST_CASE("reset") {
    SpeakerRegistry reg(0.4, ThresholdMode::distance);
    reg.assign(normalized({1.0f, 0.0f}));
    reg.assign(normalized({0.0f, 1.0f}));
    CHECK(reg.speaker_count() == 2);
    reg.reset();
    CHECK(reg.speaker_count() == 0);
    reg.reset(); // idempotent
    CHECK(reg.speaker_count() == 0);
    CHECK(reg.assign(normalized({0.0f, 1.0f})) == 0);
    CHECK(reg.speaker_id(0) == "S0");
}

TEST_CASE("degenerate embedding policy for the pipeline") {
    SpeakerRegistry reg(0.4, ThresholdMode::distance);
    Embedding zero;
    zero.values = {0.0f, 0.0f};
    zero.normalized = true;
    zero.degenerate = true;

    // first-segment degeneracy enrolls S0
    const int first = reg.assign_or_inherit(zero, -1);
    CHECK(first == 0);
    CHECK(reg.speaker_count() == 1);

    // a later degenerate embedding inherits the previous label
    Embedding real = normalized({1.0f, 0.2f});
    const int a = reg.assign_or_inherit(real, first);
    const int b = reg.assign_or_inherit(zero, a);
    CHECK(b == a);
}
