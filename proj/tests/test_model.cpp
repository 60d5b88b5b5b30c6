#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <fstream>

#include "diar/error.hpp"
#include "diar/gradcheck.hpp"
#include "diar/model.hpp"
#include "diar/synth.hpp"
#include "test_util.hpp"

using namespace diar;
using testutil::TempDir;

namespace {

RcnnConfig tiny_config() {
    RcnnConfig c;
    c.input_bins = 96;
    c.input_frames = 24;
    c.conv_channels = {2, 2, 2, 2};
    c.pool_sizes = {{{2, 2}, {3, 3}, {4, 2}, {4, 2}}};
    c.gru_hidden = 3;
    c.n_classes = 2;
    c.dropout_conv = 0.0f;
    c.dropout_rnn = 0.0f;
    return c;
}

RcnnConfig small_config(int n_classes, Head head = Head::sigmoid) {
    RcnnConfig c;
    c.conv_channels = {8, 8, 16, 16};
    c.gru_hidden = 16;
    c.n_classes = n_classes;
    c.head = head;
    return c;
}

std::vector<Sample> synth_dataset(int n_speakers, double seconds_each, uint64_t seed) {
    auto speakers = make_speakers(n_speakers, seed);
    std::vector<Sample> out;
    for (int i = 0; i < n_speakers; ++i) {
        AudioBuffer audio = render(speakers[i], seconds_each, 0);
        for (const SegmentWindow& w : segment_stream(audio)) {
            Sample s;
            s.features = normalize(extract_features(w.samples, FeatureKind::cqt));
            s.label = i;
            out.push_back(std::move(s));
        }
    }
    return out;
}

Tensor<float> random_input(const RcnnConfig& c, uint64_t seed, int batch = 1) {
    Rng rng(seed);
    Tensor<float> x({batch, 1, c.input_bins, c.input_frames});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return x;
}

} // namespace

TEST_CASE("config validation and pooling arithmetic") {
    RcnnConfig c;
    c.validate();
    CHECK(c.freq_chain() == std::vector<int>{96, 48, 16, 4, 1});
    CHECK(c.time_chain() == std::vector<int>{191, 95, 31, 7, 1});

    SUBCASE("default pools cannot digest 24 frames (time axis collapses)") {
        RcnnConfig bad;
        bad.input_frames = 24;
        CHECK_THROWS_AS(bad.validate(), Error);
    }
    SUBCASE("frequency chain must end at exactly 1") {
        RcnnConfig bad;
        bad.input_bins = 64;
        CHECK_THROWS_AS(bad.validate(), Error);
    }
    SUBCASE("need >= 2 classes") {
        RcnnConfig bad;
        bad.n_classes = 1;
        CHECK_THROWS_AS(bad.validate(), Error);
    }
}

TEST_CASE("build determinism and layer accounting") {
    RcnnConfig c = small_config(3);
    RcnnModel a(c, 42), b(c, 42);
    auto pa = a.params(), pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i)
        CHECK(std::memcmp(pa[i].value->data.data(), pb[i].value->data.data(),
                          pa[i].value->data.size() * sizeof(float)) == 0);

    CHECK(a.learnable_layer_count() == 11);

    RcnnConfig cnn_only = c;
    cnn_only.gru_layers = 0;
    RcnnModel m(cnn_only, 1);
    CHECK(m.learnable_layer_count() == 9);

    RcnnModel different(c, 43);
    bool all_same = true;
    auto pd = different.params();
    for (size_t i = 0; i < pa.size() && all_same; ++i)
        all_same = std::memcmp(pa[i].value->data.data(), pd[i].value->data.data(),
                               pa[i].value->data.size() * sizeof(float)) == 0;
    CHECK(!all_same);
}

TEST_CASE("forward output contract") {
    SUBCASE("sigmoid head: values in [0,1], inference deterministic") {
        RcnnModel m(small_config(4), 7);
        Tensor<float> x = random_input(m.config(), 3);
        Tensor<float> p1 = m.forward(x, false, nullptr);
        Tensor<float> p2 = m.forward(x, false, nullptr);
        REQUIRE(p1.shape == std::vector<int>{1, 4});
        for (float v : p1.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        CHECK(p1.data == p2.data);
    }
    SUBCASE("softmax head sums to one") {
        RcnnModel m(small_config(5, Head::softmax), 7);
        Tensor<float> x = random_input(m.config(), 4, 3);
        Tensor<float> p = m.forward(x, false, nullptr);
        for (int b = 0; b < 3; ++b) {
            double sum = 0.0;
            for (int j = 0; j < 5; ++j) sum += p.data[b * 5 + j];
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
    SUBCASE("inference invariant to dropout rate") {
        RcnnConfig c1 = small_config(3);
        RcnnConfig c2 = small_config(3);
        c2.dropout_conv = 0.45f;
        c2.dropout_rnn = 0.45f;
        RcnnModel m1(c1, 11), m2(c2, 11);
        Tensor<float> x = random_input(c1, 5);
        CHECK(m1.forward(x, false, nullptr).data == m2.forward(x, false, nullptr).data);
    }
    SUBCASE("default conv stack reaches frequency 1, sequence length 1") {
        RcnnModel m(small_config(2), 1);
        Tensor<float> x = random_input(m.config(), 2);
        Tensor<float> p = m.forward(x, false, nullptr);
        CHECK(p.shape == std::vector<int>{1, 2}); // would throw on chain mismatch
    }
    SUBCASE("shape mismatch") {
        RcnnModel m(small_config(2), 1);
        Tensor<float> x({1, 1, 96, 100});
        CHECK_THROWS_AS(m.forward(x, false, nullptr), Error);
    }
}

TEST_CASE("composed network gradient check, tiny config (64-bit)") {
    RcnnNet<double> net(tiny_config(), 2024);
    Rng data_rng(55);
    Tensor<double> x({1, 1, 96, 24});
    for (auto& v : x.data) v = data_rng.uniform(-1.0, 1.0);
    std::vector<int> labels = {1};
    Rng dropout_rng(0); // rates are zero; never drawn

    auto loss = [&]() {
        Tensor<double> logits = net.forward_logits(x, true, &dropout_rng);
        return cross_entropy_fused(labels, logits, net.config().head).loss;
    };

    Tensor<double> logits = net.forward_logits(x, true, &dropout_rng);
    auto res = cross_entropy_fused(labels, logits, net.config().head);
    Tensor<double> dx = net.backward(res.grad);

    std::vector<double*> elems;
    std::vector<double> analytic;
    for (auto& p : net.params())
        for (size_t i = 0; i < p.value->numel(); ++i) {
            elems.push_back(&p.value->data[i]);
            analytic.push_back(p.grad->data[i]);
        }
    const size_t n_params = elems.size();
    for (size_t i = 0; i < x.numel(); ++i) {
        elems.push_back(&x.data[i]);
        analytic.push_back(dx.data[i]);
    }
    INFO("parameters checked: " << n_params);
    // eps 1e-5: at 1e-4 the perturbation is wide enough to flip pooling
    // argmaxes at near-ties in the conv maps, which breaks the central
    // difference rather than the analytic gradient
    CHECK(grad_check(loss, elems, analytic, 1e-5) < 1e-4);
}

TEST_CASE("training separates two synthetic speakers") {
    std::vector<Sample> all = synth_dataset(2, 26.0, 91);
    REQUIRE(all.size() >= 180);
    auto [train_set, holdout] = split_dataset(std::move(all), 0.7, 5);

    RcnnModel model(small_config(2), 5);
    TrainOptions opt;
    opt.epochs = 20;
    opt.batch_size = 32;
    opt.seed = 5;
    opt.target_holdout_accuracy = 0.95;
    opt.threads = 2;
    TrainReport report = train(model, train_set, holdout, opt);

    REQUIRE(!report.epochs.empty());
    CHECK(report.final_holdout_accuracy >= 0.95);
    for (const auto& e : report.epochs) CHECK(std::isfinite(e.mean_loss));
    if (report.epochs.size() > 1)
        CHECK(report.epochs.back().mean_loss < report.epochs.front().mean_loss);

    SUBCASE("evaluate matches a hand-computed fixture") {
        std::vector<Sample> fixture(holdout.begin(), holdout.begin() + 10);
        int correct = 0;
        for (const Sample& s : fixture) {
            const std::vector<float> probs = predict(model, s.features);
            int arg = 0;
            for (size_t j = 1; j < probs.size(); ++j)
                if (probs[j] > probs[arg]) arg = static_cast<int>(j);
            if (arg == s.label) ++correct;
        }
        CHECK(evaluate(model, fixture) == doctest::Approx(correct / 10.0));
    }
}

TEST_CASE("uniform predictor scores chance level") {
    // zeroed dense layer -> constant logits -> argmax always class 0
    RcnnConfig c = small_config(4);
    RcnnModel m(c, 3);
    for (auto& p : m.params()) {
        if (p.name == "dense.weight" || p.name == "dense.bias") p.value->fill(0.0f);
    }
    std::vector<Sample> balanced;
    Rng rng(17);
    for (int label = 0; label < 4; ++label)
        for (int i = 0; i < 5; ++i) {
            Sample s;
            s.label = label;
            s.features.rows = 96;
            s.features.cols = c.input_frames;
            s.features.values.resize(96 * static_cast<size_t>(c.input_frames));
            for (auto& v : s.features.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
            balanced.push_back(std::move(s));
        }
    CHECK(evaluate(m, balanced) == doctest::Approx(0.25));
}

TEST_CASE("training batches clamp to dataset size") {
    std::vector<Sample> all = synth_dataset(2, 5.0, 12);
    auto [train_set, holdout] = split_dataset(std::move(all), 0.7, 1);
    RcnnModel model(small_config(2), 9);
    TrainOptions opt;
    opt.epochs = 2;
    opt.batch_size = 4096; // far larger than the dataset
    opt.seed = 9;
    TrainReport report = train(model, train_set, holdout, opt);
    CHECK(report.steps == 2); // one batch per epoch
}

TEST_CASE("training result is independent of dataset presentation order") {
    std::vector<Sample> data = synth_dataset(2, 8.0, 33);
    std::vector<Sample> reversed(data.rbegin(), data.rend());

    TrainOptions opt;
    opt.epochs = 2;
    opt.batch_size = 16;
    opt.seed = 77;

    RcnnModel m1(small_config(2), 77), m2(small_config(2), 77);
    train(m1, data, {}, opt);
    train(m2, reversed, {}, opt);

    auto p1 = m1.params(), p2 = m2.params();
    for (size_t i = 0; i < p1.size(); ++i)
        CHECK(std::memcmp(p1[i].value->data.data(), p2[i].value->data.data(),
                          p1[i].value->data.size() * sizeof(float)) == 0);
}

TEST_CASE("checkpoint persistence") {
    TempDir tmp("ckpt");
    RcnnConfig c = small_config(3);
    c.feature_kind = FeatureKind::gammatone;
    RcnnModel model(c, 123);
    model.step_counter = 17;

    // give running stats non-trivial values
    std::vector<Sample> data = synth_dataset(2, 5.0, 3);
    for (auto& s : data) s.label = s.label % 3;
    TrainOptions opt;
    opt.epochs = 1;
    opt.batch_size = 16;
    train(model, data, {}, opt);

    const std::string path = tmp.path("m.ckpt");
    save_model(model, path);

    SUBCASE("round trip preserves forward outputs bitwise") {
        RcnnModel loaded = load_model(path);
        CHECK(loaded.config().feature_kind == FeatureKind::gammatone);
        CHECK(loaded.config().n_classes == 3);
        Tensor<float> x = random_input(c, 2, 2);
        Tensor<float> before = model.forward(x, false, nullptr);
        Tensor<float> after = loaded.forward(x, false, nullptr);
        CHECK(std::memcmp(before.data.data(), after.data.data(),
                          before.data.size() * sizeof(float)) == 0);
    }
    SUBCASE("truncated checkpoint fails the checksum") {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        bytes.resize(bytes.size() / 2);
        const std::string cut = tmp.path("cut.ckpt");
        std::ofstream out(cut, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        try {
            load_model(cut);
            FAIL("expected checksum error");
        } catch (const Error& e) {
            CHECK(e.code() == errc::checksum_mismatch);
        }
    }
    SUBCASE("tampered n_classes with a fixed-up checksum reports a shape error") {
        std::ifstream in(path, std::ios::binary);
        std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
        // config layout: magic(4) version(4) bins(4) frames(4) conv(16)
        // pools(32) gru_hidden(4) gru_layers(4) n_classes(4)
        const size_t off = 4 + 4 + 4 + 4 + 16 + 32 + 4 + 4;
        uint32_t n_classes;
        std::memcpy(&n_classes, bytes.data() + off, 4);
        REQUIRE(n_classes == 3);
        n_classes = 4;
        std::memcpy(bytes.data() + off, &n_classes, 4);

        // recompute the trailing CRC32 (independent table implementation)
        uint32_t table[256];
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t v = i;
            for (int k = 0; k < 8; ++k) v = (v & 1) ? 0xEDB88320u ^ (v >> 1) : v >> 1;
            table[i] = v;
        }
        uint32_t crc = 0xFFFFFFFFu;
        for (size_t i = 0; i + 4 < bytes.size(); ++i)
            crc = table[(crc ^ bytes[i]) & 0xFF] ^ (crc >> 8);
        crc ^= 0xFFFFFFFFu;
        std::memcpy(bytes.data() + bytes.size() - 4, &crc, 4);

        const std::string bad = tmp.path("bad.ckpt");
        std::ofstream out(bad, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        out.close();
        try {
            load_model(bad);
            FAIL("expected shape error");
        } catch (const Error& e) {
            CHECK(e.code() == errc::shape_mismatch);
        }
    }
}
