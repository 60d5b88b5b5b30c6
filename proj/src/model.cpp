#include "diar/model.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "diar/error.hpp"
#include "diar/parallel.hpp"

namespace diar {

void RcnnConfig::validate() const {
    if (input_bins < 1 || input_frames < 1)
        raise(errc::validation, "rcnn config: input shape must be positive");
    for (int c : conv_channels)
        if (c < 1) raise(errc::validation, "rcnn config: conv channels must be positive");
    for (const auto& p : pool_sizes)
        if (p[0] < 1 || p[1] < 1)
            raise(errc::validation, "rcnn config: pool sizes must be positive");
    if (freq_chain().back() != 1)
        raise(errc::validation,
              "rcnn config: invalid pooling chain, frequency axis must reduce to exactly 1");
    if (time_chain().back() < 1)
        raise(errc::validation,
              "rcnn config: invalid pooling chain, time axis collapsed to zero");
    for (size_t i = 1; i < freq_chain().size(); ++i) {
        if (freq_chain()[i] == 0)
            raise(errc::validation, "rcnn config: invalid pooling chain");
    }
    if (gru_layers < 0 || gru_layers > 2)
        raise(errc::validation, "rcnn config: gru_layers must be 0, 1 or 2");
    if (gru_layers > 0 && gru_hidden < 1)
        raise(errc::validation, "rcnn config: gru_hidden must be positive");
    if (n_classes < 2) raise(errc::validation, "rcnn config: need >= 2 classes");
    if (dropout_conv < 0.0f || dropout_conv >= 1.0f || dropout_rnn < 0.0f || dropout_rnn >= 1.0f)
        raise(errc::validation, "rcnn config: dropout rates must be in [0, 1)");
}

template <class T>
RcnnNet<T>::RcnnNet(const RcnnConfig& config, uint64_t seed)
    : config_(config), rnn_dropout_(config.dropout_rnn),
      dense_(config.gru_layers > 0 ? config.gru_hidden : config.conv_channels[3],
             config.n_classes) {
    config_.validate();

    int in_ch = 1;
    for (int i = 0; i < 4; ++i) {
        convs_.emplace_back(in_ch, config_.conv_channels[i]);
        bns_.emplace_back(config_.conv_channels[i]);
        elus_.emplace_back();
        pools_.emplace_back(config_.pool_sizes[i][0], config_.pool_sizes[i][1]);
        conv_dropouts_.emplace_back(config_.dropout_conv);
        in_ch = config_.conv_channels[i];
    }
    for (int i = 0; i < config_.gru_layers; ++i) {
        const int d = i == 0 ? config_.conv_channels[3] : config_.gru_hidden;
        grus_.emplace_back(d, config_.gru_hidden);
    }

    Rng rng(seed);
    for (int i = 0; i < 4; ++i) {
        convs_[i].init(rng);
        bns_[i].init(rng);
    }
    for (auto& g : grus_) g.init(rng);
    dense_.init(rng);
}

template <class T>
void RcnnNet<T>::set_threads(int threads) {
    for (auto& c : convs_) c.threads = threads;
    for (auto& e : elus_) e.threads = threads;
}

template <class T>
Tensor<T> RcnnNet<T>::forward_logits(const Tensor<T>& x, bool training, Rng* dropout_rng) {
    if (x.ndim() != 4 || x.dim(1) != 1 || x.dim(2) != config_.input_bins ||
        x.dim(3) != config_.input_frames)
        raise(errc::shape_mismatch, "rcnn forward: input shape mismatch");
    if (training && dropout_rng == nullptr)
        raise(errc::validation, "rcnn forward: training mode needs a dropout rng");

    Tensor<T> cur = x;
    for (int i = 0; i < 4; ++i) {
        cur = convs_[i].forward(cur);
        cur = bns_[i].forward(cur, training);
        cur = elus_[i].forward(cur);
        cur = pools_[i].forward(cur);
        cur = conv_dropouts_[i].forward(cur, training, dropout_rng);
    }

    // [N, C, 1, T] read as T vectors of dim C.
    batch_ = cur.dim(0);
    seq_dim_ = cur.dim(1);
    seq_len_ = cur.dim(3);
    Tensor<T> seq({batch_, seq_len_, seq_dim_});
    for (int n = 0; n < batch_; ++n)
        for (int c = 0; c < seq_dim_; ++c)
            for (int t = 0; t < seq_len_; ++t)
                seq.data[(static_cast<size_t>(n) * seq_len_ + t) * seq_dim_ + c] =
                    cur.data[(static_cast<size_t>(n) * seq_dim_ + c) * seq_len_ + t];

    for (auto& g : grus_) seq = g.forward(seq);

    const int feat_dim = config_.gru_layers > 0 ? config_.gru_hidden : seq_dim_;
    Tensor<T> readout({batch_, feat_dim});
    if (config_.readout == Readout::last_step) {
        for (int n = 0; n < batch_; ++n)
            std::copy_n(seq.ptr() + (static_cast<size_t>(n) * seq_len_ + seq_len_ - 1) * feat_dim,
                        feat_dim, readout.ptr() + static_cast<size_t>(n) * feat_dim);
    } else {
        for (int n = 0; n < batch_; ++n)
            for (int t = 0; t < seq_len_; ++t)
                for (int i = 0; i < feat_dim; ++i)
                    readout.data[static_cast<size_t>(n) * feat_dim + i] +=
                        seq.data[(static_cast<size_t>(n) * seq_len_ + t) * feat_dim + i] /
                        static_cast<T>(seq_len_);
    }

    Tensor<T> dropped = rnn_dropout_.forward(readout, training, dropout_rng);
    return dense_.forward(dropped);
}

template <class T>
Tensor<T> RcnnNet<T>::forward(const Tensor<T>& x, bool training, Rng* dropout_rng) {
    return apply_head(forward_logits(x, training, dropout_rng), config_.head);
}

template <class T>
Tensor<T> RcnnNet<T>::backward(const Tensor<T>& dlogits) {
    Tensor<T> d = dense_.backward(dlogits);
    d = rnn_dropout_.backward(d);

    const int feat_dim = config_.gru_layers > 0 ? config_.gru_hidden : seq_dim_;
    Tensor<T> dseq({batch_, seq_len_, feat_dim});
    if (config_.readout == Readout::last_step) {
        for (int n = 0; n < batch_; ++n)
            std::copy_n(d.ptr() + static_cast<size_t>(n) * feat_dim, feat_dim,
                        dseq.ptr() + (static_cast<size_t>(n) * seq_len_ + seq_len_ - 1) * feat_dim);
    } else {
        for (int n = 0; n < batch_; ++n)
            for (int t = 0; t < seq_len_; ++t)
                for (int i = 0; i < feat_dim; ++i)
                    dseq.data[(static_cast<size_t>(n) * seq_len_ + t) * feat_dim + i] =
                        d.data[static_cast<size_t>(n) * feat_dim + i] / static_cast<T>(seq_len_);
    }

    for (int i = static_cast<int>(grus_.size()) - 1; i >= 0; --i)
        dseq = grus_[i].backward(dseq);

    // back to [N, C, 1, T]
    Tensor<T> dmap({batch_, seq_dim_, 1, seq_len_});
    for (int n = 0; n < batch_; ++n)
        for (int c = 0; c < seq_dim_; ++c)
            for (int t = 0; t < seq_len_; ++t)
                dmap.data[(static_cast<size_t>(n) * seq_dim_ + c) * seq_len_ + t] =
                    dseq.data[(static_cast<size_t>(n) * seq_len_ + t) * seq_dim_ + c];

    Tensor<T> cur = dmap;
    for (int i = 3; i >= 0; --i) {
        cur = conv_dropouts_[i].backward(cur);
        cur = pools_[i].backward(cur);
        cur = elus_[i].backward(cur);
        cur = bns_[i].backward(cur);
        convs_[i].compute_input_grad = i > 0 || want_input_gradient;
        cur = convs_[i].backward(cur);
    }
    return cur;
}

template <class T>
std::vector<ParamRef<T>> RcnnNet<T>::params() {
    std::vector<ParamRef<T>> out;
    for (int i = 0; i < 4; ++i) {
        auto c = convs_[i].params("conv" + std::to_string(i));
        out.insert(out.end(), c.begin(), c.end());
        auto b = bns_[i].params("bn" + std::to_string(i));
        out.insert(out.end(), b.begin(), b.end());
    }
    for (size_t i = 0; i < grus_.size(); ++i) {
        auto g = grus_[i].params("gru" + std::to_string(i));
        out.insert(out.end(), g.begin(), g.end());
    }
    auto dn = dense_.params("dense");
    out.insert(out.end(), dn.begin(), dn.end());
    return out;
}

template <class T>
std::vector<int64_t> RcnnNet<T>::bn_step_counters() const {
    std::vector<int64_t> out;
    for (const auto& bn : bns_) out.push_back(bn.steps);
    return out;
}

template <class T>
void RcnnNet<T>::set_bn_step_counters(const std::vector<int64_t>& steps) {
    if (steps.size() != bns_.size())
        raise(errc::shape_mismatch, "batchnorm step counter count mismatch");
    for (size_t i = 0; i < bns_.size(); ++i) bns_[i].steps = steps[i];
}

template <class T>
std::vector<ParamRef<T>> RcnnNet<T>::persisted() {
    std::vector<ParamRef<T>> out = params();
    for (int i = 0; i < 4; ++i) {
        out.push_back({"bn" + std::to_string(i) + ".running_mean", &bns_[i].running_mean, nullptr});
        out.push_back({"bn" + std::to_string(i) + ".running_var", &bns_[i].running_var, nullptr});
    }
    return out;
}

template class RcnnNet<float>;
template class RcnnNet<double>;

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

uint64_t fnv1a64(const void* data, size_t len) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

// Content-derived canonical order: training results depend on the sample
// multiset and the seed, not on the order the caller assembled the dataset.
std::vector<size_t> canonical_order(const std::vector<Sample>& samples) {
    std::vector<std::pair<uint64_t, size_t>> keys(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        uint64_t h = fnv1a64(samples[i].features.values.data(),
                             samples[i].features.values.size() * sizeof(float));
        h ^= fnv1a64(&samples[i].label, sizeof(int));
        keys[i] = {h, i};
    }
    std::sort(keys.begin(), keys.end());
    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) order[i] = keys[i].second;
    return order;
}

Tensor<float> batch_tensor(const std::vector<Sample>& samples,
                           const std::vector<size_t>& order, size_t begin, size_t end,
                           const RcnnConfig& cfg) {
    const int n = static_cast<int>(end - begin);
    Tensor<float> x({n, 1, cfg.input_bins, cfg.input_frames});
    const size_t plane = static_cast<size_t>(cfg.input_bins) * cfg.input_frames;
    for (size_t i = begin; i < end; ++i) {
        const Sample& s = samples[order[i]];
        if (s.features.rows != cfg.input_bins || s.features.cols != cfg.input_frames)
            raise(errc::shape_mismatch, "train: feature matrix shape mismatch");
        std::copy_n(s.features.values.data(), plane, x.ptr() + (i - begin) * plane);
    }
    return x;
}

int argmax_row(const float* row, int n) {
    int best = 0;
    for (int j = 1; j < n; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

} // namespace

std::pair<std::vector<Sample>, std::vector<Sample>> split_dataset(std::vector<Sample> all,
                                                                  double train_fraction,
                                                                  uint64_t seed) {
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        raise(errc::validation, "split fraction must be in (0, 1)");
    std::vector<size_t> order(all.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    const size_t n_train = static_cast<size_t>(std::llround(train_fraction * all.size()));
    std::vector<Sample> train_set, holdout;
    train_set.reserve(n_train);
    holdout.reserve(all.size() - n_train);
    for (size_t i = 0; i < order.size(); ++i) {
        if (i < n_train)
            train_set.push_back(std::move(all[order[i]]));
        else
            holdout.push_back(std::move(all[order[i]]));
    }
    return {std::move(train_set), std::move(holdout)};
}

TrainReport train(RcnnModel& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& holdout, const TrainOptions& options) {
    if (train_set.empty()) raise(errc::validation, "train: empty dataset");
    for (const Sample& s : train_set)
        if (s.label < 0 || s.label >= model.config().n_classes)
            raise(errc::validation, "train: label out of range");

    const auto t0 = std::chrono::steady_clock::now();
    model.set_threads(options.threads);
    model.want_input_gradient = false;

    auto params = model.params();
    std::vector<AdamState<float>> states;
    states.reserve(params.size());
    for (auto& p : params) states.emplace_back(p.value->shape);
    AdamConfig adam_cfg;
    adam_cfg.lr = options.lr;

    std::vector<size_t> order = canonical_order(train_set);
    Rng shuffle_rng = Rng(options.seed).fork(1);
    Rng dropout_rng = Rng(options.seed).fork(2);

    TrainReport report;
    const size_t batch = std::max<size_t>(1, static_cast<size_t>(options.batch_size));

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t correct = 0;

        for (size_t start = 0; start < order.size(); start += batch) {
            const size_t end = std::min(order.size(), start + batch);
            Tensor<float> x = batch_tensor(train_set, order, start, end, model.config());
            std::vector<int> labels(end - start);
            for (size_t i = start; i < end; ++i) labels[i - start] = train_set[order[i]].label;

            Tensor<float> logits = model.forward_logits(x, true, &dropout_rng);
            auto loss = cross_entropy_fused(labels, logits, model.config().head);
            if (!std::isfinite(loss.loss))
                raise(errc::numeric_error,
                      "train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(start / batch));
            epoch_loss += loss.loss;
            for (size_t i = 0; i < labels.size(); ++i) {
                const float* row = logits.ptr() + i * model.config().n_classes;
                if (argmax_row(row, model.config().n_classes) == labels[i]) ++correct;
            }

            model.backward(loss.grad);
            for (size_t p = 0; p < params.size(); ++p)
                adam_step(*params[p].value, *params[p].grad, states[p], adam_cfg);
            model.step_counter += 1;
            report.steps += 1;
        }

        EpochStats stats;
        stats.mean_loss = epoch_loss / static_cast<double>(order.size());
        stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        stats.holdout_accuracy =
            holdout.empty() ? 0.0 : evaluate(model, holdout, options.threads);
        report.epochs.push_back(stats);
        if (options.verbose)
            std::fprintf(stderr, "epoch %d: loss %.4f train_acc %.4f holdout_acc %.4f\n",
                         epoch, stats.mean_loss, stats.train_accuracy, stats.holdout_accuracy);

        if (options.target_holdout_accuracy > 0.0 && !holdout.empty() &&
            stats.holdout_accuracy >= options.target_holdout_accuracy)
            break;
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.final_holdout_accuracy =
        report.epochs.empty() ? 0.0 : report.epochs.back().holdout_accuracy;
    return report;
}

double evaluate(RcnnModel& model, const std::vector<Sample>& dataset, int threads) {
    if (dataset.empty()) raise(errc::validation, "evaluate: empty dataset");
    model.set_threads(threads);
    std::vector<size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), size_t{0});

    size_t correct = 0;
    const size_t batch = 128;
    for (size_t start = 0; start < dataset.size(); start += batch) {
        const size_t end = std::min(dataset.size(), start + batch);
        Tensor<float> x = batch_tensor(dataset, order, start, end, model.config());
        Tensor<float> probs = model.forward(x, false, nullptr);
        for (size_t i = start; i < end; ++i) {
            const float* row = probs.ptr() + (i - start) * model.config().n_classes;
            if (argmax_row(row, model.config().n_classes) == dataset[i].label) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

std::vector<float> predict(RcnnModel& model, const FeatureMatrix& features) {
    if (features.rows != model.config().input_bins ||
        features.cols != model.config().input_frames)
        raise(errc::shape_mismatch, "predict: feature matrix shape mismatch");
    Tensor<float> x({1, 1, features.rows, features.cols});
    std::copy(features.values.begin(), features.values.end(), x.data.begin());
    Tensor<float> probs = model.forward(x, false, nullptr);
    return {probs.data.begin(), probs.data.end()};
}

// ---------------------------------------------------------------------------
// persistence: magic, version, config block, shape-tagged f32 arrays,
// trailing CRC32
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'R', 'C', 'K'};
constexpr uint32_t kVersion = 1;

uint32_t crc32(const uint8_t* data, size_t len) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t crc = 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

struct ByteWriter {
    std::vector<uint8_t> bytes;
    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
};

struct ByteReader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;
    explicit ByteReader(const std::vector<uint8_t>& b) : bytes(b) {}
    void raw(void* p, size_t n) {
        if (pos + n > bytes.size())
            raise(errc::truncated_data, "checkpoint: truncated file");
        std::memcpy(p, bytes.data() + pos, n);
        pos += n;
    }
    uint8_t u8() { uint8_t v; raw(&v, 1); return v; }
    uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
    uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
    float f32() { float v; raw(&v, 4); return v; }
};

} // namespace

void save_model(const RcnnModel& model, const std::string& path) {
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u32(kVersion);

    const RcnnConfig& c = model.config();
    w.u32(static_cast<uint32_t>(c.input_bins));
    w.u32(static_cast<uint32_t>(c.input_frames));
    for (int ch : c.conv_channels) w.u32(static_cast<uint32_t>(ch));
    for (const auto& p : c.pool_sizes) {
        w.u32(static_cast<uint32_t>(p[0]));
        w.u32(static_cast<uint32_t>(p[1]));
    }
    w.u32(static_cast<uint32_t>(c.gru_hidden));
    w.u32(static_cast<uint32_t>(c.gru_layers));
    w.u32(static_cast<uint32_t>(c.n_classes));
    w.f32(c.dropout_conv);
    w.f32(c.dropout_rnn);
    w.u8(static_cast<uint8_t>(c.head));
    w.u8(static_cast<uint8_t>(c.readout));
    w.u8(static_cast<uint8_t>(c.feature_kind));
    w.u8(0);
    w.u64(static_cast<uint64_t>(model.step_counter));
    for (int64_t s : model.bn_step_counters()) w.u64(static_cast<uint64_t>(s));

    auto tensors = const_cast<RcnnModel&>(model).persisted();
    w.u32(static_cast<uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        w.u32(static_cast<uint32_t>(t.value->shape.size()));
        for (int d : t.value->shape) w.u32(static_cast<uint32_t>(d));
        w.raw(t.value->data.data(), t.value->data.size() * sizeof(float));
    }

    w.u32(crc32(w.bytes.data(), w.bytes.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(errc::io_error, "cannot write checkpoint: " + path);
    out.write(reinterpret_cast<const char*>(w.bytes.data()),
              static_cast<std::streamsize>(w.bytes.size()));
    if (!out) raise(errc::io_error, "short write to checkpoint: " + path);
}

RcnnModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(errc::io_error, "cannot open checkpoint: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (bytes.size() < 12) raise(errc::truncated_data, "checkpoint too small: " + path);

    uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    if (crc32(bytes.data(), bytes.size() - 4) != stored_crc)
        raise(errc::checksum_mismatch, "checkpoint checksum mismatch: " + path);

    ByteReader r(bytes);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        raise(errc::unsupported_format, "not a checkpoint file: " + path);
    if (r.u32() != kVersion)
        raise(errc::version_mismatch, "unsupported checkpoint version: " + path);

    RcnnConfig c;
    c.input_bins = static_cast<int>(r.u32());
    c.input_frames = static_cast<int>(r.u32());
    for (int i = 0; i < 4; ++i) c.conv_channels[i] = static_cast<int>(r.u32());
    for (int i = 0; i < 4; ++i) {
        c.pool_sizes[i][0] = static_cast<int>(r.u32());
        c.pool_sizes[i][1] = static_cast<int>(r.u32());
    }
    c.gru_hidden = static_cast<int>(r.u32());
    c.gru_layers = static_cast<int>(r.u32());
    c.n_classes = static_cast<int>(r.u32());
    c.dropout_conv = r.f32();
    c.dropout_rnn = r.f32();
    c.head = static_cast<Head>(r.u8());
    c.readout = static_cast<Readout>(r.u8());
    c.feature_kind = static_cast<FeatureKind>(r.u8());
    r.u8();

    RcnnModel model(c, 0);
    model.step_counter = static_cast<int64_t>(r.u64());
    std::vector<int64_t> bn_steps(4);
    for (auto& s : bn_steps) s = static_cast<int64_t>(r.u64());
    model.set_bn_step_counters(bn_steps);

    auto tensors = model.persisted();
    const uint32_t n_arrays = r.u32();
    if (n_arrays != tensors.size())
        raise(errc::shape_mismatch, "checkpoint: unexpected tensor count in " + path);
    for (auto& t : tensors) {
        const uint32_t ndim = r.u32();
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(r.u32());
        if (shape != t.value->shape)
            raise(errc::shape_mismatch,
                  "checkpoint: shape mismatch for " + t.name + " in " + path);
        r.raw(t.value->data.data(), t.value->data.size() * sizeof(float));
    }
    return model;
}

} // namespace diar
