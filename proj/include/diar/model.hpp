#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "diar/adam.hpp"
#include "diar/features.hpp"
#include "diar/layers.hpp"
#include "diar/rng.hpp"

namespace diar {

enum class Readout : uint8_t { last_step = 0, mean_pool = 1 };

struct RcnnConfig {
    int input_bins = kFeatureBins;
    int input_frames = kSegmentFrames;
    std::array<int, 4> conv_channels{32, 64, 128, 128};
    // (freq, time) per block; kernel == stride, partial windows truncated.
    std::array<std::array<int, 2>, 4> pool_sizes{{{2, 2}, {3, 3}, {4, 4}, {4, 4}}};
    int gru_hidden = 128;
    int gru_layers = 2;
    int n_classes = 2;
    float dropout_conv = 0.1f;
    float dropout_rnn = 0.3f;
    Head head = Head::sigmoid;
    Readout readout = Readout::last_step;
    FeatureKind feature_kind = FeatureKind::cqt;

    std::vector<int> freq_chain() const {
        std::vector<int> chain{input_bins};
        for (const auto& p : pool_sizes) chain.push_back(chain.back() / p[0]);
        return chain;
    }
    std::vector<int> time_chain() const {
        std::vector<int> chain{input_frames};
        for (const auto& p : pool_sizes) chain.push_back(chain.back() / p[1]);
        return chain;
    }

    void validate() const;
};

// 11 learnable layers: 4 conv + 4 batchnorm + 2 GRU + 1 dense. Instantiated
// with float for training/inference and double for gradient checks.
template <class T>
class RcnnNet {
public:
    RcnnNet(const RcnnConfig& config, uint64_t seed);

    // x: [N, 1, input_bins, input_frames] -> class probabilities [N, n_classes].
    Tensor<T> forward(const Tensor<T>& x, bool training = false, Rng* dropout_rng = nullptr);

    // Forward to pre-activations (head not applied).
    Tensor<T> forward_logits(const Tensor<T>& x, bool training, Rng* dropout_rng);

    // Backpropagate a gradient with respect to the logits; fills every
    // parameter gradient and returns the input gradient.
    Tensor<T> backward(const Tensor<T>& dlogits);

    std::vector<ParamRef<T>> params();
    // Parameters plus batchnorm running stats / step counters; everything a
    // checkpoint must carry to reproduce inference bit-exactly.
    std::vector<ParamRef<T>> persisted();

    int learnable_layer_count() const { return 4 + 4 + config_.gru_layers + 1; }
    const RcnnConfig& config() const { return config_; }
    void set_threads(int threads);

    std::vector<int64_t> bn_step_counters() const;
    void set_bn_step_counters(const std::vector<int64_t>& steps);

    int64_t step_counter = 0;
    // Training has no consumer for the gradient w.r.t. the input features;
    // leave enabled for gradient checks.
    bool want_input_gradient = true;

private:
    RcnnConfig config_;
    std::vector<Conv2d<T>> convs_;
    std::vector<BatchNorm2d<T>> bns_;
    std::vector<Elu<T>> elus_;
    std::vector<MaxPool2d<T>> pools_;
    std::vector<Dropout<T>> conv_dropouts_;
    std::vector<Gru<T>> grus_;
    Dropout<T> rnn_dropout_;
    Dense<T> dense_;

    // shapes cached by forward for backward's reshape steps
    int batch_ = 0, seq_len_ = 0, seq_dim_ = 0;
    Tensor<T> gru_out_cache_;
};

extern template class RcnnNet<float>;
extern template class RcnnNet<double>;

using RcnnModel = RcnnNet<float>;

// ---------------------------------------------------------------------------
// training / evaluation / persistence (float instantiation only)
// ---------------------------------------------------------------------------

struct Sample {
    FeatureMatrix features; // normalized 96 x input_frames
    int label = 0;
};

struct TrainOptions {
    int epochs = 20;
    int batch_size = 128;
    uint64_t seed = 1;
    double lr = 1e-3;
    // Stop once held-out accuracy reaches this value (<= 0 disables).
    double target_holdout_accuracy = -1.0;
    int threads = 1;
    bool verbose = false;
};

struct EpochStats {
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
    double holdout_accuracy = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    double wall_seconds = 0.0;
    int64_t steps = 0;
    double final_holdout_accuracy = 0.0;
};

// Seeded 70/30-style split (train_fraction of the samples, shuffled).
std::pair<std::vector<Sample>, std::vector<Sample>> split_dataset(std::vector<Sample> all,
                                                                  double train_fraction,
                                                                  uint64_t seed);

// Mini-batch Adam on the summed cross-entropy. The dataset is canonicalized
// by content before the seeded shuffle, so the caller's ordering does not
// influence the result. Throws on an empty dataset or a non-finite loss.
TrainReport train(RcnnModel& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& holdout, const TrainOptions& options);

// Fraction of argmax-correct predictions.
double evaluate(RcnnModel& model, const std::vector<Sample>& dataset, int threads = 1);

// Class probabilities for a single normalized feature matrix (inference mode).
std::vector<float> predict(RcnnModel& model, const FeatureMatrix& features);

void save_model(const RcnnModel& model, const std::string& path);
RcnnModel load_model(const std::string& path);

} // namespace diar
