#include "diar/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "diar/error.hpp"
#include "diar/parallel.hpp"

namespace diar {

std::vector<bool> vad_energy(const AudioBuffer& audio, double frame_seconds,
                             double threshold_db) {
    if (audio.channels != 1)
        raise(errc::validation, "vad_energy: mono input required");
    const size_t frame = static_cast<size_t>(std::llround(frame_seconds * audio.sample_rate));
    if (frame == 0) raise(errc::validation, "vad_energy: frame too short");

    double stream_energy = 0.0;
    for (float v : audio.samples) stream_energy += static_cast<double>(v) * v;
    const double stream_rms =
        std::sqrt(stream_energy / std::max<size_t>(1, audio.samples.size()));
    const double threshold_rms = stream_rms * std::pow(10.0, threshold_db / 20.0);

    const size_t n_frames = audio.samples.size() / frame;
    std::vector<bool> speech(n_frames, false);
    if (stream_rms == 0.0) return speech; // digital silence
    for (size_t i = 0; i < n_frames; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < frame; ++j) {
            const double v = audio.samples[i * frame + j];
            acc += v * v;
        }
        speech[i] = std::sqrt(acc / frame) >= threshold_rms;
    }
    return speech;
}

std::vector<int> smooth_labels(const std::vector<int>& raw, int halfwidth) {
    if (halfwidth <= 0 || raw.empty()) return raw;
    std::vector<int> out(raw.size());
    const int n = static_cast<int>(raw.size());
    for (int t = 0; t < n; ++t) {
        std::map<int, int> counts;
        const int lo = std::max(0, t - halfwidth);
        const int hi = std::min(n - 1, t + halfwidth);
        for (int i = lo; i <= hi; ++i) ++counts[raw[i]];
        int best_count = 0;
        for (const auto& [label, count] : counts) best_count = std::max(best_count, count);

        const int prior = t > 0 ? out[t - 1] : raw[t];
        if (counts.count(prior) && counts[prior] == best_count) {
            out[t] = prior;
        } else {
            // deterministic: first label reaching the max count in window order
            int chosen = raw[t];
            for (int i = lo; i <= hi; ++i) {
                if (counts[raw[i]] == best_count) { chosen = raw[i]; break; }
            }
            out[t] = chosen;
        }
    }
    return out;
}

namespace {

struct LabeledSpan {
    double start, end;
    int label;
};

// Merge adjacent same-label spans that touch.
std::vector<LabeledSpan> merge_spans(std::vector<LabeledSpan> spans) {
    std::vector<LabeledSpan> out;
    for (const auto& s : spans) {
        if (!out.empty() && out.back().label == s.label &&
            std::abs(out.back().end - s.start) < 1e-9) {
            out.back().end = s.end;
        } else {
            out.push_back(s);
        }
    }
    return out;
}

// Turns shorter than min_dur are absorbed into the longer adjacent
// neighbor, shortest first, until stable.
std::vector<LabeledSpan> absorb_short_turns(std::vector<LabeledSpan> spans, double min_dur) {
    if (min_dur <= 0.0) return spans;
    for (;;) {
        if (spans.size() < 2) return spans;
        int shortest = -1;
        double shortest_len = min_dur;
        for (size_t i = 0; i < spans.size(); ++i) {
            const double len = spans[i].end - spans[i].start;
            if (len < shortest_len) {
                shortest_len = len;
                shortest = static_cast<int>(i);
            }
        }
        if (shortest < 0) return spans;

        const size_t i = static_cast<size_t>(shortest);
        const bool has_prev = i > 0;
        const bool has_next = i + 1 < spans.size();
        size_t target;
        if (has_prev && has_next) {
            const double prev_len = spans[i - 1].end - spans[i - 1].start;
            const double next_len = spans[i + 1].end - spans[i + 1].start;
            target = prev_len >= next_len ? i - 1 : i + 1;
        } else {
            target = has_prev ? i - 1 : i + 1;
        }
        if (target < i)
            spans[target].end = spans[i].end;
        else
            spans[target].start = spans[i].start;
        spans.erase(spans.begin() + static_cast<long>(i));
        spans = merge_spans(std::move(spans));
    }
}

} // namespace

Timeline diarize(const AudioBuffer& audio, RcnnModel& model, const PipelineConfig& config) {
    if (model.config().feature_kind != config.features)
        raise(errc::validation,
              std::string("diarize: model was trained on ") +
                  feature_kind_name(model.config().feature_kind) + " features, requested " +
                  feature_kind_name(config.features));

    AudioBuffer mono = to_mono(audio);
    AudioBuffer at16k = resample(mono, kModelSampleRate);
    if (at16k.duration() < kSegmentSeconds)
        raise(errc::validation, "diarize: audio shorter than one 3.072 s analysis window");

    std::vector<SegmentWindow> windows = segment_stream(at16k);

    // Optional energy VAD: windows with less than half speech are dropped.
    std::vector<bool> keep(windows.size(), true);
    if (config.vad_enabled) {
        const double frame_s = 0.032;
        const std::vector<bool> mask = vad_energy(at16k, frame_s, config.vad_threshold_db);
        for (size_t i = 0; i < windows.size(); ++i) {
            const size_t first = static_cast<size_t>(windows[i].start_time / frame_s);
            const size_t last = std::min(
                mask.size(), static_cast<size_t>((windows[i].start_time + kSegmentSeconds) / frame_s));
            size_t speech = 0, total = 0;
            for (size_t f = first; f < last; ++f) {
                ++total;
                if (mask[f]) ++speech;
            }
            keep[i] = total == 0 || 2 * speech >= total;
        }
    }

    std::vector<size_t> kept_indices;
    for (size_t i = 0; i < windows.size(); ++i)
        if (keep[i]) kept_indices.push_back(i);
    if (kept_indices.empty())
        raise(errc::validation, "diarize: voice activity detection removed every window");

    // Feature extraction is independent per window; inference runs batched
    // (layer caches are not thread-safe to share); tracker assignment below
    // stays a sequential fold.
    std::vector<FeatureMatrix> feats(kept_indices.size());
    parallel_for(kept_indices.size(), config.threads, [&](size_t b0, size_t b1, int) {
        for (size_t j = b0; j < b1; ++j) {
            const SegmentWindow& w = windows[kept_indices[j]];
            feats[j] = normalize(extract_features(w.samples, config.features));
        }
    });

    model.set_threads(config.threads);
    const RcnnConfig& mc = model.config();
    std::vector<std::vector<float>> activations(kept_indices.size());
    const size_t batch = 64;
    for (size_t start = 0; start < feats.size(); start += batch) {
        const size_t end = std::min(feats.size(), start + batch);
        Tensor<float> x({static_cast<int>(end - start), 1, mc.input_bins, mc.input_frames});
        const size_t plane = static_cast<size_t>(mc.input_bins) * mc.input_frames;
        for (size_t j = start; j < end; ++j) {
            if (feats[j].rows != mc.input_bins || feats[j].cols != mc.input_frames)
                raise(errc::shape_mismatch, "diarize: feature matrix shape mismatch");
            std::copy_n(feats[j].values.data(), plane, x.ptr() + (j - start) * plane);
        }
        Tensor<float> probs = model.forward(x, false, nullptr);
        for (size_t j = start; j < end; ++j) {
            const float* row = probs.ptr() + (j - start) * mc.n_classes;
            activations[j].assign(row, row + mc.n_classes);
        }
    }

    SpeakerRegistry registry(config.threshold, config.threshold_mode);
    std::vector<int> raw_labels(kept_indices.size());
    int previous = -1;
    for (size_t j = 0; j < kept_indices.size(); ++j) {
        const Embedding e = aggregate({activations[j]});
        previous = registry.assign_or_inherit(e, previous);
        raw_labels[j] = previous;
    }

    const std::vector<int> smoothed = smooth_labels(raw_labels, config.smoothing_halfwidth);

    // Each window's label covers its leading hop span; the last kept window
    // runs through the stream end.
    const double duration = at16k.duration();
    std::vector<LabeledSpan> spans;
    for (size_t j = 0; j < kept_indices.size(); ++j) {
        const double start = windows[kept_indices[j]].start_time;
        const double end =
            j + 1 < kept_indices.size() && kept_indices[j + 1] == kept_indices[j] + 1
                ? windows[kept_indices[j + 1]].start_time
                : (j + 1 == kept_indices.size() ? duration
                                                : start + kSegmentHopSeconds);
        spans.push_back({start, std::min(end, duration), smoothed[j]});
    }
    spans = merge_spans(std::move(spans));
    spans = absorb_short_turns(std::move(spans), config.min_turn_duration);

    Timeline out;
    out.file_id = config.file_id;
    for (const auto& s : spans) {
        if (s.end <= s.start) continue;
        out.turns.push_back({s.start, s.end, registry.speaker_id(s.label)});
    }
    return out;
}

} // namespace diar
