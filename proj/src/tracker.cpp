#include "diar/tracker.hpp"

#include <algorithm>
#include <cmath>

#include "diar/error.hpp"

namespace diar {

Embedding aggregate(const std::vector<std::vector<float>>& outputs) {
    if (outputs.empty())
        raise(errc::validation, "aggregate: need at least one activation vector");
    const size_t dim = outputs.front().size();

    std::vector<double> sum(dim, 0.0);
    for (const auto& v : outputs) {
        if (v.size() != dim)
            raise(errc::shape_mismatch, "aggregate: inconsistent vector lengths");
        for (size_t i = 0; i < dim; ++i) {
            if (v[i] < 0.0f)
                raise(errc::validation, "aggregate: activations must be non-negative");
            sum[i] += v[i];
        }
    }

    Embedding e;
    e.values.resize(dim);
    const double mx = *std::max_element(sum.begin(), sum.end());
    if (mx <= 0.0) {
        e.degenerate = true;
        e.normalized = true;
        return e;
    }
    for (size_t i = 0; i < dim; ++i) e.values[i] = static_cast<float>(sum[i] / mx);
    e.normalized = true;
    return e;
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
    if (a.values.size() != b.values.size())
        raise(errc::shape_mismatch, "cosine_similarity: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        dot += static_cast<double>(a.values[i]) * b.values[i];
        na += static_cast<double>(a.values[i]) * a.values[i];
        nb += static_cast<double>(b.values[i]) * b.values[i];
    }
    if (na <= 0.0 || nb <= 0.0)
        raise(errc::validation, "cosine_similarity: zero-norm embedding");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

ThresholdMode threshold_mode_from_name(const std::string& name) {
    if (name == "distance") return ThresholdMode::distance;
    if (name == "literal") return ThresholdMode::literal;
    raise(errc::validation, "unknown threshold mode: " + name);
}

const char* threshold_mode_name(ThresholdMode mode) {
    return mode == ThresholdMode::distance ? "distance" : "literal";
}

SpeakerRegistry::SpeakerRegistry(double threshold, ThresholdMode mode)
    : threshold_(threshold), mode_(mode) {}

void SpeakerRegistry::reset() { speakers_.clear(); }

int SpeakerRegistry::enroll(const Embedding& e) {
    Speaker s;
    s.id = "S" + std::to_string(speakers_.size());
    s.sum.assign(e.values.begin(), e.values.end());
    s.count = 1;
    refresh_representative(s);
    speakers_.push_back(std::move(s));
    return static_cast<int>(speakers_.size()) - 1;
}

void SpeakerRegistry::refresh_representative(Speaker& s) {
    s.representative.values.resize(s.sum.size());
    double mx = 0.0;
    for (double v : s.sum) mx = std::max(mx, v);
    if (mx <= 0.0) {
        std::fill(s.representative.values.begin(), s.representative.values.end(), 0.0f);
        s.representative.degenerate = true;
    } else {
        for (size_t i = 0; i < s.sum.size(); ++i)
            s.representative.values[i] = static_cast<float>(s.sum[i] / mx);
        s.representative.degenerate = false;
    }
    s.representative.normalized = true;
}

int SpeakerRegistry::assign(const Embedding& e) {
    if (e.degenerate)
        raise(errc::validation, "assign: degenerate embedding");
    if (!e.normalized)
        raise(errc::validation, "assign: embedding must be max-normalized");

    if (speakers_.empty()) return enroll(e);

    int best = -1;
    double best_sim = -2.0;
    for (size_t i = 0; i < speakers_.size(); ++i) {
        if (speakers_[i].representative.degenerate) continue;
        const double sim = cosine_similarity(e, speakers_[i].representative);
        if (sim > best_sim) {
            best_sim = sim;
            best = static_cast<int>(i);
        }
    }
    if (best < 0) return enroll(e);

    const bool is_new = mode_ == ThresholdMode::distance ? (1.0 - best_sim) > threshold_
                                                         : best_sim > threshold_;
    if (is_new) return enroll(e);

    Speaker& s = speakers_[best];
    for (size_t i = 0; i < e.values.size(); ++i) s.sum[i] += e.values[i];
    s.count += 1;
    refresh_representative(s);
    return best;
}

int SpeakerRegistry::assign_or_inherit(const Embedding& e, int previous_label) {
    if (!e.degenerate) return assign(e);
    if (previous_label >= 0 && previous_label < speaker_count()) return previous_label;
    if (speakers_.empty()) return enroll(e);
    return 0;
}

} // namespace diar
