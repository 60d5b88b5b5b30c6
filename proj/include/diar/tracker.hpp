#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace diar {

// Max-normalized class-activation vector characterizing a speaker.
struct Embedding {
    std::vector<float> values;
    bool normalized = false;
    bool degenerate = false;
};

// Class-wise sum over the excerpt, divided by the maximum summed class.
// All-zero input yields the zero vector flagged degenerate.
Embedding aggregate(const std::vector<std::vector<float>>& outputs);

double cosine_similarity(const Embedding& a, const Embedding& b);

// `distance` treats the 0.4 threshold as a cosine-distance bound for
// enrolling a new speaker; `literal` applies the similarity>threshold
// reading as written.
enum class ThresholdMode : uint8_t { distance = 0, literal = 1 };

ThresholdMode threshold_mode_from_name(const std::string& name);
const char* threshold_mode_name(ThresholdMode mode);

// Online enrollment registry. Sequential by design: assignments depend on
// everything seen before.
class SpeakerRegistry {
public:
    explicit SpeakerRegistry(double threshold = 0.4,
                             ThresholdMode mode = ThresholdMode::distance);

    // Assigns to an existing speaker (updating its running mean) or enrolls
    // a new one. Throws on degenerate embeddings.
    int assign(const Embedding& e);

    // Pipeline policy for degenerate embeddings: inherit previous_label when
    // valid, otherwise enroll S0. Non-degenerate input falls through to
    // assign().
    int assign_or_inherit(const Embedding& e, int previous_label);

    void reset();

    int speaker_count() const { return static_cast<int>(speakers_.size()); }
    const std::string& speaker_id(int index) const { return speakers_[index].id; }
    // Running mean re-normalized to max 1.
    const Embedding& representative(int index) const { return speakers_[index].representative; }
    int segment_count(int index) const { return speakers_[index].count; }

    double threshold() const { return threshold_; }
    ThresholdMode mode() const { return mode_; }

private:
    struct Speaker {
        std::string id;
        std::vector<double> sum; // running sum of assigned embeddings
        int count = 0;
        Embedding representative;
    };

    int enroll(const Embedding& e);
    void refresh_representative(Speaker& s);

    double threshold_;
    ThresholdMode mode_;
    std::vector<Speaker> speakers_;
};

} // namespace diar
