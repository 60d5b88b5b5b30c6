#pragma once

#include <string>
#include <vector>

#include "diar/audio.hpp"
#include "diar/features.hpp"
#include "diar/model.hpp"
#include "diar/timeline.hpp"
#include "diar/tracker.hpp"

namespace diar {

struct PipelineConfig {
    FeatureKind features = FeatureKind::cqt;
    double threshold = 0.4;
    ThresholdMode threshold_mode = ThresholdMode::distance;
    // Majority-vote half-width in windows; 0 disables smoothing.
    int smoothing_halfwidth = 2;
    // Turns shorter than this are absorbed into the longer neighbor.
    double min_turn_duration = 0.5;
    bool vad_enabled = false;
    double vad_threshold_db = -40.0;
    int threads = 1;
    std::string file_id = "stream";
};

// Per-frame speech mask: frames whose RMS falls threshold_db below the
// stream RMS are marked non-speech. Frames are non-overlapping.
std::vector<bool> vad_energy(const AudioBuffer& audio, double frame_seconds = 0.032,
                             double threshold_db = -40.0);

// Majority vote over +/-halfwidth windows; ties keep the previously decided
// label. Never introduces a label absent from the input.
std::vector<int> smooth_labels(const std::vector<int>& raw, int halfwidth);

// audio (mono, any rate) -> features -> classifier activations -> online
// tracker -> smoothed, merged timeline. The model's feature kind must match
// config.features.
Timeline diarize(const AudioBuffer& audio, RcnnModel& model, const PipelineConfig& config);

} // namespace diar
