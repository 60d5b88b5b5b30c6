#pragma once

#include <string>
#include <vector>

namespace diar {

struct Turn {
    double start = 0.0;
    double end = 0.0;
    std::string speaker;
};

// "Who spoke when": sorted, positive-length turns. Serves as both reference
// annotation and hypothesis output.
struct Timeline {
    std::string file_id;
    std::vector<Turn> turns;

    // start < end, sorted by start, per-speaker turns non-overlapping.
    void validate() const;
    double total_speech() const;
    std::vector<std::string> speakers() const;
};

} // namespace diar
