#include "diar/timeline.hpp"

#include <algorithm>
#include <map>

#include "diar/error.hpp"

namespace diar {

void Timeline::validate() const {
    std::map<std::string, double> last_end;
    double prev_start = -1.0;
    for (const Turn& t : turns) {
        if (!(t.start < t.end))
            raise(errc::validation, "timeline: turn must have start < end");
        if (t.start < prev_start)
            raise(errc::validation, "timeline: turns must be sorted by start");
        prev_start = t.start;
        auto it = last_end.find(t.speaker);
        if (it != last_end.end() && t.start < it->second)
            raise(errc::validation,
                  "timeline: overlapping turns for speaker " + t.speaker);
        double& e = last_end[t.speaker];
        e = std::max(e, t.end);
    }
}

double Timeline::total_speech() const {
    double total = 0.0;
    for (const Turn& t : turns) total += t.end - t.start;
    return total;
}

std::vector<std::string> Timeline::speakers() const {
    std::vector<std::string> out;
    for (const Turn& t : turns)
        if (std::find(out.begin(), out.end(), t.speaker) == out.end())
            out.push_back(t.speaker);
    return out;
}

} // namespace diar
