#include "diar/rttm.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "diar/error.hpp"

namespace diar {

namespace {

double parse_time(const std::string& token, int line_no, const std::string& source) {
    size_t consumed = 0;
    double v = 0.0;
    try {
        v = std::stod(token, &consumed);
    } catch (const std::exception&) {
        raise(errc::parse_error,
              source + ":" + std::to_string(line_no) + ": bad time field '" + token + "'");
    }
    if (consumed != token.size())
        raise(errc::parse_error,
              source + ":" + std::to_string(line_no) + ": bad time field '" + token + "'");
    return v;
}

} // namespace

Timeline parse_rttm_stream(std::istream& in, const std::string& source_name) {
    Timeline timeline;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream iss(line);
        std::vector<std::string> fields;
        std::string tok;
        while (iss >> tok) fields.push_back(tok);
        if (fields.empty() || fields[0][0] == ';') continue;
        if (fields[0] != "SPEAKER") continue;
        if (fields.size() < 8)
            raise(errc::parse_error, source_name + ":" + std::to_string(line_no) +
                                         ": SPEAKER record needs at least 8 fields");

        const std::string& file_id = fields[1];
        const double tbeg = parse_time(fields[3], line_no, source_name);
        const double tdur = parse_time(fields[4], line_no, source_name);
        if (tdur <= 0.0)
            raise(errc::parse_error, source_name + ":" + std::to_string(line_no) +
                                         ": non-positive duration " + fields[4]);
        if (tbeg < 0.0)
            raise(errc::parse_error,
                  source_name + ":" + std::to_string(line_no) + ": negative onset");

        if (timeline.file_id.empty())
            timeline.file_id = file_id;
        else if (timeline.file_id != file_id)
            raise(errc::parse_error, source_name + ":" + std::to_string(line_no) +
                                         ": multiple file ids in one RTTM (" +
                                         timeline.file_id + " vs " + file_id + ")");

        timeline.turns.push_back({tbeg, tbeg + tdur, fields[7]});
    }
    std::stable_sort(timeline.turns.begin(), timeline.turns.end(),
                     [](const Turn& a, const Turn& b) { return a.start < b.start; });
    return timeline;
}

Timeline parse_rttm(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(errc::io_error, "cannot open RTTM file: " + path);
    return parse_rttm_stream(in, path);
}

void write_rttm_stream(const Timeline& timeline, std::ostream& out) {
    const std::string file_id = timeline.file_id.empty() ? "stream" : timeline.file_id;
    char buf[64];
    for (const Turn& t : timeline.turns) {
        std::snprintf(buf, sizeof(buf), "%.3f %.3f", t.start, t.end - t.start);
        out << "SPEAKER " << file_id << " 1 " << buf << " <NA> <NA> " << t.speaker
            << " <NA> <NA>\n";
    }
}

void write_rttm(const Timeline& timeline, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(errc::io_error, "cannot write RTTM file: " + path);
    write_rttm_stream(timeline, out);
    if (!out) raise(errc::io_error, "short write to RTTM file: " + path);
}

} // namespace diar
