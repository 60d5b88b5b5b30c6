#pragma once

#include <iosfwd>
#include <string>

#include "diar/timeline.hpp"

namespace diar {

// RTTM v1.3 SPEAKER records. Non-SPEAKER record types are skipped; malformed
// SPEAKER lines raise parse errors naming the line number. Output times use
// three decimals (1 ms).
Timeline parse_rttm(const std::string& path);
Timeline parse_rttm_stream(std::istream& in, const std::string& source_name);

void write_rttm(const Timeline& timeline, const std::string& path);
void write_rttm_stream(const Timeline& timeline, std::ostream& out);

} // namespace diar
