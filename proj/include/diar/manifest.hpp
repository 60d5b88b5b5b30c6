#pragma once

#include <string>
#include <vector>

namespace diar {

// One record per line, tab-separated, '#' comments:
//   <wav path> TAB <speaker label | rttm path> [TAB train|test]
// A second field ending in ".rttm" is a reference annotation; anything else
// is a class label. Paths are resolved relative to the manifest file.
struct ManifestRecord {
    std::string wav_path;
    std::string rttm_path; // empty for label records
    std::string label;     // empty for rttm records
    std::string split;     // "", "train" or "test"
    int line_no = 0;
};

struct Manifest {
    std::vector<ManifestRecord> records;
    std::vector<std::string> class_labels; // sorted unique labels
    bool has_split_tags = false;

    int label_index(const std::string& label) const;
};

// Parses and validates: referenced files must exist; split tags must be
// train/test. Errors carry file and line context.
Manifest load_manifest(const std::string& path);

} // namespace diar
