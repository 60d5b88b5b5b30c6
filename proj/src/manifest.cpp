#include "diar/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "diar/error.hpp"

namespace fs = std::filesystem;

namespace diar {

int Manifest::label_index(const std::string& label) const {
    const auto it = std::lower_bound(class_labels.begin(), class_labels.end(), label);
    if (it == class_labels.end() || *it != label)
        raise(errc::validation, "unknown class label: " + label);
    return static_cast<int>(it - class_labels.begin());
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(errc::io_error, "cannot open manifest: " + path);
    const fs::path base = fs::path(path).parent_path();

    Manifest manifest;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const size_t first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;

        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) fields.push_back(field);
        if (fields.size() < 2 || fields.size() > 3)
            raise(errc::parse_error, path + ":" + std::to_string(line_no) +
                                         ": expected 2 or 3 tab-separated fields");

        ManifestRecord rec;
        rec.line_no = line_no;
        rec.wav_path = (base / fields[0]).string();
        if (!fs::exists(rec.wav_path))
            raise(errc::validation, path + ":" + std::to_string(line_no) +
                                        ": missing wav file " + rec.wav_path);

        if (fields[1].size() > 5 && fields[1].substr(fields[1].size() - 5) == ".rttm") {
            rec.rttm_path = (base / fields[1]).string();
            if (!fs::exists(rec.rttm_path))
                raise(errc::validation, path + ":" + std::to_string(line_no) +
                                            ": missing rttm file " + rec.rttm_path);
        } else {
            rec.label = fields[1];
            if (rec.label.empty())
                raise(errc::parse_error,
                      path + ":" + std::to_string(line_no) + ": empty label field");
        }

        if (fields.size() == 3) {
            rec.split = fields[2];
            if (rec.split != "train" && rec.split != "test")
                raise(errc::parse_error, path + ":" + std::to_string(line_no) +
                                             ": split tag must be train or test, got '" +
                                             rec.split + "'");
            manifest.has_split_tags = true;
        }
        manifest.records.push_back(std::move(rec));
    }

    for (const auto& rec : manifest.records)
        if (!rec.label.empty()) manifest.class_labels.push_back(rec.label);
    std::sort(manifest.class_labels.begin(), manifest.class_labels.end());
    manifest.class_labels.erase(
        std::unique(manifest.class_labels.begin(), manifest.class_labels.end()),
        manifest.class_labels.end());
    return manifest;
}

} // namespace diar
