#include "diar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "diar/error.hpp"

namespace diar {

namespace {

std::vector<std::string> speaker_index(const Timeline& t) { return t.speakers(); }

int index_of(const std::vector<std::string>& labels, const std::string& s) {
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == s) return static_cast<int>(i);
    return -1;
}

// Speakers active at time point t (midpoint queries only, so boundary
// inclusion does not matter).
void active_at(const Timeline& tl, double t, std::vector<bool>& mask,
               const std::vector<std::string>& labels) {
    std::fill(mask.begin(), mask.end(), false);
    for (const Turn& turn : tl.turns) {
        if (turn.start <= t && t < turn.end) {
            const int idx = index_of(labels, turn.speaker);
            if (idx >= 0) mask[idx] = true;
        }
    }
}

bool inside_collar(const std::vector<std::pair<double, double>>& zones, double t) {
    for (const auto& z : zones)
        if (t >= z.first && t < z.second) return true;
    return false;
}

std::vector<std::pair<double, double>> collar_zones(const Timeline& ref, double collar) {
    std::vector<std::pair<double, double>> zones;
    if (collar <= 0.0) return zones;
    for (const Turn& t : ref.turns) {
        zones.push_back({t.start - collar, t.start + collar});
        zones.push_back({t.end - collar, t.end + collar});
    }
    return zones;
}

std::vector<std::pair<std::string, std::string>> mapping_from_assignment(
    const std::vector<std::vector<double>>& overlap, const std::vector<int>& ref_to_hyp,
    const std::vector<std::string>& ref_labels, const std::vector<std::string>& hyp_labels) {
    std::vector<std::pair<std::string, std::string>> mapping;
    for (size_t r = 0; r < ref_labels.size(); ++r) {
        const int h = ref_to_hyp[r];
        if (h >= 0 && h < static_cast<int>(hyp_labels.size()) && overlap[r][h] > 0.0)
            mapping.push_back({hyp_labels[h], ref_labels[r]});
    }
    std::sort(mapping.begin(), mapping.end());
    return mapping;
}

} // namespace

std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights) {
    const int rows = static_cast<int>(weights.size());
    const int cols = rows == 0 ? 0 : static_cast<int>(weights[0].size());
    if (rows == 0 || cols == 0) return std::vector<int>(rows, -1);

    const int n = std::max(rows, cols);
    double max_w = 0.0;
    for (const auto& row : weights)
        for (double w : row) max_w = std::max(max_w, w);

    // Pad to square and convert to a minimization problem.
    std::vector<std::vector<double>> cost(n, std::vector<double>(n, max_w));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) cost[i][j] = max_w - weights[i][j];

    // Hungarian algorithm with potentials, O(n^3).
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> row_to_col(rows, -1);
    for (int j = 1; j <= n; ++j) {
        const int i = p[j];
        if (i >= 1 && i <= rows && j <= cols) row_to_col[i - 1] = j - 1;
    }
    return row_to_col;
}

double assignment_weight(const std::vector<std::vector<double>>& weights,
                         const std::vector<int>& row_to_col) {
    double total = 0.0;
    for (size_t r = 0; r < weights.size(); ++r) {
        const int c = row_to_col[r];
        if (c >= 0) total += weights[r][c];
    }
    return total;
}

double best_assignment_weight_bruteforce(const std::vector<std::vector<double>>& weights) {
    const int rows = static_cast<int>(weights.size());
    const int cols = rows == 0 ? 0 : static_cast<int>(weights[0].size());
    if (rows == 0 || cols == 0) return 0.0;
    // Permute the smaller side over the larger one.
    if (rows <= cols) {
        std::vector<int> cols_idx(cols);
        std::iota(cols_idx.begin(), cols_idx.end(), 0);
        double best = 0.0;
        std::vector<int> pick(rows);
        // choose an injective map rows -> cols by permuting columns and
        // taking the first `rows` entries
        std::sort(cols_idx.begin(), cols_idx.end());
        do {
            double total = 0.0;
            for (int r = 0; r < rows; ++r) total += weights[r][cols_idx[r]];
            best = std::max(best, total);
        } while (std::next_permutation(cols_idx.begin(), cols_idx.end()));
        return best;
    }
    std::vector<int> rows_idx(rows);
    std::iota(rows_idx.begin(), rows_idx.end(), 0);
    double best = 0.0;
    do {
        double total = 0.0;
        for (int c = 0; c < cols; ++c) total += weights[rows_idx[c]][c];
        best = std::max(best, total);
    } while (std::next_permutation(rows_idx.begin(), rows_idx.end()));
    return best;
}

namespace {

struct ScoredSweep {
    std::vector<std::string> ref_labels, hyp_labels;
    std::vector<std::vector<double>> overlap; // scored overlap ref x hyp
    double den = 0.0, miss = 0.0, fa = 0.0;
    // per-elementary-interval activity rows kept for the speaker-error pass
    struct Piece {
        double len;
        std::vector<bool> ref_active, hyp_active;
    };
    std::vector<Piece> pieces;
    size_t breakpoint_count = 0;
};

ScoredSweep sweep(const Timeline& ref, const Timeline& hyp, double collar) {
    ScoredSweep s;
    s.ref_labels = speaker_index(ref);
    s.hyp_labels = speaker_index(hyp);

    std::vector<double> points{0.0};
    const auto zones = collar_zones(ref, collar);
    for (const Turn& t : ref.turns) {
        points.push_back(t.start);
        points.push_back(t.end);
    }
    for (const auto& z : zones) {
        points.push_back(std::max(0.0, z.first));
        points.push_back(std::max(0.0, z.second));
    }
    for (const Turn& t : hyp.turns) {
        points.push_back(t.start);
        points.push_back(t.end);
    }
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());
    s.breakpoint_count = points.size();

    s.overlap.assign(s.ref_labels.size(), std::vector<double>(s.hyp_labels.size(), 0.0));
    std::vector<bool> r_mask(s.ref_labels.size()), h_mask(s.hyp_labels.size());

    for (size_t i = 0; i + 1 < points.size(); ++i) {
        const double a = points[i], b = points[i + 1];
        const double len = b - a;
        if (len <= 0.0) continue;
        const double mid = 0.5 * (a + b);
        if (inside_collar(zones, mid)) continue;

        active_at(ref, mid, r_mask, s.ref_labels);
        active_at(hyp, mid, h_mask, s.hyp_labels);
        const bool any_ref = std::find(r_mask.begin(), r_mask.end(), true) != r_mask.end();
        const bool any_hyp = std::find(h_mask.begin(), h_mask.end(), true) != h_mask.end();
        if (!any_ref && !any_hyp) continue;

        if (any_ref) {
            s.den += len;
            if (!any_hyp) s.miss += len;
        } else {
            s.fa += len;
        }
        for (size_t r = 0; r < r_mask.size(); ++r) {
            if (!r_mask[r]) continue;
            for (size_t h = 0; h < h_mask.size(); ++h)
                if (h_mask[h]) s.overlap[r][h] += len;
        }
        if (any_ref && any_hyp) s.pieces.push_back({len, r_mask, h_mask});
    }
    return s;
}

} // namespace

DerReport der(const Timeline& reference, const Timeline& hypothesis, double collar) {
    reference.validate();
    hypothesis.validate();
    if (reference.turns.empty())
        raise(errc::validation, "der: empty reference (undefined denominator)");
    if (!reference.file_id.empty() && !hypothesis.file_id.empty() &&
        reference.file_id != hypothesis.file_id)
        raise(errc::validation, "der: file id mismatch (" + reference.file_id + " vs " +
                                    hypothesis.file_id + ")");
    if (collar < 0.0) raise(errc::validation, "der: collar must be >= 0");

    ScoredSweep s = sweep(reference, hypothesis, collar);
    if (s.den <= 0.0)
        raise(errc::validation, "der: no scored reference speech (undefined denominator)");

    const std::vector<int> ref_to_hyp = max_weight_assignment(s.overlap);
    // hyp speaker -> mapped ref index (or -1)
    std::vector<int> hyp_to_ref(s.hyp_labels.size(), -1);
    for (size_t r = 0; r < ref_to_hyp.size(); ++r)
        if (ref_to_hyp[r] >= 0 && s.overlap[r][ref_to_hyp[r]] > 0.0)
            hyp_to_ref[ref_to_hyp[r]] = static_cast<int>(r);

    double spk = 0.0;
    for (const auto& piece : s.pieces) {
        bool correct = false;
        for (size_t h = 0; h < piece.hyp_active.size() && !correct; ++h) {
            if (!piece.hyp_active[h]) continue;
            const int r = hyp_to_ref[h];
            if (r >= 0 && piece.ref_active[r]) correct = true;
        }
        if (!correct) spk += piece.len;
    }

    DerReport report;
    report.scored_time = s.den;
    report.e_spk = spk / s.den;
    report.e_fa = s.fa / s.den;
    report.e_miss = s.miss / s.den;
    report.der = report.e_spk + report.e_fa + report.e_miss;
    report.mapping = mapping_from_assignment(s.overlap, ref_to_hyp, s.ref_labels, s.hyp_labels);
    return report;
}

std::vector<std::pair<std::string, std::string>> optimal_mapping(const Timeline& reference,
                                                                 const Timeline& hypothesis) {
    ScoredSweep s = sweep(reference, hypothesis, 0.0);
    const std::vector<int> ref_to_hyp = max_weight_assignment(s.overlap);
    return mapping_from_assignment(s.overlap, ref_to_hyp, s.ref_labels, s.hyp_labels);
}

DerReport frame_der_oracle(const Timeline& reference, const Timeline& hypothesis,
                           double collar, double frame) {
    reference.validate();
    hypothesis.validate();
    if (reference.turns.empty())
        raise(errc::validation, "frame oracle: empty reference");

    double t_end = 0.0;
    for (const Turn& t : reference.turns) t_end = std::max(t_end, t.end);
    for (const Turn& t : hypothesis.turns) t_end = std::max(t_end, t.end);
    t_end += collar;

    const auto ref_labels = speaker_index(reference);
    const auto hyp_labels = speaker_index(hypothesis);
    const auto zones = collar_zones(reference, collar);
    const size_t n_frames = static_cast<size_t>(std::ceil(t_end / frame));

    std::vector<std::vector<double>> overlap(ref_labels.size(),
                                             std::vector<double>(hyp_labels.size(), 0.0));
    std::vector<bool> r_mask(ref_labels.size()), h_mask(hyp_labels.size());

    struct FrameInfo {
        std::vector<bool> ref_active, hyp_active;
    };
    std::vector<FrameInfo> kept;
    size_t den_frames = 0, miss_frames = 0, fa_frames = 0;

    for (size_t i = 0; i < n_frames; ++i) {
        const double mid = (static_cast<double>(i) + 0.5) * frame;
        if (inside_collar(zones, mid)) continue;
        active_at(reference, mid, r_mask, ref_labels);
        active_at(hypothesis, mid, h_mask, hyp_labels);
        const bool any_ref = std::find(r_mask.begin(), r_mask.end(), true) != r_mask.end();
        const bool any_hyp = std::find(h_mask.begin(), h_mask.end(), true) != h_mask.end();
        if (!any_ref && !any_hyp) continue;
        if (any_ref) {
            ++den_frames;
            if (!any_hyp) ++miss_frames;
        } else {
            ++fa_frames;
        }
        for (size_t r = 0; r < r_mask.size(); ++r) {
            if (!r_mask[r]) continue;
            for (size_t h = 0; h < h_mask.size(); ++h)
                if (h_mask[h]) overlap[r][h] += frame;
        }
        if (any_ref && any_hyp) kept.push_back({r_mask, h_mask});
    }
    if (den_frames == 0)
        raise(errc::validation, "frame oracle: no scored reference speech");

    // Exhaustive mapping when the speaker counts allow it; this keeps the
    // oracle independent of the Hungarian implementation it cross-checks.
    std::vector<int> ref_to_hyp(ref_labels.size(), -1);
    if (!hyp_labels.empty()) {
        if (ref_labels.size() <= 8 && hyp_labels.size() <= 8) {
            const size_t n = std::max(ref_labels.size(), hyp_labels.size());
            std::vector<int> perm(n);
            std::iota(perm.begin(), perm.end(), 0);
            double best = -1.0;
            std::vector<int> best_map(ref_labels.size(), -1);
            do {
                double total = 0.0;
                for (size_t r = 0; r < ref_labels.size(); ++r)
                    if (perm[r] < static_cast<int>(hyp_labels.size()))
                        total += overlap[r][perm[r]];
                if (total > best) {
                    best = total;
                    for (size_t r = 0; r < ref_labels.size(); ++r)
                        best_map[r] =
                            perm[r] < static_cast<int>(hyp_labels.size()) ? perm[r] : -1;
                }
            } while (std::next_permutation(perm.begin(), perm.end()));
            ref_to_hyp = best_map;
        } else {
            ref_to_hyp = max_weight_assignment(overlap);
        }
    }

    std::vector<int> hyp_to_ref(hyp_labels.size(), -1);
    for (size_t r = 0; r < ref_to_hyp.size(); ++r)
        if (ref_to_hyp[r] >= 0 && overlap[r][ref_to_hyp[r]] > 0.0)
            hyp_to_ref[ref_to_hyp[r]] = static_cast<int>(r);

    size_t spk_frames = 0;
    for (const auto& f : kept) {
        bool correct = false;
        for (size_t h = 0; h < f.hyp_active.size() && !correct; ++h) {
            if (!f.hyp_active[h]) continue;
            const int r = hyp_to_ref[h];
            if (r >= 0 && f.ref_active[r]) correct = true;
        }
        if (!correct) ++spk_frames;
    }

    DerReport report;
    report.scored_time = static_cast<double>(den_frames) * frame;
    report.e_spk = static_cast<double>(spk_frames) / den_frames;
    report.e_fa = static_cast<double>(fa_frames) / den_frames;
    report.e_miss = static_cast<double>(miss_frames) / den_frames;
    report.der = report.e_spk + report.e_fa + report.e_miss;
    report.mapping = mapping_from_assignment(overlap, ref_to_hyp, ref_labels, hyp_labels);
    return report;
}

} // namespace diar
