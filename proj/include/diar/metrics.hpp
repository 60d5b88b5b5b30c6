#pragma once

#include <string>
#include <utility>
#include <vector>

#include "diar/timeline.hpp"

namespace diar {

// All components share one denominator (total scored reference speech time),
// so der == e_spk + e_fa + e_miss holds exactly.
struct DerReport {
    double e_spk = 0.0;
    double e_fa = 0.0;
    double e_miss = 0.0;
    double der = 0.0;
    double scored_time = 0.0;
    std::vector<std::pair<std::string, std::string>> mapping; // hyp -> ref
};

// Interval-exact DER with a +/-collar exclusion zone around every reference
// boundary. The speaker mapping maximizes overlap over the scored regions.
DerReport der(const Timeline& reference, const Timeline& hypothesis, double collar = 0.25);

// Maximum-overlap one-to-one speaker pairing over full (uncollared) time.
std::vector<std::pair<std::string, std::string>> optimal_mapping(const Timeline& reference,
                                                                 const Timeline& hypothesis);

// Rasterized scorer used as the independent test oracle for der(); the
// mapping is found by exhaustive permutation search when feasible.
DerReport frame_der_oracle(const Timeline& reference, const Timeline& hypothesis,
                           double collar, double frame = 0.010);

// Hungarian maximum-weight one-to-one assignment; returns, per row, the
// assigned column or -1. Rectangular matrices are padded internally.
std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights);

// Exhaustive-permutation optimum of the same objective (test oracle).
double best_assignment_weight_bruteforce(const std::vector<std::vector<double>>& weights);
double assignment_weight(const std::vector<std::vector<double>>& weights,
                         const std::vector<int>& row_to_col);

} // namespace diar
