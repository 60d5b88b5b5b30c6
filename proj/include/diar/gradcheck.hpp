#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <type_traits>
#include <vector>

#include "diar/tensor.hpp"

namespace diar {

// Central-difference gradient verification. Layers are checked in double
// precision; dropout must be disabled and batchnorm statistics fixed by the
// caller (a deterministic loss closure is assumed).

inline double gradcheck_relative_error(double analytic, double numeric) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale < 1e-8) return 0.0; // both effectively zero
    return std::abs(analytic - numeric) / scale;
}

// loss() must re-evaluate the full forward pass from the current contents of
// the checked buffers. elems lists every scalar to perturb; analytic holds
// the matching gradients in the same order.
inline double grad_check(const std::function<double()>& loss, std::span<double* const> elems,
                         std::span<const double> analytic, double eps = 1e-4) {
    double max_err = 0.0;
    for (size_t i = 0; i < elems.size(); ++i) {
        double* x = elems[i];
        const double saved = *x;
        *x = saved + eps;
        const double up = loss();
        *x = saved - eps;
        const double down = loss();
        *x = saved;
        const double numeric = (up - down) / (2.0 * eps);
        max_err = std::max(max_err, gradcheck_relative_error(analytic[i], numeric));
    }
    return max_err;
}

// Convenience: collect pointers to every element of a set of tensors.
template <class T>
void collect_elements(Tensor<T>& t, std::vector<double*>& out) {
    static_assert(std::is_same_v<T, double>, "gradient checks run in double precision");
    for (auto& v : t.data) out.push_back(&v);
}

} // namespace diar
