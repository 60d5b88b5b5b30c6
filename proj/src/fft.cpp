#include "diar/fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>
#include <mutex>
#include <vector>

#include "diar/error.hpp"

namespace diar {

namespace {

// FFTW plan creation is not thread-safe; execution via the new-array
// interface is. Plans are created once per size with FFTW_UNALIGNED so any
// caller-provided buffers are acceptable.
std::mutex& plan_mutex() {
    static std::mutex m;
    return m;
}

fftw_plan plan_for(int n) {
    static std::map<int, fftw_plan> plans;
    std::lock_guard<std::mutex> lock(plan_mutex());
    auto it = plans.find(n);
    if (it != plans.end()) return it->second;

    std::vector<double> in(static_cast<size_t>(n));
    std::vector<fftw_complex> out(static_cast<size_t>(n / 2 + 1));
    fftw_plan p = fftw_plan_dft_r2c_1d(n, in.data(), out.data(),
                                       FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!p) raise(errc::numeric_error, "fftw plan creation failed");
    plans.emplace(n, p);
    return p;
}

} // namespace

RealFft::RealFft(int n) : n_(n) {
    if (n <= 1) raise(errc::validation, "fft size must be > 1");
    plan_ = plan_for(n);
}

void RealFft::transform(const double* input, std::complex<double>* output) const {
    std::vector<double> scratch(static_cast<size_t>(n_));
    std::memcpy(scratch.data(), input, sizeof(double) * static_cast<size_t>(n_));
    fftw_execute_dft_r2c(static_cast<fftw_plan>(plan_), scratch.data(),
                         reinterpret_cast<fftw_complex*>(output));
}

} // namespace diar
