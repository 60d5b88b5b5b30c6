#pragma once

#include <complex>
#include <vector>

namespace diar {

// Real-to-complex FFT of fixed size n, producing n/2 + 1 bins.
// transform() is safe to call concurrently from multiple threads.
class RealFft {
public:
    explicit RealFft(int n);

    int size() const { return n_; }
    int bins() const { return n_ / 2 + 1; }

    void transform(const double* input, std::complex<double>* output) const;

private:
    int n_;
    void* plan_; // fftw_plan
};

} // namespace diar
