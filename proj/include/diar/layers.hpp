#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "diar/parallel.hpp"
#include "diar/rng.hpp"
#include "diar/tensor.hpp"

namespace diar {

enum class Head : uint8_t { sigmoid = 0, softmax = 1 };

template <class T>
struct ParamRef {
    std::string name;
    Tensor<T>* value;
    Tensor<T>* grad;
};

namespace detail {

template <class T>
void glorot_uniform(Tensor<T>& w, int fan_in, int fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (T& v : w.data) v = static_cast<T>(rng.uniform(-a, a));
}

} // namespace detail

// ---------------------------------------------------------------------------
// conv2d: 3x3 kernels, stride 1, zero padding 1 ("same"). Input [N,Cin,H,W].
// Planes are copied into zero-padded scratch so the 9-tap stencil runs
// branch-free over contiguous rows; restrict-qualified pointers let the
// inner x loops vectorize.
// ---------------------------------------------------------------------------
template <class T>
class Conv2d {
public:
    Conv2d(int in_channels, int out_channels)
        : in_channels_(in_channels), out_channels_(out_channels),
          weight({out_channels, in_channels, 3, 3}), bias({out_channels}),
          weight_grad({out_channels, in_channels, 3, 3}), bias_grad({out_channels}) {}

    void init(Rng& rng) {
        detail::glorot_uniform(weight, in_channels_ * 9, out_channels_ * 9, rng);
        bias.fill(T(0));
    }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.ndim() != 4 || x.dim(1) != in_channels_)
            raise(errc::shape_mismatch, "conv2d: input channel mismatch");
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        h_ = h;
        w_ = w;
        batch_ = n;
        // padded input is kept for the weight-gradient pass
        xpad_.assign(static_cast<size_t>(n) * in_channels_ * (h + 2) * (w + 2), T(0));
        Tensor<T> y({n, out_channels_, h, w});

        parallel_for(static_cast<size_t>(n), threads, [&](size_t b0, size_t b1, int) {
            for (size_t b = b0; b < b1; ++b) forward_sample(x, y, static_cast<int>(b));
        });
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const int n = batch_, h = h_, w = w_;
        Tensor<T> dx({n, in_channels_, h, w});
        weight_grad.fill(T(0));
        bias_grad.fill(T(0));

        const int workers = std::max(1, threads);
        std::vector<Tensor<T>> wg(workers, Tensor<T>(weight.shape));
        std::vector<Tensor<T>> bg(workers, Tensor<T>(bias.shape));
        parallel_for(static_cast<size_t>(n), threads, [&](size_t b0, size_t b1, int tid) {
            std::vector<T> dypad(static_cast<size_t>(h + 2) * (w + 2));
            for (size_t b = b0; b < b1; ++b)
                backward_sample(dy, dx, wg[tid], bg[tid], dypad, static_cast<int>(b));
        });
        // Reduce in worker order: deterministic for a fixed thread count.
        for (int t = 0; t < workers; ++t) {
            for (size_t i = 0; i < weight_grad.numel(); ++i)
                weight_grad.data[i] += wg[t].data[i];
            for (size_t i = 0; i < bias_grad.numel(); ++i)
                bias_grad.data[i] += bg[t].data[i];
        }
        return dx;
    }

    std::vector<ParamRef<T>> params(const std::string& prefix) {
        return {{prefix + ".weight", &weight, &weight_grad},
                {prefix + ".bias", &bias, &bias_grad}};
    }

    int in_channels_, out_channels_;
    Tensor<T> weight, bias, weight_grad, bias_grad;
    int threads = 1;
    // the first layer of a network has no upstream consumer for dx
    bool compute_input_grad = true;

private:
    std::vector<T> xpad_; // [N][Cin][h+2][w+2]
    int h_ = 0, w_ = 0, batch_ = 0;

    size_t pad_plane() const { return static_cast<size_t>(h_ + 2) * (w_ + 2); }

    // out[y][x] (+)= sum_k w[k] * pad[y+ky][x+kx]; pad is (h+2)x(w+2).
    static void stencil_accumulate(const T* __restrict__ pad, const T* __restrict__ wk,
                                   T* __restrict__ out, int h, int w) {
        const int pw = w + 2;
        for (int y = 0; y < h; ++y) {
            const T* __restrict__ r0 = pad + static_cast<size_t>(y) * pw;
            const T* __restrict__ r1 = r0 + pw;
            const T* __restrict__ r2 = r1 + pw;
            T* __restrict__ o = out + static_cast<size_t>(y) * w;
            const T w00 = wk[0], w01 = wk[1], w02 = wk[2];
            const T w10 = wk[3], w11 = wk[4], w12 = wk[5];
            const T w20 = wk[6], w21 = wk[7], w22 = wk[8];
            for (int x = 0; x < w; ++x) {
                o[x] += w00 * r0[x] + w01 * r0[x + 1] + w02 * r0[x + 2] +
                        w10 * r1[x] + w11 * r1[x + 1] + w12 * r1[x + 2] +
                        w20 * r2[x] + w21 * r2[x + 1] + w22 * r2[x + 2];
            }
        }
    }

    // wk_grad[k] += sum_{y,x} dy[y][x] * pad[y+ky][x+kx]
    static void stencil_weight_grad(const T* __restrict__ pad, const T* __restrict__ dyp,
                                    T* __restrict__ wk_grad, int h, int w) {
        const int pw = w + 2;
        T g00 = 0, g01 = 0, g02 = 0, g10 = 0, g11 = 0, g12 = 0, g20 = 0, g21 = 0, g22 = 0;
        for (int y = 0; y < h; ++y) {
            const T* __restrict__ r0 = pad + static_cast<size_t>(y) * pw;
            const T* __restrict__ r1 = r0 + pw;
            const T* __restrict__ r2 = r1 + pw;
            const T* __restrict__ d = dyp + static_cast<size_t>(y) * w;
            for (int x = 0; x < w; ++x) {
                const T dv = d[x];
                g00 += dv * r0[x];
                g01 += dv * r0[x + 1];
                g02 += dv * r0[x + 2];
                g10 += dv * r1[x];
                g11 += dv * r1[x + 1];
                g12 += dv * r1[x + 2];
                g20 += dv * r2[x];
                g21 += dv * r2[x + 1];
                g22 += dv * r2[x + 2];
            }
        }
        wk_grad[0] += g00; wk_grad[1] += g01; wk_grad[2] += g02;
        wk_grad[3] += g10; wk_grad[4] += g11; wk_grad[5] += g12;
        wk_grad[6] += g20; wk_grad[7] += g21; wk_grad[8] += g22;
    }

    void forward_sample(const Tensor<T>& x, Tensor<T>& y, int b) {
        const int h = h_, w = w_;
        const size_t plane = static_cast<size_t>(h) * w;
        const size_t pplane = pad_plane();

        for (int ci = 0; ci < in_channels_; ++ci) {
            const T* src = x.ptr() + ((static_cast<size_t>(b) * in_channels_) + ci) * plane;
            T* pad = xpad_.data() + ((static_cast<size_t>(b) * in_channels_) + ci) * pplane;
            for (int yy = 0; yy < h; ++yy)
                std::copy_n(src + static_cast<size_t>(yy) * w, w,
                            pad + static_cast<size_t>(yy + 1) * (w + 2) + 1);
        }
        for (int co = 0; co < out_channels_; ++co) {
            T* yp = y.ptr() + ((static_cast<size_t>(b) * out_channels_) + co) * plane;
            std::fill(yp, yp + plane, bias.data[co]);
            for (int ci = 0; ci < in_channels_; ++ci) {
                const T* pad =
                    xpad_.data() + ((static_cast<size_t>(b) * in_channels_) + ci) * pplane;
                const T* wk = weight.ptr() + ((static_cast<size_t>(co) * in_channels_) + ci) * 9;
                stencil_accumulate(pad, wk, yp, h, w);
            }
        }
    }

    void backward_sample(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>& wg, Tensor<T>& bg,
                         std::vector<T>& dypad, int b) const {
        const int h = h_, w = w_;
        const size_t plane = static_cast<size_t>(h) * w;
        const size_t pplane = pad_plane();

        for (int co = 0; co < out_channels_; ++co) {
            const T* dyp = dy.ptr() + ((static_cast<size_t>(b) * out_channels_) + co) * plane;

            T acc = T(0);
            for (size_t i = 0; i < plane; ++i) acc += dyp[i];
            bg.data[co] += acc;

            // padded output gradient for the input-gradient stencil
            if (compute_input_grad) {
                std::fill(dypad.begin(), dypad.end(), T(0));
                for (int yy = 0; yy < h; ++yy)
                    std::copy_n(dyp + static_cast<size_t>(yy) * w, w,
                                dypad.data() + static_cast<size_t>(yy + 1) * (w + 2) + 1);
            }

            for (int ci = 0; ci < in_channels_; ++ci) {
                const T* pad =
                    xpad_.data() + ((static_cast<size_t>(b) * in_channels_) + ci) * pplane;
                T* wgk = wg.ptr() + ((static_cast<size_t>(co) * in_channels_) + ci) * 9;
                stencil_weight_grad(pad, dyp, wgk, h, w);

                if (!compute_input_grad) continue;
                // dx = dy convolved with the 180-degree-rotated kernel
                const T* wk = weight.ptr() + ((static_cast<size_t>(co) * in_channels_) + ci) * 9;
                T flipped[9];
                for (int k = 0; k < 9; ++k) flipped[k] = wk[8 - k];
                T* dxp = dx.ptr() + ((static_cast<size_t>(b) * in_channels_) + ci) * plane;
                stencil_accumulate(dypad.data(), flipped, dxp, h, w);
            }
        }
    }
};

// ---------------------------------------------------------------------------
// batchnorm over [N,C,H,W]: per-channel statistics across N*H*W. Running
// stats use momentum 0.99 and are bias-corrected at inference so models
// trained for few steps still normalize sensibly.
// ---------------------------------------------------------------------------
template <class T>
class BatchNorm2d {
public:
    explicit BatchNorm2d(int channels)
        : channels_(channels), gamma({channels}), beta({channels}),
          gamma_grad({channels}), beta_grad({channels}),
          running_mean({channels}), running_var({channels}) {
        gamma.fill(T(1));
    }

    void init(Rng&) {
        gamma.fill(T(1));
        beta.fill(T(0));
        running_mean.fill(T(0));
        running_var.fill(T(0));
        steps = 0;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        if (x.ndim() != 4 || x.dim(1) != channels_)
            raise(errc::shape_mismatch, "batchnorm: channel mismatch");
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const size_t m = static_cast<size_t>(n) * h * w;
        training_cache_ = training;

        Tensor<T> y(x.shape);
        if (training) {
            if (m < 2) raise(errc::validation, "batchnorm: batch too small for statistics");
            mean_.assign(channels_, 0.0);
            inv_std_.assign(channels_, 0.0);
            for (int c = 0; c < channels_; ++c) {
                // single fused pass; double accumulators keep E[x^2] - mean^2 stable
                double sum = 0.0, sum_sq = 0.0;
                for_channel(x, c, [&](const T* p, size_t len) {
                    for (size_t i = 0; i < len; ++i) {
                        const double v = static_cast<double>(p[i]);
                        sum += v;
                        sum_sq += v * v;
                    }
                });
                const double mean = sum / static_cast<double>(m);
                const double var =
                    std::max(0.0, sum_sq / static_cast<double>(m) - mean * mean);
                mean_[c] = mean;
                inv_std_[c] = 1.0 / std::sqrt(var + kEps);
                running_mean.data[c] = static_cast<T>(
                    kMomentum * static_cast<double>(running_mean.data[c]) + (1.0 - kMomentum) * mean);
                running_var.data[c] = static_cast<T>(
                    kMomentum * static_cast<double>(running_var.data[c]) + (1.0 - kMomentum) * var);
            }
            ++steps;
            xhat_ = Tensor<T>(x.shape);
            apply_norm(x, y, mean_, inv_std_, &xhat_);
        } else {
            std::vector<double> mean(channels_), inv_std(channels_);
            const double correction = steps > 0 ? 1.0 - std::pow(kMomentum, steps) : 1.0;
            for (int c = 0; c < channels_; ++c) {
                if (steps > 0) {
                    mean[c] = static_cast<double>(running_mean.data[c]) / correction;
                    inv_std[c] = 1.0 / std::sqrt(static_cast<double>(running_var.data[c]) / correction + kEps);
                } else {
                    mean[c] = 0.0;
                    inv_std[c] = 1.0 / std::sqrt(1.0 + kEps);
                }
            }
            xhat_ = Tensor<T>(x.shape);
            mean_ = mean;
            inv_std_ = inv_std;
            apply_norm(x, y, mean, inv_std, &xhat_);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const int n = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
        const size_t m = static_cast<size_t>(n) * h * w;
        Tensor<T> dx(dy.shape);
        gamma_grad.fill(T(0));
        beta_grad.fill(T(0));

        for (int c = 0; c < channels_; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for_channel_pair(dy, xhat_, c, [&](const T* d, const T* xh, size_t len) {
                for (size_t i = 0; i < len; ++i) {
                    sum_dy += static_cast<double>(d[i]);
                    sum_dy_xhat += static_cast<double>(d[i]) * static_cast<double>(xh[i]);
                }
            });
            gamma_grad.data[c] = static_cast<T>(sum_dy_xhat);
            beta_grad.data[c] = static_cast<T>(sum_dy);

            const double g = static_cast<double>(gamma.data[c]);
            const double inv_std = inv_std_[c];
            if (training_cache_) {
                const double mean_dy = sum_dy / static_cast<double>(m);
                const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(m);
                for_channel_triple(dy, xhat_, dx, c, [&](const T* d, const T* xh, T* o, size_t len) {
                    for (size_t i = 0; i < len; ++i)
                        o[i] = static_cast<T>(g * inv_std *
                                              (static_cast<double>(d[i]) - mean_dy -
                                               static_cast<double>(xh[i]) * mean_dy_xhat));
                });
            } else {
                for_channel_triple(dy, xhat_, dx, c, [&](const T* d, const T*, T* o, size_t len) {
                    for (size_t i = 0; i < len; ++i)
                        o[i] = static_cast<T>(g * inv_std * static_cast<double>(d[i]));
                });
            }
        }
        return dx;
    }

    std::vector<ParamRef<T>> params(const std::string& prefix) {
        return {{prefix + ".gamma", &gamma, &gamma_grad},
                {prefix + ".beta", &beta, &beta_grad}};
    }

    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.99;

    int channels_;
    Tensor<T> gamma, beta, gamma_grad, beta_grad;
    Tensor<T> running_mean, running_var;
    int64_t steps = 0;

private:
    Tensor<T> xhat_;
    std::vector<double> mean_, inv_std_;
    bool training_cache_ = false;

    template <class Fn>
    void for_channel(const Tensor<T>& x, int c, Fn&& fn) const {
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const size_t plane = static_cast<size_t>(h) * w;
        for (int b = 0; b < n; ++b)
            fn(x.ptr() + ((static_cast<size_t>(b) * channels_) + c) * plane, plane);
    }

    template <class Fn>
    void for_channel_pair(const Tensor<T>& a, const Tensor<T>& b, int c, Fn&& fn) const {
        const int n = a.dim(0), h = a.dim(2), w = a.dim(3);
        const size_t plane = static_cast<size_t>(h) * w;
        for (int i = 0; i < n; ++i) {
            const size_t off = ((static_cast<size_t>(i) * channels_) + c) * plane;
            fn(a.ptr() + off, b.ptr() + off, plane);
        }
    }

    template <class Fn>
    void for_channel_triple(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& o, int c,
                            Fn&& fn) const {
        const int n = a.dim(0), h = a.dim(2), w = a.dim(3);
        const size_t plane = static_cast<size_t>(h) * w;
        for (int i = 0; i < n; ++i) {
            const size_t off = ((static_cast<size_t>(i) * channels_) + c) * plane;
            fn(a.ptr() + off, b.ptr() + off, o.ptr() + off, plane);
        }
    }

    void apply_norm(const Tensor<T>& x, Tensor<T>& y, const std::vector<double>& mean,
                    const std::vector<double>& inv_std, Tensor<T>* xhat) const {
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const size_t plane = static_cast<size_t>(h) * w;
        for (int b = 0; b < n; ++b) {
            for (int c = 0; c < channels_; ++c) {
                const size_t off = ((static_cast<size_t>(b) * channels_) + c) * plane;
                const T* xp = x.ptr() + off;
                T* yp = y.ptr() + off;
                T* xh = xhat->ptr() + off;
                const double mu = mean[c], is = inv_std[c];
                const double g = static_cast<double>(gamma.data[c]);
                const double be = static_cast<double>(beta.data[c]);
                for (size_t i = 0; i < plane; ++i) {
                    const double v = (static_cast<double>(xp[i]) - mu) * is;
                    xh[i] = static_cast<T>(v);
                    yp[i] = static_cast<T>(g * v + be);
                }
            }
        }
    }
};

// ---------------------------------------------------------------------------
// ELU, alpha = 1. Backward derives the slope from the cached output:
// d/dx = 1 for y > 0, y + 1 otherwise. Elementwise, so threading over
// ranges cannot change the result.
// ---------------------------------------------------------------------------
template <class T>
class Elu {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        y_cache_ = Tensor<T>(x.shape);
        T* __restrict__ out = y_cache_.ptr();
        const T* __restrict__ in = x.ptr();
        parallel_for(x.numel(), threads, [&](size_t i0, size_t i1, int) {
            for (size_t i = i0; i < i1; ++i) {
                const T v = in[i];
                out[i] = v > T(0) ? v : std::expm1(v);
            }
        });
        return y_cache_;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(dy.shape);
        for (size_t i = 0; i < dy.numel(); ++i) {
            const T y = y_cache_.data[i];
            dx.data[i] = dy.data[i] * (y > T(0) ? T(1) : y + T(1));
        }
        return dx;
    }

    int threads = 1;

private:
    Tensor<T> y_cache_;
};

// ---------------------------------------------------------------------------
// maxpool with kernel == stride; trailing rows/cols that do not fill a
// window are truncated. Backward routes each window's gradient to the first
// row-major argmax.
// ---------------------------------------------------------------------------
template <class T>
class MaxPool2d {
public:
    MaxPool2d(int pool_h, int pool_w) : pool_h_(pool_h), pool_w_(pool_w) {}

    Tensor<T> forward(const Tensor<T>& x) {
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        if (pool_h_ > h || pool_w_ > w)
            raise(errc::validation, "maxpool: kernel larger than input");
        const int ho = h / pool_h_, wo = w / pool_w_;
        in_shape_ = x.shape;
        Tensor<T> y({n, c, ho, wo});
        argmax_.assign(y.numel(), 0);

        const size_t in_plane = static_cast<size_t>(h) * w;
        const size_t out_plane = static_cast<size_t>(ho) * wo;
        for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
                const T* xp = x.ptr() + ((static_cast<size_t>(b) * c) + ch) * in_plane;
                T* yp = y.ptr() + ((static_cast<size_t>(b) * c) + ch) * out_plane;
                uint32_t* am = argmax_.data() + ((static_cast<size_t>(b) * c) + ch) * out_plane;
                for (int oy = 0; oy < ho; ++oy) {
                    for (int ox = 0; ox < wo; ++ox) {
                        T best = xp[static_cast<size_t>(oy * pool_h_) * w + ox * pool_w_];
                        uint32_t best_idx =
                            static_cast<uint32_t>(oy * pool_h_ * w + ox * pool_w_);
                        for (int py = 0; py < pool_h_; ++py) {
                            const size_t row = static_cast<size_t>(oy * pool_h_ + py) * w;
                            for (int px = 0; px < pool_w_; ++px) {
                                const size_t idx = row + ox * pool_w_ + px;
                                if (xp[idx] > best) {
                                    best = xp[idx];
                                    best_idx = static_cast<uint32_t>(idx);
                                }
                            }
                        }
                        yp[static_cast<size_t>(oy) * wo + ox] = best;
                        am[static_cast<size_t>(oy) * wo + ox] = best_idx;
                    }
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(in_shape_);
        const int n = dy.dim(0), c = dy.dim(1), ho = dy.dim(2), wo = dy.dim(3);
        const size_t in_plane = static_cast<size_t>(in_shape_[2]) * in_shape_[3];
        const size_t out_plane = static_cast<size_t>(ho) * wo;
        for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
                const size_t off = (static_cast<size_t>(b) * c + ch);
                const T* dp = dy.ptr() + off * out_plane;
                T* dxp = dx.ptr() + off * in_plane;
                const uint32_t* am = argmax_.data() + off * out_plane;
                for (size_t i = 0; i < out_plane; ++i) dxp[am[i]] += dp[i];
            }
        }
        return dx;
    }

    int pool_h_, pool_w_;

private:
    std::vector<int> in_shape_;
    std::vector<uint32_t> argmax_;
};

// ---------------------------------------------------------------------------
// Inverted dropout: survivors scaled by 1/(1-rate) in training, identity at
// inference. Mask draws are serial so a seeded run is reproducible.
// ---------------------------------------------------------------------------
template <class T>
class Dropout {
public:
    explicit Dropout(double rate) : rate_(rate) {
        if (rate < 0.0 || rate >= 1.0)
            raise(errc::validation, "dropout rate must be in [0, 1)");
    }

    Tensor<T> forward(const Tensor<T>& x, bool training, Rng* rng) {
        if (!training || rate_ == 0.0) {
            passthrough_ = true;
            return x;
        }
        passthrough_ = false;
        mask_.resize(x.numel());
        const T scale = static_cast<T>(1.0 / (1.0 - rate_));
        Tensor<T> y(x.shape);
        for (size_t i = 0; i < x.numel(); ++i) {
            const bool keep = rng->uniform() >= rate_;
            mask_[i] = keep ? 1 : 0;
            y.data[i] = keep ? x.data[i] * scale : T(0);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        if (passthrough_) return dy;
        const T scale = static_cast<T>(1.0 / (1.0 - rate_));
        Tensor<T> dx(dy.shape);
        for (size_t i = 0; i < dy.numel(); ++i)
            dx.data[i] = mask_[i] ? dy.data[i] * scale : T(0);
        return dx;
    }

    double rate() const { return rate_; }

private:
    double rate_;
    bool passthrough_ = true;
    std::vector<uint8_t> mask_;
};

// ---------------------------------------------------------------------------
// GRU over [N,T,D] -> [N,T,H], h_0 = 0. Gate convention: the update gate z
// blends the candidate in, h_t = (1-z) * h_{t-1} + z * hcand.
// ---------------------------------------------------------------------------
template <class T>
class Gru {
public:
    Gru(int input_dim, int hidden)
        : input_dim_(input_dim), hidden_(hidden),
          wz({hidden, input_dim}), wr({hidden, input_dim}), wh({hidden, input_dim}),
          uz({hidden, hidden}), ur({hidden, hidden}), uh({hidden, hidden}),
          bz({hidden}), br({hidden}), bh({hidden}),
          wz_g({hidden, input_dim}), wr_g({hidden, input_dim}), wh_g({hidden, input_dim}),
          uz_g({hidden, hidden}), ur_g({hidden, hidden}), uh_g({hidden, hidden}),
          bz_g({hidden}), br_g({hidden}), bh_g({hidden}) {}

    void init(Rng& rng) {
        detail::glorot_uniform(wz, input_dim_, hidden_, rng);
        detail::glorot_uniform(wr, input_dim_, hidden_, rng);
        detail::glorot_uniform(wh, input_dim_, hidden_, rng);
        detail::glorot_uniform(uz, hidden_, hidden_, rng);
        detail::glorot_uniform(ur, hidden_, hidden_, rng);
        detail::glorot_uniform(uh, hidden_, hidden_, rng);
        bz.fill(T(0));
        br.fill(T(0));
        bh.fill(T(0));
    }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.ndim() != 3 || x.dim(2) != input_dim_)
            raise(errc::shape_mismatch, "gru: input dimension mismatch");
        const int n = x.dim(0), t_len = x.dim(1);
        x_cache_ = x;
        h_ = Tensor<T>({n, t_len, hidden_});
        z_ = Tensor<T>({n, t_len, hidden_});
        r_ = Tensor<T>({n, t_len, hidden_});
        hc_ = Tensor<T>({n, t_len, hidden_});

        std::vector<T> az(hidden_), ar(hidden_), ah(hidden_), rh(hidden_);
        for (int b = 0; b < n; ++b) {
            const T* h_prev = nullptr; // null means zero vector
            for (int t = 0; t < t_len; ++t) {
                const T* xt = x.ptr() + (static_cast<size_t>(b) * t_len + t) * input_dim_;
                const size_t off = (static_cast<size_t>(b) * t_len + t) * hidden_;
                T* zt = z_.ptr() + off;
                T* rt = r_.ptr() + off;
                T* hct = hc_.ptr() + off;
                T* ht = h_.ptr() + off;

                affine(wz, uz, bz, xt, h_prev, az.data());
                affine(wr, ur, br, xt, h_prev, ar.data());
                for (int i = 0; i < hidden_; ++i) {
                    zt[i] = sigmoid_scalar(az[i]);
                    rt[i] = sigmoid_scalar(ar[i]);
                    rh[i] = h_prev ? rt[i] * h_prev[i] : T(0);
                }
                affine(wh, uh, bh, xt, h_prev ? rh.data() : nullptr, ah.data());
                for (int i = 0; i < hidden_; ++i) {
                    hct[i] = static_cast<T>(std::tanh(static_cast<double>(ah[i])));
                    const T prev = h_prev ? h_prev[i] : T(0);
                    ht[i] = (T(1) - zt[i]) * prev + zt[i] * hct[i];
                }
                h_prev = ht;
            }
        }
        return h_;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const int n = x_cache_.dim(0), t_len = x_cache_.dim(1);
        Tensor<T> dx(x_cache_.shape);
        wz_g.fill(T(0)); wr_g.fill(T(0)); wh_g.fill(T(0));
        uz_g.fill(T(0)); ur_g.fill(T(0)); uh_g.fill(T(0));
        bz_g.fill(T(0)); br_g.fill(T(0)); bh_g.fill(T(0));

        std::vector<T> carry(hidden_), dh(hidden_), dz(hidden_), dhc(hidden_),
            dr(hidden_), q(hidden_), rh(hidden_), next(hidden_);
        for (int b = 0; b < n; ++b) {
            std::fill(carry.begin(), carry.end(), T(0));
            for (int t = t_len - 1; t >= 0; --t) {
                const size_t off = (static_cast<size_t>(b) * t_len + t) * hidden_;
                const T* zt = z_.ptr() + off;
                const T* rt = r_.ptr() + off;
                const T* hct = hc_.ptr() + off;
                const T* h_prev =
                    t > 0 ? h_.ptr() + (static_cast<size_t>(b) * t_len + t - 1) * hidden_ : nullptr;
                const T* dyt = dy.ptr() + off;
                const T* xt =
                    x_cache_.ptr() + (static_cast<size_t>(b) * t_len + t) * input_dim_;

                for (int i = 0; i < hidden_; ++i) {
                    dh[i] = dyt[i] + carry[i];
                    const T prev = h_prev ? h_prev[i] : T(0);
                    dz[i] = dh[i] * (hct[i] - prev) * zt[i] * (T(1) - zt[i]);
                    dhc[i] = dh[i] * zt[i] * (T(1) - hct[i] * hct[i]);
                    rh[i] = h_prev ? rt[i] * h_prev[i] : T(0);
                }
                // q = Uh^T dhc
                mat_t_vec(uh, dhc.data(), q.data());
                for (int i = 0; i < hidden_; ++i) {
                    const T prev = h_prev ? h_prev[i] : T(0);
                    dr[i] = q[i] * prev * rt[i] * (T(1) - rt[i]);
                }

                // carry for t-1
                for (int i = 0; i < hidden_; ++i) next[i] = dh[i] * (T(1) - zt[i]) + q[i] * rt[i];
                mat_t_vec_add(uz, dz.data(), next.data());
                mat_t_vec_add(ur, dr.data(), next.data());

                // parameter gradients
                outer_add(wz_g, dz.data(), xt, input_dim_);
                outer_add(wr_g, dr.data(), xt, input_dim_);
                outer_add(wh_g, dhc.data(), xt, input_dim_);
                if (h_prev) {
                    outer_add(uz_g, dz.data(), h_prev, hidden_);
                    outer_add(ur_g, dr.data(), h_prev, hidden_);
                    outer_add(uh_g, dhc.data(), rh.data(), hidden_);
                }
                for (int i = 0; i < hidden_; ++i) {
                    bz_g.data[i] += dz[i];
                    br_g.data[i] += dr[i];
                    bh_g.data[i] += dhc[i];
                }

                // input gradient
                T* dxt = dx.ptr() + (static_cast<size_t>(b) * t_len + t) * input_dim_;
                mat_t_vec_into(wz, dz.data(), dxt, input_dim_);
                mat_t_vec_add_into(wr, dr.data(), dxt, input_dim_);
                mat_t_vec_add_into(wh, dhc.data(), dxt, input_dim_);

                std::swap(carry, next);
            }
        }
        return dx;
    }

    std::vector<ParamRef<T>> params(const std::string& prefix) {
        return {{prefix + ".wz", &wz, &wz_g}, {prefix + ".wr", &wr, &wr_g},
                {prefix + ".wh", &wh, &wh_g}, {prefix + ".uz", &uz, &uz_g},
                {prefix + ".ur", &ur, &ur_g}, {prefix + ".uh", &uh, &uh_g},
                {prefix + ".bz", &bz, &bz_g}, {prefix + ".br", &br, &br_g},
                {prefix + ".bh", &bh, &bh_g}};
    }

    int input_dim_, hidden_;
    Tensor<T> wz, wr, wh, uz, ur, uh, bz, br, bh;
    Tensor<T> wz_g, wr_g, wh_g, uz_g, ur_g, uh_g, bz_g, br_g, bh_g;

private:
    Tensor<T> x_cache_, h_, z_, r_, hc_;

    static T sigmoid_scalar(T x) {
        return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x))));
    }

    // out = W x + U h + b (U term skipped when h is null).
    void affine(const Tensor<T>& w, const Tensor<T>& u, const Tensor<T>& b, const T* x,
                const T* h, T* out) const {
        for (int i = 0; i < hidden_; ++i) {
            T acc = b.data[i];
            const T* wr_ = w.ptr() + static_cast<size_t>(i) * input_dim_;
            for (int j = 0; j < input_dim_; ++j) acc += wr_[j] * x[j];
            if (h) {
                const T* ur_ = u.ptr() + static_cast<size_t>(i) * hidden_;
                for (int j = 0; j < hidden_; ++j) acc += ur_[j] * h[j];
            }
            out[i] = acc;
        }
    }

    void mat_t_vec(const Tensor<T>& m, const T* v, T* out) const {
        std::fill(out, out + hidden_, T(0));
        for (int i = 0; i < hidden_; ++i) {
            const T* row = m.ptr() + static_cast<size_t>(i) * hidden_;
            const T vi = v[i];
            for (int j = 0; j < hidden_; ++j) out[j] += row[j] * vi;
        }
    }

    void mat_t_vec_add(const Tensor<T>& m, const T* v, T* out) const {
        for (int i = 0; i < hidden_; ++i) {
            const T* row = m.ptr() + static_cast<size_t>(i) * hidden_;
            const T vi = v[i];
            for (int j = 0; j < hidden_; ++j) out[j] += row[j] * vi;
        }
    }

    void mat_t_vec_into(const Tensor<T>& m, const T* v, T* out, int cols) const {
        std::fill(out, out + cols, T(0));
        for (int i = 0; i < hidden_; ++i) {
            const T* row = m.ptr() + static_cast<size_t>(i) * cols;
            const T vi = v[i];
            for (int j = 0; j < cols; ++j) out[j] += row[j] * vi;
        }
    }

    void mat_t_vec_add_into(const Tensor<T>& m, const T* v, T* out, int cols) const {
        for (int i = 0; i < hidden_; ++i) {
            const T* row = m.ptr() + static_cast<size_t>(i) * cols;
            const T vi = v[i];
            for (int j = 0; j < cols; ++j) out[j] += row[j] * vi;
        }
    }

    void outer_add(Tensor<T>& g, const T* a, const T* b, int cols) const {
        for (int i = 0; i < hidden_; ++i) {
            T* row = g.ptr() + static_cast<size_t>(i) * cols;
            const T ai = a[i];
            for (int j = 0; j < cols; ++j) row[j] += ai * b[j];
        }
    }
};

// ---------------------------------------------------------------------------
// dense: y = W x + b over [N,in] -> [N,out].
// ---------------------------------------------------------------------------
template <class T>
class Dense {
public:
    Dense(int input_dim, int output_dim)
        : input_dim_(input_dim), output_dim_(output_dim),
          weight({output_dim, input_dim}), bias({output_dim}),
          weight_grad({output_dim, input_dim}), bias_grad({output_dim}) {}

    void init(Rng& rng) {
        detail::glorot_uniform(weight, input_dim_, output_dim_, rng);
        bias.fill(T(0));
    }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.ndim() != 2 || x.dim(1) != input_dim_)
            raise(errc::shape_mismatch, "dense: input dimension mismatch");
        x_cache_ = x;
        const int n = x.dim(0);
        Tensor<T> y({n, output_dim_});
        for (int b = 0; b < n; ++b) {
            const T* xb = x.ptr() + static_cast<size_t>(b) * input_dim_;
            T* yb = y.ptr() + static_cast<size_t>(b) * output_dim_;
            for (int i = 0; i < output_dim_; ++i) {
                T acc = bias.data[i];
                const T* row = weight.ptr() + static_cast<size_t>(i) * input_dim_;
                for (int j = 0; j < input_dim_; ++j) acc += row[j] * xb[j];
                yb[i] = acc;
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const int n = dy.dim(0);
        weight_grad.fill(T(0));
        bias_grad.fill(T(0));
        Tensor<T> dx({n, input_dim_});
        for (int b = 0; b < n; ++b) {
            const T* dyb = dy.ptr() + static_cast<size_t>(b) * output_dim_;
            const T* xb = x_cache_.ptr() + static_cast<size_t>(b) * input_dim_;
            T* dxb = dx.ptr() + static_cast<size_t>(b) * input_dim_;
            for (int i = 0; i < output_dim_; ++i) {
                const T d = dyb[i];
                bias_grad.data[i] += d;
                T* wg = weight_grad.ptr() + static_cast<size_t>(i) * input_dim_;
                const T* row = weight.ptr() + static_cast<size_t>(i) * input_dim_;
                for (int j = 0; j < input_dim_; ++j) {
                    wg[j] += d * xb[j];
                    dxb[j] += row[j] * d;
                }
            }
        }
        return dx;
    }

    std::vector<ParamRef<T>> params(const std::string& prefix) {
        return {{prefix + ".weight", &weight, &weight_grad},
                {prefix + ".bias", &bias, &bias_grad}};
    }

    int input_dim_, output_dim_;
    Tensor<T> weight, bias, weight_grad, bias_grad;

private:
    Tensor<T> x_cache_;
};

// ---------------------------------------------------------------------------
// activations and the Eq.-style summed cross-entropy loss
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> y(x.shape);
    for (size_t i = 0; i < x.numel(); ++i)
        y.data[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x.data[i]))));
    return y;
}

// Row-wise stable softmax over [N,C].
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    const int n = x.dim(0), c = x.dim(1);
    Tensor<T> y(x.shape);
    for (int b = 0; b < n; ++b) {
        const T* xb = x.ptr() + static_cast<size_t>(b) * c;
        T* yb = y.ptr() + static_cast<size_t>(b) * c;
        T mx = xb[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, xb[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(static_cast<double>(xb[j] - mx));
            yb[j] = static_cast<T>(e);
            sum += e;
        }
        for (int j = 0; j < c; ++j) yb[j] = static_cast<T>(static_cast<double>(yb[j]) / sum);
    }
    return y;
}

template <class T>
Tensor<T> apply_head(const Tensor<T>& logits, Head head) {
    return head == Head::softmax ? softmax_rows(logits) : sigmoid(logits);
}

constexpr double kProbClamp = 1e-12;

template <class T>
struct LossResult {
    double loss = 0.0;
    Tensor<T> grad;
};

// L = -sum_i sum_j y_ij log(yhat_ij), yhat clamped to [1e-12, 1].
// grad is with respect to yhat.
template <class T>
LossResult<T> cross_entropy(const Tensor<T>& y, const Tensor<T>& yhat) {
    if (!y.same_shape(yhat))
        raise(errc::shape_mismatch, "cross_entropy: prediction/label shape mismatch");
    LossResult<T> out;
    out.grad = Tensor<T>(yhat.shape);
    for (size_t i = 0; i < y.numel(); ++i) {
        if (y.data[i] == T(0)) continue;
        const double p =
            std::clamp(static_cast<double>(yhat.data[i]), kProbClamp, 1.0);
        out.loss -= static_cast<double>(y.data[i]) * std::log(p);
        out.grad.data[i] = static_cast<T>(-static_cast<double>(y.data[i]) / p);
    }
    return out;
}

// Training loss against pre-activations. Softmax: the summed cross-entropy
// of the predicted distribution, gradient p - y. Sigmoid: per-class
// cross-entropy of each Bernoulli output (positive-term-only cross-entropy
// composed with independent sigmoids has a degenerate optimum at
// "predict 1 everywhere", which collapses the embeddings the classifier
// exists to produce); gradient is likewise p - y.
template <class T>
LossResult<T> cross_entropy_fused(const std::vector<int>& labels, const Tensor<T>& logits,
                                  Head head) {
    const int n = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(labels.size()) != n)
        raise(errc::shape_mismatch, "cross_entropy: label count mismatch");
    LossResult<T> out;
    const Tensor<T> probs = apply_head(logits, head);
    out.grad = Tensor<T>(logits.shape);
    for (int b = 0; b < n; ++b) {
        const int label = labels[b];
        if (label < 0 || label >= c)
            raise(errc::validation, "cross_entropy: label out of range");
        const T* pb = probs.ptr() + static_cast<size_t>(b) * c;
        T* gb = out.grad.ptr() + static_cast<size_t>(b) * c;
        if (head == Head::softmax) {
            out.loss -= std::log(std::clamp(static_cast<double>(pb[label]), kProbClamp, 1.0));
            for (int j = 0; j < c; ++j) gb[j] = pb[j];
            gb[label] -= T(1);
        } else {
            for (int j = 0; j < c; ++j) {
                const double p = std::clamp(static_cast<double>(pb[j]), kProbClamp,
                                            1.0 - kProbClamp);
                out.loss -= j == label ? std::log(p) : std::log(1.0 - p);
                gb[j] = pb[j] - (j == label ? T(1) : T(0));
            }
        }
    }
    return out;
}

} // namespace diar
