#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dfkd/common/errors.hpp"
#include "dfkd/common/parallel.hpp"
#include "dfkd/common/rng.hpp"
#include "dfkd/common/tensor.hpp"

namespace dfkd::nn {

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value;
    Tensor<T>* grad;
};

template <typename T>
struct BufferRef {
    std::string name;
    Tensor<T>* value;
};

namespace detail {

/// im2col for one sample: x [ci,hi,wi] -> col [ci*k*k, ho*wo].
template <typename T>
void im2col(const T* x, int ci, int hi, int wi, int k, int stride, int pad, int ho, int wo,
            T* col) {
    for (int c = 0; c < ci; ++c) {
        for (int dh = 0; dh < k; ++dh) {
            for (int dw = 0; dw < k; ++dw) {
                T* dst = col + ((c * k + dh) * k + dw) * (ho * wo);
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride + dh - pad;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride + dw - pad;
                        dst[oh * wo + ow] = (ih >= 0 && ih < hi && iw >= 0 && iw < wi)
                                                ? x[(c * hi + ih) * wi + iw]
                                                : T(0);
                    }
                }
            }
        }
    }
}

/// Scatter-add transpose of im2col: col grads back into dx for one sample.
template <typename T>
void col2im_add(const T* col, int ci, int hi, int wi, int k, int stride, int pad, int ho,
                int wo, T* dx) {
    for (int c = 0; c < ci; ++c) {
        for (int dh = 0; dh < k; ++dh) {
            for (int dw = 0; dw < k; ++dw) {
                const T* src = col + ((c * k + dh) * k + dw) * (ho * wo);
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride + dh - pad;
                    if (ih < 0 || ih >= hi) continue;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride + dw - pad;
                        if (iw < 0 || iw >= wi) continue;
                        dx[(c * hi + ih) * wi + iw] += src[oh * wo + ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2-D convolution via per-sample im2col + GEMM. Samples are partitioned
/// statically across threads; weight-gradient partials are reduced in thread
/// order, so results are reproducible for a fixed thread count.
template <typename T>
class Conv2d {
public:
    Conv2d(int in_ch, int out_ch, int ksize, int stride = 1, int pad = 0)
        : ci_(in_ch), co_(out_ch), k_(ksize), stride_(stride), pad_(pad) {
        w.resize({static_cast<std::size_t>(co_), static_cast<std::size_t>(ci_ * k_ * k_)});
        b.resize({static_cast<std::size_t>(co_)});
        gw.resize(w.shape());
        gb.resize(b.shape());
    }

    void init(RngStream& rng) {
        const double fan_in = static_cast<double>(ci_ * k_ * k_);
        rng.fill_normal(w.data(), w.size(), 0.0, std::sqrt(2.0 / fan_in));
        b.set_zero();
    }

    void out_hw(int hi, int wi, int& ho, int& wo) const {
        ho = (hi + 2 * pad_ - k_) / stride_ + 1;
        wo = (wi + 2 * pad_ - k_) / stride_ + 1;
    }

    void forward(const Tensor<T>& x, Tensor<T>& y, bool cache) {
        const int n = static_cast<int>(x.dim(0)), hi = static_cast<int>(x.dim(2)),
                  wi = static_cast<int>(x.dim(3));
        if (static_cast<int>(x.dim(1)) != ci_) throw DimensionError("Conv2d: channel mismatch");
        int ho, wo;
        out_hw(hi, wi, ho, wo);
        y.resize({static_cast<std::size_t>(n), static_cast<std::size_t>(co_),
                  static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
        const std::size_t col_size = static_cast<std::size_t>(ci_ * k_ * k_) * ho * wo;
        const int nt = threads();
        std::vector<std::vector<T>> scratch(nt);

        typename Tensor<T>::ConstMapRM wm(w.data(), co_, ci_ * k_ * k_);
#ifdef _OPENMP
#pragma omp parallel num_threads(nt)
#endif
        {
#ifdef _OPENMP
            const int tid = omp_get_thread_num();
#else
            const int tid = 0;
#endif
            scratch[tid].resize(col_size);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
            for (int i = 0; i < n; ++i) {
                T* col = scratch[tid].data();
                detail::im2col(x.data() + static_cast<std::size_t>(i) * ci_ * hi * wi, ci_, hi,
                               wi, k_, stride_, pad_, ho, wo, col);
                typename Tensor<T>::ConstMapRM cm(col, ci_ * k_ * k_, ho * wo);
                typename Tensor<T>::MapRM ym(
                    y.data() + static_cast<std::size_t>(i) * co_ * ho * wo, co_, ho * wo);
                ym.noalias() = wm * cm;
                for (int o = 0; o < co_; ++o) ym.row(o).array() += b[o];
            }
        }
        if (cache) {
            x_cache_ = x;
            cached_ = true;
        } else {
            cached_ = false;
        }
    }

    /// dy [n,co,ho,wo]; accumulates gw/gb when param_grads, writes dx if given.
    void backward(const Tensor<T>& dy, Tensor<T>* dx, bool param_grads = true) {
        if (!cached_) throw ContractError("Conv2d::backward without cached forward");
        const Tensor<T>& x = x_cache_;
        const int n = static_cast<int>(x.dim(0)), hi = static_cast<int>(x.dim(2)),
                  wi = static_cast<int>(x.dim(3));
        int ho, wo;
        out_hw(hi, wi, ho, wo);
        const int kk = ci_ * k_ * k_;
        const std::size_t col_size = static_cast<std::size_t>(kk) * ho * wo;
        if (dx) dx->resize(x.shape());

        const int nt = threads();
        std::vector<std::vector<T>> scratch(nt), dcol_scratch(nt);
        std::vector<Tensor<T>> dws(nt), dbs(nt);

        typename Tensor<T>::ConstMapRM wm(w.data(), co_, kk);
#ifdef _OPENMP
#pragma omp parallel num_threads(nt)
#endif
        {
#ifdef _OPENMP
            const int tid = omp_get_thread_num();
#else
            const int tid = 0;
#endif
            scratch[tid].resize(col_size);
            if (dx) dcol_scratch[tid].resize(col_size);
            if (param_grads) {
                dws[tid].resize(w.shape());
                dbs[tid].resize(b.shape());
            }
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
            for (int i = 0; i < n; ++i) {
                T* col = scratch[tid].data();
                detail::im2col(x.data() + static_cast<std::size_t>(i) * ci_ * hi * wi, ci_, hi,
                               wi, k_, stride_, pad_, ho, wo, col);
                typename Tensor<T>::ConstMapRM cm(col, kk, ho * wo);
                typename Tensor<T>::ConstMapRM dym(
                    dy.data() + static_cast<std::size_t>(i) * co_ * ho * wo, co_, ho * wo);
                if (param_grads) {
                    typename Tensor<T>::MapRM dwm(dws[tid].data(), co_, kk);
                    dwm.noalias() += dym * cm.transpose();
                    for (int o = 0; o < co_; ++o) dbs[tid][o] += dym.row(o).sum();
                }
                if (dx) {
                    T* dcol = dcol_scratch[tid].data();
                    typename Tensor<T>::MapRM dcm(dcol, kk, ho * wo);
                    dcm.noalias() = wm.transpose() * dym;
                    detail::col2im_add(dcol, ci_, hi, wi, k_, stride_, pad_, ho, wo,
                                       dx->data() + static_cast<std::size_t>(i) * ci_ * hi * wi);
                }
            }
        }
        if (param_grads) {
            for (int t = 0; t < nt; ++t) {
                if (dws[t].empty()) continue;
                for (std::size_t j = 0; j < gw.size(); ++j) gw[j] += dws[t][j];
                for (std::size_t j = 0; j < gb.size(); ++j) gb[j] += dbs[t][j];
            }
        }
    }

    std::vector<ParamRef<T>> params(const std::string& prefix) {
        return {{prefix + ".weight", &w, &gw}, {prefix + ".bias", &b, &gb}};
    }

    int in_channels() const { return ci_; }
    int out_channels() const { return co_; }

    Tensor<T> w, b, gw, gb;

private:
    int ci_, co_, k_, stride_, pad_;
    Tensor<T> x_cache_;
    bool cached_ = false;
};

/// Fully connected layer: y = x * W^T + b with W [out,in].
template <typename T>
class Linear {
public:
    Linear(int in_dim, int out_dim) : in_(in_dim), out_(out_dim) {
        w.resize({static_cast<std::size_t>(out_), static_cast<std::size_t>(in_)});
        b.resize({static_cast<std::size_t>(out_)});
        gw.resize(w.shape());
        gb.resize(b.shape());
    }

    void init(RngStream& rng) {
        rng.fill_normal(w.data(), w.size(), 0.0, std::sqrt(2.0 / static_cast<double>(in_)));
        b.set_zero();
    }

    void forward(const Tensor<T>& x, Tensor<T>& y, bool cache) {
        const int n = static_cast<int>(x.dim(0));
        if (static_cast<int>(x.dim(1)) != in_) throw DimensionError("Linear: input dim mismatch");
        y.resize({static_cast<std::size_t>(n), static_cast<std::size_t>(out_)});
        typename Tensor<T>::ConstMapRM xm(x.data(), n, in_);
        typename Tensor<T>::ConstMapRM wm(w.data(), out_, in_);
        const int nt = threads();
        const int rows_per = (n + nt - 1) / nt;
        parallel_for(static_cast<std::size_t>(nt), [&](std::size_t t) {
            const int r0 = static_cast<int>(t) * rows_per;
            const int rn = std::min(rows_per, n - r0);
            if (rn <= 0) return;
            typename Tensor<T>::MapRM ym(y.data() + static_cast<std::size_t>(r0) * out_, rn,
                                         out_);
            ym.noalias() = xm.middleRows(r0, rn) * wm.transpose();
            ym.rowwise() += typename Tensor<T>::ConstMapVec(b.data(), out_).transpose();
        });
        if (cache) {
            x_cache_ = x;
            cached_ = true;
        } else {
            cached_ = false;
        }
    }

    void backward(const Tensor<T>& dy, Tensor<T>* dx, bool param_grads = true) {
        if (!cached_) throw ContractError("Linear::backward without cached forward");
        const Tensor<T>& x = x_cache_;
        const int n = static_cast<int>(x.dim(0));
        typename Tensor<T>::ConstMapRM xm(x.data(), n, in_);
        typename Tensor<T>::ConstMapRM dym(dy.data(), n, out_);
        typename Tensor<T>::ConstMapRM wm(w.data(), out_, in_);
        if (param_grads) {
            // partition over output rows of gw; each row owned by one thread
            typename Tensor<T>::MapRM gwm(gw.data(), out_, in_);
            const int nt = threads();
            const int rows_per = (out_ + nt - 1) / nt;
            parallel_for(static_cast<std::size_t>(nt), [&](std::size_t t) {
                const int r0 = static_cast<int>(t) * rows_per;
                const int rn = std::min(rows_per, out_ - r0);
                if (rn <= 0) return;
                gwm.middleRows(r0, rn).noalias() += dym.middleCols(r0, rn).transpose() * xm;
            });
            for (int o = 0; o < out_; ++o) gb[o] += dym.col(o).sum();
        }
        if (dx) {
            dx->resize(x.shape());
            typename Tensor<T>::MapRM dxm(dx->data(), n, in_);
            const int nt = threads();
            const int rows_per = (n + nt - 1) / nt;
            parallel_for(static_cast<std::size_t>(nt), [&](std::size_t t) {
                const int r0 = static_cast<int>(t) * rows_per;
                const int rn = std::min(rows_per, n - r0);
                if (rn <= 0) return;
                dxm.middleRows(r0, rn).noalias() = dym.middleRows(r0, rn) * wm;
            });
        }
    }

    std::vector<ParamRef<T>> params(const std::string& prefix) {
        return {{prefix + ".weight", &w, &gw}, {prefix + ".bias", &b, &gb}};
    }

    Tensor<T> w, b, gw, gb;

private:
    int in_, out_;
    Tensor<T> x_cache_;
    bool cached_ = false;
};

/// Batch normalization over [n,c,h,w] (per-channel). Three independent
/// switches: normalize by batch vs running statistics, update the running
/// statistics, and capture batch statistics of the input (for the statistics
/// regularizer) without using them for normalization.
template <typename T>
class BatchNorm2d {
public:
    struct Options {
        bool batch_stats = true;
        bool update_running = true;
        bool capture = false;
    };

    explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
        : c_(channels), momentum_(momentum), eps_(eps) {
        gamma.resize({static_cast<std::size_t>(c_)});
        beta.resize({static_cast<std::size_t>(c_)});
        running_mean.resize({static_cast<std::size_t>(c_)});
        running_var.resize({static_cast<std::size_t>(c_)});
        ggamma.resize(gamma.shape());
        gbeta.resize(beta.shape());
        gamma.fill(T(1));
        running_var.fill(T(1));
    }

    void forward(const Tensor<T>& x, Tensor<T>& y, const Options& opt, bool cache) {
        if (static_cast<int>(x.dim(1)) != c_) throw DimensionError("BatchNorm2d: channel mismatch");
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t plane = h * w, stride = static_cast<std::size_t>(c_) * plane;
        y.resize(x.shape());

        Tensor<T> mean({static_cast<std::size_t>(c_)});
        Tensor<T> var({static_cast<std::size_t>(c_)});
        const bool need_batch_stats = opt.batch_stats || opt.capture || opt.update_running;
        if (need_batch_stats) {
            const T inv_count = T(1) / static_cast<T>(n * plane);
            parallel_for(static_cast<std::size_t>(c_), [&](std::size_t c) {
                T sum = T(0), sq = T(0);
                for (std::size_t i = 0; i < n; ++i) {
                    const T* p = x.data() + i * stride + c * plane;
                    for (std::size_t j = 0; j < plane; ++j) {
                        sum += p[j];
                        sq += p[j] * p[j];
                    }
                }
                const T m = sum * inv_count;
                mean[c] = m;
                var[c] = std::max(sq * inv_count - m * m, T(0));  // biased
            });
        }

        if (opt.update_running) {
            const T mom = static_cast<T>(momentum_);
            for (int c = 0; c < c_; ++c) {
                running_mean[c] = (T(1) - mom) * running_mean[c] + mom * mean[c];
                running_var[c] = (T(1) - mom) * running_var[c] + mom * var[c];
            }
        }
        if (opt.capture) {
            captured_mean_ = mean;
            captured_var_ = var;
            captured_count_ = n * plane;
            has_capture_ = true;
        }

        const Tensor<T>& use_mean = opt.batch_stats ? mean : running_mean;
        const Tensor<T>& use_var = opt.batch_stats ? var : running_var;
        Tensor<T> invstd({static_cast<std::size_t>(c_)});
        for (int c = 0; c < c_; ++c)
            invstd[c] = T(1) / std::sqrt(use_var[c] + static_cast<T>(eps_));

        parallel_for(static_cast<std::size_t>(c_), [&](std::size_t c) {
            const T m = use_mean[c], is = invstd[c], g = gamma[c], bt = beta[c];
            for (std::size_t i = 0; i < n; ++i) {
                const T* px = x.data() + i * stride + c * plane;
                T* py = y.data() + i * stride + c * plane;
                for (std::size_t j = 0; j < plane; ++j) py[j] = g * (px[j] - m) * is + bt;
            }
        });

        if (cache) {
            x_cache_ = x;
            mean_cache_ = use_mean;
            invstd_cache_ = invstd;
            batch_mode_cache_ = opt.batch_stats;
            cached_ = true;
        } else {
            cached_ = false;
        }
    }

    /// bn_penalty_weight adds the gradient of
    ///   || mu_batch - mu_running ||^2 + || var_batch - var_running ||^2
    /// through the captured batch statistics (eval-mode forwards only).
    void backward(const Tensor<T>& dy, Tensor<T>* dx, bool param_grads = true,
                  T bn_penalty_weight = T(0)) {
        if (!cached_) throw ContractError("BatchNorm2d::backward without cached forward");
        const Tensor<T>& x = x_cache_;
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t plane = h * w, stride = static_cast<std::size_t>(c_) * plane;
        const T count = static_cast<T>(n * plane);
        if (dx) dx->resize(x.shape());
        if (bn_penalty_weight != T(0) && (!has_capture_ || batch_mode_cache_))
            throw ContractError("BatchNorm2d: penalty gradient needs an eval-mode capture");

        parallel_for(static_cast<std::size_t>(c_), [&](std::size_t c) {
            const T m = mean_cache_[c], is = invstd_cache_[c], g = gamma[c];
            T sum_dy = T(0), sum_dy_xhat = T(0);
            for (std::size_t i = 0; i < n; ++i) {
                const T* px = x.data() + i * stride + c * plane;
                const T* pdy = dy.data() + i * stride + c * plane;
                for (std::size_t j = 0; j < plane; ++j) {
                    sum_dy += pdy[j];
                    sum_dy_xhat += pdy[j] * (px[j] - m) * is;
                }
            }
            if (param_grads) {
                ggamma[c] += sum_dy_xhat;
                gbeta[c] += sum_dy;
            }
            if (!dx) return;
            if (batch_mode_cache_) {
                // standard train-mode backward through batch statistics
                for (std::size_t i = 0; i < n; ++i) {
                    const T* px = x.data() + i * stride + c * plane;
                    const T* pdy = dy.data() + i * stride + c * plane;
                    T* pdx = dx->data() + i * stride + c * plane;
                    for (std::size_t j = 0; j < plane; ++j) {
                        const T xhat = (px[j] - m) * is;
                        pdx[j] = g * is / count *
                                 (count * pdy[j] - sum_dy - xhat * sum_dy_xhat);
                    }
                }
            } else {
                const T scale = g * is;
                T pm = T(0), pv = T(0);
                if (bn_penalty_weight != T(0)) {
                    const T invc = T(1) / static_cast<T>(captured_count_);
                    pm = bn_penalty_weight * T(2) * (captured_mean_[c] - running_mean[c]) * invc;
                    pv = bn_penalty_weight * T(2) * (captured_var_[c] - running_var[c]) * invc;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const T* px = x.data() + i * stride + c * plane;
                    const T* pdy = dy.data() + i * stride + c * plane;
                    T* pdx = dx->data() + i * stride + c * plane;
                    for (std::size_t j = 0; j < plane; ++j) {
                        pdx[j] = scale * pdy[j];
                        if (bn_penalty_weight != T(0))
                            pdx[j] += pm + pv * T(2) * (px[j] - captured_mean_[c]);
                    }
                }
            }
        });
    }

    bool has_capture() const { return has_capture_; }
    const Tensor<T>& captured_mean() const { return captured_mean_; }
    const Tensor<T>& captured_var() const { return captured_var_; }

    std::vector<ParamRef<T>> params(const std::string& prefix) {
        return {{prefix + ".gamma", &gamma, &ggamma}, {prefix + ".beta", &beta, &gbeta}};
    }
    std::vector<BufferRef<T>> buffers(const std::string& prefix) {
        return {{prefix + ".running_mean", &running_mean},
                {prefix + ".running_var", &running_var}};
    }

    int channels() const { return c_; }

    Tensor<T> gamma, beta, running_mean, running_var, ggamma, gbeta;

private:
    int c_;
    double momentum_, eps_;
    Tensor<T> x_cache_, mean_cache_, invstd_cache_;
    Tensor<T> captured_mean_, captured_var_;
    std::size_t captured_count_ = 0;
    bool cached_ = false;
    bool batch_mode_cache_ = true;
    bool has_capture_ = false;
};

template <typename T>
class MaxPool2d {
public:
    explicit MaxPool2d(int k) : k_(k) {}

    void forward(const Tensor<T>& x, Tensor<T>& y, bool cache) {
        const std::size_t n = x.dim(0), c = x.dim(1), hi = x.dim(2), wi = x.dim(3);
        const std::size_t ho = hi / k_, wo = wi / k_;
        y.resize({n, c, ho, wo});
        if (cache) argmax_.resize({n, c, ho, wo});
        parallel_for(n, [&](std::size_t i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T* px = x.data() + (i * c + ch) * hi * wi;
                T* py = y.data() + (i * c + ch) * ho * wo;
                for (std::size_t oh = 0; oh < ho; ++oh) {
                    for (std::size_t ow = 0; ow < wo; ++ow) {
                        std::size_t best = (oh * k_) * wi + ow * k_;
                        T bv = px[best];
                        for (int dh = 0; dh < k_; ++dh)
                            for (int dw = 0; dw < k_; ++dw) {
                                const std::size_t idx = (oh * k_ + dh) * wi + (ow * k_ + dw);
                                if (px[idx] > bv) {
                                    bv = px[idx];
                                    best = idx;
                                }
                            }
                        py[oh * wo + ow] = bv;
                        if (cache) argmax_(i, ch, oh, ow) = static_cast<T>(best);
                    }
                }
            }
        });
        if (cache) {
            in_shape_ = x.shape();
            cached_ = true;
        } else {
            cached_ = false;
        }
    }

    void backward(const Tensor<T>& dy, Tensor<T>* dx) {
        if (!cached_) throw ContractError("MaxPool2d::backward without cached forward");
        if (!dx) return;
        dx->resize(in_shape_);
        const std::size_t n = dy.dim(0), c = dy.dim(1), ho = dy.dim(2), wo = dy.dim(3);
        const std::size_t hi = in_shape_[2], wi = in_shape_[3];
        parallel_for(n, [&](std::size_t i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T* pdy = dy.data() + (i * c + ch) * ho * wo;
                T* pdx = dx->data() + (i * c + ch) * hi * wi;
                for (std::size_t o = 0; o < ho * wo; ++o) {
                    const std::size_t idx =
                        static_cast<std::size_t>(argmax_.data()[(i * c + ch) * ho * wo + o]);
                    pdx[idx] += pdy[o];
                }
            }
        });
    }

private:
    int k_;
    Tensor<T> argmax_;
    std::vector<std::size_t> in_shape_;
    bool cached_ = false;
};

template <typename T>
class ReLU {
public:
    void forward(const Tensor<T>& x, Tensor<T>& y, bool cache) {
        y.resize(x.shape());
        const std::size_t sz = x.size();
        parallel_for(threads(), [&](std::size_t t) {
            auto [lo, hi] = chunk(sz, t);
            for (std::size_t i = lo; i < hi; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
        });
        if (cache) {
            y_cache_ = y;
            cached_ = true;
        } else {
            cached_ = false;
        }
    }
    void backward(const Tensor<T>& dy, Tensor<T>* dx) {
        if (!cached_) throw ContractError("ReLU::backward without cached forward");
        if (!dx) return;
        dx->resize(dy.shape());
        for (std::size_t i = 0; i < dy.size(); ++i)
            (*dx)[i] = y_cache_[i] > T(0) ? dy[i] : T(0);
    }

private:
    static std::pair<std::size_t, std::size_t> chunk(std::size_t n, std::size_t t) {
        const std::size_t nt = threads();
        const std::size_t per = (n + nt - 1) / nt;
        return {std::min(t * per, n), std::min((t + 1) * per, n)};
    }
    Tensor<T> y_cache_;
    bool cached_ = false;
};

template <typename T>
class LeakyReLU {
public:
    explicit LeakyReLU(double slope = 0.2) : slope_(static_cast<T>(slope)) {}
    void forward(const Tensor<T>& x, Tensor<T>& y, bool cache) {
        y.resize(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : slope_ * x[i];
        if (cache) {
            y_cache_ = y;
            cached_ = true;
        } else {
            cached_ = false;
        }
    }
    void backward(const Tensor<T>& dy, Tensor<T>* dx) {
        if (!cached_) throw ContractError("LeakyReLU::backward without cached forward");
        if (!dx) return;
        dx->resize(dy.shape());
        for (std::size_t i = 0; i < dy.size(); ++i)
            (*dx)[i] = y_cache_[i] > T(0) ? dy[i] : slope_ * dy[i];
    }

private:
    T slope_;
    Tensor<T> y_cache_;
    bool cached_ = false;
};

template <typename T>
class Tanh {
public:
    void forward(const Tensor<T>& x, Tensor<T>& y, bool cache) {
        y.resize(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
        if (cache) {
            y_cache_ = y;
            cached_ = true;
        } else {
            cached_ = false;
        }
    }
    void backward(const Tensor<T>& dy, Tensor<T>* dx) {
        if (!cached_) throw ContractError("Tanh::backward without cached forward");
        if (!dx) return;
        dx->resize(dy.shape());
        for (std::size_t i = 0; i < dy.size(); ++i)
            (*dx)[i] = dy[i] * (T(1) - y_cache_[i] * y_cache_[i]);
    }

private:
    Tensor<T> y_cache_;
    bool cached_ = false;
};

template <typename T>
class UpsampleNearest {
public:
    explicit UpsampleNearest(int factor) : f_(factor) {}
    void forward(const Tensor<T>& x, Tensor<T>& y) {
        const std::size_t n = x.dim(0), c = x.dim(1), hi = x.dim(2), wi = x.dim(3);
        y.resize({n, c, hi * f_, wi * f_});
        const std::size_t ho = hi * f_, wo = wi * f_;
        parallel_for(n, [&](std::size_t i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T* px = x.data() + (i * c + ch) * hi * wi;
                T* py = y.data() + (i * c + ch) * ho * wo;
                for (std::size_t h = 0; h < ho; ++h)
                    for (std::size_t w = 0; w < wo; ++w)
                        py[h * wo + w] = px[(h / f_) * wi + (w / f_)];
            }
        });
        in_shape_ = x.shape();
    }
    void backward(const Tensor<T>& dy, Tensor<T>* dx) {
        if (!dx) return;
        dx->resize(in_shape_);
        const std::size_t n = dy.dim(0), c = dy.dim(1), ho = dy.dim(2), wo = dy.dim(3);
        const std::size_t hi = in_shape_[2], wi = in_shape_[3];
        parallel_for(n, [&](std::size_t i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T* pdy = dy.data() + (i * c + ch) * ho * wo;
                T* pdx = dx->data() + (i * c + ch) * hi * wi;
                for (std::size_t h = 0; h < ho; ++h)
                    for (std::size_t w = 0; w < wo; ++w)
                        pdx[(h / f_) * wi + (w / f_)] += pdy[h * wo + w];
            }
        });
    }

private:
    int f_;
    std::vector<std::size_t> in_shape_;
};

/// Global average pool [n,c,h,w] -> [n,c].
template <typename T>
class GlobalAvgPool {
public:
    void forward(const Tensor<T>& x, Tensor<T>& y) {
        const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
        y.resize({n, c});
        const T inv = T(1) / static_cast<T>(plane);
        parallel_for(n, [&](std::size_t i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T* p = x.data() + (i * c + ch) * plane;
                T s = T(0);
                for (std::size_t j = 0; j < plane; ++j) s += p[j];
                y(i, ch) = s * inv;
            }
        });
        in_shape_ = x.shape();
    }
    void backward(const Tensor<T>& dy, Tensor<T>* dx) {
        if (!dx) return;
        dx->resize(in_shape_);
        const std::size_t n = in_shape_[0], c = in_shape_[1],
                          plane = in_shape_[2] * in_shape_[3];
        const T inv = T(1) / static_cast<T>(plane);
        parallel_for(n, [&](std::size_t i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                T* p = dx->data() + (i * c + ch) * plane;
                const T g = dy(i, ch) * inv;
                for (std::size_t j = 0; j < plane; ++j) p[j] = g;
            }
        });
    }

private:
    std::vector<std::size_t> in_shape_;
};

/// Learned dense label embedding table [class_count, dim].
template <typename T>
class Embedding {
public:
    Embedding(int classes, int dim) : c_(classes), m_(dim) {
        table.resize({static_cast<std::size_t>(c_), static_cast<std::size_t>(m_)});
        gtable.resize(table.shape());
    }

    void init(RngStream& rng) { rng.fill_normal(table.data(), table.size(), 0.0, 1.0); }

    void forward(const std::vector<int>& labels, Tensor<T>& y) const {
        y.resize({labels.size(), static_cast<std::size_t>(m_)});
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const int lbl = labels[i];
            if (lbl < 0 || lbl >= c_) throw DimensionError("Embedding: label out of range");
            const T* src = table.data() + static_cast<std::size_t>(lbl) * m_;
            std::copy(src, src + m_, y.data() + i * m_);
        }
    }

    void backward(const std::vector<int>& labels, const Tensor<T>& dy) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            T* dst = gtable.data() + static_cast<std::size_t>(labels[i]) * m_;
            const T* src = dy.data() + i * m_;
            for (int j = 0; j < m_; ++j) dst[j] += src[j];
        }
    }

    std::vector<ParamRef<T>> params(const std::string& prefix) {
        return {{prefix + ".table", &table, &gtable}};
    }

    Tensor<T> table, gtable;

private:
    int c_, m_;
};

}  // namespace dfkd::nn
