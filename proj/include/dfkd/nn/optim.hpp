#pragma once

#include <cmath>
#include <vector>

#include "dfkd/common/parallel.hpp"
#include "dfkd/nn/layers.hpp"

namespace dfkd::nn {

/// SGD with classical momentum and decoupled-into-gradient weight decay:
///   g' = g + wd * p;  v = mu * v + g';  p -= lr * v.
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(std::vector<ParamRef<T>> params, double lr, double momentum,
                double weight_decay)
        : params_(std::move(params)), lr_(lr), momentum_(momentum), wd_(weight_decay) {
        for (const auto& p : params_) velocity_.emplace_back(p.value->shape());
    }

    void zero_grad() {
        for (auto& p : params_) p.grad->set_zero();
    }

    void step() {
        const T lr = static_cast<T>(lr_), mu = static_cast<T>(momentum_),
                wd = static_cast<T>(wd_);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            T* p = params_[k].value->data();
            T* g = params_[k].grad->data();
            T* v = velocity_[k].data();
            const std::size_t n = params_[k].value->size();
            parallel_for(n, [&](std::size_t i) {
                const T gi = g[i] + wd * p[i];
                v[i] = mu * v[i] + gi;
                p[i] -= lr * v[i];
            });
        }
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<ParamRef<T>> params_;
    std::vector<Tensor<T>> velocity_;
    double lr_, momentum_, wd_;
};

/// Adam with bias correction.
template <typename T>
class Adam {
public:
    Adam(std::vector<ParamRef<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.value->shape());
            v_.emplace_back(p.value->shape());
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.grad->set_zero();
    }

    void step() {
        ++t_;
        const T lr = static_cast<T>(lr_), b1 = static_cast<T>(beta1_),
                b2 = static_cast<T>(beta2_), eps = static_cast<T>(eps_);
        const T bc1 = T(1) - static_cast<T>(std::pow(beta1_, t_));
        const T bc2 = T(1) - static_cast<T>(std::pow(beta2_, t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            T* p = params_[k].value->data();
            T* g = params_[k].grad->data();
            T* m = m_[k].data();
            T* v = v_[k].data();
            const std::size_t n = params_[k].value->size();
            parallel_for(n, [&](std::size_t i) {
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                const T mh = m[i] / bc1;
                const T vh = v[i] / bc2;
                p[i] -= lr * mh / (std::sqrt(vh) + eps);
            });
        }
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<ParamRef<T>> params_;
    std::vector<Tensor<T>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace dfkd::nn
