#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dfkd/common/errors.hpp"
#include "dfkd/common/tensor.hpp"
#include "dfkd/losses/types.hpp"

namespace dfkd::losses {

/// Clamp floor for log arguments and norm denominators.
inline constexpr double kEps = 1e-8;

namespace detail {

template <typename T>
void softmax_rows(const Tensor<T>& logits, Tensor<T>& probs) {
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (!probs.same_shape(logits)) probs.resize({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.data() + i * c;
        T* out = probs.data() + i * c;
        T m = row[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        T sum = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            out[j] = std::exp(row[j] - m);
            sum += out[j];
        }
        const T inv = T(1) / sum;
        for (std::size_t j = 0; j < c; ++j) out[j] *= inv;
    }
}

/// Mean cross-entropy between row-softmax probabilities and integer targets.
/// grad, when given, receives d(loss)/d(logits).
template <typename T>
T mean_cross_entropy(const Tensor<T>& probs, std::span<const int> targets, Tensor<T>* grad) {
    const std::size_t n = probs.dim(0), c = probs.dim(1);
    if (grad && !grad->same_shape(probs)) grad->resize({n, c});
    T loss = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T* p = probs.data() + i * c;
        const int y = targets[i];
        const bool clamped = p[y] < T(kEps);
        loss += -std::log(clamped ? T(kEps) : p[y]);
        if (grad) {
            T* g = grad->data() + i * c;
            if (clamped) {
                // loss term is constant -ln(eps) here
                for (std::size_t j = 0; j < c; ++j) g[j] = T(0);
            } else {
                for (std::size_t j = 0; j < c; ++j) g[j] = p[j] / T(n);
                g[y] -= T(1) / T(n);
            }
        }
    }
    return loss / T(n);
}

inline void require_same_shape(std::size_t n1, std::size_t c1, std::size_t n2, std::size_t c2,
                               const char* what) {
    if (n1 != n2 || c1 != c2) throw DimensionError(std::string(what) + ": shape mismatch");
}

}  // namespace detail

/// Row argmax with ties broken toward the lowest class index.
template <typename T>
std::vector<int> teacher_argmax(const LogitsBatch<T>& logits) {
    const std::size_t n = logits.n(), c = logits.c();
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.values().data() + i * c;
        int best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (row[j] > row[best]) best = static_cast<int>(j);
        out[i] = best;
    }
    return out;
}

/// Mean cross-entropy between softmax(teacher logits) and the preset labels.
template <typename T>
T class_matching_loss(const LogitsBatch<T>& teacher, const PresetLabelBatch& labels,
                      Tensor<T>* grad_logits = nullptr) {
    labels.validate();
    if (labels.n() != teacher.n())
        throw DimensionError("class_matching_loss: batch size mismatch");
    if (labels.c() != teacher.c())
        throw DimensionError("class_matching_loss: class count mismatch");
    Tensor<T> probs;
    detail::softmax_rows(teacher.values(), probs);
    return detail::mean_cross_entropy(probs, std::span<const int>(labels.labels), grad_logits);
}

/// Scaled negative entropy of the batch-averaged softmax distribution:
/// (1/c) * sum_i p̄_i ln p̄_i, in [-(ln c)/c, 0], minimal at the uniform p̄.
template <typename T>
T information_entropy_loss(const LogitsBatch<T>& teacher, Tensor<T>* grad_logits = nullptr) {
    const std::size_t n = teacher.n(), c = teacher.c();
    Tensor<T> probs;
    detail::softmax_rows(teacher.values(), probs);

    std::vector<T> pbar(c, T(0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) pbar[j] += probs(i, j);
    for (std::size_t j = 0; j < c; ++j) pbar[j] /= T(n);

    T loss = T(0);
    std::vector<T> dterm(c);  // d(p ln p)/dp with the 0*ln(0) := 0 convention
    for (std::size_t j = 0; j < c; ++j) {
        if (pbar[j] >= T(kEps)) {
            loss += pbar[j] * std::log(pbar[j]);
            dterm[j] = std::log(pbar[j]) + T(1);
        } else {
            loss += pbar[j] * std::log(T(kEps));
            dterm[j] = std::log(T(kEps));
        }
    }
    loss /= T(c);

    if (grad_logits) {
        if (!grad_logits->same_shape(teacher.values())) grad_logits->resize({n, c});
        const T scale = T(1) / (T(c) * T(n));
        for (std::size_t i = 0; i < n; ++i) {
            const T* p = probs.data() + i * c;
            T dot = T(0);
            for (std::size_t k = 0; k < c; ++k) dot += dterm[k] * p[k];
            T* g = grad_logits->data() + i * c;
            for (std::size_t j = 0; j < c; ++j) g[j] = scale * p[j] * (dterm[j] - dot);
        }
    }
    return loss;
}

/// Mean cross-entropy between softmax(teacher logits) and the teacher's own
/// argmax labels (treated as constants for the gradient).
template <typename T>
T one_hot_loss(const LogitsBatch<T>& teacher, Tensor<T>* grad_logits = nullptr) {
    const std::vector<int> y = teacher_argmax(teacher);
    Tensor<T> probs;
    detail::softmax_rows(teacher.values(), probs);
    return detail::mean_cross_entropy(probs, std::span<const int>(y), grad_logits);
}

/// L_US = L_oh + lambda_ie * L_ie.
template <typename T>
T unsupervised_loss(const LogitsBatch<T>& teacher, const LossWeights& w,
                    Tensor<T>* grad_logits = nullptr, T* oh_out = nullptr, T* ie_out = nullptr) {
    Tensor<T> g_ie;
    const T oh = one_hot_loss(teacher, grad_logits);
    const T ie = information_entropy_loss(teacher, grad_logits ? &g_ie : nullptr);
    if (grad_logits) {
        const T lam = static_cast<T>(w.lambda_ie);
        for (std::size_t i = 0; i < grad_logits->size(); ++i)
            (*grad_logits)[i] += lam * g_ie[i];
    }
    if (oh_out) *oh_out = oh;
    if (ie_out) *ie_out = ie;
    return oh + static_cast<T>(w.lambda_ie) * ie;
}

/// Mean absolute error between raw teacher and student logits:
/// (1/n) * sum_i ||t_i - s_i||_1. Symmetric; subgradient sign(t-s)/n.
template <typename T>
T discrepancy_estimation_loss(const LogitsBatch<T>& teacher, const LogitsBatch<T>& student,
                              Tensor<T>* grad_teacher = nullptr,
                              Tensor<T>* grad_student = nullptr) {
    const std::size_t n = teacher.n(), c = teacher.c();
    detail::require_same_shape(n, c, student.n(), student.c(), "discrepancy_estimation_loss");
    if (grad_teacher && !grad_teacher->same_shape(teacher.values()))
        grad_teacher->resize({n, c});
    if (grad_student && !grad_student->same_shape(teacher.values()))
        grad_student->resize({n, c});
    const T* t = teacher.values().data();
    const T* s = student.values().data();
    T loss = T(0);
    const T inv_n = T(1) / T(n);
    for (std::size_t i = 0; i < n * c; ++i) {
        const T d = t[i] - s[i];
        loss += std::abs(d);
        const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
        if (grad_teacher) (*grad_teacher)[i] = sgn * inv_n;
        if (grad_student) (*grad_student)[i] = -sgn * inv_n;
    }
    return loss * inv_n;
}

template <typename T>
struct GeneratorLossParts {
    T total = T(0);
    T de = T(0);
    T us = T(0);
    T oh = T(0);
    T ie = T(0);
    T cm = T(0);
    T bn_penalty = T(0);
};

/// L_G = -L_DE + lambda_US * L_US + lambda_CM * L_CM + lambda_BN * bn_penalty.
/// Gradients are with respect to the raw logits of each network.
template <typename T>
GeneratorLossParts<T> generator_loss_parts(const LogitsBatch<T>& teacher,
                                           const LogitsBatch<T>& student,
                                           const PresetLabelBatch& labels, const LossWeights& w,
                                           T bn_penalty, Tensor<T>* grad_teacher = nullptr,
                                           Tensor<T>* grad_student = nullptr) {
    w.validate();
    if (!(bn_penalty >= T(0)))
        throw NumericError("generator_loss: bn_penalty must be >= 0");
    GeneratorLossParts<T> parts;
    Tensor<T> g_de_t, g_de_s, g_us, g_cm;

    parts.de = discrepancy_estimation_loss(teacher, student, grad_teacher ? &g_de_t : nullptr,
                                           grad_student ? &g_de_s : nullptr);
    parts.us = unsupervised_loss(teacher, w, grad_teacher ? &g_us : nullptr, &parts.oh,
                                 &parts.ie);
    parts.cm = class_matching_loss(teacher, labels, grad_teacher ? &g_cm : nullptr);
    parts.bn_penalty = bn_penalty;
    parts.total = -parts.de + static_cast<T>(w.lambda_us) * parts.us +
                  static_cast<T>(w.lambda_cm) * parts.cm +
                  static_cast<T>(w.lambda_bn) * bn_penalty;

    if (grad_teacher) {
        if (!grad_teacher->same_shape(teacher.values()))
            grad_teacher->resize({teacher.n(), teacher.c()});
        const T lus = static_cast<T>(w.lambda_us), lcm = static_cast<T>(w.lambda_cm);
        for (std::size_t i = 0; i < grad_teacher->size(); ++i)
            (*grad_teacher)[i] = -g_de_t[i] + lus * g_us[i] + lcm * g_cm[i];
    }
    if (grad_student) {
        if (!grad_student->same_shape(student.values()))
            grad_student->resize({student.n(), student.c()});
        for (std::size_t i = 0; i < grad_student->size(); ++i)
            (*grad_student)[i] = -g_de_s[i];
    }
    return parts;
}

template <typename T>
T generator_loss(const LogitsBatch<T>& teacher, const LogitsBatch<T>& student,
                 const PresetLabelBatch& labels, const LossWeights& w, T bn_penalty,
                 Tensor<T>* grad_teacher = nullptr, Tensor<T>* grad_student = nullptr) {
    return generator_loss_parts(teacher, student, labels, w, bn_penalty, grad_teacher,
                                grad_student)
        .total;
}

/// Same contract as class_matching_loss, applied to student logits.
template <typename T>
T ground_truth_loss(const LogitsBatch<T>& student, const PresetLabelBatch& labels,
                    Tensor<T>* grad_logits = nullptr) {
    labels.validate();
    if (labels.n() != student.n())
        throw DimensionError("ground_truth_loss: batch size mismatch");
    if (labels.c() != student.c())
        throw DimensionError("ground_truth_loss: class count mismatch");
    Tensor<T> probs;
    detail::softmax_rows(student.values(), probs);
    return detail::mean_cross_entropy(probs, std::span<const int>(labels.labels), grad_logits);
}

/// Spatial activation energy: F(A)[h,w] = sum_channels A[c,h,w]^2.
template <typename T>
Tensor<T> attention_energy(const AttentionMap<T>& map) {
    map.validate();
    const std::size_t C = map.channels(), H = map.height(), W = map.width();
    Tensor<T> e({H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) e(h, w) += map.activation(c, h, w) * map.activation(c, h, w);
    return e;
}

/// Backpropagates d(scalar)/d(energy) to d(scalar)/d(activation).
template <typename T>
Tensor<T> attention_energy_vjp(const AttentionMap<T>& map, const Tensor<T>& d_energy) {
    const std::size_t C = map.channels(), H = map.height(), W = map.width();
    Tensor<T> d_act({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w)
                d_act(c, h, w) = T(2) * map.activation(c, h, w) * d_energy(h, w);
    return d_act;
}

namespace detail {

/// Average-pools an [H,W] energy grid by an integer factor.
template <typename T>
Tensor<T> pool_energy(const Tensor<T>& e, std::size_t factor) {
    const std::size_t H = e.dim(0), W = e.dim(1);
    const std::size_t ph = H / factor, pw = W / factor;
    Tensor<T> out({ph, pw});
    const T inv = T(1) / T(factor * factor);
    for (std::size_t h = 0; h < ph; ++h)
        for (std::size_t w = 0; w < pw; ++w) {
            T sum = T(0);
            for (std::size_t dh = 0; dh < factor; ++dh)
                for (std::size_t dw = 0; dw < factor; ++dw)
                    sum += e(h * factor + dh, w * factor + dw);
            out(h, w) = sum * inv;
        }
    return out;
}

template <typename T>
Tensor<T> unpool_energy_grad(const Tensor<T>& d_pooled, std::size_t H, std::size_t W,
                             std::size_t factor) {
    Tensor<T> out({H, W});
    const T inv = T(1) / T(factor * factor);
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) out(h, w) = d_pooled(h / factor, w / factor) * inv;
    return out;
}

/// Picks the pooling factors that bring both energies onto the smaller grid.
inline std::pair<std::size_t, std::size_t> pair_pool_factors(std::size_t hs, std::size_t ws,
                                                             std::size_t ht, std::size_t wt) {
    if (hs == ht && ws == wt) return {1, 1};
    const std::size_t th = std::min(hs, ht), tw = std::min(ws, wt);
    if (hs % th != 0 || ht % th != 0 || ws % tw != 0 || wt % tw != 0 ||
        hs / th != ws / tw || ht / th != wt / tw)
        throw DimensionError("attention_transfer_loss: spatial sizes are not pool-compatible");
    return {hs / th, ht / th};
}

}  // namespace detail

/// L2-normalized flattened energy of one map (the Q/||Q|| vector).
template <typename T>
AttentionVector<T> attention_vector(const AttentionMap<T>& map) {
    Tensor<T> e = attention_energy(map);
    const std::size_t L = e.size();
    AttentionVector<T> v;
    v.q.resize({L});
    T norm = T(0);
    for (std::size_t i = 0; i < L; ++i) norm += e[i] * e[i];
    norm = std::sqrt(norm);
    const T denom = std::max(norm, T(kEps));
    for (std::size_t i = 0; i < L; ++i) v.q[i] = e[i] / denom;
    return v;
}

/// Sum over map pairs of || Q_S/||Q_S|| - Q_T/||Q_T|| ||_2, with energies
/// average-pooled to a common grid when spatial sizes differ. Optional
/// gradients are with respect to the raw activations of each list.
template <typename T>
T attention_transfer_loss(std::span<const AttentionMap<T>> student_maps,
                          std::span<const AttentionMap<T>> teacher_maps,
                          std::vector<Tensor<T>>* grad_student = nullptr,
                          std::vector<Tensor<T>>* grad_teacher = nullptr) {
    if (student_maps.size() != teacher_maps.size())
        throw DimensionError("attention_transfer_loss: list length mismatch");
    if (grad_student) grad_student->assign(student_maps.size(), Tensor<T>());
    if (grad_teacher) grad_teacher->assign(teacher_maps.size(), Tensor<T>());

    T total = T(0);
    for (std::size_t p = 0; p < student_maps.size(); ++p) {
        const AttentionMap<T>& ms = student_maps[p];
        const AttentionMap<T>& mt = teacher_maps[p];
        Tensor<T> es = attention_energy(ms);
        Tensor<T> et = attention_energy(mt);
        const auto [fs, ft] =
            detail::pair_pool_factors(es.dim(0), es.dim(1), et.dim(0), et.dim(1));
        Tensor<T> qs_raw = fs > 1 ? detail::pool_energy(es, fs) : es;
        Tensor<T> qt_raw = ft > 1 ? detail::pool_energy(et, ft) : et;

        const std::size_t L = qs_raw.size();
        T ns = T(0), nt = T(0);
        for (std::size_t i = 0; i < L; ++i) {
            ns += qs_raw[i] * qs_raw[i];
            nt += qt_raw[i] * qt_raw[i];
        }
        ns = std::sqrt(ns);
        nt = std::sqrt(nt);
        const T ds = std::max(ns, T(kEps)), dt = std::max(nt, T(kEps));

        std::vector<T> qs(L), qt(L), diff(L);
        T dist = T(0);
        for (std::size_t i = 0; i < L; ++i) {
            qs[i] = qs_raw[i] / ds;
            qt[i] = qt_raw[i] / dt;
            diff[i] = qs[i] - qt[i];
            dist += diff[i] * diff[i];
        }
        dist = std::sqrt(dist);
        total += dist;

        if (!grad_student && !grad_teacher) continue;

        // d||diff|| / d diff, with the subgradient 0 at diff = 0
        std::vector<T> g(L, T(0));
        if (dist > T(0))
            for (std::size_t i = 0; i < L; ++i) g[i] = diff[i] / dist;

        auto backprop_side = [&](const std::vector<T>& q, T norm, T denom, T sign,
                                 const Tensor<T>& pooled, std::size_t factor,
                                 const Tensor<T>& energy, const AttentionMap<T>& map) {
            // through q = Q / max(||Q||, eps)
            std::vector<T> dq(L);
            if (norm > T(kEps)) {
                T dot = T(0);
                for (std::size_t i = 0; i < L; ++i) dot += q[i] * g[i];
                for (std::size_t i = 0; i < L; ++i) dq[i] = sign * (g[i] - q[i] * dot) / denom;
            } else {
                for (std::size_t i = 0; i < L; ++i) dq[i] = sign * g[i] / denom;
            }
            Tensor<T> d_pooled = Tensor<T>::from({pooled.dim(0), pooled.dim(1)},
                                                 std::vector<T>(dq.begin(), dq.end()));
            Tensor<T> d_energy = factor > 1 ? detail::unpool_energy_grad(
                                                  d_pooled, energy.dim(0), energy.dim(1), factor)
                                            : d_pooled;
            return attention_energy_vjp(map, d_energy);
        };

        if (grad_student)
            (*grad_student)[p] = backprop_side(qs, ns, ds, T(1), qs_raw, fs, es, ms);
        if (grad_teacher)
            (*grad_teacher)[p] = backprop_side(qt, nt, dt, T(-1), qt_raw, ft, et, mt);
    }
    return total;
}

template <typename T>
struct DistillationLossParts {
    T total = T(0);
    T de = T(0);
    T gt = T(0);
    T at = T(0);
};

/// L_KD = L_DE + lambda_GT * L_GT + lambda_AT * L_AT.
template <typename T>
DistillationLossParts<T> distillation_loss_parts(
    const LogitsBatch<T>& teacher, const LogitsBatch<T>& student, const PresetLabelBatch& labels,
    std::span<const AttentionMap<T>> student_maps, std::span<const AttentionMap<T>> teacher_maps,
    const LossWeights& w, Tensor<T>* grad_student_logits = nullptr,
    std::vector<Tensor<T>>* grad_student_maps = nullptr) {
    w.validate();
    DistillationLossParts<T> parts;
    Tensor<T> g_de_s, g_gt;
    parts.de = discrepancy_estimation_loss(teacher, student, nullptr,
                                           grad_student_logits ? &g_de_s : nullptr);
    parts.gt = ground_truth_loss(student, labels, grad_student_logits ? &g_gt : nullptr);
    parts.at = attention_transfer_loss(student_maps, teacher_maps, grad_student_maps, nullptr);
    parts.total = parts.de + static_cast<T>(w.lambda_gt) * parts.gt +
                  static_cast<T>(w.lambda_at) * parts.at;

    if (grad_student_logits) {
        if (!grad_student_logits->same_shape(student.values()))
            grad_student_logits->resize({student.n(), student.c()});
        const T lgt = static_cast<T>(w.lambda_gt);
        for (std::size_t i = 0; i < grad_student_logits->size(); ++i)
            (*grad_student_logits)[i] = g_de_s[i] + lgt * g_gt[i];
    }
    if (grad_student_maps) {
        const T lat = static_cast<T>(w.lambda_at);
        for (Tensor<T>& g : *grad_student_maps)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= lat;
    }
    return parts;
}

template <typename T>
T distillation_loss(const LogitsBatch<T>& teacher, const LogitsBatch<T>& student,
                    const PresetLabelBatch& labels,
                    std::span<const AttentionMap<T>> student_maps,
                    std::span<const AttentionMap<T>> teacher_maps, const LossWeights& w,
                    Tensor<T>* grad_student_logits = nullptr,
                    std::vector<Tensor<T>>* grad_student_maps = nullptr) {
    return distillation_loss_parts(teacher, student, labels, student_maps, teacher_maps, w,
                                   grad_student_logits, grad_student_maps)
        .total;
}

/// Student accuracy as a percentage of teacher accuracy.
inline double relative_accuracy(double teacher_accuracy, double student_accuracy) {
    if (!(teacher_accuracy > 0.0))
        throw UndefinedMetricError("relative_accuracy: teacher accuracy must be > 0");
    return 100.0 * student_accuracy / teacher_accuracy;
}

inline MetricsReport make_metrics_report(double teacher_accuracy, double student_accuracy) {
    MetricsReport r;
    r.teacher_accuracy = teacher_accuracy;
    r.student_accuracy = student_accuracy;
    r.relative_accuracy = relative_accuracy(teacher_accuracy, student_accuracy);
    return r;
}

}  // namespace dfkd::losses
