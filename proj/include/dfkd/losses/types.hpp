#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfkd/common/errors.hpp"
#include "dfkd/common/rng.hpp"
#include "dfkd/common/tensor.hpp"

namespace dfkd {

/// Raw pre-softmax class scores for a batch, shape [n x c].
template <typename T>
class LogitsBatch {
public:
    LogitsBatch() = default;
    explicit LogitsBatch(Tensor<T> values) : values_(std::move(values)) { validate(); }

    static LogitsBatch from(std::size_t n, std::size_t c, std::vector<T> v) {
        return LogitsBatch(Tensor<T>::from({n, c}, std::move(v)));
    }

    std::size_t n() const { return values_.dim(0); }
    std::size_t c() const { return values_.dim(1); }
    const Tensor<T>& values() const { return values_; }
    Tensor<T>& values() { return values_; }

private:
    void validate() const {
        if (values_.rank() != 2) throw DimensionError("LogitsBatch: expected rank-2 values");
        if (values_.dim(0) < 1) throw DimensionError("LogitsBatch: need at least one sample");
        if (values_.dim(1) < 2) throw DimensionError("LogitsBatch: need at least two classes");
        if (!values_.all_finite()) throw NumericError("LogitsBatch: non-finite logits");
    }

    Tensor<T> values_;
};

/// Class labels fixed ahead of generation, together with the distribution
/// they were sampled from.
struct PresetLabelBatch {
    std::vector<int> labels;
    std::vector<double> source_distribution;

    std::size_t n() const { return labels.size(); }
    std::size_t c() const { return source_distribution.size(); }

    void validate() const {
        validate_distribution(source_distribution);
        for (int y : labels)
            if (y < 0 || static_cast<std::size_t>(y) >= source_distribution.size())
                throw DimensionError("PresetLabelBatch: label out of range");
    }

    static PresetLabelBatch uniform(std::vector<int> labels, std::size_t c) {
        PresetLabelBatch b;
        b.labels = std::move(labels);
        b.source_distribution.assign(c, 1.0 / static_cast<double>(c));
        b.validate();
        return b;
    }
};

/// One layer's activation block for one sample, shape [C x H x W].
template <typename T>
struct AttentionMap {
    Tensor<T> activation;
    int layer_index = 0;

    std::size_t channels() const { return activation.dim(0); }
    std::size_t height() const { return activation.dim(1); }
    std::size_t width() const { return activation.dim(2); }

    void validate() const {
        if (activation.rank() != 3) throw DimensionError("AttentionMap: expected [C,H,W]");
        if (activation.dim(0) < 1 || activation.dim(1) < 1 || activation.dim(2) < 1)
            throw DimensionError("AttentionMap: empty dimension");
        if (!activation.all_finite()) throw NumericError("AttentionMap: non-finite activation");
    }
};

/// Flattened, L2-normalized spatial energy of an attention map.
template <typename T>
struct AttentionVector {
    Tensor<T> q;  // [H*W]
};

/// Scalar trade-off weights of the composite objectives. lambda_bn weights
/// the batch-norm statistics regularizer and defaults to off.
struct LossWeights {
    double lambda_ie = 5.0;
    double lambda_us = 1.0;
    double lambda_cm = 1.0;
    double lambda_gt = 1.0;
    double lambda_at = 2.0;
    double lambda_bn = 0.0;

    void validate() const {
        for (double v : {lambda_ie, lambda_us, lambda_cm, lambda_gt, lambda_at, lambda_bn})
            if (!(v >= 0.0) || !std::isfinite(v))
                throw ConfigError("LossWeights: weights must be finite and >= 0");
    }
};

struct MetricsReport {
    double teacher_accuracy = 0.0;   // fraction in [0,1]
    double student_accuracy = 0.0;   // fraction in [0,1]
    double relative_accuracy = 0.0;  // percentage
};

}  // namespace dfkd
