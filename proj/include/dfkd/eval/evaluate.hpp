#pragma once

#include <string>

#include "dfkd/data/dataset.hpp"
#include "dfkd/models/classifier.hpp"

namespace dfkd::eval {

/// Top-1 accuracy of a classifier on a dataset. Idempotent, side-effect-free;
/// images are zero-padded up to the network input size when smaller.
double evaluate(models::Classifier& net, const data::EvalDataset& dataset,
                std::size_t batch_size = 512);

/// Appends one line-delimited metrics record:
/// {"epoch":..,"split":..,"accuracy":..,"relative_accuracy":..}
/// relative_accuracy < 0 means "not applicable" and is written as null.
void append_metrics_record(const std::string& path, int epoch, const std::string& split,
                           double accuracy, double relative_accuracy);

}  // namespace dfkd::eval
