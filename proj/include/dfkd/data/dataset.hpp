#pragma once

#include <string>
#include <vector>

#include "dfkd/common/tensor.hpp"

namespace dfkd::data {

enum class DatasetRole { TeacherTrain, EvalOnly };

struct Normalization {
    std::vector<double> mean;  // per channel
    std::vector<double> std;
};

/// Decoded dataset with normalization already applied. Eval-only datasets are
/// rejected by every training-path operation.
struct EvalDataset {
    Tensor<float> images;  // [N, channels, H, W]
    std::vector<int> labels;
    int class_count = 0;
    Normalization norm;
    DatasetRole role = DatasetRole::EvalOnly;

    std::size_t size() const { return labels.size(); }
};

/// IDX image/label pair (magic 2051 / 2049, big-endian dims).
EvalDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                             const Normalization& norm, DatasetRole role, int class_count = 10);

/// CIFAR binary: label_bytes label bytes + 3072 pixel bytes per record; the
/// last label byte is the class (fine label for the 2-byte CIFAR-100 layout).
EvalDataset load_cifar_dataset(const std::vector<std::string>& batch_paths,
                               const Normalization& norm, DatasetRole role, int class_count,
                               int label_bytes = 1);

/// Dispatcher keyed by format id: "mnist-idx" (path = directory holding the
/// canonical file names, split "train"/"test") or "cifar-bin" (path = one
/// batch file).
EvalDataset load_eval_dataset(const std::string& format_id, const std::string& path,
                              const std::string& split, const Normalization& norm,
                              DatasetRole role, int class_count);

/// Zero-pads images symmetrically in raw pixel space semantics: the pad value
/// is the normalization of a zero pixel.
Tensor<float> pad_images(const Tensor<float>& images, int target_size,
                         const Normalization& norm);

EvalDataset padded_to(const EvalDataset& ds, int target_size);

}  // namespace dfkd::data
