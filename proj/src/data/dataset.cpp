#include "dfkd/data/dataset.hpp"

#include <cstdint>
#include <fstream>

#include "dfkd/common/errors.hpp"

namespace dfkd::data {

namespace {

std::uint32_t read_be_u32(std::ifstream& in, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("truncated header in " + path, offset);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void check_norm(const Normalization& norm, int channels) {
    if (norm.mean.size() != static_cast<std::size_t>(channels) ||
        norm.std.size() != static_cast<std::size_t>(channels))
        throw ConfigError("normalization stats do not match channel count");
    for (double s : norm.std)
        if (!(s > 0)) throw ConfigError("normalization std must be > 0");
}

}  // namespace

EvalDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                             const Normalization& norm, DatasetRole role, int class_count) {
    check_norm(norm, 1);
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IoError("cannot open IDX image file: " + images_path);
    const std::uint32_t magic = read_be_u32(img, images_path, 0);
    if (magic != 2051) throw FormatError("bad IDX image magic in " + images_path, 0);
    const std::uint32_t n = read_be_u32(img, images_path, 4);
    const std::uint32_t rows = read_be_u32(img, images_path, 8);
    const std::uint32_t cols = read_be_u32(img, images_path, 12);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("cannot open IDX label file: " + labels_path);
    const std::uint32_t lmagic = read_be_u32(lab, labels_path, 0);
    if (lmagic != 2049) throw FormatError("bad IDX label magic in " + labels_path, 0);
    const std::uint32_t ln = read_be_u32(lab, labels_path, 4);
    if (ln != n) throw FormatError("IDX image/label count mismatch in " + labels_path, 4);

    EvalDataset ds;
    ds.class_count = class_count;
    ds.norm = norm;
    ds.role = role;
    ds.images.resize({n, 1, rows, cols});
    ds.labels.resize(n);

    const float mean = static_cast<float>(norm.mean[0]);
    const float inv_std = 1.0f / static_cast<float>(norm.std[0]);
    std::vector<unsigned char> buf(rows * cols);
    for (std::uint32_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!img)
            throw FormatError("truncated IDX image data in " + images_path,
                              16 + static_cast<std::size_t>(i) * rows * cols);
        float* dst = ds.images.data() + static_cast<std::size_t>(i) * rows * cols;
        for (std::size_t j = 0; j < buf.size(); ++j)
            dst[j] = (static_cast<float>(buf[j]) / 255.0f - mean) * inv_std;
        unsigned char y;
        lab.read(reinterpret_cast<char*>(&y), 1);
        if (!lab)
            throw FormatError("truncated IDX label data in " + labels_path,
                              8 + static_cast<std::size_t>(i));
        if (y >= class_count)
            throw FormatError("IDX label out of range in " + labels_path,
                              8 + static_cast<std::size_t>(i));
        ds.labels[i] = y;
    }
    return ds;
}

EvalDataset load_cifar_dataset(const std::vector<std::string>& batch_paths,
                               const Normalization& norm, DatasetRole role, int class_count,
                               int label_bytes) {
    check_norm(norm, 3);
    constexpr std::size_t kPixels = 3072;
    const std::size_t record = static_cast<std::size_t>(label_bytes) + kPixels;

    EvalDataset ds;
    ds.class_count = class_count;
    ds.norm = norm;
    ds.role = role;

    std::vector<std::vector<unsigned char>> raw;
    std::vector<int> labels;
    for (const auto& path : batch_paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open CIFAR batch: " + path);
        in.seekg(0, std::ios::end);
        const std::size_t bytes = static_cast<std::size_t>(in.tellg());
        in.seekg(0);
        if (bytes == 0 || bytes % record != 0)
            throw FormatError("CIFAR batch size is not a multiple of the record size in " + path,
                              bytes - bytes % record);
        const std::size_t count = bytes / record;
        std::vector<unsigned char> rec(record);
        for (std::size_t i = 0; i < count; ++i) {
            in.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(record));
            if (!in) throw FormatError("truncated CIFAR record in " + path, i * record);
            const int y = rec[label_bytes - 1];
            if (y >= class_count)
                throw FormatError("CIFAR label out of range in " + path, i * record);
            labels.push_back(y);
            raw.emplace_back(rec.begin() + label_bytes, rec.end());
        }
    }

    const std::size_t n = labels.size();
    ds.images.resize({n, 3, 32, 32});
    ds.labels = std::move(labels);
    for (std::size_t i = 0; i < n; ++i) {
        float* dst = ds.images.data() + i * kPixels;
        const unsigned char* src = raw[i].data();
        for (int c = 0; c < 3; ++c) {
            const float mean = static_cast<float>(ds.norm.mean[c]);
            const float inv_std = 1.0f / static_cast<float>(ds.norm.std[c]);
            for (std::size_t j = 0; j < 1024; ++j)
                dst[c * 1024 + j] = (static_cast<float>(src[c * 1024 + j]) / 255.0f - mean) * inv_std;
        }
    }
    return ds;
}

EvalDataset load_eval_dataset(const std::string& format_id, const std::string& path,
                              const std::string& split, const Normalization& norm,
                              DatasetRole role, int class_count) {
    if (format_id == "mnist-idx") {
        const bool train = split == "train";
        const std::string img = path + "/" + (train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte");
        const std::string lab = path + "/" + (train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte");
        return load_idx_dataset(img, lab, norm, role, class_count);
    }
    if (format_id == "cifar-bin")
        return load_cifar_dataset({path}, norm, role, class_count, class_count > 10 ? 2 : 1);
    throw ConfigError("unknown dataset format id: " + format_id);
}

Tensor<float> pad_images(const Tensor<float>& images, int target_size,
                         const Normalization& norm) {
    const std::size_t n = images.dim(0), ch = images.dim(1), h = images.dim(2), w = images.dim(3);
    const std::size_t t = static_cast<std::size_t>(target_size);
    if (h > t || w > t) throw DimensionError("pad_images: image larger than target");
    if ((t - h) % 2 != 0 || (t - w) % 2 != 0)
        throw DimensionError("pad_images: padding must be symmetric");
    const std::size_t ph = (t - h) / 2, pw = (t - w) / 2;

    Tensor<float> out({n, ch, t, t});
    for (std::size_t c = 0; c < ch; ++c) {
        // a raw zero pixel, normalized
        const float pad_value = static_cast<float>((0.0 - norm.mean[c]) / norm.std[c]);
        for (std::size_t i = 0; i < n; ++i) {
            float* dst = out.data() + (i * ch + c) * t * t;
            for (std::size_t j = 0; j < t * t; ++j) dst[j] = pad_value;
            const float* src = images.data() + (i * ch + c) * h * w;
            for (std::size_t r = 0; r < h; ++r)
                std::copy(src + r * w, src + (r + 1) * w, dst + (r + ph) * t + pw);
        }
    }
    return out;
}

EvalDataset padded_to(const EvalDataset& ds, int target_size) {
    if (static_cast<int>(ds.images.dim(2)) == target_size &&
        static_cast<int>(ds.images.dim(3)) == target_size)
        return ds;
    EvalDataset out = ds;
    out.images = pad_images(ds.images, target_size, ds.norm);
    return out;
}

}  // namespace dfkd::data
