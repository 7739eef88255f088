#include "dfkd/eval/evaluate.hpp"

#include <fstream>

#include <json.hpp>

namespace dfkd::eval {

double evaluate(models::Classifier& net, const data::EvalDataset& dataset,
                std::size_t batch_size) {
    if (dataset.size() == 0) throw DimensionError("evaluate: empty dataset");
    const data::EvalDataset& ds = (static_cast<int>(dataset.images.dim(2)) < net.input_size())
                                      ? data::padded_to(dataset, net.input_size())
                                      : dataset;
    const std::size_t n = ds.size();
    const std::size_t ch = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
    if (static_cast<int>(h) != net.input_size() || static_cast<int>(ch) != net.in_channels())
        throw DimensionError("evaluate: dataset shape does not match network input");

    std::size_t correct = 0;
    Tensor<float> batch;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t bn = std::min(batch_size, n - start);
        batch.resize({bn, ch, h, w});
        std::copy(ds.images.data() + start * ch * h * w,
                  ds.images.data() + (start + bn) * ch * h * w, batch.data());
        models::FwdOptions opt;  // running stats, no caching, no mutation
        models::ForwardRecord rec = net.forward(batch, opt);
        const auto& logits = rec.logits.values();
        const std::size_t c = logits.dim(1);
        for (std::size_t i = 0; i < bn; ++i) {
            const float* row = logits.data() + i * c;
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (row[j] > row[best]) best = j;
            if (static_cast<int>(best) == ds.labels[start + i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

void append_metrics_record(const std::string& path, int epoch, const std::string& split,
                           double accuracy, double relative_accuracy) {
    nlohmann::json rec;
    rec["epoch"] = epoch;
    rec["split"] = split;
    rec["accuracy"] = accuracy;
    if (relative_accuracy >= 0.0)
        rec["relative_accuracy"] = relative_accuracy;
    else
        rec["relative_accuracy"] = nullptr;
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot append metrics record to " + path);
    out << rec.dump() << "\n";
}

}  // namespace dfkd::eval
