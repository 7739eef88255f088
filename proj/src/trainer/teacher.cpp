#include <cmath>

#include "dfkd/eval/evaluate.hpp"
#include "dfkd/losses/losses.hpp"
#include "dfkd/trainer/trainer.hpp"

namespace dfkd::trainer {

TeacherResult train_teacher(const std::string& arch_id, const data::EvalDataset& train_data,
                            const TrainSchedule& schedule, const data::EvalDataset* test_data,
                            const std::function<void(int, double)>& on_epoch) {
    schedule.validate();
    if (train_data.role != data::DatasetRole::TeacherTrain)
        throw ConfigError("train_teacher: dataset role must be teacher-train (eval-only rejected)");

    TeacherResult result;
    const int in_ch = static_cast<int>(train_data.images.dim(1));
    // square inputs; small images are padded up to a conv-friendly size
    const int raw = static_cast<int>(train_data.images.dim(2));
    const int input_size = raw < 32 ? 32 : raw;
    result.net = models::make_classifier(arch_id, train_data.class_count, in_ch, input_size);
    result.net->init_params(RngStream::split(schedule.seed, "init:teacher"));

    const data::EvalDataset padded = data::padded_to(train_data, input_size);
    const std::size_t n = padded.size();
    const std::size_t batch = static_cast<std::size_t>(schedule.batch_size);
    const std::size_t batches = n / batch;
    if (schedule.epochs > 0 && batches == 0)
        throw ConfigError("train_teacher: dataset smaller than one batch");

    nn::SgdMomentum<float> opt(result.net->params(), schedule.student_lr, schedule.momentum,
                               schedule.weight_decay);

    const std::size_t ch = padded.images.dim(1), h = padded.images.dim(2),
                      w = padded.images.dim(3);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    Tensor<float> xb({batch, ch, h, w});
    for (int epoch = 1; epoch <= schedule.epochs; ++epoch) {
        for (int d : schedule.lr_decay_epochs)
            if (d == epoch) opt.set_lr(opt.lr() * schedule.lr_decay_factor);

        RngStream shuffle_rng =
            RngStream::split(schedule.seed, "teacher-shuffle", static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        for (std::size_t b = 0; b < batches; ++b) {
            PresetLabelBatch yb;
            yb.source_distribution.assign(train_data.class_count,
                                          1.0 / train_data.class_count);
            yb.labels.resize(batch);
            for (std::size_t i = 0; i < batch; ++i) {
                const std::size_t idx = order[b * batch + i];
                std::copy(padded.images.data() + idx * ch * h * w,
                          padded.images.data() + (idx + 1) * ch * h * w,
                          xb.data() + i * ch * h * w);
                yb.labels[i] = padded.labels[idx];
            }
            result.train_images_seen += static_cast<double>(batch);

            models::FwdOptions fopt;
            fopt.bn_batch_stats = true;
            fopt.bn_update_running = true;
            fopt.cache = true;
            models::ForwardRecord rec = result.net->forward(xb, fopt);

            Tensor<float> grad;
            const double loss = losses::ground_truth_loss<float>(rec.logits, yb, &grad);
            if (!std::isfinite(loss))
                throw DivergenceError("teacher training diverged",
                                      "{\"epoch\":" + std::to_string(epoch) + "}");

            result.net->zero_grad();
            models::BackwardOptions bopt;
            result.net->backward(grad, bopt);
            opt.step();
        }
        if (test_data && on_epoch) on_epoch(epoch, eval::evaluate(*result.net, *test_data));
    }

    if (test_data) result.test_accuracy = eval::evaluate(*result.net, *test_data);
    return result;
}

}  // namespace dfkd::trainer
