#include "dfkd/trainer/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dfkd/losses/losses.hpp"
#include "dfkd/models/checkpoint.hpp"

namespace dfkd::trainer {

namespace {

using models::Classifier;
using models::ConditionalGenerator;

/// Batch-mean attention transfer over tap tensors [n,C,H,W], computed with
/// the per-sample loss; fills d(loss)/d(student tap) when grads is given.
double batched_attention_transfer(const std::vector<Tensor<float>>& student_taps,
                                  const std::vector<Tensor<float>>& teacher_taps,
                                  std::vector<Tensor<float>>* grads) {
    const std::size_t taps = student_taps.size();
    if (taps != teacher_taps.size())
        throw DimensionError("attention transfer: tap count mismatch");
    if (taps == 0) return 0.0;
    const std::size_t n = student_taps[0].dim(0);
    if (grads) {
        grads->assign(taps, Tensor<float>());
        for (std::size_t t = 0; t < taps; ++t) (*grads)[t].resize(student_taps[t].shape());
    }
    const float inv_n = 1.0f / static_cast<float>(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<losses::AttentionMap<float>> s_maps(taps), t_maps(taps);
        for (std::size_t t = 0; t < taps; ++t) {
            const auto& st = student_taps[t];
            const auto& tt = teacher_taps[t];
            const std::size_t sc = st.dim(1), sh = st.dim(2), sw = st.dim(3);
            const std::size_t tc = tt.dim(1), th = tt.dim(2), tw = tt.dim(3);
            s_maps[t].layer_index = static_cast<int>(t);
            s_maps[t].activation = Tensor<float>::from(
                {sc, sh, sw}, std::vector<float>(st.data() + i * sc * sh * sw,
                                                 st.data() + (i + 1) * sc * sh * sw));
            t_maps[t].layer_index = static_cast<int>(t);
            t_maps[t].activation = Tensor<float>::from(
                {tc, th, tw}, std::vector<float>(tt.data() + i * tc * th * tw,
                                                 tt.data() + (i + 1) * tc * th * tw));
        }
        std::vector<Tensor<float>> g;
        const float li = losses::attention_transfer_loss<float>(
            std::span<const losses::AttentionMap<float>>(s_maps),
            std::span<const losses::AttentionMap<float>>(t_maps), grads ? &g : nullptr,
            nullptr);
        total += static_cast<double>(li);
        if (grads) {
            for (std::size_t t = 0; t < taps; ++t) {
                const std::size_t block = g[t].size();
                float* dst = (*grads)[t].data() + i * block;
                for (std::size_t j = 0; j < block; ++j) dst[j] = g[t][j] * inv_n;
            }
        }
    }
    return total / static_cast<double>(n);
}

nlohmann::json gen_trace_json(const GenStepTrace& t) {
    return {{"l_g", t.l_g},   {"l_de", t.l_de}, {"l_us", t.l_us}, {"l_oh", t.l_oh},
            {"l_ie", t.l_ie}, {"l_cm", t.l_cm}, {"l_bn", t.l_bn}};
}

nlohmann::json stu_trace_json(const StudentStepTrace& t) {
    return {{"l_kd", t.l_kd}, {"l_de", t.l_de}, {"l_gt", t.l_gt}, {"l_at", t.l_at}};
}

}  // namespace

void TrainSchedule::validate() const {
    if (epochs < 0) throw ConfigError("TrainSchedule: epochs must be >= 0");
    if (steps_per_epoch < 1) throw ConfigError("TrainSchedule: steps_per_epoch must be >= 1");
    if (inner_student_steps < 1) throw ConfigError("TrainSchedule: k must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainSchedule: batch_size must be >= 1");
    if (!(student_lr > 0) || !(generator_lr > 0))
        throw ConfigError("TrainSchedule: learning rates must be > 0");
    if (!(lr_decay_factor > 0)) throw ConfigError("TrainSchedule: decay factor must be > 0");
    int prev = 0;
    for (int e : lr_decay_epochs) {
        if (e <= prev || e >= epochs)
            throw ConfigError("TrainSchedule: decay epochs must be strictly increasing and < epochs");
        prev = e;
    }
}

TrainSchedule proportional_budget_schedule(const TrainSchedule& full, int budget_epochs) {
    if (budget_epochs < 1) throw ConfigError("budget epochs must be >= 1");
    if (budget_epochs >= full.epochs)
        throw ConfigError("budget epochs must be below the full schedule");
    TrainSchedule s = full;
    s.epochs = budget_epochs;
    s.lr_decay_epochs.clear();
    int prev = 0;
    for (int e : full.lr_decay_epochs) {
        const double ratio = static_cast<double>(e) / static_cast<double>(full.epochs);
        int moved = static_cast<int>(std::llround(ratio * budget_epochs));
        moved = std::max(1, std::min(moved, budget_epochs - 1));
        if (moved > prev) {
            s.lr_decay_epochs.push_back(moved);
            prev = moved;
        }
    }
    return s;
}

std::string trace_to_json(const EpochTrace& t) {
    nlohmann::json j;
    j["epoch"] = t.epoch;
    j["generator"] = gen_trace_json(t.gen);
    j["student"] = stu_trace_json(t.stu);
    if (t.student_accuracy >= 0) j["s_acc"] = t.student_accuracy;
    if (t.relative_accuracy >= 0) j["rel_acc"] = t.relative_accuracy;
    return j.dump();
}

GenStepTrace generator_step(ConditionalGenerator& gen, Classifier& student, Classifier& teacher,
                            const TrainSchedule& schedule, const LossWeights& weights,
                            const std::vector<double>& label_distribution,
                            nn::Adam<float>& gen_opt, std::uint64_t seed) {
    const auto batch = models::sample_conditioned_noise(
        static_cast<std::size_t>(schedule.batch_size),
        static_cast<std::size_t>(gen.spec().noise_dim), label_distribution, seed);

    models::GenFwdOptions gopt;
    gopt.bn_batch_stats = true;
    gopt.bn_update_running = true;
    gopt.cache = true;
    Tensor<float> images = gen.forward(batch, gopt);

    const bool use_bn_penalty = weights.lambda_bn > 0.0;
    models::FwdOptions topt;  // teacher: running stats, frozen
    topt.capture_bn = use_bn_penalty;
    topt.cache = true;
    models::ForwardRecord trec = teacher.forward(images, topt);

    models::FwdOptions sopt;  // student: train-mode function, nothing mutated
    sopt.bn_batch_stats = true;
    sopt.bn_update_running = false;
    sopt.cache = true;
    models::ForwardRecord srec = student.forward(images, sopt);

    float bn_penalty = 0.0f;
    if (use_bn_penalty) {
        const auto p = models::bn_statistics_penalty_for(trec, teacher);
        bn_penalty = static_cast<float>(p.value);
    }

    Tensor<float> g_teacher, g_student;
    const auto parts = losses::generator_loss_parts<float>(
        trec.logits, srec.logits, batch.labels, weights, bn_penalty, &g_teacher, &g_student);

    GenStepTrace trace;
    trace.l_g = parts.total;
    trace.l_de = parts.de;
    trace.l_us = parts.us;
    trace.l_oh = parts.oh;
    trace.l_ie = parts.ie;
    trace.l_cm = parts.cm;
    trace.l_bn = parts.bn_penalty;
    if (!std::isfinite(trace.l_g))
        throw DivergenceError("generator loss diverged", gen_trace_json(trace).dump());

    Tensor<float> d_images_teacher, d_images_student;
    models::BackwardOptions tb;
    tb.param_grads = false;
    tb.input_grad = &d_images_teacher;
    tb.bn_penalty_weight = static_cast<float>(weights.lambda_bn);
    teacher.backward(g_teacher, tb);

    models::BackwardOptions sb;
    sb.param_grads = false;
    sb.input_grad = &d_images_student;
    student.backward(g_student, sb);

    for (std::size_t i = 0; i < d_images_teacher.size(); ++i)
        d_images_teacher[i] += d_images_student[i];

    gen.zero_grad();
    gen.backward(d_images_teacher);
    gen_opt.step();
    return trace;
}

StudentStepTrace student_step(ConditionalGenerator& gen, Classifier& student,
                              Classifier& teacher, const TrainSchedule& schedule,
                              const LossWeights& weights,
                              const std::vector<double>& label_distribution,
                              nn::SgdMomentum<float>& stu_opt, std::uint64_t seed) {
    const auto batch = models::sample_conditioned_noise(
        static_cast<std::size_t>(schedule.batch_size),
        static_cast<std::size_t>(gen.spec().noise_dim), label_distribution, seed);

    models::GenFwdOptions gopt;  // crafting data: train-mode function, no mutation
    gopt.bn_batch_stats = true;
    gopt.bn_update_running = false;
    gopt.cache = false;
    Tensor<float> images = gen.forward(batch, gopt);

    models::FwdOptions topt;  // constants from the frozen teacher
    models::ForwardRecord trec = teacher.forward(images, topt);

    models::FwdOptions sopt;
    sopt.bn_batch_stats = true;
    sopt.bn_update_running = true;
    sopt.cache = true;
    models::ForwardRecord srec = student.forward(images, sopt);

    Tensor<float> g_de, g_gt;
    const double de = losses::discrepancy_estimation_loss<float>(trec.logits, srec.logits,
                                                                 nullptr, &g_de);
    const double gt = losses::ground_truth_loss<float>(srec.logits, batch.labels, &g_gt);
    std::vector<Tensor<float>> at_grads;
    const bool need_at = weights.lambda_at > 0.0;
    const double at = need_at ? batched_attention_transfer(srec.attention_maps,
                                                           trec.attention_maps, &at_grads)
                              : 0.0;

    StudentStepTrace trace;
    trace.l_de = de;
    trace.l_gt = gt;
    trace.l_at = at;
    trace.l_kd = de + weights.lambda_gt * gt + weights.lambda_at * at;
    if (!std::isfinite(trace.l_kd))
        throw DivergenceError("distillation loss diverged", stu_trace_json(trace).dump());

    Tensor<float> d_logits({srec.logits.n(), srec.logits.c()});
    const float lgt = static_cast<float>(weights.lambda_gt);
    for (std::size_t i = 0; i < d_logits.size(); ++i) d_logits[i] = g_de[i] + lgt * g_gt[i];

    if (need_at) {
        const float lat = static_cast<float>(weights.lambda_at);
        for (auto& g : at_grads)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= lat;
    }

    student.zero_grad();
    models::BackwardOptions sb;
    sb.param_grads = true;
    if (need_at) sb.tap_grads_in = &at_grads;
    student.backward(d_logits, sb);
    stu_opt.step();
    return trace;
}

RunResult run_distillation(Classifier& teacher, const models::GeneratorSpec& gen_spec,
                           const std::string& student_arch, const TrainSchedule& schedule,
                           const LossWeights& weights,
                           const std::vector<double>& label_distribution,
                           const RunOptions& opts) {
    schedule.validate();
    weights.validate();
    validate_distribution(label_distribution);
    gen_spec.validate();

    RunResult result;
    result.generator = std::make_unique<ConditionalGenerator>(gen_spec);
    result.generator->init_params(RngStream::split(schedule.seed, "init:generator"));
    result.student = models::make_classifier(student_arch, teacher.class_count(),
                                             teacher.in_channels(), teacher.input_size());
    result.student->init_params(RngStream::split(schedule.seed, "init:student"));

    nn::Adam<float> gen_opt(result.generator->params(), schedule.generator_lr);
    nn::SgdMomentum<float> stu_opt(result.student->params(), schedule.student_lr,
                                   schedule.momentum, schedule.weight_decay);

    const bool keep_artifacts = !opts.out_dir.empty();
    const std::string metrics_path = opts.out_dir + "/metrics.jsonl";
    if (keep_artifacts) std::filesystem::create_directories(opts.out_dir);

    auto save_pair = [&](const std::string& tag) {
        const std::string spath = opts.out_dir + "/student-" + tag + ".ckpt";
        const std::string gpath = opts.out_dir + "/generator-" + tag + ".ckpt";
        models::save_classifier(spath, *result.student);
        models::save_generator(gpath, *result.generator);
        result.checkpoint_paths.push_back(spath);
        result.checkpoint_paths.push_back(gpath);
    };

    long global_step = 0;
    try {
        for (int epoch = 1; epoch <= schedule.epochs; ++epoch) {
            for (int d : schedule.lr_decay_epochs) {
                if (d == epoch) {
                    gen_opt.set_lr(gen_opt.lr() * schedule.lr_decay_factor);
                    stu_opt.set_lr(stu_opt.lr() * schedule.lr_decay_factor);
                }
            }

            EpochTrace et;
            et.epoch = epoch;
            for (int step = 0; step < schedule.steps_per_epoch; ++step, ++global_step) {
                const std::uint64_t gseed =
                    RngStream::split(schedule.seed, "gen-step", static_cast<std::uint64_t>(global_step))
                        .next_u64();
                const GenStepTrace g =
                    generator_step(*result.generator, *result.student, teacher, schedule,
                                   weights, label_distribution, gen_opt, gseed);
                ++result.state.generator_updates;
                et.gen.l_g += g.l_g;
                et.gen.l_de += g.l_de;
                et.gen.l_us += g.l_us;
                et.gen.l_oh += g.l_oh;
                et.gen.l_ie += g.l_ie;
                et.gen.l_cm += g.l_cm;
                et.gen.l_bn += g.l_bn;

                for (int j = 0; j < schedule.inner_student_steps; ++j) {
                    const std::uint64_t sseed =
                        RngStream::split(schedule.seed, "stu-step",
                                         static_cast<std::uint64_t>(global_step),
                                         static_cast<std::uint64_t>(j))
                            .next_u64();
                    const StudentStepTrace s =
                        student_step(*result.generator, *result.student, teacher, schedule,
                                     weights, label_distribution, stu_opt, sseed);
                    ++result.state.student_updates;
                    et.stu.l_kd += s.l_kd;
                    et.stu.l_de += s.l_de;
                    et.stu.l_gt += s.l_gt;
                    et.stu.l_at += s.l_at;
                }
            }
            const double gsteps = schedule.steps_per_epoch;
            const double ssteps = gsteps * schedule.inner_student_steps;
            et.gen.l_g /= gsteps;
            et.gen.l_de /= gsteps;
            et.gen.l_us /= gsteps;
            et.gen.l_oh /= gsteps;
            et.gen.l_ie /= gsteps;
            et.gen.l_cm /= gsteps;
            et.gen.l_bn /= gsteps;
            et.stu.l_kd /= ssteps;
            et.stu.l_de /= ssteps;
            et.stu.l_gt /= ssteps;
            et.stu.l_at /= ssteps;

            if (opts.eval_student) {
                et.student_accuracy = opts.eval_student(*result.student);
                if (opts.teacher_accuracy > 0)
                    et.relative_accuracy =
                        losses::relative_accuracy(opts.teacher_accuracy, et.student_accuracy);
            }
            result.state.epoch = epoch;
            result.state.history.push_back(et);
            if (keep_artifacts) {
                std::ofstream out(metrics_path, std::ios::app);
                out << trace_to_json(et) << "\n";
            }
            for (int d : schedule.lr_decay_epochs)
                if (d == epoch && keep_artifacts) save_pair("epoch" + std::to_string(epoch));
            if (opts.on_epoch) opts.on_epoch(et);
        }
    } catch (const DivergenceError&) {
        if (keep_artifacts) save_pair("aborted");
        throw;
    }

    if (keep_artifacts) save_pair("final");
    return result;
}

}  // namespace dfkd::trainer
