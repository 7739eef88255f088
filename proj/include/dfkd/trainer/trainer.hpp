#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dfkd/data/dataset.hpp"
#include "dfkd/losses/types.hpp"
#include "dfkd/models/classifier.hpp"
#include "dfkd/models/generator.hpp"
#include "dfkd/nn/optim.hpp"

namespace dfkd::trainer {

struct TrainSchedule {
    int epochs = 60;
    int steps_per_epoch = 50;
    int inner_student_steps = 5;  // k: student updates per generator update
    int batch_size = 512;
    double student_lr = 0.01;
    double generator_lr = 1e-3;
    std::vector<int> lr_decay_epochs{50};  // 1-based; applied at epoch start
    double lr_decay_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Rescales a schedule to a short screening budget: epochs = budget, decay
/// points moved proportionally (rounded half away from zero, clamped into
/// [1, budget-1]).
TrainSchedule proportional_budget_schedule(const TrainSchedule& full, int budget_epochs);

struct GenStepTrace {
    double l_g = 0, l_de = 0, l_us = 0, l_oh = 0, l_ie = 0, l_cm = 0, l_bn = 0;
};

struct StudentStepTrace {
    double l_kd = 0, l_de = 0, l_gt = 0, l_at = 0;
};

struct EpochTrace {
    int epoch = 0;
    GenStepTrace gen;      // epoch means
    StudentStepTrace stu;  // epoch means
    double student_accuracy = -1.0;
    double relative_accuracy = -1.0;
};

struct RunState {
    int epoch = 0;
    long generator_updates = 0;
    long student_updates = 0;
    long real_image_counter = 0;  // must stay 0 during distillation
    std::vector<EpochTrace> history;
};

std::string trace_to_json(const EpochTrace& t);

/// One generator update (Algorithm 1 generation stage): sample a conditioned
/// noise batch, craft images, evaluate L_G through the frozen teacher and the
/// (frozen for this step) student, and apply one Adam step to the generator.
GenStepTrace generator_step(models::ConditionalGenerator& gen, models::Classifier& student,
                            models::Classifier& teacher, const TrainSchedule& schedule,
                            const LossWeights& weights,
                            const std::vector<double>& label_distribution,
                            nn::Adam<float>& gen_opt, std::uint64_t seed);

/// One student update (Algorithm 1 distillation stage): fresh batch, L_KD,
/// one momentum-SGD step on the student only.
StudentStepTrace student_step(models::ConditionalGenerator& gen, models::Classifier& student,
                              models::Classifier& teacher, const TrainSchedule& schedule,
                              const LossWeights& weights,
                              const std::vector<double>& label_distribution,
                              nn::SgdMomentum<float>& stu_opt, std::uint64_t seed);

struct RunOptions {
    std::string out_dir;  // empty: keep no artifacts
    std::function<double(models::Classifier&)> eval_student;  // per-epoch accuracy
    double teacher_accuracy = -1.0;  // enables relative accuracy in traces
    std::function<void(const EpochTrace&)> on_epoch;
};

struct RunResult {
    std::unique_ptr<models::Classifier> student;
    std::unique_ptr<models::ConditionalGenerator> generator;
    RunState state;
    std::vector<std::string> checkpoint_paths;
};

/// The alternating minimax loop: per step one generator update followed by k
/// student updates; learning rates decay at the scheduled epochs; checkpoints
/// at decay epochs and at the end. No real image ever enters this path.
RunResult run_distillation(models::Classifier& teacher, const models::GeneratorSpec& gen_spec,
                           const std::string& student_arch, const TrainSchedule& schedule,
                           const LossWeights& weights,
                           const std::vector<double>& label_distribution,
                           const RunOptions& opts);

// ---------------------------------------------------------------- teacher

struct TeacherResult {
    std::unique_ptr<models::Classifier> net;
    double train_images_seen = 0;
    double test_accuracy = -1.0;
};

/// Plain supervised training. The only operation in the toolkit that may
/// consume real training images; rejects eval-only datasets.
TeacherResult train_teacher(const std::string& arch_id, const data::EvalDataset& train_data,
                            const TrainSchedule& schedule,
                            const data::EvalDataset* test_data = nullptr,
                            const std::function<void(int, double)>& on_epoch = {});

// ---------------------------------------------------------------- talent

/// One screening candidate: loss weights plus optional schedule overrides.
struct CandidateSetting {
    std::string id;
    LossWeights weights;
    std::optional<TrainSchedule> schedule;
};

struct CandidateResult {
    std::string id;
    double student_accuracy = -1.0;
    double relative_accuracy = -1.0;
    bool diverged = false;
    bool recommended = false;
    std::vector<EpochTrace> trace;
};

struct TalentContext {
    models::Classifier* teacher = nullptr;
    models::GeneratorSpec gen_spec;
    std::string student_arch;
    TrainSchedule base_schedule;
    std::vector<double> label_distribution;
    std::function<double(models::Classifier&)> eval_student;
    double teacher_accuracy = -1.0;
};

/// Short-budget screening: each candidate runs for budget_epochs with decay
/// points moved proportionally, then candidates are ranked by relative
/// accuracy (divergent candidates last). The top 2-4 are flagged recommended.
std::vector<CandidateResult> talent_select(const std::vector<CandidateSetting>& candidates,
                                           int budget_epochs, const TalentContext& ctx);

}  // namespace dfkd::trainer
