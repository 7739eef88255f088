#include <algorithm>

#include "dfkd/losses/losses.hpp"
#include "dfkd/trainer/trainer.hpp"

namespace dfkd::trainer {

std::vector<CandidateResult> talent_select(const std::vector<CandidateSetting>& candidates,
                                           int budget_epochs, const TalentContext& ctx) {
    if (candidates.empty()) throw ConfigError("talent_select: candidate list is empty");
    if (!ctx.teacher) throw ConfigError("talent_select: teacher is required");

    std::vector<CandidateResult> results;
    results.reserve(candidates.size());
    for (const auto& cand : candidates) {
        const TrainSchedule base = cand.schedule.value_or(ctx.base_schedule);
        const TrainSchedule budget = proportional_budget_schedule(base, budget_epochs);

        CandidateResult r;
        r.id = cand.id;
        RunOptions opts;
        opts.eval_student = ctx.eval_student;
        opts.teacher_accuracy = ctx.teacher_accuracy;
        try {
            RunResult run = run_distillation(*ctx.teacher, ctx.gen_spec, ctx.student_arch,
                                             budget, cand.weights, ctx.label_distribution,
                                             opts);
            r.trace = run.state.history;
            if (ctx.eval_student) {
                r.student_accuracy = ctx.eval_student(*run.student);
                if (ctx.teacher_accuracy > 0)
                    r.relative_accuracy =
                        losses::relative_accuracy(ctx.teacher_accuracy, r.student_accuracy);
            }
        } catch (const DivergenceError&) {
            r.diverged = true;
        }
        results.push_back(std::move(r));
    }

    std::stable_sort(results.begin(), results.end(),
                     [](const CandidateResult& a, const CandidateResult& b) {
                         if (a.diverged != b.diverged) return !a.diverged;
                         const double ka = a.relative_accuracy >= 0 ? a.relative_accuracy
                                                                    : a.student_accuracy;
                         const double kb = b.relative_accuracy >= 0 ? b.relative_accuracy
                                                                    : b.student_accuracy;
                         return ka > kb;
                     });

    const std::size_t n = results.size();
    const std::size_t recommend =
        std::min(n, std::clamp<std::size_t>(n / 2, std::min<std::size_t>(n, 2), 4));
    for (std::size_t i = 0; i < recommend; ++i)
        if (!results[i].diverged) results[i].recommended = true;
    return results;
}

}  // namespace dfkd::trainer
