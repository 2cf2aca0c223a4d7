/*
Copyright 2026 The AdaAtlas Authors
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at
    http://www.apache.org/licenses/LICENSE-2.0
Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#include "adaatlas/tta.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace adaatlas {

void TTAConfig::validate(const SegNetConfig& seg_cfg) const {
    if (iterations < 1) throw std::invalid_argument("TTAConfig: iterations must be >= 1");
    if (lr < 0.0) throw std::invalid_argument("TTAConfig: negative learning rate");
    if (mode == TTAMode::AdaptSegnet && seg_cfg.block_type != BlockType::DualAttention &&
        (target == AdaptTarget::ChannelOnly || target == AdaptTarget::SpatialOnly ||
         target == AdaptTarget::DualAttention))
        throw std::invalid_argument(
            std::string("TTAConfig: target ") + to_string(target) +
            " is incompatible with a checkpoint of block_type " + to_string(seg_cfg.block_type));
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

VarPtr build_tta_loss(const TTAConfig& cfg, const VarPtr& pred, const VarPtr& atlas_c,
                      RegNet* frozen_reg, const SourceStats& stats) {
    switch (cfg.loss) {
        case TTALoss::Atlas: {
            FieldVar f = reg_forward_var(*frozen_reg, pred, atlas_c, NormMode::Running);
            return atlas_loss_var(warp_var(pred, f), atlas_c);
        }
        case TTALoss::Entropy:
            return entropy_loss_var(pred);
        case TTALoss::Eata: {
            const double e0 =
                cfg.eata_e0 > 0.0 ? cfg.eata_e0 : default_eata_threshold(pred->val.dim(0));
            return eata_loss_var(pred, e0);
        }
        case TTALoss::ClassRatio:
            return class_ratio_loss_var(pred, stats.class_ratio);
        case TTALoss::ShapeMoment:
            return shape_moment_loss_var(pred, stats);
    }
    throw std::logic_error("build_tta_loss: bad loss selector");
}

bool diverged_now(const std::vector<double>& trace) {
    const double last = trace.back();
    if (!std::isfinite(last)) return true;
    return trace.size() > 1 && last > 10.0 * trace.front();
}

TTAResult finish(ProbMap prob, std::vector<double> trace, std::vector<std::string> names,
                 Clock::time_point t0, bool diverged) {
    TTAResult r;
    if (!diverged) validate_probmap(prob);
    r.prediction = argmax_labels(prob);
    r.prob = std::move(prob);
    r.loss_trace = std::move(trace);
    r.adapted_param_names = std::move(names);
    r.wall_time_s = seconds_since(t0);
    r.diverged = diverged;
    return r;
}

}  // namespace

/// turns gradient tracking off for the frozen set during an episode, which
/// skips their (conv-weight) gradient kernels entirely
struct FreezeGuard {
    std::vector<VarPtr> frozen;
    explicit FreezeGuard(SegNet& net, const ParamPartition& part) {
        for (const auto& name : part.frozen) {
            const VarPtr& v = net.registry.find(name).var;
            if (v->requires_grad) {
                v->requires_grad = false;
                frozen.push_back(v);
            }
        }
    }
    ~FreezeGuard() {
        for (const auto& v : frozen) v->requires_grad = true;
    }
};

TTAResult tta_adapt_on(SegNet& net, const RegNet& frozen_reg, const Atlas& atlas,
                       const SourceStats& stats, const Volume& x, const TTAConfig& cfg) {
    const auto t0 = Clock::now();
    ParamPartition part = partition_params(net, cfg.target);
    std::vector<VarPtr> adaptable;
    for (const auto& name : part.adaptable) adaptable.push_back(net.registry.find(name).var);
    FreezeGuard freeze(net, part);

    // the frozen registration net rides along on a private clone with
    // gradient tracking off: gradients still flow through it into the
    // prediction, but no parameter gradient work is done
    std::unique_ptr<RegNet> reg;
    if (cfg.loss == TTALoss::Atlas) {
        reg = clone_regnet(frozen_reg);
        for (auto& p : reg->registry.params) p.var->requires_grad = false;
    }
    VarPtr atlas_c = make_const(atlas.probs);
    const NormMode mode =
        cfg.target == AdaptTarget::Norm || cfg.target == AdaptTarget::All ? NormMode::SampleStats
                                                                          : NormMode::Running;
    Adam opt(adaptable, cfg.lr);
    VarPtr xc = make_const(x.data);

    ProbMap pre;
    std::vector<double> trace;
    trace.reserve(static_cast<size_t>(cfg.iterations));
    for (int it = 0; it < cfg.iterations; ++it) {
        VarPtr pred = net.forward_var(xc, mode);
        if (it == 0) pre = ProbMap{pred->val};
        if (!all_finite(pred->val))
            return finish(std::move(pre), std::move(trace), std::move(part.adaptable), t0, true);
        VarPtr loss = build_tta_loss(cfg, pred, atlas_c, reg.get(), stats);
        trace.push_back(loss->val[0]);
        if (diverged_now(trace))
            return finish(std::move(pre), std::move(trace), std::move(part.adaptable), t0, true);
        opt.zero_grad();
        backward(loss);
        opt.step();
    }
    VarPtr final_pred = net.forward_var(xc, mode);
    return finish(ProbMap{std::move(final_pred->val)}, std::move(trace),
                  std::move(part.adaptable), t0, false);
}

TTAResult tta_adapt_subject(const Checkpoint& ckpt, const Volume& x, const TTAConfig& cfg) {
    cfg.validate(ckpt.seg_cfg);
    if (cfg.mode == TTAMode::TTR) return ttr_adapt_subject(ckpt, x, cfg);
    std::unique_ptr<SegNet> clone = clone_segnet(*ckpt.segnet);
    return tta_adapt_on(*clone, *ckpt.regnet, ckpt.atlas, ckpt.stats, x, cfg);
}

TTAResult ttr_adapt_subject(const Checkpoint& ckpt, const Volume& x, const TTAConfig& cfg) {
    cfg.validate(ckpt.seg_cfg);
    const auto t0 = Clock::now();
    const ProbMap ref = ckpt.segnet->forward(x, NormMode::Running);  // frozen prediction
    VarPtr ref_c = make_const(ref.probs);
    VarPtr atlas_c = make_const(ckpt.atlas.probs);

    std::unique_ptr<RegNet> reg = clone_regnet(*ckpt.regnet);
    std::vector<VarPtr> adaptable;
    std::vector<std::string> names;
    for (const auto& p : reg->registry.params) {
        adaptable.push_back(p.var);
        names.push_back(p.name);
    }
    Adam opt(adaptable, cfg.lr);

    std::vector<double> trace;
    Tensor warped_atlas = ckpt.atlas.probs;
    for (int it = 0; it < cfg.iterations; ++it) {
        FieldVar f = reg_forward_var(*reg, atlas_c, ref_c, NormMode::Running);
        VarPtr warped = warp_var(atlas_c, f);
        VarPtr loss = soft_dice_loss_var(ref_c, warped);
        trace.push_back(loss->val[0]);
        if (diverged_now(trace)) {
            warped = warp_var(atlas_c, reg_forward_var(*clone_regnet(*ckpt.regnet), atlas_c, ref_c,
                                                       NormMode::Running));
            return finish(ProbMap{std::move(warped->val)}, std::move(trace), std::move(names), t0,
                          true);
        }
        opt.zero_grad();
        backward(loss);
        opt.step();
        if (it + 1 == cfg.iterations) {
            FieldVar ff = reg_forward_var(*reg, atlas_c, ref_c, NormMode::Running);
            warped_atlas = warp_var(atlas_c, ff)->val;
        }
    }
    return finish(ProbMap{std::move(warped_atlas)}, std::move(trace), std::move(names), t0, false);
}

int num_workers() {
    if (const char* env = std::getenv("AAATLAS_NUM_WORKERS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
#ifdef _OPENMP
    return std::max(1, omp_get_max_threads());
#else
    return 1;
#endif
}

namespace {

DomainEvalRow eval_one(const Checkpoint& ckpt, const Volume& x, const LabelMap& gt,
                       const TTAConfig* cfg) {
    DomainEvalRow row;
    const ProbMap base = ckpt.segnet->forward(x, NormMode::Running);
    row.baseline = dice(argmax_labels(base), gt, ckpt.seg_cfg.num_classes);
    if (cfg) {
        TTAResult r = tta_adapt_subject(ckpt, x, *cfg);
        row.adapted = dice(r.prediction, gt, ckpt.seg_cfg.num_classes);
        row.diverged = r.diverged;
        row.wall_time_s = r.wall_time_s;
    } else {
        row.adapted = row.baseline;
    }
    return row;
}

DomainEval aggregate(std::vector<DomainEvalRow> rows) {
    DomainEval ev;
    ev.rows = std::move(rows);
    if (ev.rows.empty()) return ev;
    for (const auto& r : ev.rows) {
        ev.mean_fg += r.adapted.mean_fg;
        ev.baseline_mean_fg += r.baseline.mean_fg;
    }
    ev.mean_fg /= static_cast<double>(ev.rows.size());
    ev.baseline_mean_fg /= static_cast<double>(ev.rows.size());
    ev.rel_improvement = ev.baseline_mean_fg > 0.0
                             ? (ev.mean_fg - ev.baseline_mean_fg) / ev.baseline_mean_fg
                             : 0.0;
    return ev;
}

}  // namespace

DomainEval evaluate_domain(const Checkpoint& ckpt, const std::vector<Volume>& subjects,
                           const std::vector<LabelMap>& gts, const TTAConfig& cfg) {
    if (subjects.size() != gts.size())
        throw std::invalid_argument("evaluate_domain: subject/label count mismatch");
    cfg.validate(ckpt.seg_cfg);
    const int n = static_cast<int>(subjects.size());
    std::vector<DomainEvalRow> rows(static_cast<size_t>(n));

    if (!cfg.episodic && cfg.mode == TTAMode::AdaptSegnet) {
        // continual mode: one evolving clone across the subject stream
        std::unique_ptr<SegNet> clone = clone_segnet(*ckpt.segnet);
        for (int i = 0; i < n; ++i) {
            const ProbMap base = ckpt.segnet->forward(subjects[static_cast<size_t>(i)],
                                                      NormMode::Running);
            auto& row = rows[static_cast<size_t>(i)];
            row.baseline = dice(argmax_labels(base), gts[static_cast<size_t>(i)],
                                ckpt.seg_cfg.num_classes);
            TTAResult r = tta_adapt_on(*clone, *ckpt.regnet, ckpt.atlas, ckpt.stats,
                                         subjects[static_cast<size_t>(i)], cfg);
            row.adapted =
                dice(r.prediction, gts[static_cast<size_t>(i)], ckpt.seg_cfg.num_classes);
            row.diverged = r.diverged;
            row.wall_time_s = r.wall_time_s;
        }
        return aggregate(std::move(rows));
    }

    const int workers = std::min(num_workers(), n);
    std::string first_error;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(workers)
#endif
    for (int i = 0; i < n; ++i) {
        // exceptions must not unwind out of the parallel region
        try {
            rows[static_cast<size_t>(i)] = eval_one(ckpt, subjects[static_cast<size_t>(i)],
                                                    gts[static_cast<size_t>(i)], &cfg);
        } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
            if (first_error.empty()) first_error = e.what();
        }
    }
    if (!first_error.empty()) throw std::runtime_error("evaluate_domain: " + first_error);
    return aggregate(std::move(rows));
}

DomainEval evaluate_baseline(const Checkpoint& ckpt, const std::vector<Volume>& subjects,
                             const std::vector<LabelMap>& gts) {
    if (subjects.size() != gts.size())
        throw std::invalid_argument("evaluate_baseline: subject/label count mismatch");
    const int n = static_cast<int>(subjects.size());
    std::vector<DomainEvalRow> rows(static_cast<size_t>(n));
    const int workers = std::min(num_workers(), std::max(1, n));
    std::string first_error;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(workers)
#endif
    for (int i = 0; i < n; ++i) {
        try {
            rows[static_cast<size_t>(i)] = eval_one(ckpt, subjects[static_cast<size_t>(i)],
                                                    gts[static_cast<size_t>(i)], nullptr);
        } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
            if (first_error.empty()) first_error = e.what();
        }
    }
    if (!first_error.empty()) throw std::runtime_error("evaluate_baseline: " + first_error);
    return aggregate(std::move(rows));
}

}  // namespace adaatlas
