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

#pragma once

#include "adaatlas/training.hpp"

namespace adaatlas {

enum class TTALoss { Atlas, Entropy, Eata, ClassRatio, ShapeMoment };
enum class TTAMode { AdaptSegnet, TTR };

struct TTAConfig {
    TTALoss loss = TTALoss::Atlas;
    AdaptTarget target = AdaptTarget::DualAttention;
    int iterations = 50;
    double lr = 1e-3;
    bool episodic = true;  // continual (non-episodic) mode is an off-spec extra
    TTAMode mode = TTAMode::AdaptSegnet;
    double eata_e0 = -1.0;  // <= 0 picks the default 0.4 ln C

    void validate(const SegNetConfig& seg_cfg) const;
};

struct TTAResult {
    LabelMap prediction;
    ProbMap prob;
    std::vector<double> loss_trace;  // one entry per completed iteration
    std::vector<std::string> adapted_param_names;
    double wall_time_s = 0.0;
    bool diverged = false;
};

/// Episodic adaptation of one subject starting from the pretrained
/// checkpoint. The checkpoint itself is never mutated; the selected
/// adaptation parameters are optimized on a private clone.
TTAResult tta_adapt_subject(const Checkpoint& ckpt, const Volume& x, const TTAConfig& cfg);

/// Adaptation core over a caller-owned net: only the partition's adaptable
/// parameters change; the registration net and atlas are read-only.
TTAResult tta_adapt_on(SegNet& net, const RegNet& frozen_reg, const Atlas& atlas,
                       const SourceStats& stats, const Volume& x, const TTAConfig& cfg);

/// TTR comparator: the segmentation net stays frozen; the registration net is
/// refined so the warped atlas matches the frozen prediction, and the warped
/// atlas itself becomes the prediction.
TTAResult ttr_adapt_subject(const Checkpoint& ckpt, const Volume& x, const TTAConfig& cfg);

struct DomainEvalRow {
    DiceReport adapted;
    DiceReport baseline;
    bool diverged = false;
    double wall_time_s = 0.0;
};

struct DomainEval {
    std::vector<DomainEvalRow> rows;
    double mean_fg = 0.0;
    double baseline_mean_fg = 0.0;
    double rel_improvement = 0.0;  // (mean - baseline) / baseline
};

/// Independent per-subject adaptation over one domain. Subjects fan out to a
/// worker pool (AAATLAS_NUM_WORKERS); results are order-independent.
DomainEval evaluate_domain(const Checkpoint& ckpt, const std::vector<Volume>& subjects,
                           const std::vector<LabelMap>& gts, const TTAConfig& cfg);

/// no-adaptation forward passes only
DomainEval evaluate_baseline(const Checkpoint& ckpt, const std::vector<Volume>& subjects,
                             const std::vector<LabelMap>& gts);

int num_workers();

}  // namespace adaatlas
