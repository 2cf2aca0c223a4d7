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

#include <array>

#include "adaatlas/registration.hpp"

namespace adaatlas {

/// Priors distilled from the source-domain ground truth: expected class
/// ratios, per-class soft centroids and second-order central moments (in
/// normalized [-1,1] coordinates) with per-class tolerance widths.
struct SourceStats {
    std::vector<double> class_ratio;  // simplex over C

    struct ClassMoments {
        std::array<double, 3> centroid{0.0, 0.0, 0.0};
        std::array<double, 3> second{0.0, 0.0, 0.0};
    };
    std::vector<ClassMoments> moment_mean;  // indexed by class, [0] unused
    std::vector<ClassMoments> moment_tol;
};

SourceStats compute_source_stats(const std::vector<LabelMap>& gts, int num_classes);

/// soft per-class moments of one probability channel; mass guarded by 1e-8
struct SoftMoments {
    double mass;
    std::array<double, 3> centroid;
    std::array<double, 3> second;
};
SoftMoments soft_moments(const Tensor& probs, int cls);

// --- the atlas-space shape prior loss: 1 - mean voxel cosine similarity ---
VarPtr atlas_loss_var(const VarPtr& warped, const VarPtr& atlas);
double atlas_loss(const ProbMap& warped, const Atlas& atlas);

// --- registration dissimilarity: multi-class soft Dice ---
VarPtr soft_dice_loss_var(const VarPtr& a, const VarPtr& b);
double reg_loss(const ProbMap& a, const ProbMap& b);

/// L_reg(pred, warp(atlas, a->i)) + L_reg(atlas, warp(pred, i->a))
double bireg_loss(const ProbMap& pred, const Atlas& atlas, RegNet& net);

// --- supervised: voxel-mean cross entropy + soft Dice, equally weighted ---
VarPtr supervised_loss_var(const VarPtr& pred, const LabelMap& gt);
double supervised_loss(const ProbMap& pred, const LabelMap& gt);

// --- comparator TTA losses ---
VarPtr entropy_loss_var(const VarPtr& pred);
double entropy_loss(const ProbMap& pred);

/// mean entropy over voxels whose entropy is below e0; 0 when none qualify
VarPtr eata_loss_var(const VarPtr& pred, double e0);
double eata_loss(const ProbMap& pred, double e0);

VarPtr class_ratio_loss_var(const VarPtr& pred, const std::vector<double>& tau);
double class_ratio_loss(const ProbMap& pred, const SourceStats& stats);

VarPtr shape_moment_loss_var(const VarPtr& pred, const SourceStats& stats);
double shape_moment_loss(const ProbMap& pred, const SourceStats& stats);

inline double default_eata_threshold(int num_classes) {
    return 0.4 * std::log(static_cast<double>(num_classes));
}

}  // namespace adaatlas
