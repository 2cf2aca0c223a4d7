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

#include "adaatlas/atlas.hpp"
#include "adaatlas/segnet.hpp"

namespace adaatlas {

/// Affine (3x4, normalized [-1,1] coordinates) plus a dense displacement
/// field, composed at sample time as Phi(v) = A.g(v) + t + u(v).
struct DeformationField {
    Tensor affine;        // {3,4}
    Tensor displacement;  // {3,H,W,D}

    static DeformationField identity(int h, int w, int d);
    bool is_identity(double tol = 0.0) const;
};

struct RegNetConfig {
    int num_classes = 2;  // network input is the 2C-channel (moving, fixed) stack
    int depth = 3;
    int base_channels = 8;
    double displacement_scale = 0.5;

    int in_channels() const { return 2 * num_classes; }
};

/// Encoder-decoder over the concatenated (moving, fixed) stack, working at
/// half resolution. Two residual zero-initialized heads: a global-pooled
/// affine head emitting 12 offsets added to [I|0], and a tanh-bounded dense
/// displacement head upsampled back to the input grid. A fresh network is
/// exactly the identity map.
struct RegNet {
    RegNetConfig cfg;
    std::vector<std::unique_ptr<ConvBlock>> enc;
    std::unique_ptr<ConvBlock> bottleneck;
    std::vector<std::unique_ptr<ConvBlock>> dec;
    VarPtr affine_W, affine_b;  // {12, C_bott}, {12}
    ConvLayer disp_head;        // 1x1x1 -> 3
    ParamRegistry registry;

    RegNet() = default;
    RegNet(const RegNet&) = delete;
    RegNet& operator=(const RegNet&) = delete;
};

std::unique_ptr<RegNet> build_regnet(const RegNetConfig& cfg, uint64_t seed);
std::unique_ptr<RegNet> clone_regnet(const RegNet& net);

struct FieldVar {
    VarPtr affine;
    VarPtr disp;
};

FieldVar reg_forward_var(RegNet& net, const VarPtr& moving, const VarPtr& fixed, NormMode mode);
DeformationField reg_forward(RegNet& net, const ProbMap& moving, const Atlas& fixed);

VarPtr warp_var(const VarPtr& moving, const FieldVar& field);
ProbMap warp(const ProbMap& moving, const DeformationField& field);
Tensor warp_tensor(const Tensor& moving, const DeformationField& field);

/// mean squared forward difference over the displacement component; the
/// affine part is excluded
VarPtr smoothness_penalty_var(const VarPtr& disp);
double smoothness_penalty(const DeformationField& field);

}  // namespace adaatlas
