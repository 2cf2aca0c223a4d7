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

#include "adaatlas/params.hpp"
#include "adaatlas/rng.hpp"

namespace adaatlas {

// Sequential dual attention: a squeeze-excitation channel gate followed by a
// 1x1x1-conv spatial gate. Both gate paths sit behind sigmoids, so the block
// rescales features by factors in (0,1). All six tensors are the test-time
// adaptable set.

struct ChannelAttentionParams {
    VarPtr W1, b1;  // {c/r, c}, {c/r}
    VarPtr W2, b2;  // {c, c/r}, {c}
    int channels = 0;
    int reduction = 2;
};

struct SpatialAttentionParams {
    VarPtr Wconv;  // {1, c, 1, 1, 1}
    VarPtr bconv;  // {1}
    int channels = 0;
};

struct DualAttentionParams {
    ChannelAttentionParams channel;
    SpatialAttentionParams spatial;
};

/// Weights from a small-variance symmetric distribution, biases zero, so the
/// fresh block starts as a near-uniform 0.25x rescaling.
DualAttentionParams make_dual_attention(int channels, int reduction, Rng& rng);

/// register the six tensors under "<prefix>.{W1,b1,W2,b2,Wconv,bconv}"
void register_dual_attention(ParamRegistry& reg, const std::string& prefix,
                             const DualAttentionParams& p);

/// a_ch = sigmoid(W2 . relu(W1 . avgpool(f) + b1) + b2), strictly inside (0,1)
VarPtr channel_scores(const VarPtr& f, const ChannelAttentionParams& p);

/// a_sp[v] = sigmoid(sum_k Wconv[k] fc[k,v] + bconv), shape {1,h,w,d}
VarPtr spatial_scores(const VarPtr& fc_map, const SpatialAttentionParams& p);

/// f~ = a_sp * (a_ch x f)
VarPtr dual_attention_forward(const VarPtr& f, const DualAttentionParams& p);

/// scalar count of the adaptable set: 2*c*(c/r) + c/r + 2c + 1
int64_t dual_attention_param_count(int channels, int reduction);

}  // namespace adaatlas
