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

#include "adaatlas/attention.hpp"

#include <algorithm>

namespace adaatlas {

namespace {

Tensor small_normal(std::vector<int> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
    return t;
}

}  // namespace

DualAttentionParams make_dual_attention(int channels, int reduction, Rng& rng) {
    if (channels < 1) throw std::invalid_argument("attention: channels must be positive");
    const int hidden = std::max(1, channels / reduction);
    DualAttentionParams p;
    p.channel.channels = channels;
    p.channel.reduction = reduction;
    p.channel.W1 = make_param(small_normal({hidden, channels}, rng, 0.05));
    p.channel.b1 = make_param(Tensor({hidden}));
    p.channel.W2 = make_param(small_normal({channels, hidden}, rng, 0.05));
    p.channel.b2 = make_param(Tensor({channels}));
    p.spatial.channels = channels;
    p.spatial.Wconv = make_param(small_normal({1, channels, 1, 1, 1}, rng, 0.05));
    p.spatial.bconv = make_param(Tensor({1}));
    return p;
}

void register_dual_attention(ParamRegistry& reg, const std::string& prefix,
                             const DualAttentionParams& p) {
    reg.add(prefix + ".W1", ParamKind::AttnChannel, p.channel.W1);
    reg.add(prefix + ".b1", ParamKind::AttnChannel, p.channel.b1);
    reg.add(prefix + ".W2", ParamKind::AttnChannel, p.channel.W2);
    reg.add(prefix + ".b2", ParamKind::AttnChannel, p.channel.b2);
    reg.add(prefix + ".Wconv", ParamKind::AttnSpatial, p.spatial.Wconv);
    reg.add(prefix + ".bconv", ParamKind::AttnSpatial, p.spatial.bconv);
}

VarPtr channel_scores(const VarPtr& f, const ChannelAttentionParams& p) {
    if (f->val.rank() != 4 || f->val.dim(0) != p.channels)
        throw std::invalid_argument("channel_scores: feature/param channel mismatch");
    VarPtr pooled = global_avgpool(f);
    VarPtr hidden = relu(fc(p.W1, pooled, p.b1));
    return sigmoid(fc(p.W2, hidden, p.b2));
}

VarPtr spatial_scores(const VarPtr& fc_map, const SpatialAttentionParams& p) {
    if (fc_map->val.rank() != 4 || fc_map->val.dim(0) != p.channels)
        throw std::invalid_argument("spatial_scores: feature/param channel mismatch");
    return sigmoid(conv3d(fc_map, p.Wconv, p.bconv));
}

VarPtr dual_attention_forward(const VarPtr& f, const DualAttentionParams& p) {
    VarPtr a_ch = channel_scores(f, p.channel);
    VarPtr f_c = mul_channel(f, a_ch);
    VarPtr a_sp = spatial_scores(f_c, p.spatial);
    return mul_spatial(f_c, a_sp);
}

int64_t dual_attention_param_count(int channels, int reduction) {
    const int64_t c = channels, h = std::max(1, channels / reduction);
    return c * h + h + c * h + c + c + 1;
}

}  // namespace adaatlas
