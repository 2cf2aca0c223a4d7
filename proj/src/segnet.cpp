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

#include "adaatlas/segnet.hpp"

#include <cmath>

namespace adaatlas {

VarPtr NormLayer::forward(const VarPtr& x, NormMode mode) {
    switch (mode) {
        case NormMode::Train: {
            Tensor mu, var;
            VarPtr y = norm_sample(x, gamma, beta, eps, &mu, &var);
            const int C = x->val.dim(0);
            for (int c = 0; c < C; ++c) {
                run_mu[c] = (1.0 - momentum) * run_mu[c] + momentum * mu[c];
                run_var[c] = (1.0 - momentum) * run_var[c] + momentum * var[c];
            }
            return y;
        }
        case NormMode::SampleStats:
            return norm_sample(x, gamma, beta, eps);
        case NormMode::Running:
            return norm_stats(x, gamma, beta, run_mu, run_var, eps);
    }
    throw std::logic_error("NormLayer: bad mode");
}

VarPtr ConvBlock::forward(const VarPtr& x, NormMode mode) {
    VarPtr h = conv3d(x, conv.W, conv.b);
    h = norm.forward(h, mode);
    h = relu(h);
    if (attn) h = dual_attention_forward(h, *attn);
    return h;
}

Tensor conv_weight_init(int c_out, int c_in, int k, Rng& rng) {
    Tensor w({c_out, c_in, k, k, k});
    const double fan_in = static_cast<double>(c_in) * k * k * k;
    const double bound = std::sqrt(3.0 / fan_in);
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
    return w;
}

void register_conv(ParamRegistry& reg, const std::string& prefix, const ConvLayer& c) {
    reg.add(prefix + ".W", ParamKind::ConvWeight, c.W);
    reg.add(prefix + ".b", ParamKind::ConvBias, c.b);
}

void register_norm(ParamRegistry& reg, const std::string& prefix, NormLayer& n) {
    reg.add(prefix + ".gamma", ParamKind::NormScale, n.gamma);
    reg.add(prefix + ".beta", ParamKind::NormShift, n.beta);
    reg.add_state(prefix + ".running_mean", &n.run_mu);
    reg.add_state(prefix + ".running_var", &n.run_var);
}

namespace {

std::unique_ptr<ConvBlock> make_block(int c_in, int c_out, Rng rng, bool with_attn,
                                      int attn_reduction) {
    auto blk = std::make_unique<ConvBlock>();
    blk->conv.W = make_param(conv_weight_init(c_out, c_in, 3, rng));
    blk->conv.b = make_param(Tensor({c_out}));
    blk->norm.gamma = make_param(Tensor({c_out}, 1.0));
    blk->norm.beta = make_param(Tensor({c_out}));
    blk->norm.run_mu = Tensor({c_out});
    blk->norm.run_var = Tensor({c_out}, 1.0);
    if (with_attn) {
        Rng arng = rng.fork("attn");
        blk->attn = make_dual_attention(c_out, attn_reduction, arng);
    }
    return blk;
}

void register_block(ParamRegistry& reg, const std::string& prefix, ConvBlock& blk,
                    int* attn_index) {
    register_conv(reg, prefix + ".conv", blk.conv);
    register_norm(reg, prefix + ".norm", blk.norm);
    if (blk.attn) {
        register_dual_attention(reg, "attn." + std::to_string((*attn_index)++), *blk.attn);
    }
}

}  // namespace

std::unique_ptr<SegNet> build_segnet(const SegNetConfig& cfg, uint64_t seed) {
    if (cfg.depth < 2 || cfg.base_channels < 2 || cfg.num_classes < 2 || cfg.in_channels < 1)
        throw std::invalid_argument("build_segnet: invalid configuration");
    auto net = std::make_unique<SegNet>();
    net->cfg = cfg;
    const bool attn = cfg.block_type == BlockType::DualAttention;
    const int reduction = 2;
    Rng root(seed);

    for (int i = 0; i < cfg.depth - 1; ++i) {
        const int c_in = i == 0 ? cfg.in_channels : cfg.base_channels << (i - 1);
        const int c_out = cfg.base_channels << i;
        net->enc.push_back(
            make_block(c_in, c_out, root.fork("enc", static_cast<uint64_t>(i)), attn, reduction));
    }
    {
        const int c_in = cfg.base_channels << (cfg.depth - 2);
        const int c_out = cfg.base_channels << (cfg.depth - 1);
        net->bottleneck = make_block(c_in, c_out, root.fork("bott"), attn, reduction);
    }
    for (int i = cfg.depth - 2; i >= 0; --i) {
        const int c_in = (cfg.base_channels << (i + 1)) + (cfg.base_channels << i);
        const int c_out = cfg.base_channels << i;
        net->dec.push_back(
            make_block(c_in, c_out, root.fork("dec", static_cast<uint64_t>(i)), attn, reduction));
    }
    {
        Rng hrng = root.fork("head");
        net->head.W = make_param(conv_weight_init(cfg.num_classes, cfg.base_channels, 1, hrng));
        net->head.b = make_param(Tensor({cfg.num_classes}));
    }

    int attn_index = 0;
    for (size_t i = 0; i < net->enc.size(); ++i)
        register_block(net->registry, "enc" + std::to_string(i), *net->enc[i], &attn_index);
    register_block(net->registry, "bott", *net->bottleneck, &attn_index);
    for (size_t i = 0; i < net->dec.size(); ++i) {
        const int level = cfg.depth - 2 - static_cast<int>(i);
        register_block(net->registry, "dec" + std::to_string(level), *net->dec[i], &attn_index);
    }
    register_conv(net->registry, "head", net->head);
    return net;
}

void copy_params_and_state(const ParamRegistry& src, ParamRegistry& dst) {
    if (src.params.size() != dst.params.size() || src.state.size() != dst.state.size())
        throw std::logic_error("copy_params_and_state: registry mismatch");
    for (size_t i = 0; i < src.params.size(); ++i) {
        if (src.params[i].name != dst.params[i].name)
            throw std::logic_error("copy_params_and_state: name mismatch at " + src.params[i].name);
        dst.params[i].var->val = src.params[i].var->val;
        dst.params[i].var->grad = Tensor();
    }
    for (size_t i = 0; i < src.state.size(); ++i) *dst.state[i].tensor = *src.state[i].tensor;
}

std::unique_ptr<SegNet> clone_segnet(const SegNet& net) {
    auto copy = build_segnet(net.cfg, 0);
    copy_params_and_state(net.registry, copy->registry);
    return copy;
}

VarPtr SegNet::forward_var(const VarPtr& x, NormMode mode) {
    if (x->val.rank() != 4 || x->val.dim(0) != cfg.in_channels)
        throw std::invalid_argument("seg_forward: expected " + std::to_string(cfg.in_channels) +
                                    "-channel rank-4 input, got " + shape_str(x->val.shape));
    const int div = 1 << (cfg.depth - 1);
    for (int a = 1; a <= 3; ++a) {
        const int n = x->val.dim(a);
        if (n % div != 0) {
            const int padded = (n / div + 1) * div;
            throw std::invalid_argument(
                "seg_forward: spatial extent " + std::to_string(n) + " not divisible by " +
                std::to_string(div) + "; pad up to " + std::to_string(padded));
        }
    }
    std::vector<VarPtr> skips;
    VarPtr h = x;
    for (auto& blk : enc) {
        h = blk->forward(h, mode);
        skips.push_back(h);
        h = avgpool2(h);
    }
    h = bottleneck->forward(h, mode);
    for (size_t i = 0; i < dec.size(); ++i) {
        h = upsample2(h);
        h = concat_ch(h, skips[skips.size() - 1 - i]);
        h = dec[i]->forward(h, mode);
    }
    VarPtr logits = conv3d(h, head.W, head.b);
    return softmax_ch(logits);
}

ProbMap SegNet::forward(const Volume& x, NormMode mode) {
    VarPtr out = forward_var(make_const(x.data), mode);
    ProbMap p{std::move(out->val)};
    validate_probmap(p);
    return p;
}

ParamPartition partition_params(const SegNet& net, AdaptTarget target) {
    const bool has_attn = net.cfg.block_type == BlockType::DualAttention;
    if (!has_attn && (target == AdaptTarget::ChannelOnly || target == AdaptTarget::SpatialOnly ||
                      target == AdaptTarget::DualAttention))
        throw std::invalid_argument(std::string("partition_params: target ") + to_string(target) +
                                    " requires a dual-attention network");
    auto adaptable_kind = [&](ParamKind k) {
        switch (target) {
            case AdaptTarget::Norm:
                return k == ParamKind::NormScale || k == ParamKind::NormShift;
            case AdaptTarget::ChannelOnly:
                return k == ParamKind::AttnChannel;
            case AdaptTarget::SpatialOnly:
                return k == ParamKind::AttnSpatial;
            case AdaptTarget::DualAttention:
                return k == ParamKind::AttnChannel || k == ParamKind::AttnSpatial;
            case AdaptTarget::All:
                return true;
        }
        return false;
    };
    ParamPartition part;
    part.target = target;
    for (const auto& p : net.registry.params) {
        (adaptable_kind(p.kind) ? part.adaptable : part.frozen).push_back(p.name);
    }
    return part;
}

const char* to_string(AdaptTarget t) {
    switch (t) {
        case AdaptTarget::Norm: return "norm";
        case AdaptTarget::ChannelOnly: return "channel_only";
        case AdaptTarget::SpatialOnly: return "spatial_only";
        case AdaptTarget::DualAttention: return "dual_attention";
        case AdaptTarget::All: return "all";
    }
    return "?";
}

const char* to_string(BlockType t) {
    switch (t) {
        case BlockType::None: return "none";
        case BlockType::NormOnly: return "norm_only";
        case BlockType::DualAttention: return "dual_attention";
    }
    return "?";
}

}  // namespace adaatlas
