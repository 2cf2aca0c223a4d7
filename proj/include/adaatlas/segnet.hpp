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

#include <memory>
#include <optional>

#include "adaatlas/attention.hpp"
#include "adaatlas/params.hpp"
#include "adaatlas/volumes.hpp"

namespace adaatlas {

enum class BlockType { None, NormOnly, DualAttention };
enum class AdaptTarget { Norm, ChannelOnly, SpatialOnly, DualAttention, All };

/// Normalization statistics source for a forward pass. Training uses the
/// sample's own spatial statistics and tracks running averages; frozen
/// evaluation uses the stored running statistics; SampleStats recomputes from
/// the sample without touching the running buffers (norm-adaptation mode).
enum class NormMode { Train, Running, SampleStats };

struct SegNetConfig {
    int in_channels = 1;
    int num_classes = 2;
    int depth = 3;
    int base_channels = 8;
    BlockType block_type = BlockType::None;
};

struct ConvLayer {
    VarPtr W, b;
};

struct NormLayer {
    VarPtr gamma, beta;
    Tensor run_mu, run_var;
    double eps = 1e-5;
    double momentum = 0.1;

    VarPtr forward(const VarPtr& x, NormMode mode);
};

struct ConvBlock {
    ConvLayer conv;
    NormLayer norm;
    std::optional<DualAttentionParams> attn;

    VarPtr forward(const VarPtr& x, NormMode mode);
};

/// 3D U-Net: strided-pooling encoder, trilinear-upsampling decoder with
/// concatenated skips, channel norm in every conv block, and optional dual
/// attention blocks after each conv block (never after the classifier).
struct SegNet {
    SegNetConfig cfg;
    std::vector<std::unique_ptr<ConvBlock>> enc;  // depth-1 blocks
    std::unique_ptr<ConvBlock> bottleneck;
    std::vector<std::unique_ptr<ConvBlock>> dec;  // deepest first
    ConvLayer head;
    ParamRegistry registry;

    SegNet() = default;
    SegNet(const SegNet&) = delete;
    SegNet& operator=(const SegNet&) = delete;

    VarPtr forward_var(const VarPtr& x, NormMode mode);
    ProbMap forward(const Volume& x, NormMode mode = NormMode::Running);
};

std::unique_ptr<SegNet> build_segnet(const SegNetConfig& cfg, uint64_t seed);
std::unique_ptr<SegNet> clone_segnet(const SegNet& net);

struct ParamPartition {
    std::vector<std::string> adaptable;
    std::vector<std::string> frozen;
    AdaptTarget target;
};

ParamPartition partition_params(const SegNet& net, AdaptTarget target);

const char* to_string(AdaptTarget t);
const char* to_string(BlockType t);

// shared helpers for the registration net
Tensor conv_weight_init(int c_out, int c_in, int k, Rng& rng);
void register_conv(ParamRegistry& reg, const std::string& prefix, const ConvLayer& c);
void register_norm(ParamRegistry& reg, const std::string& prefix, NormLayer& n);
void copy_params_and_state(const ParamRegistry& src, ParamRegistry& dst);

}  // namespace adaatlas
