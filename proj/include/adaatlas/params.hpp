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

#include <string>
#include <vector>

#include "adaatlas/autodiff.hpp"

namespace adaatlas {

enum class ParamKind {
    ConvWeight,
    ConvBias,
    NormScale,
    NormShift,
    AttnChannel,  // W1, b1, W2, b2 of the channel gate
    AttnSpatial,  // Wconv, bconv of the spatial gate
};

struct ParamEntry {
    std::string name;
    ParamKind kind;
    VarPtr var;
};

/// Named non-trainable tensors (running normalization statistics).
struct StateEntry {
    std::string name;
    Tensor* tensor;
};

struct ParamRegistry {
    std::vector<ParamEntry> params;
    std::vector<StateEntry> state;

    void add(std::string name, ParamKind kind, const VarPtr& v) {
        params.push_back({std::move(name), kind, v});
    }
    void add_state(std::string name, Tensor* t) { state.push_back({std::move(name), t}); }

    const ParamEntry& find(const std::string& name) const {
        for (const auto& p : params)
            if (p.name == name) return p;
        throw std::invalid_argument("unknown parameter: " + name);
    }

    /// total scalar count across all parameter tensors
    int64_t scalar_count() const {
        int64_t n = 0;
        for (const auto& p : params) n += p.var->val.numel();
        return n;
    }
};

}  // namespace adaatlas
