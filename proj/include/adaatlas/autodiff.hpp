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

#include <functional>
#include <memory>
#include <vector>

#include "adaatlas/tensor.hpp"

namespace adaatlas {

// Reverse-mode tape. A forward pass builds a fresh graph of Var nodes over
// long-lived parameter nodes; backward() walks it once in reverse topological
// order. Graphs here are tiny (tens of nodes), all the cost is in the kernels.
struct Var {
    Tensor val;
    Tensor grad;  // allocated lazily, zeroed on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Var>> parents;
    std::function<void(Var&)> backward_fn;
};

using VarPtr = std::shared_ptr<Var>;

VarPtr make_const(Tensor t);
VarPtr make_param(Tensor t);
VarPtr make_node(Tensor val, std::vector<VarPtr> parents, std::function<void(Var&)> fn);

Tensor& ensure_grad(Var& v);
void accumulate_grad(const VarPtr& p, const Tensor& g);
void zero_grad(const VarPtr& p);

/// root must be scalar shaped {1}
void backward(const VarPtr& root);

// --- elementwise / arithmetic ---
VarPtr add(const VarPtr& a, const VarPtr& b);
VarPtr sub(const VarPtr& a, const VarPtr& b);
VarPtr mul(const VarPtr& a, const VarPtr& b);
VarPtr scale(const VarPtr& a, double k);
VarPtr relu(const VarPtr& a);
VarPtr sigmoid(const VarPtr& a);
VarPtr tanh_v(const VarPtr& a);
VarPtr detach(const VarPtr& a);

// --- structural ---
VarPtr reshape(const VarPtr& a, std::vector<int> shape);
VarPtr concat_ch(const VarPtr& a, const VarPtr& b);

// --- network blocks ---
VarPtr conv3d(const VarPtr& x, const VarPtr& w, const VarPtr& b);
VarPtr avgpool2(const VarPtr& x);
VarPtr upsample2(const VarPtr& x);
VarPtr softmax_ch(const VarPtr& x);
VarPtr global_avgpool(const VarPtr& x);                             // {C,H,W,D} -> {C}
VarPtr fc(const VarPtr& w, const VarPtr& x, const VarPtr& b);       // {M,N}x{N}+{M}
VarPtr mul_channel(const VarPtr& x, const VarPtr& g);               // g {C}
VarPtr mul_spatial(const VarPtr& x, const VarPtr& m);               // m {1,H,W,D}
VarPtr grid_sample(const VarPtr& moving, const VarPtr& affine, const VarPtr& disp);

/// channel norm over spatial dims with statistics from the sample itself;
/// optionally reports the statistics for running-average tracking
VarPtr norm_sample(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta, double eps,
                   Tensor* mu_out = nullptr, Tensor* var_out = nullptr);
/// channel norm using externally stored statistics
VarPtr norm_stats(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta, const Tensor& mu,
                  const Tensor& var, double eps);

// --- reductions ---
VarPtr sum_all(const VarPtr& x);
VarPtr mean_all(const VarPtr& x);

}  // namespace adaatlas
