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

#include "adaatlas/tensor.hpp"

namespace adaatlas::kernels {

// Every kernel has a serial lane and an OpenMP lane. Both compute each output
// element with the same floating-point operation order, so the lanes agree
// bitwise and results do not depend on the thread count. The serial lane is
// the reference used by the lane-equivalence tests and the benchmark.
enum class ExecMode { Serial, Parallel };

void set_exec_mode(ExecMode m);
ExecMode exec_mode();

/// Scoped override, used by tests and the benchmark driver.
struct ExecModeGuard {
    explicit ExecModeGuard(ExecMode m) : prev_(exec_mode()) { set_exec_mode(m); }
    ~ExecModeGuard() { set_exec_mode(prev_); }

private:
    ExecMode prev_;
};

// --- 3D convolution, stride 1 ---
// x {Cin,H,W,D}, w {Cout,Cin,k,k,k} with k in {1,3} (k=3 uses zero padding 1,
// k=1 no padding), b {Cout}. out {Cout,H,W,D}.
void conv3d_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& out);
void conv3d_backward_input(const Tensor& go, const Tensor& w, Tensor& gx);
void conv3d_backward_weight(const Tensor& go, const Tensor& x, int K, Tensor& gw, Tensor& gb);

// --- 2x average pooling / trilinear upsampling ---
void avgpool2_forward(const Tensor& x, Tensor& out);
void avgpool2_backward(const Tensor& go, Tensor& gx);
void upsample2_forward(const Tensor& x, Tensor& out);
void upsample2_backward(const Tensor& go, const std::vector<int>& in_shape, Tensor& gx);

// --- trilinear pull-back sampling ---
// Sample positions come from an affine {3,4} acting on the align-corners
// normalized grid of `moving` plus a dense displacement {3,H,W,D}, all in
// [-1,1] coordinates. Out-of-domain positions are border-clamped. Positions
// within 1e-9 voxels of the integer lattice are snapped so that identity and
// integer translations reproduce inputs exactly.
void grid_sample_forward(const Tensor& moving, const Tensor& affine, const Tensor& disp,
                         Tensor& out);
void grid_sample_backward(const Tensor& go, const Tensor& moving, const Tensor& affine,
                          const Tensor& disp, Tensor* gmoving, Tensor* gaffine, Tensor* gdisp);

// --- elementwise ---
void relu_forward(const Tensor& x, Tensor& out);
void relu_backward(const Tensor& go, const Tensor& x, Tensor& gx);
void sigmoid_forward(const Tensor& x, Tensor& out);
void tanh_forward(const Tensor& x, Tensor& out);
void softmax_channel_forward(const Tensor& x, Tensor& out);  // x {C,H,W,D}

}  // namespace adaatlas::kernels
