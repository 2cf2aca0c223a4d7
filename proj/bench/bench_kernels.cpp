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

// Times the hot kernels in both execution lanes and reports the speedup of
// the OpenMP lane over the serial reference.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "adaatlas/kernels.hpp"
#include "adaatlas/rng.hpp"

using namespace adaatlas;
namespace k = adaatlas::kernels;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

double time_of(const std::function<void()>& fn, int reps) {
    fn();  // warmup
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

void report(const char* name, double flops, const std::function<void()>& fn, int reps) {
    double serial, parallel;
    {
        k::ExecModeGuard g(k::ExecMode::Serial);
        serial = time_of(fn, reps);
    }
    {
        k::ExecModeGuard g(k::ExecMode::Parallel);
        parallel = time_of(fn, reps);
    }
    std::printf("%-28s %10.3f ms %10.3f ms %8.2fx %10.2f GF/s\n", name, serial * 1e3,
                parallel * 1e3, serial / parallel, flops / parallel * 1e-9);
}

}  // namespace

int main() {
    const int C = 16, G = 32;
    const Tensor x = random_tensor({C, G, G, G}, 1);
    const Tensor w = random_tensor({C, C, 3, 3, 3}, 2);
    const Tensor b = random_tensor({C}, 3);
    const Tensor go = random_tensor({C, G, G, G}, 4);
    Tensor aff({3, 4});
    aff.v = {1.01, 0.02, 0.0, 0.01, 0.0, 0.99, 0.01, -0.02, 0.01, 0.0, 1.0, 0.03};
    const Tensor disp = random_tensor({3, G, G, G}, 5);
    const int64_t vox = static_cast<int64_t>(G) * G * G;
    const double conv_flops = 2.0 * vox * C * C * 27;

    std::printf("%-28s %13s %13s %9s %12s\n", "kernel (16ch, 32^3)", "serial", "openmp",
                "speedup", "throughput");
    Tensor out, out2;
    report("conv3d forward", conv_flops, [&] { k::conv3d_forward(x, w, b, out); }, 5);
    report("conv3d backward input", conv_flops,
           [&] { k::conv3d_backward_input(go, w, out); }, 5);
    report("conv3d backward weight", conv_flops,
           [&] { k::conv3d_backward_weight(go, x, 3, out, out2); }, 5);
    report("grid_sample forward", 2.0 * vox * C * 8,
           [&] { k::grid_sample_forward(x, aff, disp, out); }, 20);
    report("grid_sample backward", 4.0 * vox * C * 8, [&] {
        Tensor gm, ga, gd;
        k::grid_sample_backward(go, x, aff, disp, &gm, &ga, &gd);
    }, 20);
    report("avgpool2 forward", 1.0 * vox * C, [&] { k::avgpool2_forward(x, out); }, 50);
    report("upsample2 forward", 8.0 * vox * C * 8, [&] { k::upsample2_forward(x, out); }, 10);
    report("softmax over channels", 4.0 * vox * C,
           [&] { k::softmax_channel_forward(x, out); }, 20);
    return 0;
}
