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
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adaatlas/tensor.hpp"

namespace adaatlas {

/// Single-channel intensity grid, shape {1,H,W,D}.
struct Volume {
    Tensor data;
    int h() const { return data.dim(1); }
    int w() const { return data.dim(2); }
    int d() const { return data.dim(3); }
};

/// Integer class labels in {0,...,C-1}, class 0 is background.
struct LabelMap {
    std::vector<int32_t> labels;
    std::array<int, 3> shape{0, 0, 0};
    int num_classes = 0;

    int64_t numel() const { return static_cast<int64_t>(shape[0]) * shape[1] * shape[2]; }
    int32_t& at(int h, int w, int d) {
        return labels[static_cast<size_t>((static_cast<int64_t>(h) * shape[1] + w) * shape[2] + d)];
    }
    int32_t at(int h, int w, int d) const {
        return labels[static_cast<size_t>((static_cast<int64_t>(h) * shape[1] + w) * shape[2] + d)];
    }
};

/// Class-wise probability volume, shape {C,H,W,D}; voxel channels sum to 1.
struct ProbMap {
    Tensor probs;
    int c() const { return probs.dim(0); }
};

struct DiceReport {
    std::map<int, double> per_class;
    double mean_fg = 0.0;
};

ProbMap one_hot(const LabelMap& labels, int num_classes);
LabelMap argmax_labels(const ProbMap& p);
DiceReport dice(const LabelMap& pred, const LabelMap& gt, int num_classes);

/// Shared ProbMap validator: entries within [0,1] and per-voxel channel sums
/// within `tol` of 1. Throws on violation.
void validate_probmap(const ProbMap& p, double tol = 1e-5);

/// Rescale to zero mean, unit variance. Constant volumes map to all zeros.
Volume standardize(const Volume& v);

// --- AAVOL1 container (byte layout in docs/formats.md) ---
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);
void save_volume(const std::string& path, const Volume& v);
Volume load_volume(const std::string& path);
void save_labels(const std::string& path, const LabelMap& m);
LabelMap load_labels(const std::string& path);

// in-memory encoding, shared with the checkpoint container
void encode_tensor(std::string& out, const Tensor& t);
Tensor decode_tensor(const std::string& buf, size_t& offset);

}  // namespace adaatlas
