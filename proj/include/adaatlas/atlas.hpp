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

#include "adaatlas/volumes.hpp"

namespace adaatlas {

/// Probabilistic label volume in atlas space; the domain-invariant shape
/// prior. Built on the source domain and frozen at test time.
struct Atlas {
    Tensor probs;  // {C,H,W,D}
    double momentum = 0.9;

    int c() const { return probs.dim(0); }
};

/// probs = mean of the subjects' one-hot label maps
Atlas atlas_init(const std::vector<LabelMap>& labels, int num_classes, double momentum = 0.9);

/// probs = m * old + (1-m) * mean(warped one-hot labels)
Atlas atlas_update(const Atlas& atlas, const std::vector<Tensor>& warped_labels);

void validate_atlas(const Atlas& atlas, double tol = 1e-4);

}  // namespace adaatlas
