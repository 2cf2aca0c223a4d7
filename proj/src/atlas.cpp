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

#include "adaatlas/atlas.hpp"

#include <cmath>

namespace adaatlas {

Atlas atlas_init(const std::vector<LabelMap>& labels, int num_classes, double momentum) {
    if (labels.empty()) throw std::invalid_argument("atlas_init: empty subject list");
    if (momentum < 0.0 || momentum > 1.0)
        throw std::invalid_argument("atlas_init: momentum outside [0,1]");
    Atlas a;
    a.momentum = momentum;
    const double w = 1.0 / static_cast<double>(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].shape != labels[0].shape)
            throw std::invalid_argument("atlas_init: subjects have mismatched shapes");
        ProbMap oh = one_hot(labels[i], num_classes);
        if (i == 0) {
            a.probs = Tensor(oh.probs.shape);
        }
        for (int64_t j = 0; j < a.probs.numel(); ++j) a.probs[j] += w * oh.probs[j];
    }
    return a;
}

Atlas atlas_update(const Atlas& atlas, const std::vector<Tensor>& warped_labels) {
    if (warped_labels.empty()) throw std::invalid_argument("atlas_update: empty update list");
    for (const auto& t : warped_labels)
        if (t.shape != atlas.probs.shape)
            throw std::invalid_argument("atlas_update: shape mismatch " + shape_str(t.shape) +
                                        " vs " + shape_str(atlas.probs.shape));
    Atlas out;
    out.momentum = atlas.momentum;
    out.probs = Tensor(atlas.probs.shape);
    const double w = 1.0 / static_cast<double>(warped_labels.size());
    for (const auto& t : warped_labels)
        for (int64_t j = 0; j < out.probs.numel(); ++j) out.probs[j] += w * t[j];
    const double m = atlas.momentum;
    for (int64_t j = 0; j < out.probs.numel(); ++j)
        out.probs[j] = m * atlas.probs[j] + (1.0 - m) * out.probs[j];
    return out;
}

void validate_atlas(const Atlas& atlas, double tol) {
    validate_probmap(ProbMap{atlas.probs}, tol);
}

}  // namespace adaatlas
