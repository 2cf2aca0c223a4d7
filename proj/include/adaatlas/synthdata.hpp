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
#include <utility>

#include "adaatlas/rng.hpp"
#include "adaatlas/volumes.hpp"

namespace adaatlas {

/// Nested-ellipsoid anatomy: an outer "organ" shell (class 1) with an
/// optional inner "core" (class 2), randomized pose and low-frequency
/// boundary perturbation. Appearance comes from per-class base intensities
/// plus smooth texture and mild noise.
struct ShapeSpec {
    int grid = 16;
    int num_classes = 3;  // 2 or 3
    double fg_min = 0.02, fg_max = 0.20;
    double radius_min = 0.20, radius_max = 0.30;  // fraction of the grid extent
    double center_jitter = 0.06;                  // fraction of the grid extent
    double max_rotation = 0.35;                   // radians; scans arrive roughly aligned
    double boundary_amp = 0.25;
    double inner_scale_min = 0.40, inner_scale_max = 0.55;
    double texture_amp = 0.08;
    double noise_sigma = 0.03;

    void validate() const;
};

/// Intensity-only appearance shift. Labels are untouched by construction:
/// shifts only ever see a Volume.
struct ShiftSpec {
    double gamma = 1.0;        // [0.4, 2.5]
    double bias_amp = 0.0;     // [0, 0.5], low-order multiplicative field
    double noise_sigma = 0.0;  // [0, 0.3]
    double contrast = 1.0;     // [0.5, 2.0]

    bool is_identity() const {
        return gamma == 1.0 && bias_amp == 0.0 && noise_sigma == 0.0 && contrast == 1.0;
    }
    void validate() const;
};

std::pair<Volume, LabelMap> generate_subject(const ShapeSpec& spec, uint64_t seed);
Volume apply_shift(const Volume& x, const ShiftSpec& shift, uint64_t seed);

/// smooth random quadratic field on the normalized grid, rescaled to max |1|
Tensor smooth_poly_field(int grid, Rng& rng);

struct SubjectRecord {
    std::string id;
    uint64_t anat_seed = 0;
    uint64_t shift_seed = 0;
};

struct DomainRecord {
    std::string name;
    bool is_source = false;
    ShiftSpec shift;
    std::vector<SubjectRecord> subjects;
};

struct DatasetManifest {
    ShapeSpec shape;
    uint64_t seed = 0;
    std::vector<DomainRecord> domains;
};

DatasetManifest make_domains(int n_source, int n_targets_per_domain,
                             const std::vector<std::pair<std::string, ShiftSpec>>& domain_shifts,
                             const ShapeSpec& shape, uint64_t seed);

std::pair<Volume, LabelMap> realize_subject(const DatasetManifest& manifest,
                                            const DomainRecord& domain,
                                            const SubjectRecord& subject);

/// directory of AAVOL1 files plus manifest.json; refuses to overwrite unless
/// forced
void write_dataset(const DatasetManifest& manifest, const std::string& dir, bool force);
DatasetManifest read_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

struct LoadedDomain {
    std::string name;
    bool is_source = false;
    std::vector<Volume> images;
    std::vector<LabelMap> labels;
};
std::vector<LoadedDomain> load_dataset(const std::string& dir);

}  // namespace adaatlas
