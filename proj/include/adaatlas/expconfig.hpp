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

#include "adaatlas/synthdata.hpp"
#include "adaatlas/tta.hpp"

namespace adaatlas {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One comparator in the evaluation grid: a (loss, target, mode) triple, so
/// ablation rows are configuration, not code.
struct MethodSpec {
    std::string name;
    bool is_baseline = false;
    TTALoss loss = TTALoss::Atlas;
    AdaptTarget target = AdaptTarget::Norm;
    TTAMode mode = TTAMode::AdaptSegnet;
};

struct DataSection {
    int n_source = 20;
    int n_targets_per_domain = 10;
    uint64_t seed = 1234;
    ShapeSpec shape;
    std::vector<std::pair<std::string, ShiftSpec>> domains;
};

struct TrainSection {
    TrainConfig train;
    SegNetConfig seg;
    RegNetConfig reg;
};

struct TTASection {
    int iterations = 50;
    double lr = 1e-3;
    bool episodic = true;
    double eata_e0 = -1.0;
};

struct ReportSection {
    std::vector<MethodSpec> methods;
};

struct ExperimentConfig {
    DataSection data;
    TrainSection train;
    TTASection tta;
    ReportSection report;

    TTAConfig tta_config(const MethodSpec& m) const;
};

ExperimentConfig default_config();

/// Strict parse: sections data/train/tta/report, every field defaulted,
/// unknown keys rejected with their JSON path.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& cfg);

const char* version_string();

}  // namespace adaatlas
