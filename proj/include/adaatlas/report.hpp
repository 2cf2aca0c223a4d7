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

#include "adaatlas/expconfig.hpp"

namespace adaatlas {

struct MethodDomainResult {
    std::string method;
    std::string domain;
    DomainEval eval;
    bool failed = false;
    std::string error;
};

struct EvalRun {
    std::vector<MethodDomainResult> cells;  // method-major, domain-minor
    std::vector<std::string> domain_names;
    std::vector<std::string> method_names;
    int num_classes = 0;
};

/// methods x domains grid; failures stay isolated per cell
EvalRun run_adapt_eval(const Checkpoint& ckpt, const std::vector<LoadedDomain>& domains,
                       const ExperimentConfig& cfg, bool verbose = false);

/// per-subject CSV, per-domain aggregate CSV, rendered table and the resolved
/// config; aggregate CSV bytes are a pure function of (config, seed)
void write_reports(const EvalRun& run, const ExperimentConfig& cfg, const std::string& out_dir);

std::string render_table(const EvalRun& run);

const MethodDomainResult& find_cell(const EvalRun& run, const std::string& method,
                                    const std::string& domain);

/// mean adapted foreground Dice over every non-source domain
double target_mean(const EvalRun& run, const std::string& method);

}  // namespace adaatlas
