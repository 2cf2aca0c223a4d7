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

#include "adaatlas/losses.hpp"

namespace adaatlas {

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Adam with externally scheduled learning rate. Fresh state per episode.
class Adam {
public:
    Adam(std::vector<VarPtr> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    void set_lr(double lr) { lr_ = lr; }
    void step();
    void zero_grad();

private:
    std::vector<VarPtr> params_;
    std::vector<Tensor> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

struct TrainConfig {
    int epochs = 60;
    int batch_size = 4;
    double lr = 1e-3;
    double lr_half_life = 30.0;  // epochs; exponential decay
    double lambda_smooth = 0.01;
    double lambda_bireg = 1.0;
    double atlas_momentum = 0.9;
    uint64_t seed = 7;

    void validate() const;
};

struct TrainLogRow {
    int epoch = 0;
    double lr = 0.0;
    double total = 0.0;
    double supervised = 0.0;
    double bireg = 0.0;
    double smooth = 0.0;
    double holdout_bireg = 0.0;  // NaN when no holdout subject was given
};

struct Subject {
    Volume image;
    LabelMap labels;
};

struct Checkpoint {
    SegNetConfig seg_cfg;
    RegNetConfig reg_cfg;
    std::unique_ptr<SegNet> segnet;
    std::unique_ptr<RegNet> regnet;
    Atlas atlas;
    SourceStats stats;
    TrainConfig train_cfg;
    int epochs_run = 0;
    std::vector<TrainLogRow> curve;
};

/// Joint source training of the segmentation net, registration net and atlas:
/// total = supervised + lambda_bireg * bireg + lambda_smooth * smoothness,
/// Adam with exponential lr decay, atlas EMA-refreshed at each epoch end from
/// ground-truth labels warped by the current registration net.
Checkpoint train_joint(const std::vector<Subject>& subjects, const SegNetConfig& seg_cfg,
                       const RegNetConfig& reg_cfg, const TrainConfig& cfg,
                       const Subject* holdout = nullptr);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace adaatlas
