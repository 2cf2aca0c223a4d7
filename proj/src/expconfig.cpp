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

#include "adaatlas/expconfig.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace adaatlas {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& path) {
    if (!j.is_object()) throw ConfigError("config: expected an object at " + path);
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError("config: unknown key \"" + path + key + "\"");
}

template <class T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

TTALoss parse_loss(const std::string& s) {
    if (s == "atlas") return TTALoss::Atlas;
    if (s == "entropy") return TTALoss::Entropy;
    if (s == "eata") return TTALoss::Eata;
    if (s == "class_ratio") return TTALoss::ClassRatio;
    if (s == "shape_moment") return TTALoss::ShapeMoment;
    throw ConfigError("config: unknown tta loss \"" + s + "\"");
}

const char* loss_name(TTALoss l) {
    switch (l) {
        case TTALoss::Atlas: return "atlas";
        case TTALoss::Entropy: return "entropy";
        case TTALoss::Eata: return "eata";
        case TTALoss::ClassRatio: return "class_ratio";
        case TTALoss::ShapeMoment: return "shape_moment";
    }
    return "?";
}

AdaptTarget parse_target(const std::string& s) {
    if (s == "norm") return AdaptTarget::Norm;
    if (s == "channel_only") return AdaptTarget::ChannelOnly;
    if (s == "spatial_only") return AdaptTarget::SpatialOnly;
    if (s == "dual_attention") return AdaptTarget::DualAttention;
    if (s == "all") return AdaptTarget::All;
    throw ConfigError("config: unknown adaptation target \"" + s + "\"");
}

BlockType parse_block_type(const std::string& s) {
    if (s == "none") return BlockType::None;
    if (s == "norm_only") return BlockType::NormOnly;
    if (s == "dual_attention") return BlockType::DualAttention;
    throw ConfigError("config: unknown block_type \"" + s + "\"");
}

}  // namespace

TTAConfig ExperimentConfig::tta_config(const MethodSpec& m) const {
    TTAConfig c;
    c.loss = m.loss;
    c.target = m.target;
    c.mode = m.mode;
    c.iterations = tta.iterations;
    c.lr = tta.lr;
    c.episodic = tta.episodic;
    c.eata_e0 = tta.eata_e0;
    return c;
}

ExperimentConfig default_config() {
    ExperimentConfig c;
    c.data.domains = {
        {"mild", ShiftSpec{1.40, 0.15, 0.03, 1.20}},
        {"medium", ShiftSpec{1.90, 0.30, 0.06, 1.40}},
        {"strong", ShiftSpec{0.45, 0.45, 0.10, 0.70}},
    };
    c.train.seg.num_classes = c.data.shape.num_classes;
    c.train.seg.block_type = BlockType::DualAttention;
    c.train.reg.num_classes = c.data.shape.num_classes;
    c.report.methods = {
        {"Baseline", true, TTALoss::Atlas, AdaptTarget::Norm, TTAMode::AdaptSegnet},
        {"TENT", false, TTALoss::Entropy, AdaptTarget::Norm, TTAMode::AdaptSegnet},
        {"EATA", false, TTALoss::Eata, AdaptTarget::Norm, TTAMode::AdaptSegnet},
        {"AdaMI", false, TTALoss::ClassRatio, AdaptTarget::Norm, TTAMode::AdaptSegnet},
        {"TTAS", false, TTALoss::ShapeMoment, AdaptTarget::Norm, TTAMode::AdaptSegnet},
        {"TTR", false, TTALoss::Atlas, AdaptTarget::Norm, TTAMode::TTR},
        {"AdaAtlas-Norm", false, TTALoss::Atlas, AdaptTarget::Norm, TTAMode::AdaptSegnet},
        {"AdaAtlas-Channel", false, TTALoss::Atlas, AdaptTarget::ChannelOnly,
         TTAMode::AdaptSegnet},
        {"AdaAtlas-Spatial", false, TTALoss::Atlas, AdaptTarget::SpatialOnly,
         TTAMode::AdaptSegnet},
        {"AdaAtlas-Attention", false, TTALoss::Atlas, AdaptTarget::DualAttention,
         TTAMode::AdaptSegnet},
        {"Ent-Attention", false, TTALoss::Entropy, AdaptTarget::DualAttention,
         TTAMode::AdaptSegnet},
    };
    return c;
}

ExperimentConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: JSON parse error: ") + e.what());
    }
    ExperimentConfig c = default_config();
    check_keys(j, {"data", "train", "tta", "report"}, "");

    if (j.contains("data")) {
        const json& d = j["data"];
        check_keys(d, {"n_source", "n_targets_per_domain", "seed", "shape", "domains"}, "data.");
        get_if(d, "n_source", c.data.n_source);
        get_if(d, "n_targets_per_domain", c.data.n_targets_per_domain);
        get_if(d, "seed", c.data.seed);
        if (d.contains("shape")) {
            const json& s = d["shape"];
            check_keys(s,
                       {"grid", "num_classes", "fg_min", "fg_max", "radius_min", "radius_max",
                        "center_jitter", "max_rotation", "boundary_amp", "inner_scale_min",
                        "inner_scale_max", "texture_amp", "noise_sigma"},
                       "data.shape.");
            get_if(s, "grid", c.data.shape.grid);
            get_if(s, "num_classes", c.data.shape.num_classes);
            get_if(s, "fg_min", c.data.shape.fg_min);
            get_if(s, "fg_max", c.data.shape.fg_max);
            get_if(s, "radius_min", c.data.shape.radius_min);
            get_if(s, "radius_max", c.data.shape.radius_max);
            get_if(s, "center_jitter", c.data.shape.center_jitter);
            get_if(s, "max_rotation", c.data.shape.max_rotation);
            get_if(s, "boundary_amp", c.data.shape.boundary_amp);
            get_if(s, "inner_scale_min", c.data.shape.inner_scale_min);
            get_if(s, "inner_scale_max", c.data.shape.inner_scale_max);
            get_if(s, "texture_amp", c.data.shape.texture_amp);
            get_if(s, "noise_sigma", c.data.shape.noise_sigma);
            c.train.seg.num_classes = c.data.shape.num_classes;
            c.train.reg.num_classes = c.data.shape.num_classes;
        }
        if (d.contains("domains")) {
            c.data.domains.clear();
            for (const auto& dom : d["domains"]) {
                check_keys(dom, {"name", "gamma", "bias_amp", "noise_sigma", "contrast"},
                           "data.domains[].");
                if (!dom.contains("name")) throw ConfigError("config: domain without a name");
                ShiftSpec s;
                get_if(dom, "gamma", s.gamma);
                get_if(dom, "bias_amp", s.bias_amp);
                get_if(dom, "noise_sigma", s.noise_sigma);
                get_if(dom, "contrast", s.contrast);
                c.data.domains.push_back({dom["name"].get<std::string>(), s});
            }
        }
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        check_keys(t,
                   {"epochs", "batch_size", "lr", "lr_half_life", "lambda_smooth", "lambda_bireg",
                    "atlas_momentum", "seed", "block_type", "depth", "base_channels", "reg_depth",
                    "reg_base_channels", "displacement_scale"},
                   "train.");
        get_if(t, "epochs", c.train.train.epochs);
        get_if(t, "batch_size", c.train.train.batch_size);
        get_if(t, "lr", c.train.train.lr);
        get_if(t, "lr_half_life", c.train.train.lr_half_life);
        get_if(t, "lambda_smooth", c.train.train.lambda_smooth);
        get_if(t, "lambda_bireg", c.train.train.lambda_bireg);
        get_if(t, "atlas_momentum", c.train.train.atlas_momentum);
        get_if(t, "seed", c.train.train.seed);
        if (t.contains("block_type"))
            c.train.seg.block_type = parse_block_type(t["block_type"].get<std::string>());
        get_if(t, "depth", c.train.seg.depth);
        get_if(t, "base_channels", c.train.seg.base_channels);
        get_if(t, "reg_depth", c.train.reg.depth);
        get_if(t, "reg_base_channels", c.train.reg.base_channels);
        get_if(t, "displacement_scale", c.train.reg.displacement_scale);
    }
    if (j.contains("tta")) {
        const json& t = j["tta"];
        check_keys(t, {"iterations", "lr", "episodic", "eata_e0"}, "tta.");
        get_if(t, "iterations", c.tta.iterations);
        get_if(t, "lr", c.tta.lr);
        get_if(t, "episodic", c.tta.episodic);
        get_if(t, "eata_e0", c.tta.eata_e0);
    }
    if (j.contains("report")) {
        const json& r = j["report"];
        check_keys(r, {"methods"}, "report.");
        if (r.contains("methods")) {
            c.report.methods.clear();
            for (const auto& m : r["methods"]) {
                check_keys(m, {"name", "baseline", "loss", "target", "mode"}, "report.methods[].");
                MethodSpec spec;
                if (!m.contains("name")) throw ConfigError("config: method without a name");
                spec.name = m["name"].get<std::string>();
                get_if(m, "baseline", spec.is_baseline);
                if (m.contains("loss")) spec.loss = parse_loss(m["loss"].get<std::string>());
                if (m.contains("target"))
                    spec.target = parse_target(m["target"].get<std::string>());
                if (m.contains("mode")) {
                    const std::string mode = m["mode"].get<std::string>();
                    if (mode == "adapt_segnet")
                        spec.mode = TTAMode::AdaptSegnet;
                    else if (mode == "ttr")
                        spec.mode = TTAMode::TTR;
                    else
                        throw ConfigError("config: unknown mode \"" + mode + "\"");
                }
                c.report.methods.push_back(std::move(spec));
            }
        }
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return config_from_json_text(text);
}

std::string config_to_json_text(const ExperimentConfig& c) {
    json domains = json::array();
    for (const auto& [name, s] : c.data.domains)
        domains.push_back({{"name", name},
                           {"gamma", s.gamma},
                           {"bias_amp", s.bias_amp},
                           {"noise_sigma", s.noise_sigma},
                           {"contrast", s.contrast}});
    json methods = json::array();
    for (const auto& m : c.report.methods)
        methods.push_back({{"name", m.name},
                           {"baseline", m.is_baseline},
                           {"loss", loss_name(m.loss)},
                           {"target", to_string(m.target)},
                           {"mode", m.mode == TTAMode::TTR ? "ttr" : "adapt_segnet"}});
    json j;
    j["data"] = {{"n_source", c.data.n_source},
                 {"n_targets_per_domain", c.data.n_targets_per_domain},
                 {"seed", c.data.seed},
                 {"shape",
                  {{"grid", c.data.shape.grid},
                   {"num_classes", c.data.shape.num_classes},
                   {"fg_min", c.data.shape.fg_min},
                   {"fg_max", c.data.shape.fg_max},
                   {"radius_min", c.data.shape.radius_min},
                   {"radius_max", c.data.shape.radius_max},
                   {"center_jitter", c.data.shape.center_jitter},
                   {"max_rotation", c.data.shape.max_rotation},
                   {"boundary_amp", c.data.shape.boundary_amp},
                   {"inner_scale_min", c.data.shape.inner_scale_min},
                   {"inner_scale_max", c.data.shape.inner_scale_max},
                   {"texture_amp", c.data.shape.texture_amp},
                   {"noise_sigma", c.data.shape.noise_sigma}}},
                 {"domains", domains}};
    j["train"] = {{"epochs", c.train.train.epochs},
                  {"batch_size", c.train.train.batch_size},
                  {"lr", c.train.train.lr},
                  {"lr_half_life", c.train.train.lr_half_life},
                  {"lambda_smooth", c.train.train.lambda_smooth},
                  {"lambda_bireg", c.train.train.lambda_bireg},
                  {"atlas_momentum", c.train.train.atlas_momentum},
                  {"seed", c.train.train.seed},
                  {"block_type", to_string(c.train.seg.block_type)},
                  {"depth", c.train.seg.depth},
                  {"base_channels", c.train.seg.base_channels},
                  {"reg_depth", c.train.reg.depth},
                  {"reg_base_channels", c.train.reg.base_channels},
                  {"displacement_scale", c.train.reg.displacement_scale}};
    j["tta"] = {{"iterations", c.tta.iterations},
                {"lr", c.tta.lr},
                {"episodic", c.tta.episodic},
                {"eata_e0", c.tta.eata_e0}};
    j["report"] = {{"methods", methods}};
    return j.dump(2);
}

const char* version_string() {
#ifdef ADAATLAS_VERSION
    return ADAATLAS_VERSION;
#else
    return "unknown";
#endif
}

}  // namespace adaatlas
