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

#include "adaatlas/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace adaatlas {

using nlohmann::json;

Adam::Adam(std::vector<VarPtr> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p->val.shape);
        v_.emplace_back(p->val.shape);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Var& p = *params_[i];
        if (p.grad.shape != p.val.shape) continue;  // no gradient reached this tensor
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t j = 0; j < p.val.numel(); ++j) {
            const double g = p.grad[j];
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            const double mh = m[j] / bc1;
            const double vh = v[j] / bc2;
            p.val[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (const auto& p : params_) p->grad = Tensor();
}

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1 || lr <= 0.0 || lr_half_life <= 0.0 || lambda_smooth < 0.0 ||
        lambda_bireg < 0.0 || atlas_momentum < 0.0 || atlas_momentum > 1.0)
        throw std::invalid_argument("TrainConfig: invalid field");
}

namespace {

struct SampleLosses {
    double total, supervised, bireg, smooth;
};

SampleLosses train_step_losses(SegNet& seg, RegNet& reg, const Atlas& atlas, const Subject& subj,
                               const TrainConfig& cfg, double inv_batch, VarPtr* total_out) {
    VarPtr x = make_const(subj.image.data);
    VarPtr pred = seg.forward_var(x, NormMode::Train);
    if (!all_finite(pred->val))
        throw DivergenceError("train_joint: non-finite prediction");
    VarPtr sup = supervised_loss_var(pred, subj.labels);
    VarPtr total = sup;
    double bireg_val = 0.0, smooth_val = 0.0;

    if (cfg.lambda_bireg > 0.0 || cfg.lambda_smooth > 0.0) {
        VarPtr atlas_c = make_const(atlas.probs);
        VarPtr pred_det = detach(pred);
        // subject->atlas field sees the live prediction: this is the gradient
        // path test-time adaptation will use, so it must exist in training too
        FieldVar fwd = reg_forward_var(reg, pred, atlas_c, NormMode::Train);
        // atlas->subject field trains the reverse warp on a detached prediction
        FieldVar bwd = reg_forward_var(reg, atlas_c, pred_det, NormMode::Train);
        if (cfg.lambda_bireg > 0.0) {
            VarPtr term_subject = soft_dice_loss_var(pred_det, warp_var(atlas_c, bwd));
            VarPtr term_atlas = soft_dice_loss_var(atlas_c, warp_var(pred, fwd));
            VarPtr bireg = add(term_subject, term_atlas);
            bireg_val = bireg->val[0];
            total = add(total, scale(bireg, cfg.lambda_bireg));
        }
        if (cfg.lambda_smooth > 0.0) {
            VarPtr smooth = add(smoothness_penalty_var(fwd.disp), smoothness_penalty_var(bwd.disp));
            smooth_val = smooth->val[0];
            total = add(total, scale(smooth, cfg.lambda_smooth));
        }
    }
    total = scale(total, inv_batch);
    *total_out = total;
    return {total->val[0], sup->val[0], bireg_val, smooth_val};
}

}  // namespace

Checkpoint train_joint(const std::vector<Subject>& subjects, const SegNetConfig& seg_cfg,
                       const RegNetConfig& reg_cfg, const TrainConfig& cfg,
                       const Subject* holdout) {
    cfg.validate();
    if (subjects.empty()) throw std::invalid_argument("train_joint: no subjects");
    for (const auto& s : subjects)
        if (s.image.data.shape[1] != subjects[0].image.data.shape[1] ||
            s.labels.shape != subjects[0].labels.shape)
            throw std::invalid_argument("train_joint: subjects have mismatched shapes");
    if (seg_cfg.num_classes != reg_cfg.num_classes)
        throw std::invalid_argument("train_joint: class count mismatch between networks");

    Checkpoint ckpt;
    ckpt.seg_cfg = seg_cfg;
    ckpt.reg_cfg = reg_cfg;
    ckpt.train_cfg = cfg;
    Rng root(cfg.seed);
    ckpt.segnet = build_segnet(seg_cfg, root.fork("segnet").next_u64());
    ckpt.regnet = build_regnet(reg_cfg, root.fork("regnet").next_u64());

    std::vector<LabelMap> gts;
    gts.reserve(subjects.size());
    for (const auto& s : subjects) gts.push_back(s.labels);
    ckpt.atlas = atlas_init(gts, seg_cfg.num_classes, cfg.atlas_momentum);

    std::vector<VarPtr> all_params;
    for (const auto& p : ckpt.segnet->registry.params) all_params.push_back(p.var);
    for (const auto& p : ckpt.regnet->registry.params) all_params.push_back(p.var);
    Adam opt(all_params, cfg.lr);

    std::vector<size_t> order(subjects.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr * std::pow(0.5, static_cast<double>(epoch) / cfg.lr_half_life);
        opt.set_lr(lr);
        Rng erng = root.fork("epoch", static_cast<uint64_t>(epoch));
        erng.shuffle(order);

        TrainLogRow row;
        row.epoch = epoch;
        row.lr = lr;
        int steps = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(stop - start);
            opt.zero_grad();
            double batch_total = 0.0;
            for (size_t i = start; i < stop; ++i) {
                VarPtr total;
                SampleLosses l = train_step_losses(*ckpt.segnet, *ckpt.regnet, ckpt.atlas,
                                                   subjects[order[i]], cfg, inv_batch, &total);
                if (!std::isfinite(l.total))
                    throw DivergenceError("train_joint: non-finite loss at epoch " +
                                          std::to_string(epoch) + ", subject " +
                                          std::to_string(order[i]));
                backward(total);
                batch_total += l.total;
                row.supervised += l.supervised;
                row.bireg += l.bireg;
                row.smooth += l.smooth;
            }
            opt.step();
            row.total += batch_total;
            ++steps;
        }
        row.total /= std::max(1, steps);
        row.supervised /= static_cast<double>(subjects.size());
        row.bireg /= static_cast<double>(subjects.size());
        row.smooth /= static_cast<double>(subjects.size());

        // epoch-end atlas refresh: warp the ground-truth label maps into atlas
        // space with the current registration net and fold in their mean
        std::vector<Tensor> warped;
        warped.reserve(subjects.size());
        for (const auto& s : subjects) {
            const ProbMap oh = one_hot(s.labels, seg_cfg.num_classes);
            const DeformationField f = reg_forward(*ckpt.regnet, oh, ckpt.atlas);
            warped.push_back(warp_tensor(oh.probs, f));
        }
        ckpt.atlas = atlas_update(ckpt.atlas, warped);
        validate_atlas(ckpt.atlas);

        row.holdout_bireg = std::numeric_limits<double>::quiet_NaN();
        if (holdout) {
            const ProbMap hp = ckpt.segnet->forward(holdout->image, NormMode::Running);
            row.holdout_bireg = bireg_loss(hp, ckpt.atlas, *ckpt.regnet);
        }
        ckpt.curve.push_back(row);
    }
    ckpt.epochs_run = cfg.epochs;
    ckpt.stats = compute_source_stats(gts, seg_cfg.num_classes);
    return ckpt;
}

// ---------------------------------------------------------------------------
// checkpoint container (AACKPT1): JSON manifest plus named AAVOL1 blobs
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'A', 'A', 'C', 'K', 'P', 'T', '1', '\0'};

json stats_to_json(const SourceStats& st) {
    json j;
    j["class_ratio"] = st.class_ratio;
    json mm = json::array(), mt = json::array();
    for (const auto& m : st.moment_mean) mm.push_back({{"centroid", m.centroid}, {"second", m.second}});
    for (const auto& m : st.moment_tol) mt.push_back({{"centroid", m.centroid}, {"second", m.second}});
    j["moment_mean"] = mm;
    j["moment_tol"] = mt;
    return j;
}

SourceStats stats_from_json(const json& j) {
    SourceStats st;
    st.class_ratio = j.at("class_ratio").get<std::vector<double>>();
    for (const auto& m : j.at("moment_mean")) {
        SourceStats::ClassMoments cm;
        cm.centroid = m.at("centroid").get<std::array<double, 3>>();
        cm.second = m.at("second").get<std::array<double, 3>>();
        st.moment_mean.push_back(cm);
    }
    for (const auto& m : j.at("moment_tol")) {
        SourceStats::ClassMoments cm;
        cm.centroid = m.at("centroid").get<std::array<double, 3>>();
        cm.second = m.at("second").get<std::array<double, 3>>();
        st.moment_tol.push_back(cm);
    }
    return st;
}

void append_blob(std::string& out, const std::string& name, const Tensor& t) {
    const uint16_t len = static_cast<uint16_t>(name.size());
    out.append(reinterpret_cast<const char*>(&len), 2);
    out.append(name);
    // tensors of any rank ride in the volume container as {1,1,1,numel};
    // true shapes live in the manifest
    Tensor flat({1, 1, 1, static_cast<int>(t.numel())});
    flat.v = t.v;
    encode_tensor(out, flat);
}

std::pair<std::string, Tensor> read_blob(const std::string& buf, size_t& off) {
    if (off + 2 > buf.size()) throw std::runtime_error("checkpoint: truncated blob header");
    uint16_t len;
    std::memcpy(&len, buf.data() + off, 2);
    off += 2;
    if (off + len > buf.size()) throw std::runtime_error("checkpoint: truncated blob name");
    std::string name = buf.substr(off, len);
    off += len;
    Tensor flat = decode_tensor(buf, off);
    return {std::move(name), std::move(flat)};
}

json shape_json(const std::vector<int>& s) { return json(s); }

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json manifest;
    manifest["format"] = "AACKPT1";
    manifest["seg_cfg"] = {{"in_channels", ckpt.seg_cfg.in_channels},
                           {"num_classes", ckpt.seg_cfg.num_classes},
                           {"depth", ckpt.seg_cfg.depth},
                           {"base_channels", ckpt.seg_cfg.base_channels},
                           {"block_type", to_string(ckpt.seg_cfg.block_type)}};
    manifest["reg_cfg"] = {{"num_classes", ckpt.reg_cfg.num_classes},
                           {"depth", ckpt.reg_cfg.depth},
                           {"base_channels", ckpt.reg_cfg.base_channels},
                           {"displacement_scale", ckpt.reg_cfg.displacement_scale}};
    manifest["train_cfg"] = {{"epochs", ckpt.train_cfg.epochs},
                             {"batch_size", ckpt.train_cfg.batch_size},
                             {"lr", ckpt.train_cfg.lr},
                             {"lr_half_life", ckpt.train_cfg.lr_half_life},
                             {"lambda_smooth", ckpt.train_cfg.lambda_smooth},
                             {"lambda_bireg", ckpt.train_cfg.lambda_bireg},
                             {"atlas_momentum", ckpt.train_cfg.atlas_momentum},
                             {"seed", ckpt.train_cfg.seed}};
    manifest["epochs_run"] = ckpt.epochs_run;
    manifest["atlas_momentum"] = ckpt.atlas.momentum;
    manifest["source_stats"] = stats_to_json(ckpt.stats);
    json curve = json::array();
    for (const auto& r : ckpt.curve) {
        curve.push_back({{"epoch", r.epoch},
                         {"lr", r.lr},
                         {"total", r.total},
                         {"supervised", r.supervised},
                         {"bireg", r.bireg},
                         {"smooth", r.smooth},
                         {"holdout_bireg", std::isfinite(r.holdout_bireg)
                                               ? json(r.holdout_bireg)
                                               : json(nullptr)}});
    }
    manifest["curve"] = curve;

    std::string blobs;
    int n_blobs = 0;
    json shapes;
    auto add = [&](const std::string& name, const Tensor& t) {
        append_blob(blobs, name, t);
        shapes[name] = shape_json(t.shape);
        ++n_blobs;
    };
    for (const auto& p : ckpt.segnet->registry.params) add("seg." + p.name, p.var->val);
    for (const auto& s : ckpt.segnet->registry.state) add("seg." + s.name, *s.tensor);
    for (const auto& p : ckpt.regnet->registry.params) add("reg." + p.name, p.var->val);
    for (const auto& s : ckpt.regnet->registry.state) add("reg." + s.name, *s.tensor);
    add("atlas", ckpt.atlas.probs);
    manifest["tensor_shapes"] = shapes;

    const std::string mtext = manifest.dump(2);
    std::string out;
    out.append(kCkptMagic, 8);
    const uint32_t mlen = static_cast<uint32_t>(mtext.size());
    out.append(reinterpret_cast<const char*>(&mlen), 4);
    out.append(mtext);
    const uint32_t nb = static_cast<uint32_t>(n_blobs);
    out.append(reinterpret_cast<const char*>(&nb), 4);
    out.append(blobs);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("save_checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 16 || std::memcmp(buf.data(), kCkptMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: corrupt file (bad magic): " + path);
    size_t off = 8;
    uint32_t mlen;
    std::memcpy(&mlen, buf.data() + off, 4);
    off += 4;
    if (off + mlen > buf.size()) throw std::runtime_error("load_checkpoint: truncated manifest");
    json manifest;
    try {
        manifest = json::parse(buf.substr(off, mlen));
    } catch (const json::exception& e) {
        throw std::runtime_error("load_checkpoint: corrupt manifest: " + std::string(e.what()));
    }
    off += mlen;
    if (manifest.value("format", "") != std::string("AACKPT1"))
        throw std::runtime_error("load_checkpoint: version mismatch");

    Checkpoint ckpt;
    const json& sc = manifest.at("seg_cfg");
    ckpt.seg_cfg.in_channels = sc.at("in_channels");
    ckpt.seg_cfg.num_classes = sc.at("num_classes");
    ckpt.seg_cfg.depth = sc.at("depth");
    ckpt.seg_cfg.base_channels = sc.at("base_channels");
    const std::string bt = sc.at("block_type");
    ckpt.seg_cfg.block_type = bt == "dual_attention" ? BlockType::DualAttention
                              : bt == "norm_only"    ? BlockType::NormOnly
                                                     : BlockType::None;
    const json& rc = manifest.at("reg_cfg");
    ckpt.reg_cfg.num_classes = rc.at("num_classes");
    ckpt.reg_cfg.depth = rc.at("depth");
    ckpt.reg_cfg.base_channels = rc.at("base_channels");
    ckpt.reg_cfg.displacement_scale = rc.at("displacement_scale");
    const json& tc = manifest.at("train_cfg");
    ckpt.train_cfg.epochs = tc.at("epochs");
    ckpt.train_cfg.batch_size = tc.at("batch_size");
    ckpt.train_cfg.lr = tc.at("lr");
    ckpt.train_cfg.lr_half_life = tc.at("lr_half_life");
    ckpt.train_cfg.lambda_smooth = tc.at("lambda_smooth");
    ckpt.train_cfg.lambda_bireg = tc.at("lambda_bireg");
    ckpt.train_cfg.atlas_momentum = tc.at("atlas_momentum");
    ckpt.train_cfg.seed = tc.at("seed");
    ckpt.epochs_run = manifest.at("epochs_run");
    ckpt.stats = stats_from_json(manifest.at("source_stats"));
    for (const auto& r : manifest.at("curve")) {
        TrainLogRow row;
        row.epoch = r.at("epoch");
        row.lr = r.at("lr");
        row.total = r.at("total");
        row.supervised = r.at("supervised");
        row.bireg = r.at("bireg");
        row.smooth = r.at("smooth");
        row.holdout_bireg = r.at("holdout_bireg").is_null()
                                ? std::numeric_limits<double>::quiet_NaN()
                                : r.at("holdout_bireg").get<double>();
        ckpt.curve.push_back(row);
    }

    ckpt.segnet = build_segnet(ckpt.seg_cfg, 0);
    ckpt.regnet = build_regnet(ckpt.reg_cfg, 0);

    uint32_t n_blobs;
    std::memcpy(&n_blobs, buf.data() + off, 4);
    off += 4;
    const json& shapes = manifest.at("tensor_shapes");
    auto reshape_from_manifest = [&](const std::string& name, Tensor flat) {
        const std::vector<int> shape = shapes.at(name).get<std::vector<int>>();
        Tensor t(shape);
        if (t.numel() != flat.numel())
            throw std::runtime_error("load_checkpoint: blob size mismatch for " + name);
        t.v = std::move(flat.v);
        return t;
    };
    auto assign = [&](ParamRegistry& reg, const std::string& prefix, const std::string& name,
                      Tensor t) {
        const std::string local = name.substr(prefix.size());
        for (auto& p : reg.params)
            if (p.name == local) {
                if (p.var->val.shape != t.shape)
                    throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
                p.var->val = std::move(t);
                return;
            }
        for (auto& s : reg.state)
            if (s.name == local) {
                *s.tensor = std::move(t);
                return;
            }
        throw std::runtime_error("load_checkpoint: unknown tensor " + name);
    };
    bool atlas_seen = false;
    for (uint32_t i = 0; i < n_blobs; ++i) {
        auto [name, flat] = read_blob(buf, off);
        Tensor t = reshape_from_manifest(name, std::move(flat));
        if (name.rfind("seg.", 0) == 0) {
            assign(ckpt.segnet->registry, "seg.", name, std::move(t));
        } else if (name.rfind("reg.", 0) == 0) {
            assign(ckpt.regnet->registry, "reg.", name, std::move(t));
        } else if (name == "atlas") {
            ckpt.atlas.probs = std::move(t);
            atlas_seen = true;
        } else {
            throw std::runtime_error("load_checkpoint: unexpected blob " + name);
        }
    }
    if (!atlas_seen) throw std::runtime_error("load_checkpoint: atlas missing");
    ckpt.atlas.momentum = manifest.at("atlas_momentum");
    return ckpt;
}

}  // namespace adaatlas
