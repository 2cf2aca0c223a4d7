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

#include "adaatlas/registration.hpp"

#include <cmath>

#include "adaatlas/kernels.hpp"

namespace adaatlas {

DeformationField DeformationField::identity(int h, int w, int d) {
    DeformationField f;
    f.affine = Tensor({3, 4});
    f.affine.v[0] = f.affine.v[5] = f.affine.v[10] = 1.0;
    f.displacement = Tensor({3, h, w, d});
    return f;
}

bool DeformationField::is_identity(double tol) const {
    DeformationField id = identity(displacement.dim(1), displacement.dim(2), displacement.dim(3));
    for (int i = 0; i < 12; ++i)
        if (std::fabs(affine[i] - id.affine[i]) > tol) return false;
    for (int64_t i = 0; i < displacement.numel(); ++i)
        if (std::fabs(displacement[i]) > tol) return false;
    return true;
}

namespace {

std::unique_ptr<ConvBlock> make_reg_block(int c_in, int c_out, Rng rng) {
    auto blk = std::make_unique<ConvBlock>();
    blk->conv.W = make_param(conv_weight_init(c_out, c_in, 3, rng));
    blk->conv.b = make_param(Tensor({c_out}));
    blk->norm.gamma = make_param(Tensor({c_out}, 1.0));
    blk->norm.beta = make_param(Tensor({c_out}));
    blk->norm.run_mu = Tensor({c_out});
    blk->norm.run_var = Tensor({c_out}, 1.0);
    return blk;
}

}  // namespace

std::unique_ptr<RegNet> build_regnet(const RegNetConfig& cfg, uint64_t seed) {
    if (cfg.depth < 2 || cfg.base_channels < 2 || cfg.num_classes < 2 ||
        cfg.displacement_scale <= 0.0)
        throw std::invalid_argument("build_regnet: invalid configuration");
    auto net = std::make_unique<RegNet>();
    net->cfg = cfg;
    Rng root(seed);
    for (int i = 0; i < cfg.depth - 1; ++i) {
        const int c_in = i == 0 ? cfg.in_channels() : cfg.base_channels << (i - 1);
        const int c_out = cfg.base_channels << i;
        net->enc.push_back(make_reg_block(c_in, c_out, root.fork("enc", static_cast<uint64_t>(i))));
    }
    {
        const int c_in = cfg.base_channels << (cfg.depth - 2);
        const int c_out = cfg.base_channels << (cfg.depth - 1);
        net->bottleneck = make_reg_block(c_in, c_out, root.fork("bott"));
    }
    for (int i = cfg.depth - 2; i >= 0; --i) {
        const int c_in = (cfg.base_channels << (i + 1)) + (cfg.base_channels << i);
        const int c_out = cfg.base_channels << i;
        net->dec.push_back(make_reg_block(c_in, c_out, root.fork("dec", static_cast<uint64_t>(i))));
    }
    // both heads start at zero so the fresh network emits the identity map
    net->affine_W = make_param(Tensor({12, cfg.base_channels << (cfg.depth - 1)}));
    net->affine_b = make_param(Tensor({12}));
    net->disp_head.W = make_param(Tensor({3, cfg.base_channels, 1, 1, 1}));
    net->disp_head.b = make_param(Tensor({3}));

    for (size_t i = 0; i < net->enc.size(); ++i) {
        register_conv(net->registry, "enc" + std::to_string(i) + ".conv", net->enc[i]->conv);
        register_norm(net->registry, "enc" + std::to_string(i) + ".norm", net->enc[i]->norm);
    }
    register_conv(net->registry, "bott.conv", net->bottleneck->conv);
    register_norm(net->registry, "bott.norm", net->bottleneck->norm);
    for (size_t i = 0; i < net->dec.size(); ++i) {
        const int level = cfg.depth - 2 - static_cast<int>(i);
        register_conv(net->registry, "dec" + std::to_string(level) + ".conv", net->dec[i]->conv);
        register_norm(net->registry, "dec" + std::to_string(level) + ".norm", net->dec[i]->norm);
    }
    net->registry.add("affine.W", ParamKind::ConvWeight, net->affine_W);
    net->registry.add("affine.b", ParamKind::ConvBias, net->affine_b);
    register_conv(net->registry, "disp", net->disp_head);
    return net;
}

std::unique_ptr<RegNet> clone_regnet(const RegNet& net) {
    auto copy = build_regnet(net.cfg, 0);
    copy_params_and_state(net.registry, copy->registry);
    return copy;
}

FieldVar reg_forward_var(RegNet& net, const VarPtr& moving, const VarPtr& fixed, NormMode mode) {
    if (!same_shape(moving->val, fixed->val))
        throw std::invalid_argument("reg_forward: moving/fixed shape mismatch " +
                                    shape_str(moving->val.shape) + " vs " +
                                    shape_str(fixed->val.shape));
    if (moving->val.dim(0) != net.cfg.num_classes)
        throw std::invalid_argument("reg_forward: class count mismatch");
    const int div = 1 << net.cfg.depth;  // half-res front plus depth-1 poolings
    for (int a = 1; a <= 3; ++a)
        if (moving->val.dim(a) % div != 0)
            throw std::invalid_argument("reg_forward: spatial extent " +
                                        std::to_string(moving->val.dim(a)) +
                                        " not divisible by " + std::to_string(div));

    VarPtr h = avgpool2(concat_ch(moving, fixed));
    std::vector<VarPtr> skips;
    for (auto& blk : net.enc) {
        h = blk->forward(h, mode);
        skips.push_back(h);
        h = avgpool2(h);
    }
    h = net.bottleneck->forward(h, mode);

    VarPtr aff_vec = fc(net.affine_W, global_avgpool(h), net.affine_b);
    Tensor id({3, 4});
    id.v[0] = id.v[5] = id.v[10] = 1.0;
    VarPtr affine = add(make_const(id), reshape(aff_vec, {3, 4}));

    for (size_t i = 0; i < net.dec.size(); ++i) {
        h = upsample2(h);
        h = concat_ch(h, skips[skips.size() - 1 - i]);
        h = net.dec[i]->forward(h, mode);
    }
    VarPtr disp_half = scale(tanh_v(conv3d(h, net.disp_head.W, net.disp_head.b)),
                             net.cfg.displacement_scale);
    return FieldVar{affine, upsample2(disp_half)};
}

DeformationField reg_forward(RegNet& net, const ProbMap& moving, const Atlas& fixed) {
    FieldVar f =
        reg_forward_var(net, make_const(moving.probs), make_const(fixed.probs), NormMode::Running);
    return DeformationField{std::move(f.affine->val), std::move(f.disp->val)};
}

VarPtr warp_var(const VarPtr& moving, const FieldVar& field) {
    return grid_sample(moving, field.affine, field.disp);
}

Tensor warp_tensor(const Tensor& moving, const DeformationField& field) {
    Tensor out;
    kernels::grid_sample_forward(moving, field.affine, field.displacement, out);
    return out;
}

ProbMap warp(const ProbMap& moving, const DeformationField& field) {
    ProbMap out{warp_tensor(moving.probs, field)};
    validate_probmap(out);
    return out;
}

VarPtr smoothness_penalty_var(const VarPtr& disp) {
    const Tensor& u = disp->val;
    if (u.rank() != 4 || u.dim(0) != 3)
        throw std::invalid_argument("smoothness_penalty: expected {3,H,W,D} displacement");
    const int H = u.dim(1), W = u.dim(2), D = u.dim(3);
    const int64_t n_diff = 3LL * (static_cast<int64_t>(H - 1) * W * D +
                                  static_cast<int64_t>(H) * (W - 1) * D +
                                  static_cast<int64_t>(H) * W * (D - 1));
    if (n_diff == 0) return make_const(Tensor::scalar(0.0));
    double acc = 0.0;
    for (int k = 0; k < 3; ++k) {
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                for (int d = 0; d < D; ++d) {
                    const double c = u.at4(k, h, w, d);
                    if (h + 1 < H) {
                        const double df = u.at4(k, h + 1, w, d) - c;
                        acc += df * df;
                    }
                    if (w + 1 < W) {
                        const double df = u.at4(k, h, w + 1, d) - c;
                        acc += df * df;
                    }
                    if (d + 1 < D) {
                        const double df = u.at4(k, h, w, d + 1) - c;
                        acc += df * df;
                    }
                }
    }
    const double norm = 1.0 / static_cast<double>(n_diff);
    return make_node(Tensor::scalar(acc * norm), {disp}, [disp, H, W, D, norm](Var& self) {
        if (!disp->requires_grad) return;
        const Tensor& u = disp->val;
        Tensor g(u.shape);
        const double s = 2.0 * norm * self.grad[0];
        for (int k = 0; k < 3; ++k)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    for (int d = 0; d < D; ++d) {
                        const double c = u.at4(k, h, w, d);
                        if (h + 1 < H) {
                            const double df = u.at4(k, h + 1, w, d) - c;
                            g.at4(k, h + 1, w, d) += s * df;
                            g.at4(k, h, w, d) -= s * df;
                        }
                        if (w + 1 < W) {
                            const double df = u.at4(k, h, w + 1, d) - c;
                            g.at4(k, h, w + 1, d) += s * df;
                            g.at4(k, h, w, d) -= s * df;
                        }
                        if (d + 1 < D) {
                            const double df = u.at4(k, h, w, d + 1) - c;
                            g.at4(k, h, w, d + 1) += s * df;
                            g.at4(k, h, w, d) -= s * df;
                        }
                    }
        accumulate_grad(disp, g);
    });
}

double smoothness_penalty(const DeformationField& field) {
    if (!all_finite(field.displacement) || !all_finite(field.affine))
        throw std::invalid_argument("smoothness_penalty: non-finite field");
    return smoothness_penalty_var(make_const(field.displacement))->val[0];
}

}  // namespace adaatlas
