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

#include "adaatlas/losses.hpp"

#include <cmath>

namespace adaatlas {

namespace {

constexpr double kNormFloor = 1e-12;  // voxels with degenerate norms score cos = 0
constexpr double kDiceEps = 1e-6;
constexpr double kLogClip = 1e-12;
constexpr double kRatioClip = 1e-8;
constexpr double kMassEps = 1e-8;

inline double norm_coord_axis(int i, int n) { return n > 1 ? -1.0 + 2.0 * i / (n - 1) : 0.0; }

void check_same_4d(const Tensor& a, const Tensor& b, const char* what) {
    if (a.rank() != 4 || !same_shape(a, b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

}  // namespace

// ---------------------------------------------------------------------------
// atlas loss (cosine similarity in atlas space)
// ---------------------------------------------------------------------------

VarPtr atlas_loss_var(const VarPtr& warped, const VarPtr& atlas) {
    check_same_4d(warped->val, atlas->val, "atlas_loss");
    const int C = warped->val.dim(0);
    const int64_t vol = warped->val.numel() / C;
    const Tensor& u = warped->val;
    const Tensor& w = atlas->val;
    double acc = 0.0;
    for (int64_t v = 0; v < vol; ++v) {
        double dot = 0.0, nu = 0.0, nw = 0.0;
        for (int c = 0; c < C; ++c) {
            const double a = u[c * vol + v], b = w[c * vol + v];
            dot += a * b;
            nu += a * a;
            nw += b * b;
        }
        nu = std::sqrt(nu);
        nw = std::sqrt(nw);
        if (nu >= kNormFloor && nw >= kNormFloor) acc += dot / (nu * nw);
    }
    const double loss = 1.0 - acc / static_cast<double>(vol);
    return make_node(Tensor::scalar(loss), {warped, atlas}, [warped, atlas, C, vol](Var& self) {
        if (!warped->requires_grad) return;
        const Tensor& u = warped->val;
        const Tensor& w = atlas->val;
        Tensor g(u.shape);
        const double s = -self.grad[0] / static_cast<double>(vol);
        for (int64_t v = 0; v < vol; ++v) {
            double dot = 0.0, nu2 = 0.0, nw2 = 0.0;
            for (int c = 0; c < C; ++c) {
                const double a = u[c * vol + v], b = w[c * vol + v];
                dot += a * b;
                nu2 += a * a;
                nw2 += b * b;
            }
            const double nu = std::sqrt(nu2), nw = std::sqrt(nw2);
            if (nu < kNormFloor || nw < kNormFloor) continue;
            const double inv = 1.0 / (nu * nw);
            const double cos_v = dot * inv;
            for (int c = 0; c < C; ++c) {
                const double a = u[c * vol + v], b = w[c * vol + v];
                g[c * vol + v] = s * (b * inv - cos_v * a / nu2);
            }
        }
        accumulate_grad(warped, g);
    });
}

double atlas_loss(const ProbMap& warped, const Atlas& atlas) {
    return atlas_loss_var(make_const(warped.probs), make_const(atlas.probs))->val[0];
}

// ---------------------------------------------------------------------------
// soft Dice
// ---------------------------------------------------------------------------

VarPtr soft_dice_loss_var(const VarPtr& a, const VarPtr& b) {
    check_same_4d(a->val, b->val, "soft_dice");
    const int C = a->val.dim(0);
    const int64_t vol = a->val.numel() / C;
    std::vector<double> num(static_cast<size_t>(C)), den(static_cast<size_t>(C));
    double mean_dice = 0.0;
    for (int c = 0; c < C; ++c) {
        double ab = 0.0, aa = 0.0, bb = 0.0;
        for (int64_t v = 0; v < vol; ++v) {
            const double x = a->val[c * vol + v], y = b->val[c * vol + v];
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        num[static_cast<size_t>(c)] = 2.0 * ab;
        den[static_cast<size_t>(c)] = aa + bb + kDiceEps;
        mean_dice += num[static_cast<size_t>(c)] / den[static_cast<size_t>(c)];
    }
    mean_dice /= static_cast<double>(C);
    return make_node(
        Tensor::scalar(1.0 - mean_dice), {a, b}, [a, b, C, vol, num, den](Var& self) {
            const double s = -self.grad[0] / static_cast<double>(C);
            for (int side = 0; side < 2; ++side) {
                const VarPtr& t = side == 0 ? a : b;
                const VarPtr& o = side == 0 ? b : a;
                if (!t->requires_grad) continue;
                Tensor g(t->val.shape);
                for (int c = 0; c < C; ++c) {
                    const double n = num[static_cast<size_t>(c)], d = den[static_cast<size_t>(c)];
                    const double inv_d = 1.0 / d;
                    for (int64_t v = 0; v < vol; ++v) {
                        const double x = t->val[c * vol + v], y = o->val[c * vol + v];
                        // d(n/d)/dx = (2y*d - n*2x) / d^2
                        g[c * vol + v] = s * (2.0 * y - n * inv_d * 2.0 * x) * inv_d;
                    }
                }
                accumulate_grad(t, g);
            }
        });
}

double reg_loss(const ProbMap& a, const ProbMap& b) {
    return soft_dice_loss_var(make_const(a.probs), make_const(b.probs))->val[0];
}

double bireg_loss(const ProbMap& pred, const Atlas& atlas, RegNet& net) {
    VarPtr p = make_const(pred.probs);
    VarPtr a = make_const(atlas.probs);
    FieldVar fwd = reg_forward_var(net, p, a, NormMode::Running);   // i -> a
    FieldVar bwd = reg_forward_var(net, a, p, NormMode::Running);   // a -> i
    const double term_subject = soft_dice_loss_var(p, warp_var(a, bwd))->val[0];
    const double term_atlas = soft_dice_loss_var(a, warp_var(p, fwd))->val[0];
    return term_subject + term_atlas;
}

// ---------------------------------------------------------------------------
// supervised loss
// ---------------------------------------------------------------------------

VarPtr supervised_loss_var(const VarPtr& pred, const LabelMap& gt) {
    const int C = pred->val.dim(0);
    const int64_t vol = pred->val.numel() / C;
    if (gt.numel() != vol || pred->val.dim(1) != gt.shape[0] || pred->val.dim(2) != gt.shape[1] ||
        pred->val.dim(3) != gt.shape[2])
        throw std::invalid_argument("supervised_loss: prediction/label shape mismatch");
    for (int64_t v = 0; v < vol; ++v) {
        const int32_t l = gt.labels[static_cast<size_t>(v)];
        if (l < 0 || l >= C) throw std::invalid_argument("supervised_loss: invalid label");
    }
    double ce = 0.0;
    for (int64_t v = 0; v < vol; ++v) {
        const int32_t l = gt.labels[static_cast<size_t>(v)];
        ce -= std::log(std::max(pred->val[l * vol + v], kLogClip));
    }
    ce /= static_cast<double>(vol);
    VarPtr ce_node =
        make_node(Tensor::scalar(ce), {pred}, [pred, gt = gt, vol](Var& self) {
            Tensor g(pred->val.shape);
            const double s = -self.grad[0] / static_cast<double>(vol);
            for (int64_t v = 0; v < vol; ++v) {
                const int32_t l = gt.labels[static_cast<size_t>(v)];
                const double p = pred->val[l * vol + v];
                if (p > kLogClip) g[l * vol + v] = s / p;
            }
            accumulate_grad(pred, g);
        });
    VarPtr oh = make_const(one_hot(gt, C).probs);
    return add(ce_node, soft_dice_loss_var(pred, oh));
}

double supervised_loss(const ProbMap& pred, const LabelMap& gt) {
    return supervised_loss_var(make_const(pred.probs), gt)->val[0];
}

// ---------------------------------------------------------------------------
// entropy / filtered entropy
// ---------------------------------------------------------------------------

namespace {

inline double voxel_entropy(const Tensor& p, int C, int64_t vol, int64_t v) {
    double e = 0.0;
    for (int c = 0; c < C; ++c) {
        const double x = p[c * vol + v];
        if (x > 0.0) e -= x * std::log(std::max(x, kLogClip));
    }
    return e;
}

}  // namespace

VarPtr eata_loss_var(const VarPtr& pred, double e0) {
    if (!(e0 > 0.0)) throw std::invalid_argument("eata_loss: threshold must be positive");
    const int C = pred->val.dim(0);
    const int64_t vol = pred->val.numel() / C;
    double acc = 0.0;
    int64_t count = 0;
    std::vector<char> mask(static_cast<size_t>(vol), 0);
    for (int64_t v = 0; v < vol; ++v) {
        const double e = voxel_entropy(pred->val, C, vol, v);
        if (e < e0) {
            mask[static_cast<size_t>(v)] = 1;
            acc += e;
            ++count;
        }
    }
    const double loss = count == 0 ? 0.0 : acc / static_cast<double>(count);
    // the reliability mask is treated as a constant during backprop
    return make_node(Tensor::scalar(loss), {pred}, [pred, C, vol, mask, count](Var& self) {
        if (count == 0) return;
        Tensor g(pred->val.shape);
        const double s = self.grad[0] / static_cast<double>(count);
        for (int64_t v = 0; v < vol; ++v) {
            if (!mask[static_cast<size_t>(v)]) continue;
            for (int c = 0; c < C; ++c) {
                const double x = pred->val[c * vol + v];
                if (x > kLogClip) g[c * vol + v] = -s * (std::log(x) + 1.0);
            }
        }
        accumulate_grad(pred, g);
    });
}

VarPtr entropy_loss_var(const VarPtr& pred) {
    // entropy is filtered entropy with an unreachable threshold: every voxel
    // entropy is below ln C + 1, so the two reductions agree term for term
    const int C = pred->val.dim(0);
    return eata_loss_var(pred, std::log(static_cast<double>(C)) + 1.0);
}

double entropy_loss(const ProbMap& pred) { return entropy_loss_var(make_const(pred.probs))->val[0]; }

double eata_loss(const ProbMap& pred, double e0) {
    return eata_loss_var(make_const(pred.probs), e0)->val[0];
}

// ---------------------------------------------------------------------------
// class-ratio prior (KL)
// ---------------------------------------------------------------------------

VarPtr class_ratio_loss_var(const VarPtr& pred, const std::vector<double>& tau) {
    const int C = pred->val.dim(0);
    if (static_cast<int>(tau.size()) != C)
        throw std::invalid_argument("class_ratio_loss: prior size mismatch");
    const int64_t vol = pred->val.numel() / C;
    std::vector<double> rho(static_cast<size_t>(C), 0.0);
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int64_t v = 0; v < vol; ++v) acc += pred->val[c * vol + v];
        rho[static_cast<size_t>(c)] = std::max(acc / static_cast<double>(vol), kRatioClip);
    }
    double loss = 0.0;
    for (int c = 0; c < C; ++c) {
        const double t = tau[static_cast<size_t>(c)];
        if (t > 0.0) loss += t * (std::log(t) - std::log(rho[static_cast<size_t>(c)]));
    }
    return make_node(Tensor::scalar(loss), {pred}, [pred, tau, rho, C, vol](Var& self) {
        Tensor g(pred->val.shape);
        for (int c = 0; c < C; ++c) {
            const double t = tau[static_cast<size_t>(c)];
            if (t <= 0.0) continue;
            if (rho[static_cast<size_t>(c)] <= kRatioClip) continue;  // clipped: zero gradient
            const double d = -self.grad[0] * t /
                             (rho[static_cast<size_t>(c)] * static_cast<double>(vol));
            for (int64_t v = 0; v < vol; ++v) g[c * vol + v] = d;
        }
        accumulate_grad(pred, g);
    });
}

double class_ratio_loss(const ProbMap& pred, const SourceStats& stats) {
    return class_ratio_loss_var(make_const(pred.probs), stats.class_ratio)->val[0];
}

// ---------------------------------------------------------------------------
// shape moments
// ---------------------------------------------------------------------------

SoftMoments soft_moments(const Tensor& probs, int cls) {
    const int C = probs.dim(0);
    const int H = probs.dim(1), W = probs.dim(2), D = probs.dim(3);
    const int64_t vol = static_cast<int64_t>(H) * W * D;
    const double* p = probs.v.data() + cls * vol;
    (void)C;
    SoftMoments m{kMassEps, {0, 0, 0}, {0, 0, 0}};
    double sx[3] = {0, 0, 0};
    double mass = 0.0;
    int64_t v = 0;
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int d = 0; d < D; ++d, ++v) {
                const double x = p[v];
                mass += x;
                sx[0] += x * norm_coord_axis(h, H);
                sx[1] += x * norm_coord_axis(w, W);
                sx[2] += x * norm_coord_axis(d, D);
            }
    m.mass = mass + kMassEps;
    for (int a = 0; a < 3; ++a) m.centroid[static_cast<size_t>(a)] = sx[a] / m.mass;
    double s2[3] = {0, 0, 0};
    v = 0;
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int d = 0; d < D; ++d, ++v) {
                const double x = p[v];
                const double dz = norm_coord_axis(h, H) - m.centroid[0];
                const double dy = norm_coord_axis(w, W) - m.centroid[1];
                const double dx = norm_coord_axis(d, D) - m.centroid[2];
                s2[0] += x * dz * dz;
                s2[1] += x * dy * dy;
                s2[2] += x * dx * dx;
            }
    for (int a = 0; a < 3; ++a) m.second[static_cast<size_t>(a)] = s2[a] / m.mass;
    return m;
}

VarPtr shape_moment_loss_var(const VarPtr& pred, const SourceStats& stats) {
    const int C = pred->val.dim(0);
    if (static_cast<int>(stats.moment_mean.size()) != C ||
        static_cast<int>(stats.moment_tol.size()) != C)
        throw std::invalid_argument("shape_moment_loss: prior size mismatch");
    const int H = pred->val.dim(1), W = pred->val.dim(2), D = pred->val.dim(3);
    const int64_t vol = static_cast<int64_t>(H) * W * D;

    std::vector<SoftMoments> mom(static_cast<size_t>(C));
    double loss = 0.0;
    std::vector<std::array<double, 6>> dstat(static_cast<size_t>(C), {0, 0, 0, 0, 0, 0});
    for (int c = 1; c < C; ++c) {
        mom[static_cast<size_t>(c)] = soft_moments(pred->val, c);
        const auto& m = mom[static_cast<size_t>(c)];
        const auto& mean = stats.moment_mean[static_cast<size_t>(c)];
        const auto& tol = stats.moment_tol[static_cast<size_t>(c)];
        for (int j = 0; j < 6; ++j) {
            const double s = j < 3 ? m.centroid[static_cast<size_t>(j)]
                                   : m.second[static_cast<size_t>(j - 3)];
            const double pr = j < 3 ? mean.centroid[static_cast<size_t>(j)]
                                    : mean.second[static_cast<size_t>(j - 3)];
            const double t = j < 3 ? tol.centroid[static_cast<size_t>(j)]
                                   : tol.second[static_cast<size_t>(j - 3)];
            const double dev = s - pr;
            const double h = std::max(0.0, std::fabs(dev) - t);
            loss += h * h / 6.0;
            dstat[static_cast<size_t>(c)][static_cast<size_t>(j)] =
                h > 0.0 ? (dev > 0 ? 1.0 : -1.0) * 2.0 * h / 6.0 : 0.0;
        }
    }
    return make_node(
        Tensor::scalar(loss), {pred}, [pred, C, H, W, D, vol, mom, dstat](Var& self) {
            Tensor g(pred->val.shape);
            for (int c = 1; c < C; ++c) {
                const auto& m = mom[static_cast<size_t>(c)];
                const auto& ds = dstat[static_cast<size_t>(c)];
                bool any = false;
                for (int j = 0; j < 6; ++j) any = any || ds[static_cast<size_t>(j)] != 0.0;
                if (!any) continue;
                // exact residual of sum p (x - mu): the mass guard makes it mu*eps
                double resid[3];
                for (int a = 0; a < 3; ++a)
                    resid[a] = m.centroid[static_cast<size_t>(a)] * kMassEps;
                int64_t v = 0;
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        for (int d = 0; d < D; ++d, ++v) {
                            const double coord[3] = {norm_coord_axis(h, H), norm_coord_axis(w, W),
                                                     norm_coord_axis(d, D)};
                            double acc = 0.0;
                            for (int a = 0; a < 3; ++a) {
                                const double dc = coord[a] - m.centroid[static_cast<size_t>(a)];
                                const double dmu = dc / m.mass;
                                acc += ds[static_cast<size_t>(a)] * dmu;
                                const double dsec =
                                    (dc * dc - m.second[static_cast<size_t>(a)]) / m.mass -
                                    2.0 * dmu * resid[a] / m.mass;
                                acc += ds[static_cast<size_t>(a + 3)] * dsec;
                            }
                            g[c * vol + v] += self.grad[0] * acc;
                        }
            }
            accumulate_grad(pred, g);
        });
}

double shape_moment_loss(const ProbMap& pred, const SourceStats& stats) {
    return shape_moment_loss_var(make_const(pred.probs), stats)->val[0];
}

// ---------------------------------------------------------------------------
// source statistics
// ---------------------------------------------------------------------------

SourceStats compute_source_stats(const std::vector<LabelMap>& gts, int num_classes) {
    if (gts.empty()) throw std::invalid_argument("compute_source_stats: no subjects");
    SourceStats st;
    st.class_ratio.assign(static_cast<size_t>(num_classes), 0.0);
    st.moment_mean.assign(static_cast<size_t>(num_classes), {});
    st.moment_tol.assign(static_cast<size_t>(num_classes), {});

    const double n = static_cast<double>(gts.size());
    std::vector<std::vector<std::array<double, 6>>> per_subject(
        static_cast<size_t>(num_classes));
    for (const auto& gt : gts) {
        const ProbMap oh = one_hot(gt, num_classes);
        const int64_t vol = gt.numel();
        for (int c = 0; c < num_classes; ++c) {
            double cnt = 0.0;
            for (int64_t v = 0; v < vol; ++v) cnt += oh.probs[c * vol + v];
            st.class_ratio[static_cast<size_t>(c)] += cnt / static_cast<double>(vol) / n;
            if (c >= 1) {
                const SoftMoments m = soft_moments(oh.probs, c);
                per_subject[static_cast<size_t>(c)].push_back(
                    {m.centroid[0], m.centroid[1], m.centroid[2], m.second[0], m.second[1],
                     m.second[2]});
            }
        }
    }
    for (int c = 1; c < num_classes; ++c) {
        const auto& rows = per_subject[static_cast<size_t>(c)];
        std::array<double, 6> mean{}, var{};
        for (const auto& r : rows)
            for (int j = 0; j < 6; ++j) mean[static_cast<size_t>(j)] += r[static_cast<size_t>(j)] / n;
        for (const auto& r : rows)
            for (int j = 0; j < 6; ++j) {
                const double d = r[static_cast<size_t>(j)] - mean[static_cast<size_t>(j)];
                var[static_cast<size_t>(j)] += d * d / n;
            }
        auto& mm = st.moment_mean[static_cast<size_t>(c)];
        auto& mt = st.moment_tol[static_cast<size_t>(c)];
        for (int j = 0; j < 3; ++j) {
            mm.centroid[static_cast<size_t>(j)] = mean[static_cast<size_t>(j)];
            mm.second[static_cast<size_t>(j)] = mean[static_cast<size_t>(j + 3)];
            mt.centroid[static_cast<size_t>(j)] =
                std::max(std::sqrt(var[static_cast<size_t>(j)]), 1e-3);
            mt.second[static_cast<size_t>(j)] =
                std::max(std::sqrt(var[static_cast<size_t>(j + 3)]), 1e-3);
        }
    }
    return st;
}

}  // namespace adaatlas
