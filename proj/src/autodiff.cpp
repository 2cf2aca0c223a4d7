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

#include "adaatlas/autodiff.hpp"

#include <cmath>
#include <unordered_set>

#include "adaatlas/kernels.hpp"

namespace adaatlas {

namespace k = kernels;

VarPtr make_const(Tensor t) {
    auto v = std::make_shared<Var>();
    v->val = std::move(t);
    return v;
}

VarPtr make_param(Tensor t) {
    auto v = make_const(std::move(t));
    v->requires_grad = true;
    return v;
}

VarPtr make_node(Tensor val, std::vector<VarPtr> parents, std::function<void(Var&)> fn) {
    auto v = std::make_shared<Var>();
    v->val = std::move(val);
    v->parents = std::move(parents);
    for (const auto& p : v->parents)
        if (p->requires_grad) v->requires_grad = true;
    if (v->requires_grad) v->backward_fn = std::move(fn);
    return v;
}

Tensor& ensure_grad(Var& v) {
    if (v.grad.shape != v.val.shape) v.grad = Tensor(v.val.shape);
    return v.grad;
}

void accumulate_grad(const VarPtr& p, const Tensor& g) {
    if (!p->requires_grad) return;
    Tensor& dst = ensure_grad(*p);
    const int64_t n = dst.numel();
    for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

void zero_grad(const VarPtr& p) { p->grad = Tensor(); }

void backward(const VarPtr& root) {
    if (root->val.numel() != 1) throw std::logic_error("backward: root must be scalar");
    // iterative post-order DFS for the topological order
    std::vector<Var*> order;
    std::unordered_set<Var*> seen;
    std::vector<std::pair<VarPtr, size_t>> stack;
    stack.push_back({root, 0});
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx == 0 && seen.count(node.get())) {
            stack.pop_back();
            continue;
        }
        if (idx < node->parents.size()) {
            const VarPtr& next = node->parents[idx++];
            if (!seen.count(next.get()) && next->requires_grad) stack.push_back({next, 0});
        } else {
            seen.insert(node.get());
            order.push_back(node.get());
            stack.pop_back();
        }
    }
    ensure_grad(*root);
    root->grad.v[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Var* v = *it;
        if (v->backward_fn && v->requires_grad) {
            if (v->grad.shape != v->val.shape) ensure_grad(*v);
            v->backward_fn(*v);
        }
    }
}

// ---------------------------------------------------------------------------

VarPtr add(const VarPtr& a, const VarPtr& b) {
    if (!same_shape(a->val, b->val)) throw std::invalid_argument("add: shape mismatch");
    Tensor out(a->val.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] + b->val[i];
    return make_node(std::move(out), {a, b}, [a, b](Var& self) {
        accumulate_grad(a, self.grad);
        accumulate_grad(b, self.grad);
    });
}

VarPtr sub(const VarPtr& a, const VarPtr& b) {
    if (!same_shape(a->val, b->val)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out(a->val.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] - b->val[i];
    return make_node(std::move(out), {a, b}, [a, b](Var& self) {
        accumulate_grad(a, self.grad);
        if (b->requires_grad) {
            Tensor neg(self.grad.shape);
            for (int64_t i = 0; i < neg.numel(); ++i) neg[i] = -self.grad[i];
            accumulate_grad(b, neg);
        }
    });
}

VarPtr mul(const VarPtr& a, const VarPtr& b) {
    if (!same_shape(a->val, b->val)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out(a->val.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] * b->val[i];
    return make_node(std::move(out), {a, b}, [a, b](Var& self) {
        if (a->requires_grad) {
            Tensor g(self.grad.shape);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * b->val[i];
            accumulate_grad(a, g);
        }
        if (b->requires_grad) {
            Tensor g(self.grad.shape);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * a->val[i];
            accumulate_grad(b, g);
        }
    });
}

VarPtr scale(const VarPtr& a, double kf) {
    Tensor out(a->val.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] * kf;
    return make_node(std::move(out), {a}, [a, kf](Var& self) {
        Tensor g(self.grad.shape);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * kf;
        accumulate_grad(a, g);
    });
}

VarPtr relu(const VarPtr& a) {
    Tensor out;
    k::relu_forward(a->val, out);
    return make_node(std::move(out), {a}, [a](Var& self) {
        Tensor g;
        k::relu_backward(self.grad, a->val, g);
        accumulate_grad(a, g);
    });
}

VarPtr sigmoid(const VarPtr& a) {
    Tensor out;
    k::sigmoid_forward(a->val, out);
    auto node = make_node(std::move(out), {a}, nullptr);
    if (node->requires_grad) {
        node->backward_fn = [a](Var& self) {
            Tensor g(self.grad.shape);
            for (int64_t i = 0; i < g.numel(); ++i) {
                const double y = self.val[i];
                g[i] = self.grad[i] * y * (1.0 - y);
            }
            accumulate_grad(a, g);
        };
    }
    return node;
}

VarPtr tanh_v(const VarPtr& a) {
    Tensor out;
    k::tanh_forward(a->val, out);
    return make_node(std::move(out), {a}, [a](Var& self) {
        Tensor g(self.grad.shape);
        for (int64_t i = 0; i < g.numel(); ++i) {
            const double y = self.val[i];
            g[i] = self.grad[i] * (1.0 - y * y);
        }
        accumulate_grad(a, g);
    });
}

VarPtr detach(const VarPtr& a) { return make_const(a->val); }

VarPtr reshape(const VarPtr& a, std::vector<int> shape) {
    if (Tensor::count(shape) != a->val.numel()) throw std::invalid_argument("reshape: bad count");
    Tensor out(shape);
    out.v = a->val.v;
    return make_node(std::move(out), {a}, [a](Var& self) {
        Tensor g(a->val.shape);
        g.v = self.grad.v;
        accumulate_grad(a, g);
    });
}

VarPtr concat_ch(const VarPtr& a, const VarPtr& b) {
    const auto& sa = a->val.shape, &sb = b->val.shape;
    if (sa.size() != 4 || sb.size() != 4 || sa[1] != sb[1] || sa[2] != sb[2] || sa[3] != sb[3])
        throw std::invalid_argument("concat_ch: spatial shape mismatch");
    Tensor out({sa[0] + sb[0], sa[1], sa[2], sa[3]});
    std::copy(a->val.v.begin(), a->val.v.end(), out.v.begin());
    std::copy(b->val.v.begin(), b->val.v.end(), out.v.begin() + a->val.v.size());
    return make_node(std::move(out), {a, b}, [a, b](Var& self) {
        if (a->requires_grad) {
            Tensor g(a->val.shape);
            std::copy(self.grad.v.begin(), self.grad.v.begin() + g.numel(), g.v.begin());
            accumulate_grad(a, g);
        }
        if (b->requires_grad) {
            Tensor g(b->val.shape);
            std::copy(self.grad.v.begin() + a->val.numel(), self.grad.v.end(), g.v.begin());
            accumulate_grad(b, g);
        }
    });
}

VarPtr conv3d(const VarPtr& x, const VarPtr& w, const VarPtr& b) {
    Tensor out;
    k::conv3d_forward(x->val, w->val, b->val, out);
    return make_node(std::move(out), {x, w, b}, [x, w, b](Var& self) {
        if (x->requires_grad) {
            Tensor gx;
            k::conv3d_backward_input(self.grad, w->val, gx);
            accumulate_grad(x, gx);
        }
        if (w->requires_grad || b->requires_grad) {
            Tensor gw, gb;
            k::conv3d_backward_weight(self.grad, x->val, w->val.dim(2), gw, gb);
            accumulate_grad(w, gw);
            accumulate_grad(b, gb);
        }
    });
}

VarPtr avgpool2(const VarPtr& x) {
    Tensor out;
    k::avgpool2_forward(x->val, out);
    return make_node(std::move(out), {x}, [x](Var& self) {
        Tensor gx;
        k::avgpool2_backward(self.grad, gx);
        accumulate_grad(x, gx);
    });
}

VarPtr upsample2(const VarPtr& x) {
    Tensor out;
    k::upsample2_forward(x->val, out);
    const std::vector<int> in_shape = x->val.shape;
    return make_node(std::move(out), {x}, [x, in_shape](Var& self) {
        Tensor gx;
        k::upsample2_backward(self.grad, in_shape, gx);
        accumulate_grad(x, gx);
    });
}

VarPtr softmax_ch(const VarPtr& x) {
    Tensor out;
    k::softmax_channel_forward(x->val, out);
    auto node = make_node(std::move(out), {x}, nullptr);
    if (node->requires_grad) {
        node->backward_fn = [x](Var& self) {
            const int C = self.val.dim(0);
            const int64_t vol = self.val.numel() / C;
            Tensor g(self.val.shape);
            for (int64_t v = 0; v < vol; ++v) {
                double dot = 0.0;
                for (int c = 0; c < C; ++c)
                    dot += self.grad[c * vol + v] * self.val[c * vol + v];
                for (int c = 0; c < C; ++c)
                    g[c * vol + v] = self.val[c * vol + v] * (self.grad[c * vol + v] - dot);
            }
            accumulate_grad(x, g);
        };
    }
    return node;
}

VarPtr global_avgpool(const VarPtr& x) {
    const int C = x->val.dim(0);
    const int64_t vol = x->val.numel() / C;
    Tensor out({C});
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int64_t v = 0; v < vol; ++v) acc += x->val[c * vol + v];
        out[c] = acc / static_cast<double>(vol);
    }
    return make_node(std::move(out), {x}, [x, C, vol](Var& self) {
        Tensor g(x->val.shape);
        for (int c = 0; c < C; ++c) {
            const double gv = self.grad[c] / static_cast<double>(vol);
            for (int64_t v = 0; v < vol; ++v) g[c * vol + v] = gv;
        }
        accumulate_grad(x, g);
    });
}

VarPtr fc(const VarPtr& w, const VarPtr& x, const VarPtr& b) {
    const int M = w->val.dim(0), N = w->val.dim(1);
    if (x->val.numel() != N || b->val.numel() != M)
        throw std::invalid_argument("fc: shape mismatch");
    Tensor out({M});
    for (int m = 0; m < M; ++m) {
        double acc = b->val[m];
        for (int n = 0; n < N; ++n) acc += w->val[m * N + n] * x->val[n];
        out[m] = acc;
    }
    return make_node(std::move(out), {w, x, b}, [w, x, b, M, N](Var& self) {
        if (w->requires_grad) {
            Tensor gw(w->val.shape);
            for (int m = 0; m < M; ++m)
                for (int n = 0; n < N; ++n) gw[m * N + n] = self.grad[m] * x->val[n];
            accumulate_grad(w, gw);
        }
        if (x->requires_grad) {
            Tensor gx(x->val.shape);
            for (int n = 0; n < N; ++n) {
                double acc = 0.0;
                for (int m = 0; m < M; ++m) acc += w->val[m * N + n] * self.grad[m];
                gx[n] = acc;
            }
            accumulate_grad(x, gx);
        }
        accumulate_grad(b, self.grad);
    });
}

VarPtr mul_channel(const VarPtr& x, const VarPtr& g) {
    const int C = x->val.dim(0);
    if (g->val.numel() != C) throw std::invalid_argument("mul_channel: gate size mismatch");
    const int64_t vol = x->val.numel() / C;
    Tensor out(x->val.shape);
    for (int c = 0; c < C; ++c)
        for (int64_t v = 0; v < vol; ++v) out[c * vol + v] = x->val[c * vol + v] * g->val[c];
    return make_node(std::move(out), {x, g}, [x, g, C, vol](Var& self) {
        if (x->requires_grad) {
            Tensor gx(x->val.shape);
            for (int c = 0; c < C; ++c)
                for (int64_t v = 0; v < vol; ++v)
                    gx[c * vol + v] = self.grad[c * vol + v] * g->val[c];
            accumulate_grad(x, gx);
        }
        if (g->requires_grad) {
            Tensor gg(g->val.shape);
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int64_t v = 0; v < vol; ++v)
                    acc += self.grad[c * vol + v] * x->val[c * vol + v];
                gg[c] = acc;
            }
            accumulate_grad(g, gg);
        }
    });
}

VarPtr mul_spatial(const VarPtr& x, const VarPtr& m) {
    const int C = x->val.dim(0);
    const int64_t vol = x->val.numel() / C;
    if (m->val.dim(0) != 1 || m->val.numel() != vol)
        throw std::invalid_argument("mul_spatial: mask shape mismatch");
    Tensor out(x->val.shape);
    for (int c = 0; c < C; ++c)
        for (int64_t v = 0; v < vol; ++v) out[c * vol + v] = x->val[c * vol + v] * m->val[v];
    return make_node(std::move(out), {x, m}, [x, m, C, vol](Var& self) {
        if (x->requires_grad) {
            Tensor gx(x->val.shape);
            for (int c = 0; c < C; ++c)
                for (int64_t v = 0; v < vol; ++v)
                    gx[c * vol + v] = self.grad[c * vol + v] * m->val[v];
            accumulate_grad(x, gx);
        }
        if (m->requires_grad) {
            Tensor gm(m->val.shape);
            for (int64_t v = 0; v < vol; ++v) {
                double acc = 0.0;
                for (int c = 0; c < C; ++c)
                    acc += self.grad[c * vol + v] * x->val[c * vol + v];
                gm[v] = acc;
            }
            accumulate_grad(m, gm);
        }
    });
}

VarPtr grid_sample(const VarPtr& moving, const VarPtr& affine, const VarPtr& disp) {
    Tensor out;
    k::grid_sample_forward(moving->val, affine->val, disp->val, out);
    return make_node(std::move(out), {moving, affine, disp},
                     [moving, affine, disp](Var& self) {
                         Tensor gm, ga, gd;
                         k::grid_sample_backward(self.grad, moving->val, affine->val, disp->val,
                                                 moving->requires_grad ? &gm : nullptr,
                                                 affine->requires_grad ? &ga : nullptr,
                                                 disp->requires_grad ? &gd : nullptr);
                         if (moving->requires_grad) accumulate_grad(moving, gm);
                         if (affine->requires_grad) accumulate_grad(affine, ga);
                         if (disp->requires_grad) accumulate_grad(disp, gd);
                     });
}

namespace {

struct NormStats {
    Tensor mu, sinv;  // per channel: mean, 1/sqrt(var+eps)
};

NormStats channel_stats(const Tensor& x, double eps) {
    const int C = x.dim(0);
    const int64_t vol = x.numel() / C;
    NormStats st{Tensor({C}), Tensor({C})};
    for (int c = 0; c < C; ++c) {
        double mean = 0.0;
        for (int64_t v = 0; v < vol; ++v) mean += x[c * vol + v];
        mean /= static_cast<double>(vol);
        double var = 0.0;
        for (int64_t v = 0; v < vol; ++v) {
            const double d = x[c * vol + v] - mean;
            var += d * d;
        }
        var /= static_cast<double>(vol);
        st.mu[c] = mean;
        st.sinv[c] = 1.0 / std::sqrt(var + eps);
    }
    return st;
}

Tensor norm_apply(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& mu,
                  const Tensor& sinv) {
    const int C = x.dim(0);
    const int64_t vol = x.numel() / C;
    Tensor out(x.shape);
    for (int c = 0; c < C; ++c) {
        const double m = mu[c], s = sinv[c], g = gamma[c], b = beta[c];
        for (int64_t v = 0; v < vol; ++v) out[c * vol + v] = g * (x[c * vol + v] - m) * s + b;
    }
    return out;
}

}  // namespace

VarPtr norm_sample(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta, double eps,
                   Tensor* mu_out, Tensor* var_out) {
    const int C = x->val.dim(0);
    if (gamma->val.numel() != C || beta->val.numel() != C)
        throw std::invalid_argument("norm_sample: affine size mismatch");
    NormStats st = channel_stats(x->val, eps);
    if (mu_out) *mu_out = st.mu;
    if (var_out) {
        *var_out = Tensor({C});
        for (int c = 0; c < C; ++c)
            (*var_out)[c] = 1.0 / (st.sinv[c] * st.sinv[c]) - eps;
    }
    Tensor out = norm_apply(x->val, gamma->val, beta->val, st.mu, st.sinv);
    return make_node(std::move(out), {x, gamma, beta}, [x, gamma, beta, st](Var& self) {
        const int C = x->val.dim(0);
        const int64_t vol = x->val.numel() / C;
        Tensor gg(gamma->val.shape), gb(beta->val.shape);
        Tensor gx(x->val.shape);
        for (int c = 0; c < C; ++c) {
            const double m = st.mu[c], s = st.sinv[c];
            double sum_go = 0.0, sum_go_xh = 0.0;
            for (int64_t v = 0; v < vol; ++v) {
                const double go = self.grad[c * vol + v];
                const double xh = (x->val[c * vol + v] - m) * s;
                sum_go += go;
                sum_go_xh += go * xh;
            }
            gg[c] = sum_go_xh;
            gb[c] = sum_go;
            if (x->requires_grad) {
                const double mean_go = sum_go / static_cast<double>(vol);
                const double mean_go_xh = sum_go_xh / static_cast<double>(vol);
                const double gs = gamma->val[c] * s;
                for (int64_t v = 0; v < vol; ++v) {
                    const double go = self.grad[c * vol + v];
                    const double xh = (x->val[c * vol + v] - m) * s;
                    gx[c * vol + v] = gs * (go - mean_go - xh * mean_go_xh);
                }
            }
        }
        accumulate_grad(gamma, gg);
        accumulate_grad(beta, gb);
        if (x->requires_grad) accumulate_grad(x, gx);
    });
}

VarPtr norm_stats(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta, const Tensor& mu,
                  const Tensor& var, double eps) {
    const int C = x->val.dim(0);
    Tensor sinv({C});
    for (int c = 0; c < C; ++c) sinv[c] = 1.0 / std::sqrt(var[c] + eps);
    Tensor out = norm_apply(x->val, gamma->val, beta->val, mu, sinv);
    Tensor mu_c = mu;
    return make_node(std::move(out), {x, gamma, beta}, [x, gamma, beta, mu_c, sinv](Var& self) {
        const int C = x->val.dim(0);
        const int64_t vol = x->val.numel() / C;
        Tensor gg(gamma->val.shape), gb(beta->val.shape);
        for (int c = 0; c < C; ++c) {
            const double m = mu_c[c], s = sinv[c];
            double sum_go = 0.0, sum_go_xh = 0.0;
            for (int64_t v = 0; v < vol; ++v) {
                const double go = self.grad[c * vol + v];
                sum_go += go;
                sum_go_xh += go * (x->val[c * vol + v] - m) * s;
            }
            gg[c] = sum_go_xh;
            gb[c] = sum_go;
        }
        accumulate_grad(gamma, gg);
        accumulate_grad(beta, gb);
        if (x->requires_grad) {
            Tensor gx(x->val.shape);
            for (int c = 0; c < C; ++c) {
                const double gs = gamma->val[c] * sinv[c];
                for (int64_t v = 0; v < vol; ++v) gx[c * vol + v] = self.grad[c * vol + v] * gs;
            }
            accumulate_grad(x, gx);
        }
    });
}

VarPtr sum_all(const VarPtr& x) {
    double acc = 0.0;
    for (int64_t i = 0; i < x->val.numel(); ++i) acc += x->val[i];
    return make_node(Tensor::scalar(acc), {x}, [x](Var& self) {
        Tensor g(x->val.shape, self.grad[0]);
        accumulate_grad(x, g);
    });
}

VarPtr mean_all(const VarPtr& x) {
    const double n = static_cast<double>(x->val.numel());
    double acc = 0.0;
    for (int64_t i = 0; i < x->val.numel(); ++i) acc += x->val[i];
    return make_node(Tensor::scalar(acc / n), {x}, [x, n](Var& self) {
        Tensor g(x->val.shape, self.grad[0] / n);
        accumulate_grad(x, g);
    });
}

}  // namespace adaatlas
