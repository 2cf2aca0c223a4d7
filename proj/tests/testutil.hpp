#pragma once

// Shared helpers for the test suites: deterministic random inputs and a
// central finite-difference gradient checker used as the independent oracle
// for every analytic backward pass.

#include <cmath>
#include <functional>

#include "adaatlas/autodiff.hpp"
#include "adaatlas/rng.hpp"
#include "adaatlas/volumes.hpp"

namespace testutil {

using namespace adaatlas;

inline Tensor random_tensor(std::vector<int> shape, uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

/// voxelwise-softmaxed random tensor: a valid ProbMap
inline ProbMap random_probmap(int C, int H, int W, int D, uint64_t seed, double sharpness = 2.0) {
    Rng rng(seed);
    Tensor t({C, H, W, D});
    const int64_t vol = static_cast<int64_t>(H) * W * D;
    for (int64_t v = 0; v < vol; ++v) {
        double mx = -1e300;
        for (int c = 0; c < C; ++c) {
            const double x = sharpness * rng.normal();
            t[c * vol + v] = x;
            mx = std::max(mx, x);
        }
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            t[c * vol + v] = std::exp(t[c * vol + v] - mx);
            sum += t[c * vol + v];
        }
        for (int c = 0; c < C; ++c) t[c * vol + v] /= sum;
    }
    return ProbMap{std::move(t)};
}

inline LabelMap random_labels(int C, int H, int W, int D, uint64_t seed) {
    Rng rng(seed);
    LabelMap m;
    m.shape = {H, W, D};
    m.num_classes = C;
    m.labels.resize(static_cast<size_t>(m.numel()));
    for (auto& l : m.labels) l = static_cast<int32_t>(rng.uniform_int(C));
    return m;
}

/// Central finite differences against the analytic gradient. `rebuild` must
/// construct the scalar loss graph fresh from the current parameter values.
/// Returns the max relative error over every coordinate of every parameter.
inline double gradcheck(const std::function<VarPtr()>& rebuild,
                        const std::vector<VarPtr>& params, double h = 1e-6) {
    for (const auto& p : params) p->grad = Tensor();
    VarPtr root = rebuild();
    backward(root);
    std::vector<Tensor> analytic;
    for (const auto& p : params)
        analytic.push_back(p->grad.shape == p->val.shape ? p->grad : Tensor(p->val.shape));

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Var& p = *params[pi];
        for (int64_t i = 0; i < p.val.numel(); ++i) {
            const double keep = p.val[i];
            p.val[i] = keep + h;
            const double up = rebuild()->val[0];
            p.val[i] = keep - h;
            const double dn = rebuild()->val[0];
            p.val[i] = keep;
            const double fd = (up - dn) / (2.0 * h);
            const double an = analytic[pi][i];
            const double rel = std::fabs(an - fd) / std::max({1e-6, std::fabs(an), std::fabs(fd)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace testutil
