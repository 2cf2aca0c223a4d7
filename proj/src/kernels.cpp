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

// Dual-lane compute kernels. The serial lane is the plain reference; the
// OpenMP lane parallelizes the outer loops with the same per-element
// accumulation order, so both lanes produce bitwise-identical results and
// nothing downstream depends on the thread count.

#include "adaatlas/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace adaatlas::kernels {

namespace {

std::atomic<ExecMode> g_mode{ExecMode::Parallel};

// Subject-level fan-out uses an outer OpenMP region; keeping one active level
// makes kernel-level regions collapse to serial inside it instead of
// oversubscribing the machine.
struct OmpInit {
    OmpInit() {
#ifdef _OPENMP
        omp_set_max_active_levels(1);
#endif
    }
};
const OmpInit g_omp_init;

inline bool parallel() { return g_mode.load(std::memory_order_relaxed) == ExecMode::Parallel; }

template <class F>
void par_for(int n, F&& body) {
    if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int i = 0; i < n; ++i) body(i);
    } else {
        for (int i = 0; i < n; ++i) body(i);
    }
}

}  // namespace

void set_exec_mode(ExecMode m) { g_mode.store(m, std::memory_order_relaxed); }
ExecMode exec_mode() { return g_mode.load(std::memory_order_relaxed); }

// ---------------------------------------------------------------------------
// conv3d, stride 1, k in {1,3}; k=3 zero-pads by 1 so shapes are preserved
// ---------------------------------------------------------------------------

static void check_conv_args(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 4 || w.rank() != 5 || b.rank() != 1)
        throw std::invalid_argument("conv3d: bad ranks");
    if (w.dim(2) != w.dim(3) || w.dim(2) != w.dim(4) || (w.dim(2) != 1 && w.dim(2) != 3))
        throw std::invalid_argument("conv3d: kernel must be 1x1x1 or 3x3x3");
    if (w.dim(1) != x.dim(0))
        throw std::invalid_argument("conv3d: input channels mismatch " + shape_str(x.shape) +
                                    " vs " + shape_str(w.shape));
    if (b.dim(0) != w.dim(0)) throw std::invalid_argument("conv3d: bias size mismatch");
}

void conv3d_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& out) {
    check_conv_args(x, w, b);
    const int Cin = x.dim(0), H = x.dim(1), W = x.dim(2), D = x.dim(3);
    const int Cout = w.dim(0), K = w.dim(2), P = K / 2;
    out = Tensor({Cout, H, W, D});

    const double* xp = x.v.data();
    const double* wp = w.v.data();
    double* op = out.v.data();
    const int64_t xc = static_cast<int64_t>(H) * W * D;

    par_for(Cout * H, [&](int i) {
        const int co = i / H, h = i % H;
        for (int y = 0; y < W; ++y) {
            double* orow = op + ((static_cast<int64_t>(co) * H + h) * W + y) * D;
            const double bias = b.v[static_cast<size_t>(co)];
            for (int d = 0; d < D; ++d) orow[d] = bias;
            for (int ci = 0; ci < Cin; ++ci) {
                for (int kz = 0; kz < K; ++kz) {
                    const int hz = h + kz - P;
                    if (hz < 0 || hz >= H) continue;
                    for (int ky = 0; ky < K; ++ky) {
                        const int wy = y + ky - P;
                        if (wy < 0 || wy >= W) continue;
                        const double* xrow = xp + ci * xc + (static_cast<int64_t>(hz) * W + wy) * D;
                        const double* wk =
                            wp + (((static_cast<int64_t>(co) * Cin + ci) * K + kz) * K + ky) * K;
                        for (int kx = 0; kx < K; ++kx) {
                            const int off = kx - P;
                            const double wv = wk[kx];
                            const int d0 = off < 0 ? -off : 0;
                            const int d1 = off > 0 ? D - off : D;
                            for (int d = d0; d < d1; ++d) orow[d] += wv * xrow[d + off];
                        }
                    }
                }
            }
        }
    });
}

void conv3d_backward_input(const Tensor& go, const Tensor& w, Tensor& gx) {
    const int Cout = go.dim(0), H = go.dim(1), W = go.dim(2), D = go.dim(3);
    const int Cin = w.dim(1), K = w.dim(2), P = K / 2;
    gx = Tensor({Cin, H, W, D});

    const double* gp = go.v.data();
    const double* wp = w.v.data();
    double* xp = gx.v.data();
    const int64_t gc = static_cast<int64_t>(H) * W * D;

    // gather form of the transposed convolution: each input element collects
    // from the output rows that touched it, so threads never share writes
    par_for(Cin * H, [&](int i) {
        const int ci = i / H, h = i % H;
        for (int y = 0; y < W; ++y) {
            double* xrow = xp + ((static_cast<int64_t>(ci) * H + h) * W + y) * D;
            for (int co = 0; co < Cout; ++co) {
                for (int kz = 0; kz < K; ++kz) {
                    const int hz = h - (kz - P);
                    if (hz < 0 || hz >= H) continue;
                    for (int ky = 0; ky < K; ++ky) {
                        const int wy = y - (ky - P);
                        if (wy < 0 || wy >= W) continue;
                        const double* grow = gp + co * gc + (static_cast<int64_t>(hz) * W + wy) * D;
                        const double* wk =
                            wp + (((static_cast<int64_t>(co) * Cin + ci) * K + kz) * K + ky) * K;
                        for (int kx = 0; kx < K; ++kx) {
                            const int off = kx - P;
                            const double wv = wk[kx];
                            const int d0 = off > 0 ? off : 0;
                            const int d1 = off < 0 ? D + off : D;
                            for (int d = d0; d < d1; ++d) xrow[d] += wv * grow[d - off];
                        }
                    }
                }
            }
        }
    });
}

void conv3d_backward_weight(const Tensor& go, const Tensor& x, int K, Tensor& gw, Tensor& gb) {
    const int Cout = go.dim(0), H = go.dim(1), W = go.dim(2), D = go.dim(3);
    const int Cin = x.dim(0);
    const int P = K / 2;
    gw = Tensor({Cout, Cin, K, K, K});
    gb = Tensor({Cout});

    const double* gp = go.v.data();
    const double* xp = x.v.data();
    const int64_t vol = static_cast<int64_t>(H) * W * D;

    par_for(Cout * Cin, [&](int i) {
        const int co = i / Cin, ci = i % Cin;
        const double* gbase = gp + co * vol;
        const double* xbase = xp + ci * vol;
        for (int kz = 0; kz < K; ++kz) {
            for (int ky = 0; ky < K; ++ky) {
                for (int kx = 0; kx < K; ++kx) {
                    const int oz = kz - P, oy = ky - P, ox = kx - P;
                    double acc = 0.0;
                    const int h0 = oz < 0 ? -oz : 0, h1 = oz > 0 ? H - oz : H;
                    const int y0 = oy < 0 ? -oy : 0, y1 = oy > 0 ? W - oy : W;
                    const int d0 = ox < 0 ? -ox : 0, d1 = ox > 0 ? D - ox : D;
                    for (int h = h0; h < h1; ++h) {
                        for (int y = y0; y < y1; ++y) {
                            const double* grow = gbase + (static_cast<int64_t>(h) * W + y) * D;
                            const double* xrow =
                                xbase + (static_cast<int64_t>(h + oz) * W + (y + oy)) * D + ox;
                            for (int d = d0; d < d1; ++d) acc += grow[d] * xrow[d];
                        }
                    }
                    gw.v[static_cast<size_t>(
                        (((static_cast<int64_t>(co) * Cin + ci) * K + kz) * K + ky) * K + kx)] = acc;
                }
            }
        }
    });
    for (int co = 0; co < Cout; ++co) {
        double acc = 0.0;
        const double* grow = gp + co * vol;
        for (int64_t j = 0; j < vol; ++j) acc += grow[j];
        gb.v[static_cast<size_t>(co)] = acc;
    }
}

// ---------------------------------------------------------------------------
// 2x average pooling
// ---------------------------------------------------------------------------

void avgpool2_forward(const Tensor& x, Tensor& out) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2), D = x.dim(3);
    if (H % 2 || W % 2 || D % 2) throw std::invalid_argument("avgpool2: odd spatial shape");
    const int Ho = H / 2, Wo = W / 2, Do = D / 2;
    out = Tensor({C, Ho, Wo, Do});
    par_for(C * Ho, [&](int i) {
        const int c = i / Ho, h = i % Ho;
        for (int y = 0; y < Wo; ++y) {
            for (int d = 0; d < Do; ++d) {
                double acc = 0.0;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int e = 0; e < 2; ++e)
                            acc += x.at4(c, 2 * h + a, 2 * y + b, 2 * d + e);
                out.at4(c, h, y, d) = acc * 0.125;
            }
        }
    });
}

void avgpool2_backward(const Tensor& go, Tensor& gx) {
    const int C = go.dim(0), Ho = go.dim(1), Wo = go.dim(2), Do = go.dim(3);
    gx = Tensor({C, Ho * 2, Wo * 2, Do * 2});
    par_for(C * Ho * 2, [&](int i) {
        const int c = i / (Ho * 2), h = i % (Ho * 2);
        for (int y = 0; y < Wo * 2; ++y)
            for (int d = 0; d < Do * 2; ++d)
                gx.at4(c, h, y, d) = go.at4(c, h / 2, y / 2, d / 2) * 0.125;
    });
}

// ---------------------------------------------------------------------------
// trilinear 2x upsampling (half-pixel centers, border clamped)
// ---------------------------------------------------------------------------

namespace {

struct UpTap {
    int i0, i1;
    double w0, w1;
};

std::vector<UpTap> upsample_taps(int n_in) {
    std::vector<UpTap> taps(static_cast<size_t>(2 * n_in));
    for (int o = 0; o < 2 * n_in; ++o) {
        double s = (o + 0.5) * 0.5 - 0.5;
        if (s < 0) s = 0;
        if (s > n_in - 1) s = n_in - 1;
        int i0 = static_cast<int>(std::floor(s));
        if (i0 > n_in - 2) i0 = n_in >= 2 ? n_in - 2 : 0;
        const double f = s - i0;
        taps[static_cast<size_t>(o)] = {i0, n_in >= 2 ? i0 + 1 : 0, 1.0 - f, f};
    }
    return taps;
}

}  // namespace

void upsample2_forward(const Tensor& x, Tensor& out) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2), D = x.dim(3);
    out = Tensor({C, 2 * H, 2 * W, 2 * D});
    const auto th = upsample_taps(H), tw = upsample_taps(W), td = upsample_taps(D);
    par_for(C * 2 * H, [&](int i) {
        const int c = i / (2 * H), h = i % (2 * H);
        const UpTap& a = th[static_cast<size_t>(h)];
        for (int y = 0; y < 2 * W; ++y) {
            const UpTap& b = tw[static_cast<size_t>(y)];
            for (int d = 0; d < 2 * D; ++d) {
                const UpTap& e = td[static_cast<size_t>(d)];
                double acc = 0.0;
                acc += a.w0 * (b.w0 * (e.w0 * x.at4(c, a.i0, b.i0, e.i0) +
                                       e.w1 * x.at4(c, a.i0, b.i0, e.i1)) +
                               b.w1 * (e.w0 * x.at4(c, a.i0, b.i1, e.i0) +
                                       e.w1 * x.at4(c, a.i0, b.i1, e.i1)));
                acc += a.w1 * (b.w0 * (e.w0 * x.at4(c, a.i1, b.i0, e.i0) +
                                       e.w1 * x.at4(c, a.i1, b.i0, e.i1)) +
                               b.w1 * (e.w0 * x.at4(c, a.i1, b.i1, e.i0) +
                                       e.w1 * x.at4(c, a.i1, b.i1, e.i1)));
                out.at4(c, h, y, d) = acc;
            }
        }
    });
}

void upsample2_backward(const Tensor& go, const std::vector<int>& in_shape, Tensor& gx) {
    const int C = in_shape[0], H = in_shape[1], W = in_shape[2], D = in_shape[3];
    gx = Tensor(in_shape);
    const auto th = upsample_taps(H), tw = upsample_taps(W), td = upsample_taps(D);
    // reverse taps: which outputs pull from a given input index
    auto reverse = [](const std::vector<UpTap>& taps, int n_in) {
        std::vector<std::vector<std::pair<int, double>>> rev(static_cast<size_t>(n_in));
        for (int o = 0; o < static_cast<int>(taps.size()); ++o) {
            const UpTap& t = taps[static_cast<size_t>(o)];
            if (t.w0 != 0.0) rev[static_cast<size_t>(t.i0)].push_back({o, t.w0});
            if (t.w1 != 0.0) rev[static_cast<size_t>(t.i1)].push_back({o, t.w1});
        }
        return rev;
    };
    const auto rh = reverse(th, H), rw = reverse(tw, W), rd = reverse(td, D);
    par_for(C * H, [&](int i) {
        const int c = i / H, h = i % H;
        for (int y = 0; y < W; ++y) {
            for (int d = 0; d < D; ++d) {
                double acc = 0.0;
                for (const auto& [oh, wh] : rh[static_cast<size_t>(h)])
                    for (const auto& [ow, ww] : rw[static_cast<size_t>(y)])
                        for (const auto& [od, wd] : rd[static_cast<size_t>(d)])
                            acc += wh * ww * wd * go.at4(c, oh, ow, od);
                gx.at4(c, h, y, d) = acc;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// trilinear pull-back sampling
// ---------------------------------------------------------------------------

namespace {

struct SamplePoint {
    int i0[3], i1[3];
    double f[3];
    double dscale[3];  // d(voxel coord)/d(normalized coord); 0 where clamped
};

inline void resolve_axis(double xn, int n, int a, SamplePoint& sp) {
    double scale = 0.5 * (n - 1);
    double p = (xn + 1.0) * scale;
    double ds = scale;
    if (p <= 0.0) {
        p = 0.0;
        ds = 0.0;
    } else if (p >= n - 1) {
        p = n - 1;
        ds = 0.0;
    }
    const double r = std::nearbyint(p);
    if (std::fabs(p - r) < 1e-9) p = r;  // snap so integer shifts are exact
    int i0 = static_cast<int>(std::floor(p));
    if (i0 > n - 2) i0 = n >= 2 ? n - 2 : 0;
    if (i0 < 0) i0 = 0;
    sp.i0[a] = i0;
    sp.i1[a] = n >= 2 ? i0 + 1 : 0;
    sp.f[a] = n >= 2 ? p - i0 : 0.0;
    sp.dscale[a] = n >= 2 ? ds : 0.0;
}

inline double norm_coord(int i, int n) { return n > 1 ? -1.0 + 2.0 * i / (n - 1) : 0.0; }

std::vector<SamplePoint> sample_points(const Tensor& affine, const Tensor& disp, int H, int W,
                                       int D, bool par) {
    std::vector<SamplePoint> pts(static_cast<size_t>(H) * W * D);
    const double* A = affine.v.data();
    const int64_t vol = static_cast<int64_t>(H) * W * D;
    auto body = [&](int h) {
        for (int y = 0; y < W; ++y) {
            for (int d = 0; d < D; ++d) {
                const int64_t vi = (static_cast<int64_t>(h) * W + y) * D + d;
                const double g[3] = {norm_coord(h, H), norm_coord(y, W), norm_coord(d, D)};
                double X[3];
                for (int r = 0; r < 3; ++r)
                    X[r] = A[4 * r + 0] * g[0] + A[4 * r + 1] * g[1] + A[4 * r + 2] * g[2] +
                           A[4 * r + 3] + disp.v[static_cast<size_t>(r * vol + vi)];
                SamplePoint& sp = pts[static_cast<size_t>(vi)];
                resolve_axis(X[0], H, 0, sp);
                resolve_axis(X[1], W, 1, sp);
                resolve_axis(X[2], D, 2, sp);
            }
        }
    };
    if (par) {
        par_for(H, body);
    } else {
        for (int h = 0; h < H; ++h) body(h);
    }
    return pts;
}

}  // namespace

void grid_sample_forward(const Tensor& moving, const Tensor& affine, const Tensor& disp,
                         Tensor& out) {
    const int C = moving.dim(0), H = moving.dim(1), W = moving.dim(2), D = moving.dim(3);
    require_shape(affine, {3, 4}, "grid_sample affine");
    require_shape(disp, {3, H, W, D}, "grid_sample displacement");
    if (!all_finite(affine) || !all_finite(disp))
        throw std::invalid_argument("grid_sample: non-finite deformation field");
    out = Tensor({C, H, W, D});
    const auto pts = sample_points(affine, disp, H, W, D, true);
    const int64_t vol = static_cast<int64_t>(H) * W * D;
    par_for(C, [&](int c) {
        const double* m = moving.v.data() + c * vol;
        double* o = out.v.data() + c * vol;
        for (int64_t vi = 0; vi < vol; ++vi) {
            const SamplePoint& sp = pts[static_cast<size_t>(vi)];
            const double fz = sp.f[0], fy = sp.f[1], fx = sp.f[2];
            auto at = [&](int iz, int iy, int ix) {
                return m[(static_cast<int64_t>(iz) * W + iy) * D + ix];
            };
            const double c00 = at(sp.i0[0], sp.i0[1], sp.i0[2]) * (1 - fx) +
                               at(sp.i0[0], sp.i0[1], sp.i1[2]) * fx;
            const double c01 = at(sp.i0[0], sp.i1[1], sp.i0[2]) * (1 - fx) +
                               at(sp.i0[0], sp.i1[1], sp.i1[2]) * fx;
            const double c10 = at(sp.i1[0], sp.i0[1], sp.i0[2]) * (1 - fx) +
                               at(sp.i1[0], sp.i0[1], sp.i1[2]) * fx;
            const double c11 = at(sp.i1[0], sp.i1[1], sp.i0[2]) * (1 - fx) +
                               at(sp.i1[0], sp.i1[1], sp.i1[2]) * fx;
            o[vi] = (c00 * (1 - fy) + c01 * fy) * (1 - fz) + (c10 * (1 - fy) + c11 * fy) * fz;
        }
    });
}

void grid_sample_backward(const Tensor& go, const Tensor& moving, const Tensor& affine,
                          const Tensor& disp, Tensor* gmoving, Tensor* gaffine, Tensor* gdisp) {
    const int C = moving.dim(0), H = moving.dim(1), W = moving.dim(2), D = moving.dim(3);
    const auto pts = sample_points(affine, disp, H, W, D, true);
    const int64_t nvox = static_cast<int64_t>(H) * W * D;

    if (gmoving) {
        *gmoving = Tensor({C, H, W, D});
        par_for(C, [&](int c) {
            double* gm = gmoving->v.data() + c * nvox;
            const double* g = go.v.data() + c * nvox;
            for (int64_t vi = 0; vi < nvox; ++vi) {
                const SamplePoint& sp = pts[static_cast<size_t>(vi)];
                const double fz = sp.f[0], fy = sp.f[1], fx = sp.f[2];
                const double gv = g[vi];
                auto add = [&](int iz, int iy, int ix, double w) {
                    gm[(static_cast<int64_t>(iz) * W + iy) * D + ix] += w * gv;
                };
                add(sp.i0[0], sp.i0[1], sp.i0[2], (1 - fz) * (1 - fy) * (1 - fx));
                add(sp.i0[0], sp.i0[1], sp.i1[2], (1 - fz) * (1 - fy) * fx);
                add(sp.i0[0], sp.i1[1], sp.i0[2], (1 - fz) * fy * (1 - fx));
                add(sp.i0[0], sp.i1[1], sp.i1[2], (1 - fz) * fy * fx);
                add(sp.i1[0], sp.i0[1], sp.i0[2], fz * (1 - fy) * (1 - fx));
                add(sp.i1[0], sp.i0[1], sp.i1[2], fz * (1 - fy) * fx);
                add(sp.i1[0], sp.i1[1], sp.i0[2], fz * fy * (1 - fx));
                add(sp.i1[0], sp.i1[1], sp.i1[2], fz * fy * fx);
            }
        });
    }

    if (!gaffine && !gdisp) return;

    // gradient w.r.t. the normalized sample position per voxel
    Tensor dpos({3, H, W, D});
    par_for(H, [&](int h) {
        for (int y = 0; y < W; ++y) {
            for (int d = 0; d < D; ++d) {
                const int64_t vi = (static_cast<int64_t>(h) * W + y) * D + d;
                const SamplePoint& sp = pts[static_cast<size_t>(vi)];
                const double fz = sp.f[0], fy = sp.f[1], fx = sp.f[2];
                double dz = 0, dy = 0, dx = 0;
                for (int c = 0; c < C; ++c) {
                    const double* m = moving.v.data() + c * nvox;
                    const double gv = go.v[static_cast<size_t>(c * nvox + vi)];
                    auto at = [&](int iz, int iy, int ix) {
                        return m[(static_cast<int64_t>(iz) * W + iy) * D + ix];
                    };
                    const double v000 = at(sp.i0[0], sp.i0[1], sp.i0[2]);
                    const double v001 = at(sp.i0[0], sp.i0[1], sp.i1[2]);
                    const double v010 = at(sp.i0[0], sp.i1[1], sp.i0[2]);
                    const double v011 = at(sp.i0[0], sp.i1[1], sp.i1[2]);
                    const double v100 = at(sp.i1[0], sp.i0[1], sp.i0[2]);
                    const double v101 = at(sp.i1[0], sp.i0[1], sp.i1[2]);
                    const double v110 = at(sp.i1[0], sp.i1[1], sp.i0[2]);
                    const double v111 = at(sp.i1[0], sp.i1[1], sp.i1[2]);
                    dz += gv * ((v100 - v000) * (1 - fy) * (1 - fx) + (v101 - v001) * (1 - fy) * fx +
                                (v110 - v010) * fy * (1 - fx) + (v111 - v011) * fy * fx);
                    dy += gv * ((v010 - v000) * (1 - fz) * (1 - fx) + (v011 - v001) * (1 - fz) * fx +
                                (v110 - v100) * fz * (1 - fx) + (v111 - v101) * fz * fx);
                    dx += gv * ((v001 - v000) * (1 - fz) * (1 - fy) + (v011 - v010) * (1 - fz) * fy +
                                (v101 - v100) * fz * (1 - fy) + (v111 - v110) * fz * fy);
                }
                dpos.v[static_cast<size_t>(0 * nvox + vi)] = dz * sp.dscale[0];
                dpos.v[static_cast<size_t>(1 * nvox + vi)] = dy * sp.dscale[1];
                dpos.v[static_cast<size_t>(2 * nvox + vi)] = dx * sp.dscale[2];
            }
        }
    });

    if (gdisp) *gdisp = dpos;
    if (gaffine) {
        *gaffine = Tensor({3, 4});
        for (int r = 0; r < 3; ++r) {
            double acc[4] = {0, 0, 0, 0};
            int64_t vi = 0;
            for (int h = 0; h < H; ++h) {
                for (int y = 0; y < W; ++y) {
                    for (int d = 0; d < D; ++d, ++vi) {
                        const double dp = dpos.v[static_cast<size_t>(r * nvox + vi)];
                        acc[0] += dp * norm_coord(h, H);
                        acc[1] += dp * norm_coord(y, W);
                        acc[2] += dp * norm_coord(d, D);
                        acc[3] += dp;
                    }
                }
            }
            for (int c4 = 0; c4 < 4; ++c4) gaffine->v[static_cast<size_t>(4 * r + c4)] = acc[c4];
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

void relu_forward(const Tensor& x, Tensor& out) {
    out = Tensor(x.shape);
    const int64_t n = x.numel();
    par_for(static_cast<int>((n + 4095) / 4096), [&](int blk) {
        const int64_t lo = static_cast<int64_t>(blk) * 4096, hi = std::min(lo + 4096, n);
        for (int64_t i = lo; i < hi; ++i) {
            const double v = x[i];
            // keep NaN visible to the divergence guards instead of flushing it
            out.v[static_cast<size_t>(i)] = v > 0 ? v : (std::isnan(v) ? v : 0.0);
        }
    });
}

void relu_backward(const Tensor& go, const Tensor& x, Tensor& gx) {
    gx = Tensor(x.shape);
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) gx[i] = x[i] > 0 ? go[i] : 0.0;
}

void sigmoid_forward(const Tensor& x, Tensor& out) {
    out = Tensor(x.shape);
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void tanh_forward(const Tensor& x, Tensor& out) {
    out = Tensor(x.shape);
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
}

void softmax_channel_forward(const Tensor& x, Tensor& out) {
    const int C = x.dim(0);
    const int64_t vol = x.numel() / C;
    out = Tensor(x.shape);
    par_for(static_cast<int>((vol + 1023) / 1024), [&](int blk) {
        const int64_t lo = static_cast<int64_t>(blk) * 1024, hi = std::min(lo + 1024, vol);
        for (int64_t v = lo; v < hi; ++v) {
            double mx = x[v];
            for (int c = 1; c < C; ++c) mx = std::max(mx, x[c * vol + v]);
            double sum = 0.0;
            for (int c = 0; c < C; ++c) {
                const double e = std::exp(x[c * vol + v] - mx);
                out.v[static_cast<size_t>(c * vol + v)] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (int c = 0; c < C; ++c) out.v[static_cast<size_t>(c * vol + v)] *= inv;
        }
    });
}

}  // namespace adaatlas::kernels
