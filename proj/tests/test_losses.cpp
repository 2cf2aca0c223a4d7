#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "adaatlas/losses.hpp"
#include "testutil.hpp"

using namespace adaatlas;
using namespace testutil;

namespace {

ProbMap constant_onehot(int cls, int C, int n) {
    Tensor t({C, n, n, n});
    const int64_t vol = static_cast<int64_t>(n) * n * n;
    for (int64_t v = 0; v < vol; ++v) t[cls * vol + v] = 1.0;
    return ProbMap{t};
}

}  // namespace

TEST_CASE("atlas_loss: one-hot agreement, orthogonality, hand cosine") {
    const ProbMap a = constant_onehot(0, 2, 2);
    CHECK(atlas_loss(a, Atlas{a.probs, 0.9}) == doctest::Approx(0.0).epsilon(1e-12));

    const ProbMap b = constant_onehot(1, 2, 2);
    CHECK(atlas_loss(a, Atlas{b.probs, 0.9}) == doctest::Approx(1.0).epsilon(1e-12));

    // two voxels: warped [(1,0),(0.5,0.5)] against atlas [(1,0),(1,0)]
    Tensor warped({2, 2, 1, 1});
    warped.v = {1.0, 0.5, 0.0, 0.5};
    Tensor atlas({2, 2, 1, 1});
    atlas.v = {1.0, 1.0, 0.0, 0.0};
    const double expected = 1.0 - (1.0 + 1.0 / std::sqrt(2.0)) / 2.0;
    CHECK(atlas_loss(ProbMap{warped}, Atlas{atlas, 0.9}) ==
          doctest::Approx(expected).epsilon(1e-12));

    Tensor wrong({2, 3, 1, 1});
    CHECK_THROWS(atlas_loss(ProbMap{wrong}, Atlas{atlas, 0.9}));
}

TEST_CASE("atlas_loss stays in [0,1] on valid probmaps and ignores degenerate voxels") {
    for (uint64_t s = 0; s < 50; ++s) {
        const ProbMap p = random_probmap(3, 4, 4, 4, 2 * s);
        const ProbMap q = random_probmap(3, 4, 4, 4, 2 * s + 1);
        const double l = atlas_loss(p, Atlas{q.probs, 0.9});
        CHECK(l >= 0.0);
        CHECK(l <= 1.0);
    }
    // zero atlas vector at one voxel: that voxel contributes cos = 0
    Tensor p({2, 1, 1, 2});
    p.v = {1.0, 0.3, 0.0, 0.7};
    Tensor z({2, 1, 1, 2});
    z.v = {1.0, 0.0, 0.0, 0.0};
    CHECK(atlas_loss(ProbMap{p}, Atlas{z, 0.9}) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("atlas_loss is not spatial-permutation invariant, entropy is") {
    // a prediction that matches the atlas voxelwise after permutation but not
    // before: permuting voxels changes the atlas loss, never the entropy
    Tensor a({2, 2, 1, 1});
    a.v = {1.0, 0.0, 0.0, 1.0};  // voxel0 class0, voxel1 class1
    Tensor perm({2, 2, 1, 1});
    perm.v = {0.0, 1.0, 1.0, 0.0};  // voxels swapped
    const Atlas atlas{a, 0.9};
    CHECK(atlas_loss(ProbMap{a}, atlas) == doctest::Approx(0.0));
    CHECK(atlas_loss(ProbMap{perm}, atlas) == doctest::Approx(1.0));
    CHECK(entropy_loss(ProbMap{a}) == doctest::Approx(entropy_loss(ProbMap{perm})));
}

TEST_CASE("atlas_loss gradient matches finite differences") {
    VarPtr warped = make_param(random_tensor({3, 3, 2, 2}, 7, 0.05, 0.95));
    VarPtr atlas = make_const(random_probmap(3, 3, 2, 2, 8).probs);
    auto rebuild = [&] { return atlas_loss_var(warped, atlas); };
    CHECK(gradcheck(rebuild, {warped}) < 1e-4);
}

TEST_CASE("reg_loss: agreement, disjoint foregrounds, half-overlap") {
    const ProbMap a = ProbMap{one_hot(random_labels(2, 4, 4, 4, 11), 2).probs};
    CHECK(reg_loss(a, a) == doctest::Approx(0.0).epsilon(1e-5));

    // disjoint one-hot foregrounds: foreground soft dice term ~ 1
    LabelMap la, lb;
    la.shape = lb.shape = {4, 1, 1};
    la.num_classes = lb.num_classes = 2;
    la.labels = {1, 1, 0, 0};
    lb.labels = {0, 0, 1, 1};
    const ProbMap pa = one_hot(la, 2), pb = one_hot(lb, 2);
    // oracle: per-class soft dice computed directly
    double bg_num = 0, bg_den = 1e-6, fg_num = 0, fg_den = 1e-6;
    for (int64_t v = 0; v < 4; ++v) {
        bg_num += 2 * pa.probs[v] * pb.probs[v];
        bg_den += pa.probs[v] * pa.probs[v] + pb.probs[v] * pb.probs[v];
        fg_num += 2 * pa.probs[4 + v] * pb.probs[4 + v];
        fg_den += pa.probs[4 + v] * pa.probs[4 + v] + pb.probs[4 + v] * pb.probs[4 + v];
    }
    CHECK(fg_num / fg_den == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(reg_loss(pa, pb) ==
          doctest::Approx(1.0 - 0.5 * (bg_num / bg_den + fg_num / fg_den)).epsilon(1e-9));

    // half-overlap cubes: foreground term equals the hard Dice 0.5
    LabelMap cp, cg;
    cp.shape = cg.shape = {4, 4, 4};
    cp.num_classes = cg.num_classes = 2;
    cp.labels.assign(64, 0);
    cg.labels.assign(64, 0);
    auto idx = [](int h, int w, int d) { return (h * 4 + w) * 4 + d; };
    for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w)
            for (int d = 0; d < 2; ++d) {
                cp.labels[static_cast<size_t>(idx(h, w, d))] = 1;
                cg.labels[static_cast<size_t>(idx(h + 1, w, d))] = 1;
            }
    const ProbMap qp = one_hot(cp, 2), qg = one_hot(cg, 2);
    double num = 0, den = 1e-6;
    for (int64_t v = 0; v < 64; ++v) {
        num += 2 * qp.probs[64 + v] * qg.probs[64 + v];
        den += qp.probs[64 + v] * qp.probs[64 + v] + qg.probs[64 + v] * qg.probs[64 + v];
    }
    CHECK(num / den == doctest::Approx(0.5).epsilon(1e-5));
    const double hard_fg = dice(cp, cg, 2).per_class.at(1);
    CHECK(num / den == doctest::Approx(hard_fg).epsilon(1e-5));
}

TEST_CASE("soft dice gradient matches finite differences on both sides") {
    VarPtr a = make_param(random_tensor({2, 3, 3, 3}, 21, 0.1, 0.9));
    VarPtr b = make_param(random_tensor({2, 3, 3, 3}, 22, 0.1, 0.9));
    auto rebuild = [&] { return soft_dice_loss_var(a, b); };
    CHECK(gradcheck(rebuild, {a, b}) < 1e-4);
}

TEST_CASE("bireg_loss equals the sum of its two independently computed terms") {
    RegNetConfig rcfg;
    rcfg.num_classes = 2;
    rcfg.depth = 2;
    rcfg.base_channels = 4;
    auto net = build_regnet(rcfg, 31);
    Rng rng(32);
    for (int64_t i = 0; i < net->affine_W->val.numel(); ++i)
        net->affine_W->val[i] = 0.02 * rng.normal();
    for (int64_t i = 0; i < net->disp_head.W->val.numel(); ++i)
        net->disp_head.W->val[i] = 0.1 * rng.normal();

    const ProbMap pred = random_probmap(2, 8, 8, 8, 33);
    const Atlas atlas{random_probmap(2, 8, 8, 8, 34).probs, 0.9};
    const double total = bireg_loss(pred, atlas, *net);

    const DeformationField fwd = reg_forward(*net, pred, atlas);
    const DeformationField bwd =
        reg_forward(*net, ProbMap{atlas.probs}, Atlas{pred.probs, atlas.momentum});
    const double t1 = reg_loss(pred, ProbMap{warp_tensor(atlas.probs, bwd)});
    const double t2 = reg_loss(ProbMap{atlas.probs}, ProbMap{warp_tensor(pred.probs, fwd)});
    CHECK(t1 >= 0.0);
    CHECK(t2 >= 0.0);
    CHECK(total == doctest::Approx(t1 + t2).epsilon(1e-9));

    // identity-emitting regnet on pred == atlas gives ~0
    auto id_net = build_regnet(rcfg, 35);
    CHECK(bireg_loss(pred, Atlas{pred.probs, 0.9}, *id_net) ==
          doctest::Approx(0.0).epsilon(1e-4));
}

TEST_CASE("supervised_loss: clipped one-hot, uniform CE, recomposition oracle") {
    LabelMap gt = random_labels(2, 4, 4, 4, 41);
    ProbMap oh = one_hot(gt, 2);
    for (int64_t i = 0; i < oh.probs.numel(); ++i)
        oh.probs[i] = std::min(1.0 - 1e-7, std::max(1e-7, oh.probs[i]));
    CHECK(supervised_loss(oh, gt) < 1e-5);

    Tensor uni({2, 4, 4, 4}, 0.5);
    const double l = supervised_loss(ProbMap{uni}, gt);
    // CE term is exactly ln 2; the dice term is whatever uniform overlap gives
    double dice_term = reg_loss(ProbMap{uni}, one_hot(gt, 2));
    CHECK(l == doctest::Approx(std::log(2.0) + dice_term).epsilon(1e-9));

    // random map: equals independently computed CE + soft dice
    const ProbMap pred = random_probmap(2, 4, 4, 4, 42);
    double ce = 0.0;
    const int64_t vol = 64;
    for (int64_t v = 0; v < vol; ++v)
        ce -= std::log(pred.probs[gt.labels[static_cast<size_t>(v)] * vol + v]);
    ce /= static_cast<double>(vol);
    CHECK(supervised_loss(pred, gt) ==
          doctest::Approx(ce + reg_loss(pred, one_hot(gt, 2))).epsilon(1e-9));

    LabelMap bad = gt;
    bad.labels[0] = 5;
    CHECK_THROWS(supervised_loss(pred, bad));
}

TEST_CASE("supervised_loss gradient matches finite differences") {
    LabelMap gt = random_labels(2, 3, 3, 3, 43);
    VarPtr pred = make_param(random_tensor({2, 3, 3, 3}, 44, 0.1, 0.9));
    auto rebuild = [&] { return supervised_loss_var(pred, gt); };
    CHECK(gradcheck(rebuild, {pred}) < 1e-4);
}

TEST_CASE("entropy_loss: one-hot, uniform, scalar voxel") {
    CHECK(entropy_loss(constant_onehot(1, 3, 2)) == doctest::Approx(0.0).epsilon(1e-12));
    Tensor uni({2, 2, 2, 2}, 0.5);
    CHECK(entropy_loss(ProbMap{uni}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    Tensor v({2, 1, 1, 1});
    v.v = {0.9, 0.1};
    const double expected = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
    CHECK(entropy_loss(ProbMap{v}) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.3251).epsilon(1e-4));
}

TEST_CASE("eata_loss: threshold behavior and the mask-and-average oracle") {
    const ProbMap uni{Tensor({2, 2, 2, 2}, 0.5)};
    CHECK(eata_loss(uni, 1e-9) == 0.0);  // everything filtered
    CHECK(eata_loss(uni, std::log(2.0) + 0.1) == doctest::Approx(std::log(2.0)));

    for (uint64_t s = 0; s < 20; ++s) {
        const ProbMap p = random_probmap(2, 4, 4, 4, 50 + s, 3.0);
        // E0 beyond ln C: equals entropy_loss exactly
        CHECK(eata_loss(p, std::numeric_limits<double>::infinity()) == entropy_loss(p));

        // explicit mask-and-average oracle at E0 = 0.5
        const double e0 = 0.5;
        const int64_t vol = 64;
        double acc = 0.0;
        int64_t cnt = 0;
        for (int64_t v = 0; v < vol; ++v) {
            double e = 0.0;
            for (int c = 0; c < 2; ++c) {
                const double x = p.probs[c * vol + v];
                if (x > 0) e -= x * std::log(x);
            }
            if (e < e0) {
                acc += e;
                ++cnt;
            }
        }
        const double expect = cnt ? acc / cnt : 0.0;
        CHECK(eata_loss(p, e0) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("entropy and eata gradients match finite differences") {
    VarPtr pred = make_param(random_tensor({3, 3, 3, 3}, 61, 0.1, 0.9));
    CHECK(gradcheck([&] { return entropy_loss_var(pred); }, {pred}) < 1e-4);
    CHECK(gradcheck([&] { return eata_loss_var(pred, 0.9); }, {pred}) < 1e-4);
}

TEST_CASE("class_ratio_loss: identity, scalar KL, nonnegativity") {
    SourceStats st;
    st.class_ratio = {0.9, 0.1};
    Tensor p({2, 2, 2, 2});
    const int64_t vol = 8;
    for (int64_t v = 0; v < vol; ++v) {
        p[v] = 0.9;
        p[vol + v] = 0.1;
    }
    CHECK(class_ratio_loss(ProbMap{p}, st) == doctest::Approx(0.0).epsilon(1e-12));

    Tensor u({2, 2, 2, 2}, 0.5);
    const double expected = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
    CHECK(class_ratio_loss(ProbMap{u}, st) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.3681).epsilon(1e-4));

    for (uint64_t s = 0; s < 20; ++s) {
        const ProbMap q = random_probmap(2, 4, 4, 4, 70 + s);
        Rng rng(90 + s);
        const double t0 = rng.uniform(0.01, 0.99);
        SourceStats r;
        r.class_ratio = {t0, 1.0 - t0};
        CHECK(class_ratio_loss(q, r) >= -1e-12);  // Gibbs
    }
}

TEST_CASE("class_ratio gradient matches finite differences") {
    VarPtr pred = make_param(random_tensor({2, 3, 3, 3}, 71, 0.1, 0.9));
    const std::vector<double> tau = {0.7, 0.3};
    CHECK(gradcheck([&] { return class_ratio_loss_var(pred, tau); }, {pred}) < 1e-4);
}

TEST_CASE("shape_moment_loss: matching priors, symmetry, single voxel") {
    const int C = 2, N = 5;
    LabelMap gt = random_labels(C, N, N, N, 81);
    // force a non-empty foreground
    gt.labels[0] = 1;
    SourceStats st = compute_source_stats({gt}, C);
    // moments of the same map equal the priors: loss 0 (hinge at tolerance)
    CHECK(shape_moment_loss(one_hot(gt, C), st) == doctest::Approx(0.0).epsilon(1e-12));

    // centrally symmetric mask: centroid at the grid center (0,0,0)
    Tensor sym({2, 3, 3, 3});
    const int64_t vol = 27;
    for (int64_t v = 0; v < vol; ++v) sym[v] = 1.0;
    auto set_fg = [&](int h, int w, int d) {
        const int64_t v = (h * 3 + w) * 3 + d;
        sym[v] = 0.0;
        sym[vol + v] = 1.0;
    };
    set_fg(0, 1, 1);
    set_fg(2, 1, 1);
    set_fg(1, 1, 1);
    const SoftMoments sm = soft_moments(sym, 1);
    for (int a = 0; a < 3; ++a) CHECK(sm.centroid[a] == doctest::Approx(0.0).epsilon(1e-9));

    // single foreground voxel: centroid is that voxel's normalized coordinate
    Tensor single({2, 3, 3, 3});
    for (int64_t v = 0; v < vol; ++v) single[v] = 1.0;
    single[(0 * 3 + 2) * 3 + 1] = 0.0;
    single[vol + (0 * 3 + 2) * 3 + 1] = 1.0;
    const SoftMoments s1 = soft_moments(single, 1);
    CHECK(s1.centroid[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(s1.centroid[1] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(s1.centroid[2] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("shape_moment gradient matches finite differences away from the hinge") {
    const int C = 2;
    LabelMap gt = random_labels(C, 4, 4, 4, 82);
    gt.labels[5] = 1;
    SourceStats st = compute_source_stats({gt}, C);
    // shrink tolerances so the random prediction sits on the active side
    for (auto& t : st.moment_tol)
        for (int a = 0; a < 3; ++a) {
            t.centroid[a] = 1e-4;
            t.second[a] = 1e-4;
        }
    VarPtr pred = make_param(random_tensor({2, 4, 4, 4}, 83, 0.1, 0.9));
    CHECK(gradcheck([&] { return shape_moment_loss_var(pred, st); }, {pred}) < 1e-4);
}

TEST_CASE("compute_source_stats: ratios sum to one, tolerances floored") {
    std::vector<LabelMap> gts;
    for (uint64_t s = 0; s < 4; ++s) gts.push_back(random_labels(3, 4, 4, 4, 90 + s));
    SourceStats st = compute_source_stats(gts, 3);
    double sum = 0.0;
    for (double r : st.class_ratio) sum += r;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    for (int c = 1; c < 3; ++c)
        for (int a = 0; a < 3; ++a) {
            CHECK(st.moment_tol[static_cast<size_t>(c)].centroid[a] >= 1e-3);
            CHECK(st.moment_tol[static_cast<size_t>(c)].second[a] >= 1e-3);
        }
}

TEST_CASE("default EATA threshold follows 0.4 ln C") {
    CHECK(default_eata_threshold(2) == doctest::Approx(0.4 * std::log(2.0)));
    CHECK(default_eata_threshold(3) == doctest::Approx(0.4 * std::log(3.0)));
}
