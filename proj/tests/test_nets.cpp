#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "adaatlas/losses.hpp"
#include "testutil.hpp"

using namespace adaatlas;
using namespace testutil;

namespace {

uint64_t params_checksum(const ParamRegistry& reg) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& p : reg.params) {
        const uint64_t c = checksum(p.var->val);
        h = checksum_bytes(&c, sizeof(c), h);
    }
    return h;
}

std::set<std::string> name_set(const ParamRegistry& reg) {
    std::set<std::string> s;
    for (const auto& p : reg.params) s.insert(p.name);
    return s;
}

// independent architecture walk: conv + norm (+ attention) per block
int64_t expected_segnet_scalars(const SegNetConfig& cfg) {
    auto block = [&](int cin, int cout) {
        int64_t n = static_cast<int64_t>(cout) * cin * 27 + cout + 2 * cout;
        if (cfg.block_type == BlockType::DualAttention) {
            const int64_t h = std::max(1, cout / 2);
            n += h * cout + h + cout * h + cout + cout + 1;
        }
        return n;
    };
    int64_t total = 0;
    for (int i = 0; i < cfg.depth - 1; ++i)
        total += block(i == 0 ? cfg.in_channels : cfg.base_channels << (i - 1),
                       cfg.base_channels << i);
    total += block(cfg.base_channels << (cfg.depth - 2), cfg.base_channels << (cfg.depth - 1));
    for (int i = cfg.depth - 2; i >= 0; --i)
        total += block((cfg.base_channels << (i + 1)) + (cfg.base_channels << i),
                       cfg.base_channels << i);
    total += static_cast<int64_t>(cfg.num_classes) * cfg.base_channels + cfg.num_classes;
    return total;
}

Volume random_volume(int g, uint64_t seed) { return Volume{random_tensor({1, g, g, g}, seed)}; }

}  // namespace

// ---------------------------------------------------------------------------
// segnet
// ---------------------------------------------------------------------------

TEST_CASE("build_segnet is deterministic under the seed") {
    SegNetConfig cfg;
    cfg.num_classes = 3;
    cfg.block_type = BlockType::DualAttention;
    auto a = build_segnet(cfg, 99);
    auto b = build_segnet(cfg, 99);
    CHECK(params_checksum(a->registry) == params_checksum(b->registry));
    auto c = build_segnet(cfg, 100);
    CHECK(params_checksum(a->registry) != params_checksum(c->registry));
}

TEST_CASE("block_type none vs dual_attention differ exactly by attention names") {
    SegNetConfig plain;
    plain.num_classes = 2;
    SegNetConfig attn = plain;
    attn.block_type = BlockType::DualAttention;
    const auto pn = name_set(build_segnet(plain, 1)->registry);
    const auto an = name_set(build_segnet(attn, 1)->registry);
    std::set<std::string> extra;
    std::set_difference(an.begin(), an.end(), pn.begin(), pn.end(),
                        std::inserter(extra, extra.begin()));
    CHECK(std::includes(an.begin(), an.end(), pn.begin(), pn.end()));
    CHECK(!extra.empty());
    for (const auto& n : extra) CHECK(n.rfind("attn.", 0) == 0);
    // norm_only matches the plain layout
    SegNetConfig normonly = plain;
    normonly.block_type = BlockType::NormOnly;
    CHECK(name_set(build_segnet(normonly, 1)->registry) == pn);
}

TEST_CASE("parameter count matches the architecture-walk oracle") {
    for (const BlockType bt : {BlockType::None, BlockType::DualAttention}) {
        SegNetConfig cfg;
        cfg.num_classes = 2;
        cfg.depth = 3;
        cfg.base_channels = 8;
        cfg.block_type = bt;
        auto net = build_segnet(cfg, 5);
        CHECK(net->registry.scalar_count() == expected_segnet_scalars(cfg));
    }
}

TEST_CASE("seg_forward: valid probmap, eval purity, zero-logit construction") {
    SegNetConfig cfg;
    cfg.num_classes = 2;
    cfg.depth = 2;
    cfg.base_channels = 4;
    auto net = build_segnet(cfg, 3);
    Volume x = random_volume(8, 4);
    ProbMap p1 = net->forward(x, NormMode::Running);
    validate_probmap(p1);  // softmax: channel sums 1 +- 1e-5
    ProbMap p2 = net->forward(x, NormMode::Running);
    CHECK(checksum(p1.probs) == checksum(p2.probs));

    // zero the classifier: uniform (0.5, 0.5) everywhere
    net->head.W->val = Tensor(net->head.W->val.shape);
    net->head.b->val = Tensor(net->head.b->val.shape);
    ProbMap u = net->forward(x, NormMode::Running);
    for (int64_t i = 0; i < u.probs.numel(); ++i)
        CHECK(u.probs[i] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("seg_forward rejects indivisible shapes with a padding hint") {
    SegNetConfig cfg;
    cfg.num_classes = 2;
    cfg.depth = 3;
    auto net = build_segnet(cfg, 3);
    Volume bad{random_tensor({1, 6, 8, 8}, 5)};
    CHECK_THROWS_WITH_AS(net->forward(bad, NormMode::Running), doctest::Contains("pad up to 8"),
                         std::invalid_argument);
}

TEST_CASE("partition_params: completeness, disjointness, kind selection") {
    SegNetConfig cfg;
    cfg.num_classes = 3;
    cfg.block_type = BlockType::DualAttention;
    auto net = build_segnet(cfg, 8);
    const size_t total = net->registry.params.size();

    for (const AdaptTarget t : {AdaptTarget::Norm, AdaptTarget::ChannelOnly,
                                AdaptTarget::SpatialOnly, AdaptTarget::DualAttention,
                                AdaptTarget::All}) {
        ParamPartition part = partition_params(*net, t);
        CHECK(part.adaptable.size() + part.frozen.size() == total);
        std::set<std::string> a(part.adaptable.begin(), part.adaptable.end());
        for (const auto& f : part.frozen) CHECK(a.count(f) == 0);
    }

    ParamPartition norm = partition_params(*net, AdaptTarget::Norm);
    for (const auto& n : norm.adaptable) {
        const bool is_norm = n.find(".gamma") != std::string::npos ||
                             n.find(".beta") != std::string::npos;
        CHECK(is_norm);
    }
    ParamPartition ch = partition_params(*net, AdaptTarget::ChannelOnly);
    ParamPartition sp = partition_params(*net, AdaptTarget::SpatialOnly);
    ParamPartition dual = partition_params(*net, AdaptTarget::DualAttention);
    std::set<std::string> u(ch.adaptable.begin(), ch.adaptable.end());
    for (const auto& n : sp.adaptable) CHECK(u.insert(n).second);  // disjoint
    CHECK(u == std::set<std::string>(dual.adaptable.begin(), dual.adaptable.end()));

    // plain net: norm target fine, attention targets rejected
    SegNetConfig plain;
    plain.num_classes = 3;
    auto pnet = build_segnet(plain, 8);
    CHECK_NOTHROW(partition_params(*pnet, AdaptTarget::Norm));
    CHECK_THROWS_AS(partition_params(*pnet, AdaptTarget::DualAttention), std::invalid_argument);
}

TEST_CASE("clone_segnet copies values and detaches storage") {
    SegNetConfig cfg;
    cfg.num_classes = 2;
    cfg.depth = 2;
    auto net = build_segnet(cfg, 13);
    auto copy = clone_segnet(*net);
    CHECK(params_checksum(net->registry) == params_checksum(copy->registry));
    copy->head.b->val[0] += 1.0;
    CHECK(params_checksum(net->registry) != params_checksum(copy->registry));
}

// ---------------------------------------------------------------------------
// registration
// ---------------------------------------------------------------------------

namespace {

RegNetConfig small_reg_cfg(int C = 2, int depth = 2) {
    RegNetConfig cfg;
    cfg.num_classes = C;
    cfg.depth = depth;
    cfg.base_channels = 4;
    return cfg;
}

}  // namespace

TEST_CASE("fresh regnet emits the identity deformation") {
    auto net = build_regnet(small_reg_cfg(), 1);
    const ProbMap moving = random_probmap(2, 8, 8, 8, 2);
    const Atlas fixed{random_probmap(2, 8, 8, 8, 3).probs, 0.9};
    DeformationField f = reg_forward(*net, moving, fixed);
    CHECK(f.is_identity(0.0));
    ProbMap w = warp(moving, f);
    for (int64_t i = 0; i < w.probs.numel(); ++i)
        CHECK(w.probs[i] == doctest::Approx(moving.probs[i]).epsilon(1e-6));
}

TEST_CASE("reg_forward: purity and direction asymmetry") {
    auto net = build_regnet(small_reg_cfg(), 5);
    // perturb the heads so the net emits a non-identity field
    Rng rng(6);
    for (int64_t i = 0; i < net->affine_W->val.numel(); ++i)
        net->affine_W->val[i] = 0.02 * rng.normal();
    for (int64_t i = 0; i < net->disp_head.W->val.numel(); ++i)
        net->disp_head.W->val[i] = 0.1 * rng.normal();

    const ProbMap a = random_probmap(2, 8, 8, 8, 7);
    const ProbMap b = random_probmap(2, 8, 8, 8, 8);
    const Atlas atlas_b{b.probs, 0.9};
    const Atlas atlas_a{a.probs, 0.9};
    DeformationField f1 = reg_forward(*net, a, atlas_b);
    DeformationField f2 = reg_forward(*net, a, atlas_b);
    CHECK(checksum(f1.displacement) == checksum(f2.displacement));
    CHECK(checksum(f1.affine) == checksum(f2.affine));
    DeformationField g = reg_forward(*net, b, atlas_a);
    CHECK(checksum(f1.displacement) != checksum(g.displacement));

    const ProbMap small = random_probmap(2, 4, 4, 4, 9);
    CHECK_THROWS_AS(reg_forward(*net, small, atlas_b), std::invalid_argument);
}

TEST_CASE("warp: identity, integer shift oracle, linearity, simplex sums") {
    const int N = 8;
    const ProbMap p = random_probmap(3, N, N, N, 11);

    DeformationField id = DeformationField::identity(N, N, N);
    ProbMap w0 = warp(p, id);
    for (int64_t i = 0; i < p.probs.numel(); ++i)
        CHECK(w0.probs[i] == doctest::Approx(p.probs[i]).epsilon(1e-6));

    // +1 voxel translation along the last axis: out(...,d) = in(...,d+1)
    DeformationField shift = DeformationField::identity(N, N, N);
    const double step = 2.0 / (N - 1);
    const int64_t vol = static_cast<int64_t>(N) * N * N;
    for (int64_t v = 0; v < vol; ++v) shift.displacement[2 * vol + v] = step;
    const ProbMap oh = one_hot(random_labels(3, N, N, N, 12), 3);
    ProbMap ws = warp(oh, shift);
    for (int c = 0; c < 3; ++c)
        for (int h = 0; h < N; ++h)
            for (int w = 0; w < N; ++w)
                for (int d = 0; d < N - 1; ++d)
                    CHECK(ws.probs.at4(c, h, w, d) == oh.probs.at4(c, h, w, d + 1));

    // linearity over a shared field
    DeformationField f = DeformationField::identity(N, N, N);
    Rng rng(13);
    for (int64_t i = 0; i < f.displacement.numel(); ++i)
        f.displacement[i] = 0.15 * rng.normal();
    const ProbMap q = random_probmap(3, N, N, N, 14);
    const double alpha = 0.3, beta = 0.7;
    Tensor mix(p.probs.shape);
    for (int64_t i = 0; i < mix.numel(); ++i) mix[i] = alpha * p.probs[i] + beta * q.probs[i];
    const Tensor wm = warp_tensor(mix, f);
    const Tensor wp = warp_tensor(p.probs, f);
    const Tensor wq = warp_tensor(q.probs, f);
    for (int64_t i = 0; i < wm.numel(); ++i)
        CHECK(wm[i] == doctest::Approx(alpha * wp[i] + beta * wq[i]).epsilon(1e-6));

    // simplex sums survive warping (border clamping included)
    validate_probmap(ProbMap{wp}, 1e-5);
    validate_probmap(ProbMap{wq}, 1e-5);

    DeformationField nan_field = f;
    nan_field.displacement[0] = std::nan("");
    CHECK_THROWS(warp(p, nan_field));
}

TEST_CASE("smoothness penalty: zero, constant and ramp fields") {
    DeformationField z = DeformationField::identity(3, 3, 3);
    CHECK(smoothness_penalty(z) == 0.0);

    DeformationField c = z;
    for (int64_t i = 0; i < c.displacement.numel(); ++i) c.displacement[i] = 0.37;
    CHECK(smoothness_penalty(c) == doctest::Approx(0.0));

    // ramp of slope s along the first axis in component 0; hand-summed oracle
    const double s = 0.21;
    DeformationField r = z;
    for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 3; ++w)
            for (int d = 0; d < 3; ++d) r.displacement.at4(0, h, w, d) = s * h;
    double hand = 0.0;
    int64_t count = 0;
    for (int k = 0; k < 3; ++k)
        for (int h = 0; h < 3; ++h)
            for (int w = 0; w < 3; ++w)
                for (int d = 0; d < 3; ++d) {
                    if (h + 1 < 3) {
                        const double df =
                            r.displacement.at4(k, h + 1, w, d) - r.displacement.at4(k, h, w, d);
                        hand += df * df;
                        ++count;
                        CHECK((k != 0 || df * df == doctest::Approx(s * s)));
                    }
                    if (w + 1 < 3) ++count;
                    if (d + 1 < 3) ++count;
                }
    CHECK(smoothness_penalty(r) == doctest::Approx(hand / static_cast<double>(count)));
}

TEST_CASE("atlas loss gradient flows through warp and regnet to the probmap") {
    auto net = build_regnet(small_reg_cfg(2, 2), 21);
    // use reduced pooling so a 4^3 grid works: depth 2 needs extents % 4 == 0
    Rng rng(22);
    for (int64_t i = 0; i < net->affine_W->val.numel(); ++i)
        net->affine_W->val[i] = 0.01 * rng.normal();
    for (int64_t i = 0; i < net->disp_head.W->val.numel(); ++i)
        net->disp_head.W->val[i] = 0.05 * rng.normal();

    VarPtr p = make_param(random_tensor({2, 4, 4, 4}, 23, 0.05, 0.95));
    VarPtr a = make_const(random_probmap(2, 4, 4, 4, 24).probs);
    auto rebuild = [&] {
        FieldVar f = reg_forward_var(*net, p, a, NormMode::Running);
        return atlas_loss_var(warp_var(p, f), a);
    };
    CHECK(gradcheck(rebuild, {p}) < 1e-4);
}

TEST_CASE("clone_regnet reproduces the source bitwise") {
    auto net = build_regnet(small_reg_cfg(3, 2), 31);
    Rng rng(32);
    for (auto& p : net->registry.params)
        for (int64_t i = 0; i < p.var->val.numel(); ++i) p.var->val[i] += 0.01 * rng.normal();
    auto copy = clone_regnet(*net);
    CHECK(params_checksum(net->registry) == params_checksum(copy->registry));
}

// ---------------------------------------------------------------------------
// atlas
// ---------------------------------------------------------------------------

TEST_CASE("atlas_init: means of one-hot labels") {
    LabelMap a = random_labels(2, 4, 4, 4, 41);
    Atlas one = atlas_init({a}, 2);
    const ProbMap oh = one_hot(a, 2);
    CHECK(checksum(one.probs) == checksum(oh.probs));

    Atlas two = atlas_init({a, a}, 2);
    for (int64_t i = 0; i < two.probs.numel(); ++i)
        CHECK(two.probs[i] == doctest::Approx(oh.probs[i]).epsilon(1e-12));

    LabelMap l0, l1;
    l0.shape = l1.shape = {1, 1, 1};
    l0.num_classes = l1.num_classes = 2;
    l0.labels = {0};
    l1.labels = {1};
    Atlas half = atlas_init({l0, l1}, 2);
    CHECK(half.probs.at4(0, 0, 0, 0) == doctest::Approx(0.5));
    CHECK(half.probs.at4(1, 0, 0, 0) == doctest::Approx(0.5));

    CHECK_THROWS_AS(atlas_init({}, 2), std::invalid_argument);
}

TEST_CASE("atlas_update: EMA limits and the scalar example") {
    LabelMap a = random_labels(2, 4, 4, 4, 51);
    Atlas atlas = atlas_init({a}, 2, 1.0);
    const ProbMap fresh = random_probmap(2, 4, 4, 4, 52);
    Atlas same = atlas_update(atlas, {fresh.probs});
    CHECK(checksum(same.probs) == checksum(atlas.probs));  // m = 1

    atlas.momentum = 0.0;
    Atlas replaced = atlas_update(atlas, {fresh.probs});
    CHECK(checksum(replaced.probs) == checksum(fresh.probs));  // m = 0

    Atlas scalar;
    scalar.momentum = 0.9;
    scalar.probs = Tensor({2, 1, 1, 1});
    scalar.probs.v = {1.0, 0.0};
    Tensor newmean({2, 1, 1, 1});
    newmean.v = {0.0, 1.0};
    Atlas out = atlas_update(scalar, {newmean});
    CHECK(out.probs[0] == doctest::Approx(0.9));
    CHECK(out.probs[1] == doctest::Approx(0.1));

    Tensor wrong({2, 2, 1, 1});
    CHECK_THROWS_AS(atlas_update(scalar, {wrong}), std::invalid_argument);
}

TEST_CASE("atlas_update preserves bounds and simplex sums") {
    LabelMap a = random_labels(3, 4, 4, 4, 61);
    LabelMap b = random_labels(3, 4, 4, 4, 62);
    Atlas atlas = atlas_init({a, b}, 3, 0.8);
    for (uint64_t s = 0; s < 5; ++s) {
        atlas = atlas_update(
            atlas, {random_probmap(3, 4, 4, 4, 70 + s).probs, random_probmap(3, 4, 4, 4, 80 + s).probs});
        validate_atlas(atlas, 1e-4);
    }
}
