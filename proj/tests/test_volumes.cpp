#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "testutil.hpp"

using namespace adaatlas;
using namespace testutil;

TEST_CASE("one_hot: definition and invalid labels") {
    LabelMap m;
    m.shape = {1, 1, 1};
    m.num_classes = 2;
    m.labels = {0};
    ProbMap p = one_hot(m, 2);
    CHECK(p.probs.at4(0, 0, 0, 0) == 1.0);
    CHECK(p.probs.at4(1, 0, 0, 0) == 0.0);

    LabelMap two;
    two.shape = {2, 1, 1};
    two.num_classes = 2;
    two.labels = {0, 1};
    ProbMap q = one_hot(two, 2);
    CHECK(q.probs.at4(0, 0, 0, 0) == 1.0);
    CHECK(q.probs.at4(1, 0, 0, 0) == 0.0);
    CHECK(q.probs.at4(0, 1, 0, 0) == 0.0);
    CHECK(q.probs.at4(1, 1, 0, 0) == 1.0);
    validate_probmap(q);

    LabelMap bad = two;
    bad.labels[0] = 2;
    CHECK_THROWS_AS(one_hot(bad, 2), std::invalid_argument);
}

TEST_CASE("argmax_labels: tie goes to the lowest class index") {
    Tensor t({2, 1, 1, 1});
    t.v = {0.9, 0.1};
    CHECK(argmax_labels(ProbMap{t}).labels[0] == 0);
    t.v = {0.5, 0.5};
    CHECK(argmax_labels(ProbMap{t}).labels[0] == 0);
    t.v = {0.1, 0.9};
    CHECK(argmax_labels(ProbMap{t}).labels[0] == 1);
}

TEST_CASE("one_hot / argmax_labels round-trip on random label maps") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const int C = 2 + static_cast<int>(seed % 3);
        LabelMap m = random_labels(C, 4, 4, 4, seed);
        LabelMap back = argmax_labels(one_hot(m, C));
        CHECK(back.labels == m.labels);
    }
}

TEST_CASE("dice: trivial and hand-counted examples") {
    LabelMap a = random_labels(3, 4, 4, 4, 5);
    DiceReport self = dice(a, a, 3);
    for (const auto& [cls, d] : self.per_class) CHECK(d == doctest::Approx(1.0));
    CHECK(self.mean_fg == doctest::Approx(1.0));

    // disjoint equal-size foregrounds
    LabelMap p, g;
    p.shape = g.shape = {4, 1, 1};
    p.num_classes = g.num_classes = 2;
    p.labels = {1, 1, 0, 0};
    g.labels = {0, 0, 1, 1};
    CHECK(dice(p, g, 2).per_class.at(1) == doctest::Approx(0.0));

    // 8-voxel cube overlapping a one-voxel-shifted 8-voxel cube in half
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
    // brute-force count as the oracle
    int np = 0, ng = 0, ni = 0;
    for (int i = 0; i < 64; ++i) {
        np += cp.labels[static_cast<size_t>(i)];
        ng += cg.labels[static_cast<size_t>(i)];
        ni += cp.labels[static_cast<size_t>(i)] && cg.labels[static_cast<size_t>(i)];
    }
    CHECK(np == 8);
    CHECK(ng == 8);
    CHECK(ni == 4);
    CHECK(dice(cp, cg, 2).per_class.at(1) == doctest::Approx(2.0 * ni / (np + ng)));
    CHECK(dice(cp, cg, 2).per_class.at(1) == doctest::Approx(0.5));

    // both-empty class scores 1 so domain means stay defined
    LabelMap e1 = cp, e2 = cg;
    e1.num_classes = e2.num_classes = 3;
    CHECK(dice(e1, e2, 3).per_class.at(2) == doctest::Approx(1.0));

    LabelMap wrong;
    wrong.shape = {2, 2, 2};
    wrong.num_classes = 2;
    wrong.labels.assign(8, 0);
    CHECK_THROWS(dice(cp, wrong, 2));
}

TEST_CASE("dice is symmetric and relabel-invariant") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        LabelMap a = random_labels(3, 5, 4, 4, 100 + seed);
        LabelMap b = random_labels(3, 5, 4, 4, 200 + seed);
        DiceReport ab = dice(a, b, 3), ba = dice(b, a, 3);
        for (int c = 0; c < 3; ++c) CHECK(ab.per_class.at(c) == doctest::Approx(ba.per_class.at(c)));

        // permute classes 1<->2 in both inputs; report keys permute with them
        auto permuted = [](LabelMap m) {
            for (auto& l : m.labels) l = l == 1 ? 2 : (l == 2 ? 1 : l);
            return m;
        };
        DiceReport pab = dice(permuted(a), permuted(b), 3);
        CHECK(pab.per_class.at(1) == doctest::Approx(ab.per_class.at(2)));
        CHECK(pab.per_class.at(2) == doctest::Approx(ab.per_class.at(1)));
    }
}

TEST_CASE("probmap validator rejects bad maps") {
    Tensor t({2, 1, 1, 1});
    t.v = {0.7, 0.7};
    CHECK_THROWS(validate_probmap(ProbMap{t}));
    t.v = {1.3, -0.3};
    CHECK_THROWS(validate_probmap(ProbMap{t}));
    t.v = {0.25, 0.75};
    CHECK_NOTHROW(validate_probmap(ProbMap{t}));
}

TEST_CASE("standardize yields zero mean unit variance within 1e-3") {
    Volume v{random_tensor({1, 8, 8, 8}, 9, -3.0, 7.0)};
    Volume s = standardize(v);
    double mean = 0.0, var = 0.0;
    for (int64_t i = 0; i < s.data.numel(); ++i) mean += s.data[i];
    mean /= static_cast<double>(s.data.numel());
    for (int64_t i = 0; i < s.data.numel(); ++i) {
        const double d = s.data[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(s.data.numel());
    CHECK(std::fabs(mean) < 1e-3);
    CHECK(std::fabs(var - 1.0) < 1e-3);
}

TEST_CASE("AAVOL1 round-trips bit-exactly and rejects bad magic") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "aavol_test";
    fs::create_directories(dir);

    Volume v{random_tensor({1, 4, 5, 6}, 77)};
    const std::string vp = (dir / "v.aavol").string();
    save_volume(vp, v);
    Volume v2 = load_volume(vp);
    CHECK(checksum(v.data) == checksum(v2.data));

    LabelMap m = random_labels(3, 4, 5, 6, 78);
    const std::string lp = (dir / "l.aavol").string();
    save_labels(lp, m);
    LabelMap m2 = load_labels(lp);
    CHECK(m2.labels == m.labels);
    CHECK(m2.num_classes == 3);
    CHECK(m2.shape == m.shape);

    std::ofstream bad(dir / "bad.aavol", std::ios::binary);
    bad << "NOTAVOLFILE";
    bad.close();
    CHECK_THROWS_WITH_AS(load_volume((dir / "bad.aavol").string()),
                         doctest::Contains("bad magic"), std::runtime_error);
    fs::remove_all(dir);
}
