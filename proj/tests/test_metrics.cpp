#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "abtok/errors.hpp"
#include "abtok/metrics.hpp"
#include "abtok/rng.hpp"

using namespace abtok;
using namespace abtok::metrics;

namespace {

// Reference implementation: literal pair enumeration of the defining sum.
double auroc_bruteforce(const std::vector<double>& pos, const std::vector<double>& neg) {
    double s = 0.0;
    for (double p : pos)
        for (double n : neg) s += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    return s / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

}  // namespace

TEST_CASE("binary auroc hand-enumerated examples") {
    CHECK(auroc_binary({0.9, 0.4}, {0.5, 0.3}) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(auroc_binary({1.0}, {0.0}) == 1.0);
    CHECK(auroc_binary({0.5}, {0.5}) == 0.5);
    CHECK(auroc_binary({0.0}, {1.0}) == 0.0);
}

TEST_CASE("binary auroc rejects empty inputs") {
    CHECK_THROWS_AS(auroc_binary({}, {0.5}), metric_error);
    CHECK_THROWS_AS(auroc_binary({0.5}, {}), metric_error);
}

TEST_CASE("binary auroc equals brute-force pair enumeration exactly") {
    det_rng rng(20240601);
    for (int trial = 0; trial < 1000; ++trial) {
        const int np = 1 + static_cast<int>(rng.uniform_index(50));
        const int nn = 1 + static_cast<int>(rng.uniform_index(50));
        std::vector<double> pos(np), neg(nn);
        // Coarse grid scores force plenty of ties.
        for (double& s : pos) s = static_cast<double>(rng.uniform_index(8)) / 8.0;
        for (double& s : neg) s = static_cast<double>(rng.uniform_index(8)) / 8.0;
        const double fast = auroc_binary(pos, neg);
        const double slow = auroc_bruteforce(pos, neg);
        REQUIRE(std::abs(fast - slow) <= 1e-12);
    }
}

TEST_CASE("auroc is invariant under strictly increasing transforms") {
    det_rng rng(7);
    std::vector<double> pos(30), neg(40);
    for (double& s : pos) s = rng.uniform();
    for (double& s : neg) s = rng.uniform();
    const double base = auroc_binary(pos, neg);
    auto warp = [](std::vector<double> v) {
        for (double& x : v) x = std::exp(3.0 * x) - 0.5;
        return v;
    };
    CHECK(auroc_binary(warp(pos), warp(neg)) == doctest::Approx(base).epsilon(1e-15));
}

TEST_CASE("auroc complement: swapping classes reflects around 1/2") {
    det_rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> pos(10), neg(12);
        for (double& s : pos) s = static_cast<double>(rng.uniform_index(5));
        for (double& s : neg) s = static_cast<double>(rng.uniform_index(5));
        CHECK(auroc_binary(pos, neg) + auroc_binary(neg, pos) == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("multiclass auroc: one-hot-perfect scores give 1, identical rows give 1/2") {
    ScoreMatrix perfect(6, 3);
    std::vector<int> labels = {0, 1, 2, 0, 1, 2};
    perfect.setZero();
    for (int i = 0; i < 6; ++i) perfect(i, labels[static_cast<std::size_t>(i)]) = 1.0;
    CHECK(auroc_multiclass(perfect, labels) == 1.0);

    ScoreMatrix flat = ScoreMatrix::Constant(6, 3, 0.25);
    CHECK(auroc_multiclass(flat, labels) == 0.5);
}

TEST_CASE("multiclass auroc equals the mean of hand-enumerated per-class values") {
    ScoreMatrix scores(6, 3);
    scores << 0.6, 0.3, 0.1,
              0.2, 0.5, 0.3,
              0.1, 0.1, 0.8,
              0.4, 0.4, 0.2,
              0.3, 0.3, 0.4,
              0.5, 0.2, 0.3;
    std::vector<int> labels = {0, 1, 2, 0, 2, 1};
    // Pair enumeration per class: 7/8, 5/8, 1; mean = 5/6.
    CHECK(auroc_multiclass(scores, labels) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("multiclass auroc names a zero-sample class") {
    ScoreMatrix scores = ScoreMatrix::Random(4, 3);
    std::vector<int> labels = {0, 0, 1, 1};  // class 2 absent
    CHECK_THROWS_WITH_AS(auroc_multiclass(scores, labels), doctest::Contains("2"), metric_error);
}

TEST_CASE("confusion and accuracy: binary TP=3 TN=4 FP=2 FN=1") {
    // Class 1 = positive. labels/preds built to produce those cell counts.
    std::vector<int> labels, preds;
    for (int i = 0; i < 3; ++i) { labels.push_back(1); preds.push_back(1); }  // TP
    for (int i = 0; i < 4; ++i) { labels.push_back(0); preds.push_back(0); }  // TN
    for (int i = 0; i < 2; ++i) { labels.push_back(0); preds.push_back(1); }  // FP
    labels.push_back(1); preds.push_back(0);                                  // FN
    ConfusionResult r = confusion_and_accuracy(preds, labels, 2);
    CHECK(r.accuracy == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(r.confusion[1][1] == 3);
    CHECK(r.confusion[0][0] == 4);
    CHECK(r.confusion[0][1] == 2);
    CHECK(r.confusion[1][0] == 1);
}

TEST_CASE("confusion: perfect predictions give accuracy 1 and a diagonal matrix") {
    std::vector<int> labels = {0, 1, 2, 1, 0, 2};
    ConfusionResult r = confusion_and_accuracy(labels, labels, 3);
    CHECK(r.accuracy == 1.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(r.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ==
                  (i == j ? 2 : 0));
}

TEST_CASE("confusion: constant predictor over uniform labels scores 1/3") {
    std::vector<int> labels = {0, 0, 0, 1, 1, 1, 2, 2, 2};
    std::vector<int> preds(9, 0);
    ConfusionResult r = confusion_and_accuracy(preds, labels, 3);
    CHECK(r.accuracy == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("confusion rejects mismatched lengths and out-of-range ids") {
    CHECK_THROWS_AS(confusion_and_accuracy({0, 1}, {0}, 2), argument_error);
    CHECK_THROWS_AS(confusion_and_accuracy({0, 2}, {0, 1}, 2), argument_error);
}

TEST_CASE("macro prf: hand arithmetic on the binary fixture") {
    // Class 1: TP=3, FP=2, FN=1 -> P=0.6, R=0.75, F1=0.6667.
    Confusion c = {{4, 2}, {1, 3}};
    MacroPRF m = macro_prf(c);
    CHECK(m.per_class[1].precision == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(m.per_class[1].recall == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(m.per_class[1].f1 == doctest::Approx(2.0 * 0.6 * 0.75 / 1.35).epsilon(1e-12));
    // Class 0: TP=4, FP=1, FN=2 -> P=0.8, R=2/3.
    CHECK(m.per_class[0].precision == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(m.per_class[0].recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(m.precision == doctest::Approx((0.6 + 0.8) / 2.0).epsilon(1e-15));
}

TEST_CASE("macro prf: P=0.5, R=1 gives F1 = 2/3") {
    // Class 1: TP=2, FP=2 (P=0.5), FN=0 (R=1).
    Confusion c = {{4, 2}, {0, 2}};
    MacroPRF m = macro_prf(c);
    CHECK(m.per_class[1].precision == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.per_class[1].recall == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.per_class[1].f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("macro prf: perfect diagonal gives all ones") {
    Confusion c = {{5, 0, 0}, {0, 3, 0}, {0, 0, 7}};
    MacroPRF m = macro_prf(c);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == 1.0);
}

TEST_CASE("macro prf: zero-denominator classes score 0, empty matrix errors") {
    // Class 1 never predicted and never true -> all three are 0 by convention.
    Confusion c = {{5, 0}, {0, 0}};
    MacroPRF m = macro_prf(c);
    CHECK(m.per_class[1].precision == 0.0);
    CHECK(m.per_class[1].recall == 0.0);
    CHECK(m.per_class[1].f1 == 0.0);
    CHECK(m.precision == doctest::Approx(0.5).epsilon(1e-15));
    Confusion zero = {{0, 0}, {0, 0}};
    CHECK_THROWS_AS(macro_prf(zero), metric_error);
}

TEST_CASE("macro f1 lies between per-class precision and recall") {
    det_rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        Confusion c(3, std::vector<long long>(3, 0));
        for (auto& row : c)
            for (auto& cell : row) cell = static_cast<long long>(rng.uniform_index(20));
        long long total = 0;
        for (auto& row : c)
            for (long long cell : row) total += cell;
        if (total == 0) continue;
        MacroPRF m = macro_prf(c);
        for (const ClassPRF& k : m.per_class) {
            if (k.precision + k.recall == 0.0) continue;
            CHECK(k.f1 >= std::min(k.precision, k.recall) - 1e-12);
            CHECK(k.f1 <= std::max(k.precision, k.recall) + 1e-12);
        }
    }
}

TEST_CASE("evaluate_scores assembles a consistent report") {
    ScoreMatrix scores(6, 3);
    scores << 0.6, 0.3, 0.1,
              0.2, 0.5, 0.3,
              0.1, 0.1, 0.8,
              0.4, 0.4, 0.2,
              0.3, 0.3, 0.4,
              0.5, 0.2, 0.3;
    std::vector<int> labels = {0, 1, 2, 0, 2, 1};
    EvalReport rep = evaluate_scores(scores, labels, {"alpha", "beta", "gamma"});

    CHECK(rep.auroc == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    // Argmax preds: 0,1,2,0 (tie -> first),2,0 vs labels 0,1,2,0,2,1 -> 5/6 correct.
    CHECK(rep.accuracy == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    long long total = 0;
    for (const auto& row : rep.confusion)
        for (long long cell : row) total += cell;
    CHECK(total == 6);
    long long trace = 0;
    for (std::size_t k = 0; k < 3; ++k) trace += rep.confusion[k][k];
    CHECK(rep.accuracy == doctest::Approx(static_cast<double>(trace) / 6.0).epsilon(1e-15));
    REQUIRE(rep.per_class.size() == 3);
    CHECK(rep.per_class[0].name == "alpha");
    CHECK(rep.per_class[0].support == 2);
    CHECK(rep.per_class[0].auroc == doctest::Approx(7.0 / 8.0).epsilon(1e-15));
    CHECK(rep.per_class[1].auroc == doctest::Approx(5.0 / 8.0).epsilon(1e-15));
    CHECK(rep.per_class[2].auroc == doctest::Approx(1.0).epsilon(1e-15));
    for (double v : {rep.auroc, rep.accuracy, rep.f1_macro, rep.precision_macro, rep.recall_macro}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("report serializes with the fixed key set") {
    ScoreMatrix scores(4, 2);
    scores << 0.9, 0.1,
              0.2, 0.8,
              0.7, 0.3,
              0.4, 0.6;
    std::vector<int> labels = {0, 1, 0, 1};
    EvalReport rep = evaluate_scores(scores, labels, {"neg", "pos"});
    nlohmann::json j = nlohmann::json::parse(report_to_json(rep));
    for (const char* key : {"auroc", "acc", "f1", "precision", "recall", "per_class", "confusion"})
        CHECK(j.contains(key));
    CHECK(j["auroc"].get<double>() == 1.0);
    CHECK(j["acc"].get<double>() == 1.0);
    CHECK(j["per_class"].size() == 2);
    CHECK(j["per_class"][0]["class"] == "neg");
    CHECK(j["per_class"][0]["support"] == 2);
    CHECK(j["confusion"].size() == 2);
    CHECK(j["confusion"][0][0] == 2);
}
