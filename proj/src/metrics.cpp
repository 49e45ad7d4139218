#include "abtok/metrics.hpp"

#include <algorithm>
#include <cstddef>
#include <numeric>

#include "json.hpp"

#include "abtok/errors.hpp"

namespace abtok::metrics {

double auroc_binary(const std::vector<double>& pos_scores,
                    const std::vector<double>& neg_scores) {
    if (pos_scores.empty() || neg_scores.empty()) {
        throw metric_error("auroc needs at least one positive and one negative score");
    }
    const std::size_t P = pos_scores.size();
    const std::size_t N = neg_scores.size();

    // (score, is_positive), sorted ascending; ties get their midrank, so the
    // rank sum over positives counts each beaten negative once and each tied
    // negative half — identical, term for term, to the pair enumeration.
    std::vector<std::pair<double, int>> all;
    all.reserve(P + N);
    for (double s : pos_scores) all.emplace_back(s, 1);
    for (double s : neg_scores) all.emplace_back(s, 0);
    std::sort(all.begin(), all.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) ++j;
        // 1-based ranks i+1 .. j share midrank (i+1 + j) / 2.
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (all[k].second) rank_sum_pos += midrank;
        }
        i = j;
    }
    const double p = static_cast<double>(P);
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(N));
}

double auroc_multiclass(const ScoreMatrix& scores, const std::vector<int>& labels) {
    if (static_cast<std::size_t>(scores.rows()) != labels.size()) {
        throw argument_error("scores and labels disagree on sample count");
    }
    const int K = static_cast<int>(scores.cols());
    if (K < 2) throw argument_error("multiclass auroc needs at least 2 classes");

    double total = 0.0;
    for (int k = 0; k < K; ++k) {
        std::vector<double> pos, neg;
        for (Eigen::Index r = 0; r < scores.rows(); ++r) {
            (labels[static_cast<std::size_t>(r)] == k ? pos : neg).push_back(scores(r, k));
        }
        if (pos.empty()) {
            throw metric_error("class " + std::to_string(k) + " has zero samples");
        }
        total += auroc_binary(pos, neg);
    }
    return total / K;
}

ConfusionResult confusion_and_accuracy(const std::vector<int>& preds,
                                       const std::vector<int>& labels, int num_classes) {
    if (preds.size() != labels.size()) {
        throw argument_error("preds and labels differ in length");
    }
    ConfusionResult out;
    out.confusion.assign(static_cast<std::size_t>(num_classes),
                         std::vector<long long>(static_cast<std::size_t>(num_classes), 0));
    long long correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int t = labels[i];
        const int p = preds[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
            throw argument_error("class index out of range at sample " + std::to_string(i));
        }
        ++out.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
        if (t == p) ++correct;
    }
    out.accuracy = preds.empty() ? 0.0 : static_cast<double>(correct) / preds.size();
    return out;
}

MacroPRF macro_prf(const Confusion& confusion) {
    const std::size_t K = confusion.size();
    if (K < 2) throw argument_error("macro metrics need at least 2 classes");
    long long total = 0;
    for (const auto& row : confusion) {
        if (row.size() != K) throw argument_error("confusion matrix is not square");
        total = std::accumulate(row.begin(), row.end(), total);
    }
    if (total == 0) throw metric_error("confusion matrix is empty");

    MacroPRF out;
    out.per_class.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        long long tp = confusion[k][k], fp = 0, fn = 0;
        for (std::size_t i = 0; i < K; ++i) {
            if (i == k) continue;
            fp += confusion[i][k];
            fn += confusion[k][i];
        }
        ClassPRF& c = out.per_class[k];
        c.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        c.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        c.f1 = c.precision + c.recall > 0
                   ? 2.0 * c.precision * c.recall / (c.precision + c.recall)
                   : 0.0;
        out.precision += c.precision;
        out.recall += c.recall;
        out.f1 += c.f1;
    }
    out.precision /= static_cast<double>(K);
    out.recall /= static_cast<double>(K);
    out.f1 /= static_cast<double>(K);
    return out;
}

EvalReport evaluate_scores(const ScoreMatrix& scores, const std::vector<int>& labels,
                           const std::vector<std::string>& class_names) {
    const int K = static_cast<int>(scores.cols());
    std::vector<int> preds(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        int best = 0;
        for (int k = 1; k < K; ++k) {
            if (scores(r, k) > scores(r, best)) best = k;
        }
        preds[static_cast<std::size_t>(r)] = best;
    }

    EvalReport rep;
    rep.auroc = auroc_multiclass(scores, labels);
    ConfusionResult cm = confusion_and_accuracy(preds, labels, K);
    rep.accuracy = cm.accuracy;
    rep.confusion = std::move(cm.confusion);
    MacroPRF prf = macro_prf(rep.confusion);
    rep.precision_macro = prf.precision;
    rep.recall_macro = prf.recall;
    rep.f1_macro = prf.f1;

    rep.per_class.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        PerClassReport& c = rep.per_class[static_cast<std::size_t>(k)];
        c.name = k < static_cast<int>(class_names.size()) ? class_names[static_cast<std::size_t>(k)]
                                                          : "class_" + std::to_string(k);
        std::vector<double> pos, neg;
        for (Eigen::Index r = 0; r < scores.rows(); ++r) {
            (labels[static_cast<std::size_t>(r)] == k ? pos : neg).push_back(scores(r, k));
        }
        c.auroc = auroc_binary(pos, neg);
        c.precision = prf.per_class[static_cast<std::size_t>(k)].precision;
        c.recall = prf.per_class[static_cast<std::size_t>(k)].recall;
        c.f1 = prf.per_class[static_cast<std::size_t>(k)].f1;
        c.support = std::accumulate(rep.confusion[static_cast<std::size_t>(k)].begin(),
                                    rep.confusion[static_cast<std::size_t>(k)].end(), 0LL);
    }
    return rep;
}

std::string report_to_json(const EvalReport& report, int indent) {
    nlohmann::ordered_json j;
    j["auroc"] = report.auroc;
    j["acc"] = report.accuracy;
    j["f1"] = report.f1_macro;
    j["precision"] = report.precision_macro;
    j["recall"] = report.recall_macro;
    j["per_class"] = nlohmann::ordered_json::array();
    for (const PerClassReport& c : report.per_class) {
        nlohmann::ordered_json e;
        e["class"] = c.name;
        e["auroc"] = c.auroc;
        e["precision"] = c.precision;
        e["recall"] = c.recall;
        e["f1"] = c.f1;
        e["support"] = c.support;
        j["per_class"].push_back(std::move(e));
    }
    j["confusion"] = report.confusion;
    return j.dump(indent);
}

}  // namespace abtok::metrics
