#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace abtok::metrics {

using ScoreMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Confusion = std::vector<std::vector<long long>>;  // [label][pred]

// Tie-aware AUROC via the rank formulation; exactly equals pair enumeration.
double auroc_binary(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores);

// One-vs-rest, unweighted mean over classes. scores is N x K, labels in [0,K).
double auroc_multiclass(const ScoreMatrix& scores, const std::vector<int>& labels);

struct ConfusionResult {
    Confusion confusion;  // K x K, confusion[i][j] = count(label i, predicted j)
    double accuracy = 0.0;
};

ConfusionResult confusion_and_accuracy(const std::vector<int>& preds,
                                       const std::vector<int>& labels, int num_classes);

struct ClassPRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct MacroPRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::vector<ClassPRF> per_class;
};

// Zero-denominator precision/recall/F1 are defined as 0.
MacroPRF macro_prf(const Confusion& confusion);

struct PerClassReport {
    std::string name;
    double auroc = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long long support = 0;
};

struct EvalReport {
    double auroc = 0.0;
    double accuracy = 0.0;
    double f1_macro = 0.0;
    double precision_macro = 0.0;
    double recall_macro = 0.0;
    std::vector<PerClassReport> per_class;
    Confusion confusion;
};

// Full report from raw scores: predictions are per-row argmax (first maximum
// wins ties). class_names sizes the report; empty names are synthesized.
EvalReport evaluate_scores(const ScoreMatrix& scores, const std::vector<int>& labels,
                           const std::vector<std::string>& class_names);

// Fixed key names: auroc, acc, f1, precision, recall, per_class, confusion.
std::string report_to_json(const EvalReport& report, int indent = 2);

}  // namespace abtok::metrics
