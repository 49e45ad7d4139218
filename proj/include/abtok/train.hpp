#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "abtok/masking.hpp"
#include "abtok/metrics.hpp"
#include "abtok/model.hpp"
#include "abtok/tokenizers.hpp"

namespace abtok::train {

// Fine-tuning hyperparameters. The defaults are the published protocol's
// values; every field is overridable.
struct FinetuneConfig {
    int epochs = 20;
    int batch_size = 16;
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-16;
    double weight_decay = 5e-3;
    long long warmup_steps = 100;
    double dropout = 0.1;
    std::uint64_t seed = 1;

    void validate() const;
    model::OptimizerConfig optimizer(long long total_steps) const;
};

struct PretrainConfig {
    int epochs = 6;
    int batch_size = 384;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double epsilon = 1e-6;
    double weight_decay = 0.01;
    long long warmup_steps = 30000;
    mask::MaskingConfig masking;
    std::uint64_t seed = 1;

    void validate() const;
    model::OptimizerConfig optimizer(long long total_steps) const;
};

// One record per epoch; `reports` is filled by finetune only.
struct TrainHistory {
    std::vector<double> losses;
    std::vector<double> seconds;
    std::vector<double> lrs;
    std::vector<metrics::EvalReport> reports;
};

// Masked-LM pretraining. Each epoch reshuffles the corpus (seeded) and
// re-masks every batch with a fresh epoch-derived seed, so the model sees
// different corruptions of the same sequences over time. The learning-rate
// schedule spans epochs * batches-per-epoch steps, fixed up front. If `log`
// is non-null one JSON line {"epoch":..,"loss":..,"seconds":..,"lr":..} is
// written per epoch.
std::pair<model::Model, TrainHistory> train_mlm(const std::vector<std::string>& sequences,
                                                const tok::Tokenizer& tokenizer,
                                                const model::ModelConfig& mcfg,
                                                const PretrainConfig& pcfg,
                                                std::ostream* log = nullptr);

// Continues training an existing model in place (used by train_mlm after
// init, and directly when warm-starting from a checkpoint).
TrainHistory train_mlm_inplace(model::Model& m, const std::vector<std::string>& sequences,
                               const tok::Tokenizer& tokenizer, const PretrainConfig& pcfg,
                               std::ostream* log = nullptr);

// Mean masked-LM loss and masked-token prediction accuracy over one random
// masking of the corpus (eval mode, no parameter updates).
struct MlmEval {
    double loss = 0.0;
    double accuracy = 0.0;
    long long supervised = 0;
};
MlmEval mlm_eval(const model::Model& m, const std::vector<std::string>& sequences,
                 const tok::Tokenizer& tokenizer, const mask::MaskingConfig& mcfg,
                 std::uint64_t mask_seed);

struct LabeledSet {
    std::vector<std::string> sequences;
    std::vector<int> labels;
};

// Supervised fine-tuning: attaches a freshly initialized classifier head for
// `num_classes` classes to a copy of `pretrained`, then trains the full model
// on `train` and evaluates on `held_out` after every epoch. Labels outside
// [0, num_classes) are an argument error.
std::pair<model::Model, TrainHistory> finetune(const LabeledSet& train_set,
                                               const LabeledSet& held_out,
                                               const model::Model& pretrained,
                                               const tok::Tokenizer& tokenizer, int num_classes,
                                               const FinetuneConfig& fcfg,
                                               std::ostream* log = nullptr);

// Eval-mode class scores (softmax rows) for a labeled set.
metrics::EvalReport evaluate_classifier(const model::Model& m, const LabeledSet& data,
                                        const tok::Tokenizer& tokenizer,
                                        const std::vector<std::string>& class_names = {});

}  // namespace abtok::train
