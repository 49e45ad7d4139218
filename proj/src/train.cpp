#include "abtok/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <utility>

#include "abtok/errors.hpp"
#include "abtok/rng.hpp"
#include "json.hpp"

namespace abtok::train {

namespace {

// Independent seed streams for shuffling, masking, dropout and head init.
std::uint64_t derive(std::uint64_t seed, std::uint64_t tag, std::uint64_t a = 0,
                     std::uint64_t b = 0) {
    std::uint64_t h = splitmix64(seed ^ (tag + 1) * 0x9E3779B97F4A7C15ULL);
    h = splitmix64(h ^ (a + 1) * 0xC2B2AE3D27D4EB4FULL);
    return splitmix64(h ^ (b + 1) * 0x165667B19E3779F9ULL);
}

constexpr std::uint64_t kShuffleTag = 1;
constexpr std::uint64_t kMaskTag = 2;
constexpr std::uint64_t kDropoutTag = 3;
constexpr std::uint64_t kHeadTag = 4;

std::vector<tok::TokenizedSeq> tokenize_all(const std::vector<std::string>& sequences,
                                            const tok::Tokenizer& tokenizer, int max_positions) {
    std::vector<tok::TokenizedSeq> out;
    out.reserve(sequences.size());
    for (const std::string& s : sequences) out.push_back(tokenizer.encode(s, max_positions));
    return out;
}

void write_log_line(std::ostream* log, int epoch, double loss, double seconds, double lr) {
    if (!log) return;
    nlohmann::ordered_json line = {
        {"epoch", epoch}, {"loss", loss}, {"seconds", seconds}, {"lr", lr}};
    *log << line.dump() << '\n';
}

void check_labels(const std::vector<int>& labels, std::size_t n_seqs, int num_classes,
                  const char* which) {
    if (labels.size() != n_seqs) {
        throw argument_error(std::string(which) + " set has " + std::to_string(n_seqs) +
                             " sequences but " + std::to_string(labels.size()) + " labels");
    }
    for (int l : labels) {
        if (l < 0 || l >= num_classes) {
            throw argument_error(std::string(which) + " label " + std::to_string(l) +
                                 " outside [0, " + std::to_string(num_classes) + ")");
        }
    }
}

}  // namespace

void FinetuneConfig::validate() const {
    if (epochs < 0) throw argument_error("epochs must be non-negative");
    if (batch_size < 1) throw argument_error("batch_size must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw argument_error("dropout must be in [0, 1)");
    optimizer(std::max<long long>(warmup_steps + 1, 1)).validate();
}

model::OptimizerConfig FinetuneConfig::optimizer(long long total_steps) const {
    model::OptimizerConfig o;
    o.learning_rate = learning_rate;
    o.beta1 = beta1;
    o.beta2 = beta2;
    o.epsilon = epsilon;
    o.weight_decay = weight_decay;
    o.warmup_steps = warmup_steps;
    o.total_steps = std::max(total_steps, warmup_steps);
    return o;
}

void PretrainConfig::validate() const {
    if (epochs < 0) throw argument_error("epochs must be non-negative");
    if (batch_size < 1) throw argument_error("batch_size must be positive");
    masking.validate();
    optimizer(std::max<long long>(warmup_steps + 1, 1)).validate();
}

model::OptimizerConfig PretrainConfig::optimizer(long long total_steps) const {
    model::OptimizerConfig o;
    o.learning_rate = learning_rate;
    o.beta1 = beta1;
    o.beta2 = beta2;
    o.epsilon = epsilon;
    o.weight_decay = weight_decay;
    o.warmup_steps = warmup_steps;
    o.total_steps = std::max(total_steps, warmup_steps);
    return o;
}

TrainHistory train_mlm_inplace(model::Model& m, const std::vector<std::string>& sequences,
                               const tok::Tokenizer& tokenizer, const PretrainConfig& pcfg,
                               std::ostream* log) {
    pcfg.validate();
    if (sequences.empty()) throw argument_error("pretraining corpus is empty");

    const tok::Vocab& vocab = tokenizer.vocab();
    std::vector<tok::TokenizedSeq> encoded =
        tokenize_all(sequences, tokenizer, m.cfg.max_positions);

    const long long n = static_cast<long long>(encoded.size());
    const long long batches = (n + pcfg.batch_size - 1) / pcfg.batch_size;
    const long long total_steps = static_cast<long long>(pcfg.epochs) * batches;
    model::OptimizerConfig ocfg = pcfg.optimizer(total_steps);

    TrainHistory history;
    model::AdamState<float> state;
    det_rng shuffle_rng(derive(pcfg.seed, kShuffleTag));
    std::vector<std::size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    long long step = 0;
    for (int epoch = 1; epoch <= pcfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        fisher_yates(order, shuffle_rng);
        double loss_sum = 0.0;
        long long sup_sum = 0;
        double last_lr = 0.0;
        for (long long b = 0; b < batches; ++b) {
            const std::size_t lo = static_cast<std::size_t>(b) * pcfg.batch_size;
            const std::size_t hi = std::min(encoded.size(), lo + pcfg.batch_size);
            std::vector<tok::TokenizedSeq> chunk;
            chunk.reserve(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) chunk.push_back(encoded[order[i]]);

            // Dynamic masking: a fresh corruption per (epoch, batch). A batch
            // can randomly select zero positions; retry with a shifted seed so
            // the loss stays defined (still fully deterministic).
            mask::MaskedBatch masked;
            for (std::uint64_t retry = 0;; ++retry) {
                masked = mask::mask_batch(
                    chunk, pcfg.masking, vocab,
                    derive(pcfg.seed, kMaskTag, (static_cast<std::uint64_t>(epoch) << 20) | retry,
                           static_cast<std::uint64_t>(b)));
                if ((masked.labels.array() != mask::kIgnoreLabel).any()) break;
                if (retry == 16) throw data_error("masking selected no positions in 16 attempts");
            }

            ++step;
            const double lr = model::lr_at(step, ocfg);
            last_lr = lr;
            model::ForwardCache<float> cache;
            model::MlmOut<float> out =
                forward_mlm(m, masked, model::Mode::train,
                            derive(pcfg.seed, kDropoutTag, static_cast<std::uint64_t>(step)),
                            &cache);
            loss_sum += static_cast<double>(out.loss) * static_cast<double>(out.supervised);
            sup_sum += out.supervised;
            std::vector<model::MatX<float>> grads = backward_mlm(m, cache);
            adamw_step(m, grads, state, ocfg, step, static_cast<float>(lr));
        }
        const auto t1 = std::chrono::steady_clock::now();
        const double seconds = std::chrono::duration<double>(t1 - t0).count();
        const double mean_loss = loss_sum / static_cast<double>(std::max<long long>(sup_sum, 1));
        history.losses.push_back(mean_loss);
        history.seconds.push_back(seconds);
        history.lrs.push_back(last_lr);
        write_log_line(log, epoch, mean_loss, seconds, last_lr);
    }
    return history;
}

std::pair<model::Model, TrainHistory> train_mlm(const std::vector<std::string>& sequences,
                                                const tok::Tokenizer& tokenizer,
                                                const model::ModelConfig& mcfg,
                                                const PretrainConfig& pcfg, std::ostream* log) {
    model::Model m = model::init_model<float>(mcfg, pcfg.seed);
    TrainHistory history = train_mlm_inplace(m, sequences, tokenizer, pcfg, log);
    return {std::move(m), std::move(history)};
}

MlmEval mlm_eval(const model::Model& m, const std::vector<std::string>& sequences,
                 const tok::Tokenizer& tokenizer, const mask::MaskingConfig& mcfg,
                 std::uint64_t mask_seed) {
    if (sequences.empty()) throw argument_error("evaluation corpus is empty");
    const tok::Vocab& vocab = tokenizer.vocab();
    std::vector<tok::TokenizedSeq> encoded =
        tokenize_all(sequences, tokenizer, m.cfg.max_positions);

    MlmEval result;
    long long correct = 0;
    constexpr std::size_t kBatch = 64;
    for (std::size_t lo = 0; lo < encoded.size(); lo += kBatch) {
        const std::size_t hi = std::min(encoded.size(), lo + kBatch);
        std::vector<tok::TokenizedSeq> chunk(encoded.begin() + lo, encoded.begin() + hi);
        mask::MaskedBatch masked =
            mask::mask_batch(chunk, mcfg, vocab, splitmix64(mask_seed ^ lo));
        if (!(masked.labels.array() != mask::kIgnoreLabel).any()) continue;
        model::MlmOut<float> out = forward_mlm(m, masked, model::Mode::eval);
        result.loss += static_cast<double>(out.loss) * static_cast<double>(out.supervised);
        result.supervised += out.supervised;
        const Eigen::Index L = masked.input_ids.cols();
        for (Eigen::Index r = 0; r < masked.labels.rows(); ++r) {
            for (Eigen::Index c = 0; c < L; ++c) {
                const int target = masked.labels(r, c);
                if (target == mask::kIgnoreLabel) continue;
                Eigen::Index pred;
                out.logits.row(r * L + c).maxCoeff(&pred);
                if (static_cast<int>(pred) == target) ++correct;
            }
        }
    }
    if (result.supervised == 0) throw data_error("masking selected no positions to evaluate");
    result.loss /= static_cast<double>(result.supervised);
    result.accuracy = static_cast<double>(correct) / static_cast<double>(result.supervised);
    return result;
}

metrics::EvalReport evaluate_classifier(const model::Model& m, const LabeledSet& data,
                                        const tok::Tokenizer& tokenizer,
                                        const std::vector<std::string>& class_names) {
    if (m.num_classes < 2) throw argument_error("model has no classifier head");
    if (data.sequences.empty()) throw argument_error("evaluation set is empty");
    check_labels(data.labels, data.sequences.size(), m.num_classes, "evaluation");

    std::vector<tok::TokenizedSeq> encoded =
        tokenize_all(data.sequences, tokenizer, m.cfg.max_positions);
    const int K = m.num_classes;
    metrics::ScoreMatrix scores(static_cast<Eigen::Index>(encoded.size()), K);

    constexpr std::size_t kBatch = 64;
    for (std::size_t lo = 0; lo < encoded.size(); lo += kBatch) {
        const std::size_t hi = std::min(encoded.size(), lo + kBatch);
        std::vector<tok::TokenizedSeq> chunk(encoded.begin() + lo, encoded.begin() + hi);
        std::vector<int> chunk_labels(data.labels.begin() + lo, data.labels.begin() + hi);
        mask::PaddedBatch padded = mask::pad_batch(chunk, tokenizer.vocab());
        model::ClassifyOut<float> out = forward_classify(
            m, padded.input_ids, padded.attention_mask, chunk_labels, model::Mode::eval);
        for (Eigen::Index r = 0; r < out.logits.rows(); ++r) {
            // Stable softmax in double for the score matrix.
            Eigen::RowVectorXd row = out.logits.row(r).cast<double>();
            row.array() -= row.maxCoeff();
            Eigen::RowVectorXd ex = row.array().exp();
            scores.row(static_cast<Eigen::Index>(lo) + r) = ex / ex.sum();
        }
    }
    return metrics::evaluate_scores(scores, data.labels, class_names);
}

std::pair<model::Model, TrainHistory> finetune(const LabeledSet& train_set,
                                               const LabeledSet& held_out,
                                               const model::Model& pretrained,
                                               const tok::Tokenizer& tokenizer, int num_classes,
                                               const FinetuneConfig& fcfg, std::ostream* log) {
    fcfg.validate();
    if (num_classes < 2) throw argument_error("classification needs at least 2 classes");
    if (train_set.sequences.empty()) throw argument_error("training set is empty");
    if (held_out.sequences.empty()) throw argument_error("held-out set is empty");
    check_labels(train_set.labels, train_set.sequences.size(), num_classes, "training");
    check_labels(held_out.labels, held_out.sequences.size(), num_classes, "held-out");
    if (pretrained.num_classes != 0 && pretrained.num_classes != num_classes) {
        throw argument_error("pretrained model has a " + std::to_string(pretrained.num_classes) +
                             "-class head but the task has " + std::to_string(num_classes) +
                             " classes");
    }

    model::Model m = pretrained;
    m.cfg.hidden_dropout = fcfg.dropout;
    m.cfg.attention_dropout = fcfg.dropout;
    add_classifier(m, num_classes, derive(fcfg.seed, kHeadTag));

    std::vector<tok::TokenizedSeq> encoded =
        tokenize_all(train_set.sequences, tokenizer, m.cfg.max_positions);
    const long long n = static_cast<long long>(encoded.size());
    const long long batches = (n + fcfg.batch_size - 1) / fcfg.batch_size;
    const long long total_steps = static_cast<long long>(fcfg.epochs) * batches;
    model::OptimizerConfig ocfg = fcfg.optimizer(total_steps);

    TrainHistory history;
    model::AdamState<float> state;
    det_rng shuffle_rng(derive(fcfg.seed, kShuffleTag));
    std::vector<std::size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    long long step = 0;
    for (int epoch = 1; epoch <= fcfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        fisher_yates(order, shuffle_rng);
        double loss_sum = 0.0;
        long long example_sum = 0;
        double last_lr = 0.0;
        for (long long b = 0; b < batches; ++b) {
            const std::size_t lo = static_cast<std::size_t>(b) * fcfg.batch_size;
            const std::size_t hi = std::min(encoded.size(), lo + fcfg.batch_size);
            std::vector<tok::TokenizedSeq> chunk;
            std::vector<int> labels;
            chunk.reserve(hi - lo);
            labels.reserve(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                chunk.push_back(encoded[order[i]]);
                labels.push_back(train_set.labels[order[i]]);
            }
            mask::PaddedBatch padded = mask::pad_batch(chunk, tokenizer.vocab());

            ++step;
            const double lr = model::lr_at(step, ocfg);
            last_lr = lr;
            model::ForwardCache<float> cache;
            model::ClassifyOut<float> out = forward_classify(
                m, padded.input_ids, padded.attention_mask, labels, model::Mode::train,
                derive(fcfg.seed, kDropoutTag, static_cast<std::uint64_t>(step)), &cache);
            loss_sum += static_cast<double>(out.loss) * static_cast<double>(labels.size());
            example_sum += static_cast<long long>(labels.size());
            std::vector<model::MatX<float>> grads = backward_classify(m, cache);
            adamw_step(m, grads, state, ocfg, step, static_cast<float>(lr));
        }
        const auto t1 = std::chrono::steady_clock::now();
        const double seconds = std::chrono::duration<double>(t1 - t0).count();
        const double mean_loss =
            loss_sum / static_cast<double>(std::max<long long>(example_sum, 1));
        history.losses.push_back(mean_loss);
        history.seconds.push_back(seconds);
        history.lrs.push_back(last_lr);
        history.reports.push_back(evaluate_classifier(m, held_out, tokenizer));
        write_log_line(log, epoch, mean_loss, seconds, last_lr);
    }
    return {std::move(m), std::move(history)};
}

}  // namespace abtok::train
