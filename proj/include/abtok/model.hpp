#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "abtok/masking.hpp"

namespace abtok::model {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
    int vocab_size = 25;
    int max_positions = 150;
    int hidden_size = 768;
    int num_layers = 12;
    int num_heads = 12;
    int intermediate_size = 3072;
    double hidden_dropout = 0.1;
    double attention_dropout = 0.1;
    double layer_norm_eps = 1e-12;

    int head_dim() const { return hidden_size / num_heads; }
    void validate() const;  // throws argument_error
};

enum class InitKind { normal, zeros, ones };

struct TensorSpec {
    std::string name;
    long rows = 0;
    long cols = 0;
    bool decay = false;  // participates in decoupled weight decay
    InitKind init = InitKind::normal;
};

// Every parameter tensor of the network, in fixed order: embeddings, per-layer
// blocks, MLM head, then (when num_classes > 0) the classifier head. The MLM
// decoder is tied to the token embedding and owns no tensor of its own.
std::vector<TensorSpec> shape_registry(const ModelConfig& cfg, int num_classes = 0);

long long param_count(const ModelConfig& cfg, int num_classes = 0);

template <typename S>
struct ModelT {
    ModelConfig cfg;
    int num_classes = 0;
    std::vector<TensorSpec> specs;
    std::vector<MatX<S>> tensors;  // parallel to specs
    std::unordered_map<std::string, int> index;

    MatX<S>& at(const std::string& name) { return tensors[static_cast<std::size_t>(idx(name))]; }
    const MatX<S>& at(const std::string& name) const {
        return tensors[static_cast<std::size_t>(idx(name))];
    }
    int idx(const std::string& name) const;

    template <typename T>
    ModelT<T> cast() const {
        ModelT<T> out;
        out.cfg = cfg;
        out.num_classes = num_classes;
        out.specs = specs;
        out.index = index;
        out.tensors.reserve(tensors.size());
        for (const MatX<S>& t : tensors) out.tensors.push_back(t.template cast<T>());
        return out;
    }
};

using Model = ModelT<float>;

// Weights ~ Normal(0, 0.02^2) truncated at +/-2 sigma; biases and layer-norm
// shifts zero; layer-norm scales one. Deterministic per seed.
template <typename S>
ModelT<S> init_model(const ModelConfig& cfg, std::uint64_t seed);

// Appends a freshly initialized K-way classifier head.
template <typename S>
void add_classifier(ModelT<S>& model, int num_classes, std::uint64_t seed);

enum class Mode { train, eval };

template <typename S>
struct LayerCache {
    MatX<S> x_in, q, k, v;
    std::vector<std::vector<MatX<S>>> probs;      // [batch][head], L x L softmax rows
    std::vector<std::vector<MatX<S>>> prob_drop;  // dropout keep-masks, empty in eval
    MatX<S> ctx, attn_drop, res1, ln1_xhat, ln1_invstd, ln1_out;
    MatX<S> ffn_pre, ffn_act, ffn_drop, res2, ln2_xhat, ln2_invstd, ln2_out;
};

template <typename S>
struct ForwardCache {
    Mode mode = Mode::eval;
    mask::IntMatrix input_ids, attention_mask;
    Eigen::Index batch = 0, length = 0;
    MatX<S> embed_out, embed_drop;
    std::vector<LayerCache<S>> layers;
    // MLM head
    MatX<S> mlm_pre, mlm_act, mlm_xhat, mlm_invstd, mlm_ln_out;
    MatX<S> sup_probs;                            // n_supervised x V softmax rows
    std::vector<std::pair<long, int>> supervised;  // (flat row, target id)
    // Classifier head
    MatX<S> pooled, pool_drop, cls_pre, cls_act, cls_drop, cls_probs;
    std::vector<int> cls_labels;
};

// Final encoder states, one row per (batch, position), shape (B*L) x H.
template <typename S>
MatX<S> encode_states(const ModelT<S>& m, const mask::IntMatrix& input_ids,
                      const mask::IntMatrix& attention_mask, Mode mode,
                      std::uint64_t dropout_seed, ForwardCache<S>* cache);

template <typename S>
struct MlmOut {
    MatX<S> logits;  // (B*L) x V
    S loss = S(0);
    long long supervised = 0;
};

template <typename S>
MlmOut<S> forward_mlm(const ModelT<S>& m, const mask::MaskedBatch& batch, Mode mode,
                      std::uint64_t dropout_seed = 0, ForwardCache<S>* cache = nullptr);

template <typename S>
struct ClassifyOut {
    MatX<S> logits;  // B x K
    S loss = S(0);
};

template <typename S>
ClassifyOut<S> forward_classify(const ModelT<S>& m, const mask::IntMatrix& input_ids,
                                const mask::IntMatrix& attention_mask,
                                const std::vector<int>& labels, Mode mode,
                                std::uint64_t dropout_seed = 0, ForwardCache<S>* cache = nullptr);

// Exact analytic gradients of loss_scale * loss, aligned with the registry.
template <typename S>
std::vector<MatX<S>> backward_mlm(const ModelT<S>& m, const ForwardCache<S>& cache,
                                  S loss_scale = S(1));

template <typename S>
std::vector<MatX<S>> backward_classify(const ModelT<S>& m, const ForwardCache<S>& cache,
                                       S loss_scale = S(1));

struct OptimizerConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double epsilon = 1e-6;
    double weight_decay = 0.01;
    long long warmup_steps = 30000;
    long long total_steps = 500000;

    void validate() const;  // throws argument_error
};

// Linear warmup to the peak at warmup_steps, linear decay to 0 at total_steps.
double lr_at(long long step, const OptimizerConfig& ocfg);

template <typename S>
struct AdamState {
    std::vector<MatX<S>> m, v;
};

// Decoupled decay first (weight matrices only), then the bias-corrected Adam
// update with epsilon outside the square root.
template <typename S>
void adamw_step(ModelT<S>& model, const std::vector<MatX<S>>& grads, AdamState<S>& state,
                const OptimizerConfig& ocfg, long long step, double lr);

}  // namespace abtok::model
