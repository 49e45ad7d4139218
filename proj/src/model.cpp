#include "abtok/model.hpp"

#include <cmath>
#include <cstddef>
#include <limits>

#include "abtok/errors.hpp"
#include "abtok/rng.hpp"

namespace abtok::model {

void ModelConfig::validate() const {
    if (vocab_size < 6) throw argument_error("vocab_size must cover the specials plus payload");
    if (max_positions < 3) throw argument_error("max_positions too small");
    if (hidden_size <= 0 || num_layers <= 0 || num_heads <= 0 || intermediate_size <= 0) {
        throw argument_error("model dimensions must be positive");
    }
    if (hidden_size % num_heads != 0) {
        throw argument_error("hidden_size must be divisible by num_heads");
    }
    for (double p : {hidden_dropout, attention_dropout}) {
        if (!(p >= 0.0 && p < 1.0)) throw argument_error("dropout probabilities must lie in [0,1)");
    }
    if (!(layer_norm_eps > 0.0)) throw argument_error("layer_norm_eps must be positive");
}

std::vector<TensorSpec> shape_registry(const ModelConfig& cfg, int num_classes) {
    cfg.validate();
    const long V = cfg.vocab_size, H = cfg.hidden_size, I = cfg.intermediate_size;
    const long P = cfg.max_positions;
    std::vector<TensorSpec> specs;
    specs.push_back({"embed.token", V, H, true, InitKind::normal});
    specs.push_back({"embed.position", P, H, true, InitKind::normal});
    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::string p = "layer." + std::to_string(l) + ".";
        for (const char* proj : {"q", "k", "v", "o"}) {
            specs.push_back({p + "attn." + proj + ".w", H, H, true, InitKind::normal});
            specs.push_back({p + "attn." + proj + ".b", 1, H, false, InitKind::zeros});
        }
        specs.push_back({p + "attn.ln.scale", 1, H, false, InitKind::ones});
        specs.push_back({p + "attn.ln.shift", 1, H, false, InitKind::zeros});
        specs.push_back({p + "ffn.w1", H, I, true, InitKind::normal});
        specs.push_back({p + "ffn.b1", 1, I, false, InitKind::zeros});
        specs.push_back({p + "ffn.w2", I, H, true, InitKind::normal});
        specs.push_back({p + "ffn.b2", 1, H, false, InitKind::zeros});
        specs.push_back({p + "ffn.ln.scale", 1, H, false, InitKind::ones});
        specs.push_back({p + "ffn.ln.shift", 1, H, false, InitKind::zeros});
    }
    specs.push_back({"mlm.dense.w", H, H, true, InitKind::normal});
    specs.push_back({"mlm.dense.b", 1, H, false, InitKind::zeros});
    specs.push_back({"mlm.ln.scale", 1, H, false, InitKind::ones});
    specs.push_back({"mlm.ln.shift", 1, H, false, InitKind::zeros});
    specs.push_back({"mlm.bias", 1, V, false, InitKind::zeros});
    if (num_classes > 0) {
        specs.push_back({"cls.proj.w", H, H, true, InitKind::normal});
        specs.push_back({"cls.proj.b", 1, H, false, InitKind::zeros});
        specs.push_back({"cls.out.w", H, num_classes, true, InitKind::normal});
        specs.push_back({"cls.out.b", 1, num_classes, false, InitKind::zeros});
    }
    return specs;
}

long long param_count(const ModelConfig& cfg, int num_classes) {
    long long n = 0;
    for (const TensorSpec& s : shape_registry(cfg, num_classes)) {
        n += static_cast<long long>(s.rows) * s.cols;
    }
    return n;
}

template <typename S>
int ModelT<S>::idx(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw argument_error("unknown tensor: " + name);
    return it->second;
}

namespace {

template <typename S>
void fill_tensor(MatX<S>& t, const TensorSpec& spec, det_rng& rng) {
    t.resize(spec.rows, spec.cols);
    switch (spec.init) {
        case InitKind::zeros: t.setZero(); return;
        case InitKind::ones: t.setOnes(); return;
        case InitKind::normal:
            for (long r = 0; r < spec.rows; ++r)
                for (long c = 0; c < spec.cols; ++c)
                    t(r, c) = static_cast<S>(rng.truncated_normal(0.02, 2.0));
            return;
    }
}

}  // namespace

template <typename S>
ModelT<S> init_model(const ModelConfig& cfg, std::uint64_t seed) {
    ModelT<S> m;
    m.cfg = cfg;
    m.num_classes = 0;
    m.specs = shape_registry(cfg, 0);
    m.tensors.resize(m.specs.size());
    det_rng rng(seed);
    for (std::size_t i = 0; i < m.specs.size(); ++i) {
        fill_tensor(m.tensors[i], m.specs[i], rng);
        m.index[m.specs[i].name] = static_cast<int>(i);
    }
    return m;
}

template <typename S>
void add_classifier(ModelT<S>& model, int num_classes, std::uint64_t seed) {
    if (num_classes < 2) throw argument_error("classifier needs at least 2 classes");
    std::vector<TensorSpec> full = shape_registry(model.cfg, num_classes);
    det_rng rng(seed);
    if (model.num_classes > 0) {
        // Replace an existing head.
        model.specs.resize(model.specs.size() - 4);
        model.tensors.resize(model.specs.size());
    }
    for (std::size_t i = model.specs.size(); i < full.size(); ++i) {
        model.specs.push_back(full[i]);
        MatX<S> t;
        fill_tensor(t, full[i], rng);
        model.tensors.push_back(std::move(t));
        model.index[full[i].name] = static_cast<int>(i);
    }
    model.num_classes = num_classes;
}

namespace {

template <typename S>
S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x * S(M_SQRT1_2)));
}

template <typename S>
S gelu_grad(S x) {
    const S cdf = S(0.5) * (S(1) + std::erf(x * S(M_SQRT1_2)));
    const S pdf = std::exp(S(-0.5) * x * x) * S(0.3989422804014326779);  // 1/sqrt(2*pi)
    return cdf + x * pdf;
}

template <typename S>
MatX<S> dropout_mask(const counter_rng& rng, std::uint64_t site, Eigen::Index rows,
                     Eigen::Index cols, double p) {
    MatX<S> mask(rows, cols);
    const S keep_inv = static_cast<S>(1.0 / (1.0 - p));
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            const std::uint64_t flat =
                static_cast<std::uint64_t>(r) * static_cast<std::uint64_t>(cols) +
                static_cast<std::uint64_t>(c);
            mask(r, c) = rng.uniform(site, flat, 0) >= p ? keep_inv : S(0);
        }
    }
    return mask;
}

// y = xhat * scale + shift rowwise; xhat = (x - mean) * invstd per row.
template <typename S>
void layer_norm_forward(const MatX<S>& x, const MatX<S>& scale, const MatX<S>& shift, double eps,
                        MatX<S>& xhat, MatX<S>& invstd, MatX<S>& out) {
    const Eigen::Index n = x.rows(), h = x.cols();
    xhat.resize(n, h);
    invstd.resize(n, 1);
    out.resize(n, h);
    for (Eigen::Index r = 0; r < n; ++r) {
        const S mean = x.row(r).mean();
        const S var = (x.row(r).array() - mean).square().mean();
        const S is = S(1) / std::sqrt(var + static_cast<S>(eps));
        invstd(r, 0) = is;
        xhat.row(r) = (x.row(r).array() - mean) * is;
        out.row(r) = xhat.row(r).cwiseProduct(scale.row(0)) + shift.row(0);
    }
}

template <typename S>
void layer_norm_backward(const MatX<S>& dy, const MatX<S>& xhat, const MatX<S>& invstd,
                         const MatX<S>& scale, MatX<S>& dx, MatX<S>& dscale, MatX<S>& dshift) {
    const Eigen::Index n = dy.rows(), h = dy.cols();
    dx.resize(n, h);
    for (Eigen::Index r = 0; r < n; ++r) {
        Eigen::Array<S, 1, Eigen::Dynamic> dxhat =
            dy.row(r).cwiseProduct(scale.row(0)).array();
        const S m1 = dxhat.mean();
        const S m2 = (dxhat * xhat.row(r).array()).mean();
        dx.row(r) = (invstd(r, 0) * (dxhat - m1 - xhat.row(r).array() * m2)).matrix();
        dscale.row(0) += dy.row(r).cwiseProduct(xhat.row(r));
        dshift.row(0) += dy.row(r);
    }
}

void check_ids(const ModelConfig& cfg, const mask::IntMatrix& ids,
               const mask::IntMatrix& attention_mask) {
    if (ids.rows() != attention_mask.rows() || ids.cols() != attention_mask.cols()) {
        throw argument_error("input_ids and attention_mask shapes disagree");
    }
    if (ids.cols() > cfg.max_positions) {
        throw length_error("batch length " + std::to_string(ids.cols()) +
                           " exceeds max_positions " + std::to_string(cfg.max_positions));
    }
    if ((ids.array() < 0).any() || (ids.array() >= cfg.vocab_size).any()) {
        throw argument_error("token id outside the vocabulary");
    }
}

}  // namespace

template <typename S>
MatX<S> encode_states(const ModelT<S>& m, const mask::IntMatrix& input_ids,
                      const mask::IntMatrix& attention_mask, Mode mode,
                      std::uint64_t dropout_seed, ForwardCache<S>* cache) {
    const ModelConfig& cfg = m.cfg;
    check_ids(cfg, input_ids, attention_mask);
    const Eigen::Index B = input_ids.rows(), L = input_ids.cols();
    const Eigen::Index H = cfg.hidden_size;
    const int heads = cfg.num_heads;
    const Eigen::Index dh = cfg.head_dim();
    const bool train = mode == Mode::train;
    const counter_rng drop_rng(dropout_seed);
    std::uint64_t site = 0;

    if (cache) {
        cache->mode = mode;
        cache->input_ids = input_ids;
        cache->attention_mask = attention_mask;
        cache->batch = B;
        cache->length = L;
        cache->layers.assign(static_cast<std::size_t>(cfg.num_layers), {});
    }

    const MatX<S>& E = m.at("embed.token");
    const MatX<S>& Pos = m.at("embed.position");

    MatX<S> x(B * L, H);
    for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index l = 0; l < L; ++l) {
            x.row(b * L + l) = E.row(input_ids(b, l)) + Pos.row(l);
        }
    }
    if (train && cfg.hidden_dropout > 0.0) {
        MatX<S> mask = dropout_mask<S>(drop_rng, site++, B * L, H, cfg.hidden_dropout);
        x = x.cwiseProduct(mask);
        if (cache) cache->embed_drop = std::move(mask);
    } else {
        ++site;
    }
    if (cache) cache->embed_out = x;

    const S neg_inf = -std::numeric_limits<S>::infinity();
    const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));

    for (int layer = 0; layer < cfg.num_layers; ++layer) {
        const std::string p = "layer." + std::to_string(layer) + ".";
        LayerCache<S>* lc = cache ? &cache->layers[static_cast<std::size_t>(layer)] : nullptr;
        if (lc) lc->x_in = x;

        MatX<S> q = (x * m.at(p + "attn.q.w")).rowwise() + m.at(p + "attn.q.b").row(0);
        MatX<S> k = (x * m.at(p + "attn.k.w")).rowwise() + m.at(p + "attn.k.b").row(0);
        MatX<S> v = (x * m.at(p + "attn.v.w")).rowwise() + m.at(p + "attn.v.b").row(0);

        MatX<S> ctx(B * L, H);
        if (lc) {
            lc->probs.assign(static_cast<std::size_t>(B), {});
            if (train && cfg.attention_dropout > 0.0)
                lc->prob_drop.assign(static_cast<std::size_t>(B), {});
        }
        for (Eigen::Index b = 0; b < B; ++b) {
            for (int h = 0; h < heads; ++h) {
                auto qb = q.block(b * L, h * dh, L, dh);
                auto kb = k.block(b * L, h * dh, L, dh);
                auto vb = v.block(b * L, h * dh, L, dh);
                MatX<S> scores = qb * kb.transpose() * inv_sqrt_dh;
                for (Eigen::Index j = 0; j < L; ++j) {
                    if (!attention_mask(b, j)) scores.col(j).setConstant(neg_inf);
                }
                MatX<S> probs(L, L);
                for (Eigen::Index i = 0; i < L; ++i) {
                    const S mx = scores.row(i).maxCoeff();
                    Eigen::Array<S, 1, Eigen::Dynamic> e = (scores.row(i).array() - mx).exp();
                    probs.row(i) = (e / e.sum()).matrix();
                }
                const std::uint64_t this_site = site++;
                if (train && cfg.attention_dropout > 0.0) {
                    MatX<S> mask = dropout_mask<S>(
                        drop_rng, this_site ^ (static_cast<std::uint64_t>(b) * heads + h) << 20, L,
                        L, cfg.attention_dropout);
                    ctx.block(b * L, h * dh, L, dh) = probs.cwiseProduct(mask) * vb;
                    if (lc) lc->prob_drop[static_cast<std::size_t>(b)].push_back(std::move(mask));
                } else {
                    ctx.block(b * L, h * dh, L, dh) = probs * vb;
                }
                if (lc) lc->probs[static_cast<std::size_t>(b)].push_back(std::move(probs));
            }
        }
        if (lc) {
            lc->q = std::move(q);
            lc->k = std::move(k);
            lc->v = std::move(v);
            lc->ctx = ctx;
        }

        MatX<S> attn_out = (ctx * m.at(p + "attn.o.w")).rowwise() + m.at(p + "attn.o.b").row(0);
        if (train && cfg.hidden_dropout > 0.0) {
            MatX<S> mask = dropout_mask<S>(drop_rng, site++, B * L, H, cfg.hidden_dropout);
            attn_out = attn_out.cwiseProduct(mask);
            if (lc) lc->attn_drop = std::move(mask);
        } else {
            ++site;
        }

        MatX<S> res1 = x + attn_out;
        MatX<S> ln1_xhat, ln1_invstd, ln1_out;
        layer_norm_forward(res1, m.at(p + "attn.ln.scale"), m.at(p + "attn.ln.shift"),
                           cfg.layer_norm_eps, ln1_xhat, ln1_invstd, ln1_out);

        MatX<S> ffn_pre = (ln1_out * m.at(p + "ffn.w1")).rowwise() + m.at(p + "ffn.b1").row(0);
        MatX<S> ffn_act = ffn_pre.unaryExpr([](S t) { return gelu(t); });
        MatX<S> ffn_out = (ffn_act * m.at(p + "ffn.w2")).rowwise() + m.at(p + "ffn.b2").row(0);
        if (train && cfg.hidden_dropout > 0.0) {
            MatX<S> mask = dropout_mask<S>(drop_rng, site++, B * L, H, cfg.hidden_dropout);
            ffn_out = ffn_out.cwiseProduct(mask);
            if (lc) lc->ffn_drop = std::move(mask);
        } else {
            ++site;
        }

        MatX<S> res2 = ln1_out + ffn_out;
        MatX<S> ln2_xhat, ln2_invstd, ln2_out;
        layer_norm_forward(res2, m.at(p + "ffn.ln.scale"), m.at(p + "ffn.ln.shift"),
                           cfg.layer_norm_eps, ln2_xhat, ln2_invstd, ln2_out);

        if (lc) {
            lc->res1 = std::move(res1);
            lc->ln1_xhat = std::move(ln1_xhat);
            lc->ln1_invstd = std::move(ln1_invstd);
            lc->ln1_out = ln1_out;
            lc->ffn_pre = std::move(ffn_pre);
            lc->ffn_act = std::move(ffn_act);
            lc->res2 = std::move(res2);
            lc->ln2_xhat = std::move(ln2_xhat);
            lc->ln2_invstd = std::move(ln2_invstd);
            lc->ln2_out = ln2_out;
        }
        x = std::move(ln2_out);
    }
    return x;
}

template <typename S>
MlmOut<S> forward_mlm(const ModelT<S>& m, const mask::MaskedBatch& batch, Mode mode,
                      std::uint64_t dropout_seed, ForwardCache<S>* cache) {
    const ModelConfig& cfg = m.cfg;
    MatX<S> states = encode_states(m, batch.input_ids, batch.attention_mask, mode, dropout_seed,
                                   cache);
    const Eigen::Index V = cfg.vocab_size;

    MatX<S> pre = (states * m.at("mlm.dense.w")).rowwise() + m.at("mlm.dense.b").row(0);
    MatX<S> act = pre.unaryExpr([](S t) { return gelu(t); });
    MatX<S> xhat, invstd, ln_out;
    layer_norm_forward(act, m.at("mlm.ln.scale"), m.at("mlm.ln.shift"), cfg.layer_norm_eps, xhat,
                       invstd, ln_out);

    MlmOut<S> out;
    out.logits = (ln_out * m.at("embed.token").transpose()).rowwise() + m.at("mlm.bias").row(0);

    std::vector<std::pair<long, int>> supervised;
    const Eigen::Index B = batch.labels.rows(), L = batch.labels.cols();
    for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index l = 0; l < L; ++l) {
            const int target = batch.labels(b, l);
            if (target == mask::kIgnoreLabel) continue;
            if (target < 0 || target >= V) throw argument_error("label id outside the vocabulary");
            supervised.emplace_back(static_cast<long>(b * L + l), target);
        }
    }
    if (supervised.empty()) {
        throw data_error("batch contains no supervised positions; loss is undefined");
    }

    MatX<S> sup_probs(static_cast<Eigen::Index>(supervised.size()), V);
    S loss = S(0);
    for (std::size_t i = 0; i < supervised.size(); ++i) {
        const auto [row, target] = supervised[i];
        const S mx = out.logits.row(row).maxCoeff();
        Eigen::Array<S, 1, Eigen::Dynamic> e = (out.logits.row(row).array() - mx).exp();
        const S z = e.sum();
        sup_probs.row(static_cast<Eigen::Index>(i)) = (e / z).matrix();
        loss -= out.logits(row, target) - mx - std::log(z);
    }
    out.loss = loss / static_cast<S>(supervised.size());
    out.supervised = static_cast<long long>(supervised.size());

    if (cache) {
        cache->mlm_pre = std::move(pre);
        cache->mlm_act = std::move(act);
        cache->mlm_xhat = std::move(xhat);
        cache->mlm_invstd = std::move(invstd);
        cache->mlm_ln_out = std::move(ln_out);
        cache->sup_probs = std::move(sup_probs);
        cache->supervised = std::move(supervised);
    }
    return out;
}

template <typename S>
ClassifyOut<S> forward_classify(const ModelT<S>& m, const mask::IntMatrix& input_ids,
                                const mask::IntMatrix& attention_mask,
                                const std::vector<int>& labels, Mode mode,
                                std::uint64_t dropout_seed, ForwardCache<S>* cache) {
    const ModelConfig& cfg = m.cfg;
    const int K = m.num_classes;
    if (K < 2) throw argument_error("model has no classifier head");
    if (static_cast<Eigen::Index>(labels.size()) != input_ids.rows()) {
        throw argument_error("labels length must equal the batch size");
    }
    for (int t : labels) {
        if (t < 0 || t >= K) {
            throw argument_error("class label " + std::to_string(t) + " outside [0," +
                                 std::to_string(K) + ")");
        }
    }

    MatX<S> states = encode_states(m, input_ids, attention_mask, mode, dropout_seed, cache);
    const Eigen::Index B = input_ids.rows(), L = input_ids.cols(), H = cfg.hidden_size;
    const bool train = mode == Mode::train;
    const counter_rng drop_rng(dropout_seed ^ 0x5EED'C1A5'51F1'ED00ULL);

    MatX<S> pooled(B, H);
    for (Eigen::Index b = 0; b < B; ++b) pooled.row(b) = states.row(b * L);

    MatX<S> pool_drop, cls_drop;
    MatX<S> pooled_used = pooled;
    if (train && cfg.hidden_dropout > 0.0) {
        pool_drop = dropout_mask<S>(drop_rng, 0, B, H, cfg.hidden_dropout);
        pooled_used = pooled.cwiseProduct(pool_drop);
    }
    MatX<S> pre = (pooled_used * m.at("cls.proj.w")).rowwise() + m.at("cls.proj.b").row(0);
    MatX<S> act = pre.unaryExpr([](S t) { return std::tanh(t); });
    MatX<S> act_used = act;
    if (train && cfg.hidden_dropout > 0.0) {
        cls_drop = dropout_mask<S>(drop_rng, 1, B, H, cfg.hidden_dropout);
        act_used = act.cwiseProduct(cls_drop);
    }

    ClassifyOut<S> out;
    out.logits = (act_used * m.at("cls.out.w")).rowwise() + m.at("cls.out.b").row(0);

    MatX<S> probs(B, K);
    S loss = S(0);
    for (Eigen::Index b = 0; b < B; ++b) {
        const S mx = out.logits.row(b).maxCoeff();
        Eigen::Array<S, 1, Eigen::Dynamic> e = (out.logits.row(b).array() - mx).exp();
        const S z = e.sum();
        probs.row(b) = (e / z).matrix();
        loss -= out.logits(b, labels[static_cast<std::size_t>(b)]) - mx - std::log(z);
    }
    out.loss = loss / static_cast<S>(B);

    if (cache) {
        cache->pooled = std::move(pooled);
        cache->pool_drop = std::move(pool_drop);
        cache->cls_pre = std::move(pre);
        cache->cls_act = std::move(act);
        cache->cls_drop = std::move(cls_drop);
        cache->cls_probs = std::move(probs);
        cache->cls_labels = labels;
    }
    return out;
}

namespace {

// Backpropagates d_states through the encoder stack, accumulating parameter
// gradients into `grads` (registry-aligned) and returning nothing further.
template <typename S>
void backward_encoder(const ModelT<S>& m, const ForwardCache<S>& cache, MatX<S> d_states,
                      std::vector<MatX<S>>& grads) {
    const ModelConfig& cfg = m.cfg;
    const Eigen::Index B = cache.batch, L = cache.length, H = cfg.hidden_size;
    const int heads = cfg.num_heads;
    const Eigen::Index dh = cfg.head_dim();
    const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));
    const bool train = cache.mode == Mode::train;

    auto g = [&](const std::string& name) -> MatX<S>& {
        return grads[static_cast<std::size_t>(m.idx(name))];
    };

    for (int layer = cfg.num_layers - 1; layer >= 0; --layer) {
        const std::string p = "layer." + std::to_string(layer) + ".";
        const LayerCache<S>& lc = cache.layers[static_cast<std::size_t>(layer)];

        // LN after the feed-forward residual.
        MatX<S> d_res2;
        layer_norm_backward(d_states, lc.ln2_xhat, lc.ln2_invstd, m.at(p + "ffn.ln.scale"),
                            d_res2, g(p + "ffn.ln.scale"), g(p + "ffn.ln.shift"));

        MatX<S> d_ln1_out = d_res2;  // residual branch
        MatX<S> d_ffn_out = train && lc.ffn_drop.size() > 0
                                ? d_res2.cwiseProduct(lc.ffn_drop).eval()
                                : d_res2;

        g(p + "ffn.w2") += lc.ffn_act.transpose() * d_ffn_out;
        g(p + "ffn.b2") += d_ffn_out.colwise().sum();
        MatX<S> d_act = d_ffn_out * m.at(p + "ffn.w2").transpose();
        MatX<S> d_pre =
            d_act.cwiseProduct(lc.ffn_pre.unaryExpr([](S t) { return gelu_grad(t); }));
        g(p + "ffn.w1") += lc.ln1_out.transpose() * d_pre;
        g(p + "ffn.b1") += d_pre.colwise().sum();
        d_ln1_out += d_pre * m.at(p + "ffn.w1").transpose();

        // LN after the attention residual.
        MatX<S> d_res1;
        layer_norm_backward(d_ln1_out, lc.ln1_xhat, lc.ln1_invstd, m.at(p + "attn.ln.scale"),
                            d_res1, g(p + "attn.ln.scale"), g(p + "attn.ln.shift"));

        MatX<S> d_x = d_res1;  // residual branch
        MatX<S> d_attn_out = train && lc.attn_drop.size() > 0
                                 ? d_res1.cwiseProduct(lc.attn_drop).eval()
                                 : d_res1;

        g(p + "attn.o.w") += lc.ctx.transpose() * d_attn_out;
        g(p + "attn.o.b") += d_attn_out.colwise().sum();
        MatX<S> d_ctx = d_attn_out * m.at(p + "attn.o.w").transpose();

        MatX<S> d_q = MatX<S>::Zero(B * L, H);
        MatX<S> d_k = MatX<S>::Zero(B * L, H);
        MatX<S> d_v = MatX<S>::Zero(B * L, H);
        for (Eigen::Index b = 0; b < B; ++b) {
            for (int h = 0; h < heads; ++h) {
                const MatX<S>& probs = lc.probs[static_cast<std::size_t>(b)][static_cast<std::size_t>(h)];
                auto qb = lc.q.block(b * L, h * dh, L, dh);
                auto kb = lc.k.block(b * L, h * dh, L, dh);
                auto vb = lc.v.block(b * L, h * dh, L, dh);
                auto d_ctx_b = d_ctx.block(b * L, h * dh, L, dh);

                const bool pdrop = train && !lc.prob_drop.empty();
                MatX<S> d_probs_used = d_ctx_b * vb.transpose();
                if (pdrop) {
                    const MatX<S>& mask =
                        lc.prob_drop[static_cast<std::size_t>(b)][static_cast<std::size_t>(h)];
                    d_v.block(b * L, h * dh, L, dh) =
                        probs.cwiseProduct(mask).transpose() * d_ctx_b;
                    d_probs_used = d_probs_used.cwiseProduct(mask);
                } else {
                    d_v.block(b * L, h * dh, L, dh) = probs.transpose() * d_ctx_b;
                }
                // Softmax backward: rows with masked columns carry zero probs there.
                MatX<S> d_scores(L, L);
                for (Eigen::Index i = 0; i < L; ++i) {
                    const S dot = d_probs_used.row(i).cwiseProduct(probs.row(i)).sum();
                    d_scores.row(i) =
                        probs.row(i).cwiseProduct(d_probs_used.row(i)) - probs.row(i) * dot;
                }
                d_q.block(b * L, h * dh, L, dh) = d_scores * kb * inv_sqrt_dh;
                d_k.block(b * L, h * dh, L, dh) = d_scores.transpose() * qb * inv_sqrt_dh;
            }
        }

        g(p + "attn.q.w") += lc.x_in.transpose() * d_q;
        g(p + "attn.q.b") += d_q.colwise().sum();
        g(p + "attn.k.w") += lc.x_in.transpose() * d_k;
        g(p + "attn.k.b") += d_k.colwise().sum();
        g(p + "attn.v.w") += lc.x_in.transpose() * d_v;
        g(p + "attn.v.b") += d_v.colwise().sum();
        d_x += d_q * m.at(p + "attn.q.w").transpose();
        d_x += d_k * m.at(p + "attn.k.w").transpose();
        d_x += d_v * m.at(p + "attn.v.w").transpose();

        d_states = std::move(d_x);
    }

    if (train && cache.embed_drop.size() > 0) {
        d_states = d_states.cwiseProduct(cache.embed_drop);
    }
    MatX<S>& d_tok = g("embed.token");
    MatX<S>& d_pos = g("embed.position");
    for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index l = 0; l < L; ++l) {
            d_tok.row(cache.input_ids(b, l)) += d_states.row(b * L + l);
            d_pos.row(l) += d_states.row(b * L + l);
        }
    }
}

template <typename S>
std::vector<MatX<S>> zero_grads(const ModelT<S>& m) {
    std::vector<MatX<S>> grads;
    grads.reserve(m.tensors.size());
    for (const MatX<S>& t : m.tensors) grads.push_back(MatX<S>::Zero(t.rows(), t.cols()));
    return grads;
}

}  // namespace

template <typename S>
std::vector<MatX<S>> backward_mlm(const ModelT<S>& m, const ForwardCache<S>& cache,
                                  S loss_scale) {
    if (cache.supervised.empty()) throw argument_error("cache holds no MLM forward context");
    std::vector<MatX<S>> grads = zero_grads(m);
    const Eigen::Index H = m.cfg.hidden_size;
    const Eigen::Index n_sup = static_cast<Eigen::Index>(cache.supervised.size());
    const S scale = loss_scale / static_cast<S>(n_sup);

    // d_logits is nonzero only at supervised rows: probs - onehot, scaled.
    MatX<S> d_sup = cache.sup_probs * scale;
    MatX<S> sup_states(n_sup, H);
    for (Eigen::Index i = 0; i < n_sup; ++i) {
        const auto [row, target] = cache.supervised[static_cast<std::size_t>(i)];
        d_sup(i, target) -= scale;
        sup_states.row(i) = cache.mlm_ln_out.row(row);
    }

    auto g = [&](const std::string& name) -> MatX<S>& {
        return grads[static_cast<std::size_t>(m.idx(name))];
    };

    // Tied decoder: logits = ln_out * E^T + bias.
    g("embed.token") += d_sup.transpose() * sup_states;
    g("mlm.bias") += d_sup.colwise().sum();

    MatX<S> d_ln_out = MatX<S>::Zero(cache.mlm_ln_out.rows(), H);
    MatX<S> d_ln_rows = d_sup * m.at("embed.token");
    for (Eigen::Index i = 0; i < n_sup; ++i) {
        d_ln_out.row(cache.supervised[static_cast<std::size_t>(i)].first) += d_ln_rows.row(i);
    }

    MatX<S> d_act;
    layer_norm_backward(d_ln_out, cache.mlm_xhat, cache.mlm_invstd, m.at("mlm.ln.scale"), d_act,
                        g("mlm.ln.scale"), g("mlm.ln.shift"));
    MatX<S> d_pre = d_act.cwiseProduct(cache.mlm_pre.unaryExpr([](S t) { return gelu_grad(t); }));

    // States feeding the MLM dense layer are the encoder outputs.
    const LayerCache<S>& last = cache.layers.back();
    g("mlm.dense.w") += last.ln2_out.transpose() * d_pre;
    g("mlm.dense.b") += d_pre.colwise().sum();
    MatX<S> d_states = d_pre * m.at("mlm.dense.w").transpose();

    backward_encoder(m, cache, std::move(d_states), grads);
    return grads;
}

template <typename S>
std::vector<MatX<S>> backward_classify(const ModelT<S>& m, const ForwardCache<S>& cache,
                                       S loss_scale) {
    if (cache.cls_labels.empty()) throw argument_error("cache holds no classifier forward context");
    std::vector<MatX<S>> grads = zero_grads(m);
    const Eigen::Index B = cache.batch, L = cache.length, H = m.cfg.hidden_size;
    const bool train = cache.mode == Mode::train;
    const S scale = loss_scale / static_cast<S>(B);

    auto g = [&](const std::string& name) -> MatX<S>& {
        return grads[static_cast<std::size_t>(m.idx(name))];
    };

    MatX<S> d_logits = cache.cls_probs * scale;
    for (Eigen::Index b = 0; b < B; ++b) {
        d_logits(b, cache.cls_labels[static_cast<std::size_t>(b)]) -= scale;
    }

    MatX<S> act_used = train && cache.cls_drop.size() > 0
                           ? cache.cls_act.cwiseProduct(cache.cls_drop).eval()
                           : cache.cls_act;
    g("cls.out.w") += act_used.transpose() * d_logits;
    g("cls.out.b") += d_logits.colwise().sum();
    MatX<S> d_act_used = d_logits * m.at("cls.out.w").transpose();
    MatX<S> d_act = train && cache.cls_drop.size() > 0
                        ? d_act_used.cwiseProduct(cache.cls_drop).eval()
                        : std::move(d_act_used);
    MatX<S> d_pre = d_act.cwiseProduct(
        (MatX<S>::Ones(B, H) - cache.cls_act.cwiseProduct(cache.cls_act)));

    MatX<S> pooled_used = train && cache.pool_drop.size() > 0
                              ? cache.pooled.cwiseProduct(cache.pool_drop).eval()
                              : cache.pooled;
    g("cls.proj.w") += pooled_used.transpose() * d_pre;
    g("cls.proj.b") += d_pre.colwise().sum();
    MatX<S> d_pooled_used = d_pre * m.at("cls.proj.w").transpose();
    MatX<S> d_pooled = train && cache.pool_drop.size() > 0
                           ? d_pooled_used.cwiseProduct(cache.pool_drop).eval()
                           : std::move(d_pooled_used);

    MatX<S> d_states = MatX<S>::Zero(B * L, H);
    for (Eigen::Index b = 0; b < B; ++b) d_states.row(b * L) = d_pooled.row(b);

    backward_encoder(m, cache, std::move(d_states), grads);
    return grads;
}

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0)) throw argument_error("learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw argument_error("beta1 must lie in [0,1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw argument_error("beta2 must lie in (0,1)");
    if (!(epsilon > 0.0)) throw argument_error("epsilon must be positive");
    if (weight_decay < 0.0) throw argument_error("weight_decay must be non-negative");
    if (warmup_steps < 0 || total_steps < 0 || warmup_steps > total_steps) {
        throw argument_error("warmup_steps must lie in [0, total_steps]");
    }
}

double lr_at(long long step, const OptimizerConfig& ocfg) {
    const double peak = ocfg.learning_rate;
    if (step <= 0) return ocfg.warmup_steps == 0 ? peak : 0.0;
    if (step >= ocfg.total_steps) return 0.0;
    if (step < ocfg.warmup_steps) {
        return peak * static_cast<double>(step) / static_cast<double>(ocfg.warmup_steps);
    }
    return peak * static_cast<double>(ocfg.total_steps - step) /
           static_cast<double>(ocfg.total_steps - ocfg.warmup_steps);
}

template <typename S>
void adamw_step(ModelT<S>& model, const std::vector<MatX<S>>& grads, AdamState<S>& state,
                const OptimizerConfig& ocfg, long long step, double lr) {
    ocfg.validate();
    if (step < 1) throw argument_error("optimizer step counts from 1");
    if (grads.size() != model.tensors.size()) {
        throw argument_error("gradient list does not match the parameter registry");
    }
    if (state.m.empty()) {
        state.m = zero_grads(model);
        state.v = zero_grads(model);
    }

    const S b1 = static_cast<S>(ocfg.beta1), b2 = static_cast<S>(ocfg.beta2);
    const S eps = static_cast<S>(ocfg.epsilon);
    const S bc1 = static_cast<S>(1.0 - std::pow(ocfg.beta1, static_cast<double>(step)));
    const S bc2 = static_cast<S>(1.0 - std::pow(ocfg.beta2, static_cast<double>(step)));
    const S slr = static_cast<S>(lr);

    for (std::size_t i = 0; i < model.tensors.size(); ++i) {
        const MatX<S>& grad = grads[i];
        if (!grad.allFinite()) {
            throw train_error("non-finite gradient in tensor " + model.specs[i].name);
        }
        MatX<S>& p = model.tensors[i];
        if (model.specs[i].decay && ocfg.weight_decay > 0.0) {
            p *= S(1) - slr * static_cast<S>(ocfg.weight_decay);
        }
        MatX<S>& mo = state.m[i];
        MatX<S>& vo = state.v[i];
        mo = b1 * mo + (S(1) - b1) * grad;
        vo = b2 * vo + (S(1) - b2) * grad.cwiseProduct(grad);
        p.array() -= slr * (mo.array() / bc1) / ((vo.array() / bc2).sqrt() + eps);
    }
}

template struct ModelT<float>;
template struct ModelT<double>;
template ModelT<float> init_model<float>(const ModelConfig&, std::uint64_t);
template ModelT<double> init_model<double>(const ModelConfig&, std::uint64_t);
template void add_classifier<float>(ModelT<float>&, int, std::uint64_t);
template void add_classifier<double>(ModelT<double>&, int, std::uint64_t);
template MatX<float> encode_states<float>(const ModelT<float>&, const mask::IntMatrix&,
                                          const mask::IntMatrix&, Mode, std::uint64_t,
                                          ForwardCache<float>*);
template MatX<double> encode_states<double>(const ModelT<double>&, const mask::IntMatrix&,
                                            const mask::IntMatrix&, Mode, std::uint64_t,
                                            ForwardCache<double>*);
template MlmOut<float> forward_mlm<float>(const ModelT<float>&, const mask::MaskedBatch&, Mode,
                                          std::uint64_t, ForwardCache<float>*);
template MlmOut<double> forward_mlm<double>(const ModelT<double>&, const mask::MaskedBatch&, Mode,
                                            std::uint64_t, ForwardCache<double>*);
template ClassifyOut<float> forward_classify<float>(const ModelT<float>&, const mask::IntMatrix&,
                                                    const mask::IntMatrix&,
                                                    const std::vector<int>&, Mode, std::uint64_t,
                                                    ForwardCache<float>*);
template ClassifyOut<double> forward_classify<double>(const ModelT<double>&,
                                                      const mask::IntMatrix&,
                                                      const mask::IntMatrix&,
                                                      const std::vector<int>&, Mode, std::uint64_t,
                                                      ForwardCache<double>*);
template std::vector<MatX<float>> backward_mlm<float>(const ModelT<float>&,
                                                      const ForwardCache<float>&, float);
template std::vector<MatX<double>> backward_mlm<double>(const ModelT<double>&,
                                                        const ForwardCache<double>&, double);
template std::vector<MatX<float>> backward_classify<float>(const ModelT<float>&,
                                                           const ForwardCache<float>&, float);
template std::vector<MatX<double>> backward_classify<double>(const ModelT<double>&,
                                                             const ForwardCache<double>&, double);
template void adamw_step<float>(ModelT<float>&, const std::vector<MatX<float>>&,
                                AdamState<float>&, const OptimizerConfig&, long long, double);
template void adamw_step<double>(ModelT<double>&, const std::vector<MatX<double>>&,
                                 AdamState<double>&, const OptimizerConfig&, long long, double);

}  // namespace abtok::model
