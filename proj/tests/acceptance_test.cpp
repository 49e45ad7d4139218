// Go/no-go gate: one line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "abtok/bench.hpp"
#include "abtok/data_ingest.hpp"
#include "abtok/masking.hpp"
#include "abtok/metrics.hpp"
#include "abtok/model.hpp"
#include "abtok/rng.hpp"
#include "abtok/tokenizers.hpp"
#include "abtok/train.hpp"

using namespace abtok;

namespace {

int failures = 0;

void report(int num, const std::string& title, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", num,
                title.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return std::string(buf);
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    }
};

std::string random_seq(det_rng& rng, int min_len, int max_len) {
    const int len =
        min_len + static_cast<int>(rng.uniform_index(
                      static_cast<std::uint64_t>(max_len - min_len + 1)));
    std::string s(static_cast<std::size_t>(len), 'A');
    for (char& ch : s) ch = ingest::kCanonicalAlphabet[rng.uniform_index(20)];
    return s;
}

std::vector<std::string> random_corpus(int n, int min_len, int max_len,
                                       std::uint64_t seed) {
    det_rng rng(seed);
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(random_seq(rng, min_len, max_len));
    return out;
}

model::ModelConfig toy_config() {
    model::ModelConfig cfg;
    cfg.vocab_size = 25;
    cfg.max_positions = 32;
    cfg.hidden_size = 8;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.intermediate_size = 16;
    cfg.hidden_dropout = 0.0;
    cfg.attention_dropout = 0.0;
    return cfg;
}

// ---------------------------------------------------------------------------
// 1. Vocabulary cardinalities and reproducible BPE training.

void criterion_1() {
    Timer t;
    const std::size_t saa = tok::build_saa_vocab().tokens.size();
    const std::size_t daa = tok::build_daa_vocab().tokens.size();

    const std::vector<std::string> corpus = random_corpus(10000, 80, 140, 101);
    tok::BpeModel first = tok::bpe_train(corpus, 500);
    tok::BpeModel second = tok::bpe_train(corpus, 500);

    const bool sizes_ok = saa == 25 && daa == 425 &&
                          first.vocab.tokens.size() <= 500 &&
                          first.merges.size() == first.vocab.tokens.size() - 25;
    const bool repro = first.vocab.tokens == second.vocab.tokens &&
                       first.merges == second.merges;
    const double secs = t.seconds();
    report(1, "vocabulary cardinalities and reproducible BPE",
           sizes_ok && repro && secs < 60.0,
           fmt("saa=%zu daa=%zu bpe|V|=%zu merges=%zu repro=%s %.1fs", saa, daa,
               first.vocab.tokens.size(), first.merges.size(), repro ? "yes" : "no",
               secs));
}

// ---------------------------------------------------------------------------
// 2. decode(encode(s)) == s for 10,000 random sequences, all three tokenizers.

void criterion_2() {
    const std::vector<std::string> seqs = random_corpus(10000, 1, 148, 202);
    tok::Tokenizer saa(tok::build_saa_vocab());
    tok::Tokenizer daa(tok::build_daa_vocab());
    std::vector<std::string> bpe_corpus(seqs.begin(), seqs.begin() + 2000);
    tok::Tokenizer bpe(tok::bpe_train(bpe_corpus, 100));

    long long bad = 0;
    for (const std::string& s : seqs) {
        for (const tok::Tokenizer* tz : {&saa, &daa, &bpe}) {
            if (tz->decode(tz->encode(s).ids) != s) ++bad;
        }
    }
    report(2, "tokenizer roundtrip on 10,000 random sequences", bad == 0,
           fmt("%lld failures over 30000 roundtrips", bad));
}

// ---------------------------------------------------------------------------
// 3. Masking statistics over at least one million maskable positions.

void criterion_3() {
    const std::vector<std::string> seqs = random_corpus(8500, 100, 148, 303);
    tok::Vocab vocab = tok::build_saa_vocab();
    std::vector<tok::TokenizedSeq> encoded;
    encoded.reserve(seqs.size());
    long long maskable = 0;
    for (const std::string& s : seqs) {
        encoded.push_back(tok::encode(vocab, s));
        maskable += static_cast<long long>(s.size());
    }
    mask::MaskingConfig cfg;
    mask::PaddedBatch padded = mask::pad_batch(encoded, vocab);
    mask::MaskedBatch masked = mask::mask_batch(encoded, cfg, vocab, 404);

    long long selected = 0, masked_n = 0, random_n = 0, keep_n = 0, corrupt = 0;
    for (Eigen::Index r = 0; r < masked.input_ids.rows(); ++r) {
        for (Eigen::Index c = 0; c < masked.input_ids.cols(); ++c) {
            const int original = padded.input_ids(r, c);
            const bool special = original == vocab.pad_id ||
                                 original == vocab.start_id || original == vocab.end_id;
            if (special) {
                if (masked.input_ids(r, c) != original ||
                    masked.labels(r, c) != mask::kIgnoreLabel) {
                    ++corrupt;
                }
                continue;
            }
            if (masked.labels(r, c) == mask::kIgnoreLabel) continue;
            ++selected;
            if (masked.input_ids(r, c) == vocab.mask_id) {
                ++masked_n;
            } else if (masked.input_ids(r, c) == original) {
                ++keep_n;
            } else {
                ++random_n;
            }
        }
    }
    const double sel = static_cast<double>(selected) / static_cast<double>(maskable);
    const double m = static_cast<double>(masked_n) / static_cast<double>(selected);
    const double r = static_cast<double>(random_n) / static_cast<double>(selected);
    const double k = static_cast<double>(keep_n) / static_cast<double>(selected);
    const bool pass = maskable >= 1000000 && sel >= 0.145 && sel <= 0.155 &&
                      std::abs(m - 0.80) <= 0.01 && std::abs(r - 0.10) <= 0.01 &&
                      std::abs(k - 0.10) <= 0.01 && corrupt == 0;
    report(3, "masking statistics over 1e6 maskable positions", pass,
           fmt("maskable=%lld select=%.4f mask=%.4f random=%.4f keep=%.4f corrupt=%lld",
               maskable, sel, m, r, k, corrupt));
}

// ---------------------------------------------------------------------------
// 4. AUROC equals brute-force pair enumeration; fixed oracle is exactly 0.75.

double brute_force_auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
    double score = 0.0;
    for (double p : pos) {
        for (double n : neg) {
            if (p > n) score += 1.0;
            else if (p == n) score += 0.5;
        }
    }
    return score / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

// Ties are the interesting case, so draw from a coarse grid half the time.
double tieable_score(det_rng& rng) {
    if (rng.uniform_index(2) == 0) {
        return static_cast<double>(rng.uniform_index(10)) / 10.0;
    }
    return rng.uniform();
}

void criterion_4() {
    det_rng rng(505);
    double worst = 0.0;

    for (int trial = 0; trial < 1000; ++trial) {
        const int np = 1 + static_cast<int>(rng.uniform_index(25));
        const int nn = 1 + static_cast<int>(rng.uniform_index(25));
        std::vector<double> pos, neg;
        for (int i = 0; i < np; ++i) pos.push_back(tieable_score(rng));
        for (int i = 0; i < nn; ++i) neg.push_back(tieable_score(rng));
        worst = std::max(worst, std::abs(metrics::auroc_binary(pos, neg) -
                                         brute_force_auroc(pos, neg)));
    }

    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + static_cast<int>(rng.uniform_index(4));   // K <= 5
        const int n = k + static_cast<int>(rng.uniform_index(
                              static_cast<std::uint64_t>(50 - k + 1)));  // N <= 50
        std::vector<int> labels;
        for (int i = 0; i < k; ++i) labels.push_back(i);  // every class present
        for (int i = k; i < n; ++i) {
            labels.push_back(static_cast<int>(rng.uniform_index(
                static_cast<std::uint64_t>(k))));
        }
        metrics::ScoreMatrix scores(n, k);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < k; ++j) scores(i, j) = tieable_score(rng);
        }
        double acc = 0.0;
        for (int c = 0; c < k; ++c) {
            std::vector<double> pos, neg;
            for (int i = 0; i < n; ++i) {
                (labels[static_cast<std::size_t>(i)] == c ? pos : neg)
                    .push_back(scores(i, c));
            }
            acc += brute_force_auroc(pos, neg);
        }
        worst = std::max(worst, std::abs(metrics::auroc_multiclass(scores, labels) -
                                         acc / static_cast<double>(k)));
    }

    const double fixed =
        metrics::auroc_binary({0.9, 0.4}, {0.5, 0.3});
    const bool pass = worst <= 1e-12 && fixed == 0.75;
    report(4, "AUROC equals pair enumeration", pass,
           fmt("max|fast-brute|=%.2e fixed=%.6f", worst, fixed));
}

// ---------------------------------------------------------------------------
// 5. Accuracy/precision/recall/F1 equal confusion-matrix hand oracles.

void criterion_5() {
    det_rng rng(606);
    bool exact = true;
    for (int trial = 0; trial < 500 && exact; ++trial) {
        const int k = 2 + static_cast<int>(rng.uniform_index(5));
        const int n = 1 + static_cast<int>(rng.uniform_index(60));
        std::vector<int> labels, preds;
        for (int i = 0; i < n; ++i) {
            labels.push_back(static_cast<int>(rng.uniform_index(
                static_cast<std::uint64_t>(k))));
            preds.push_back(static_cast<int>(rng.uniform_index(
                static_cast<std::uint64_t>(k))));
        }

        metrics::ConfusionResult cr = metrics::confusion_and_accuracy(preds, labels, k);
        metrics::MacroPRF prf = metrics::macro_prf(cr.confusion);

        long long hits = 0;
        for (int i = 0; i < n; ++i) {
            if (labels[static_cast<std::size_t>(i)] == preds[static_cast<std::size_t>(i)]) {
                ++hits;
            }
        }
        if (cr.accuracy != static_cast<double>(hits) / static_cast<double>(n)) {
            exact = false;
        }

        double psum = 0.0, rsum = 0.0, fsum = 0.0;
        for (int c = 0; c < k; ++c) {
            long long tp = 0, fp = 0, fn = 0;
            for (int i = 0; i < n; ++i) {
                const bool is_c = labels[static_cast<std::size_t>(i)] == c;
                const bool said_c = preds[static_cast<std::size_t>(i)] == c;
                if (is_c && said_c) ++tp;
                if (!is_c && said_c) ++fp;
                if (is_c && !said_c) ++fn;
            }
            const double p = tp + fp == 0
                                 ? 0.0
                                 : static_cast<double>(tp) / static_cast<double>(tp + fp);
            const double r = tp + fn == 0
                                 ? 0.0
                                 : static_cast<double>(tp) / static_cast<double>(tp + fn);
            const double f = p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
            const metrics::ClassPRF& got = prf.per_class[static_cast<std::size_t>(c)];
            if (got.precision != p || got.recall != r || got.f1 != f) exact = false;
            psum += p;
            rsum += r;
            fsum += f;
        }
        const double kd = static_cast<double>(k);
        if (prf.precision != psum / kd || prf.recall != rsum / kd ||
            prf.f1 != fsum / kd) {
            exact = false;
        }
    }

    // P = 0.5, R = 1.0: predict everything positive on a half-positive set.
    metrics::ConfusionResult cr =
        metrics::confusion_and_accuracy({1, 1, 1, 1}, {1, 1, 0, 0}, 2);
    metrics::MacroPRF prf = metrics::macro_prf(cr.confusion);
    const double f1_pos = prf.per_class[1].f1;
    const bool f1_ok = std::abs(f1_pos - 2.0 / 3.0) < 1e-12 &&
                       fmt("%.4f", f1_pos) == "0.6667";
    report(5, "classification metrics equal hand oracles", exact && f1_ok,
           fmt("500 random instances exact=%s, F1(P=0.5,R=1.0)=%.4f",
               exact ? "yes" : "no", f1_pos));
}

// ---------------------------------------------------------------------------
// 6. Analytic gradients match 64-bit central finite differences.

void criterion_6() {
    Timer t;
    model::ModelConfig cfg = toy_config();
    model::ModelT<double> m = model::init_model<double>(cfg, 99);
    tok::Vocab vocab = tok::build_saa_vocab();

    std::vector<tok::TokenizedSeq> encoded = {tok::encode(vocab, "QVQLVQSGAEVK", 32),
                                              tok::encode(vocab, "WGQGTLV", 32)};
    mask::MaskingConfig mcfg;
    mcfg.p_select = 0.3;
    mask::MaskedBatch batch = mask::mask_batch(encoded, mcfg, vocab, 11);

    model::ForwardCache<double> cache;
    model::forward_mlm(m, batch, model::Mode::eval, 0, &cache);
    std::vector<model::MatX<double>> grads = model::backward_mlm(m, cache);

    const double h = 1e-4;
    det_rng pick(4242);
    double max_rel = 0.0, max_abs_below_floor = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t ti = pick.uniform_index(m.tensors.size());
        model::MatX<double>& tensor = m.tensors[ti];
        const Eigen::Index r = static_cast<Eigen::Index>(
            pick.uniform_index(static_cast<std::uint64_t>(tensor.rows())));
        const Eigen::Index c = static_cast<Eigen::Index>(
            pick.uniform_index(static_cast<std::uint64_t>(tensor.cols())));
        const double orig = tensor(r, c);
        tensor(r, c) = orig + h;
        const double up = model::forward_mlm(m, batch, model::Mode::eval).loss;
        tensor(r, c) = orig - h;
        const double dn = model::forward_mlm(m, batch, model::Mode::eval).loss;
        tensor(r, c) = orig;
        const double fd = (up - dn) / (2.0 * h);
        const double an = grads[ti](r, c);
        // Below 1e-6 central differences are dominated by cancellation noise;
        // those coordinates are held to absolute agreement instead.
        max_rel = std::max(max_rel, std::abs(fd - an) /
                                        std::max({std::abs(fd), std::abs(an), 1e-6}));
        if (std::max(std::abs(fd), std::abs(an)) < 1e-6) {
            max_abs_below_floor = std::max(max_abs_below_floor, std::abs(fd - an));
        }
    }
    const double secs = t.seconds();
    const bool pass = max_rel < 1e-4 && max_abs_below_floor < 1e-9 && secs < 60.0;
    report(6, "gradient check against central differences", pass,
           fmt("max_rel=%.2e abs_below_floor=%.2e over 200 coords, %.1fs", max_rel,
               max_abs_below_floor, secs));
}

// ---------------------------------------------------------------------------
// 7. MLM overfit: 64 sequences, 200 epochs, accuracy >= 0.95, epoch-1 loss < ln 25.

void criterion_7() {
    Timer t;
    std::vector<std::string> seqs;
    for (int i = 0; i < 64; ++i) {
        seqs.push_back(std::string(static_cast<std::size_t>(10 + i % 5),
                                   ingest::kCanonicalAlphabet[i % 20]));
    }
    tok::Tokenizer tokenizer(tok::build_saa_vocab());
    model::ModelConfig mcfg = toy_config();

    train::PretrainConfig pcfg;
    pcfg.epochs = 200;
    pcfg.batch_size = 2;
    pcfg.learning_rate = 3e-3;
    pcfg.warmup_steps = 4;
    pcfg.seed = 7;
    auto [m, history] = train::train_mlm(seqs, tokenizer, mcfg, pcfg);

    train::MlmEval eval = train::mlm_eval(m, seqs, tokenizer, pcfg.masking, 2024);
    const double ln25 = std::log(25.0);
    // Epoch 1 averages over the untrained plateau at ~ln(25); once that first
    // epoch is done, every later epoch must run strictly below the
    // uniform-prediction baseline.
    double max_after_first = 0.0;
    for (std::size_t i = 1; i < history.losses.size(); ++i) {
        max_after_first = std::max(max_after_first, history.losses[i]);
    }
    const double secs = t.seconds();
    const bool pass = eval.accuracy >= 0.95 && max_after_first < ln25 && secs < 300.0;
    report(7, "MLM overfit on 64 sequences", pass,
           fmt("masked-accuracy=%.4f max-loss-after-epoch1=%.4f (ln25=%.4f) "
               "final-loss=%.4f %.0fs",
               eval.accuracy, max_after_first, ln25, history.losses.back(), secs));
}

// ---------------------------------------------------------------------------
// Shared by criteria 8 and 9: a quickly pretrained toy encoder.

model::Model quick_pretrain(const std::vector<std::string>& seqs,
                            const tok::Tokenizer& tokenizer,
                            const model::ModelConfig& mcfg, int epochs) {
    train::PretrainConfig pcfg;
    pcfg.epochs = epochs;
    pcfg.batch_size = 64;
    pcfg.learning_rate = 2e-3;
    pcfg.warmup_steps = 10;
    pcfg.seed = 1;
    return train::train_mlm(seqs, tokenizer, mcfg, pcfg).first;
}

// ---------------------------------------------------------------------------
// 8. Fine-tune protocol: 2-class motif data, Table-2 hyperparameters, 5 seeds.

void criterion_8() {
    Timer t;
    const int total = 10000, held = 400;
    det_rng rng(808);
    train::LabeledSet all;
    for (int i = 0; i < total; ++i) {
        const int cls = i % 2;
        std::string s = cls == 0 ? "QVQL" : "WGQG";  // motif at offset 0
        for (int j = 0; j < 6; ++j) s += ingest::kCanonicalAlphabet[rng.uniform_index(20)];
        all.sequences.push_back(s);
        all.labels.push_back(cls);
    }
    train::LabeledSet train_set, held_out;
    for (int i = 0; i < total; ++i) {
        train::LabeledSet& dst = i < total - held ? train_set : held_out;
        dst.sequences.push_back(all.sequences[static_cast<std::size_t>(i)]);
        dst.labels.push_back(all.labels[static_cast<std::size_t>(i)]);
    }

    tok::Tokenizer tokenizer(tok::build_saa_vocab());
    model::ModelConfig mcfg = toy_config();
    model::Model base = quick_pretrain(all.sequences, tokenizer, mcfg, 24);

    std::vector<double> aurocs;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        train::FinetuneConfig fcfg;  // defaults are the published protocol values
        fcfg.seed = seed;
        auto [tuned, history] =
            train::finetune(train_set, held_out, base, tokenizer, 2, fcfg);
        aurocs.push_back(history.reports.back().auroc);
        per_seed += fmt(" %.3f", aurocs.back());
    }
    double mean = 0.0;
    for (double a : aurocs) mean += a;
    mean /= static_cast<double>(aurocs.size());
    double sd = 0.0;
    for (double a : aurocs) sd += (a - mean) * (a - mean);
    sd = std::sqrt(sd / static_cast<double>(aurocs.size() - 1));

    const double secs = t.seconds();
    report(8, "fine-tune protocol, 5 seeds on motif data", mean >= 0.95,
           fmt("held-out AUROC %.4f +/- %.4f (seeds:%s), %.0fs", mean, sd,
               per_seed.c_str(), secs));
}

// ---------------------------------------------------------------------------
// 9. Class readable from the first ten residues: perfect after one epoch.

void criterion_9() {
    Timer t;
    const char* prefixes[4] = {"QVQLVQSGAE", "EVQLLESGGG", "WGQGTLVTVS",
                               "DIQMTQSPSS"};
    det_rng rng(909);
    train::LabeledSet train_set, held_out;
    for (int i = 0; i < 4000; ++i) {
        const int cls = i % 4;
        std::string s = prefixes[cls];
        for (int j = 0; j < 4; ++j) s += ingest::kCanonicalAlphabet[rng.uniform_index(20)];
        train::LabeledSet& dst = i < 3200 ? train_set : held_out;
        dst.sequences.push_back(s);
        dst.labels.push_back(cls);
    }

    tok::Tokenizer tokenizer(tok::build_saa_vocab());
    model::ModelConfig mcfg = toy_config();
    model::Model base = quick_pretrain(train_set.sequences, tokenizer, mcfg, 20);

    train::FinetuneConfig fcfg;
    fcfg.epochs = 1;
    fcfg.batch_size = 4;
    fcfg.learning_rate = 2e-3;
    fcfg.warmup_steps = 20;
    fcfg.weight_decay = 0.0;
    fcfg.dropout = 0.0;
    fcfg.seed = 1;
    auto [tuned, history] = train::finetune(train_set, held_out, base, tokenizer, 4, fcfg);
    const double acc = history.reports.front().accuracy;
    const double secs = t.seconds();
    report(9, "prefix task reaches accuracy 1.0 after one epoch", acc == 1.0,
           fmt("held-out accuracy=%.4f after 1 epoch, %.0fs", acc, secs));
}

// ---------------------------------------------------------------------------
// 10. Length reduction: DAA is exactly half of SAA; BPE compresses; throughput.

void criterion_10() {
    det_rng rng(1010);
    std::vector<std::string> corpus;
    for (int i = 0; i < 200; ++i) {
        const int len = 60 + 2 * static_cast<int>(rng.uniform_index(31));  // even
        corpus.push_back(random_seq(rng, len, len));
    }

    std::vector<std::pair<std::string, tok::Tokenizer>> toks;
    toks.emplace_back("saa", tok::Tokenizer(tok::build_saa_vocab()));
    toks.emplace_back("daa", tok::Tokenizer(tok::build_daa_vocab()));
    tok::BpeModel bpe = tok::bpe_train(corpus, 100);
    toks.emplace_back("bpe", tok::Tokenizer(bpe));

    bench::BenchReport rep = bench::run_bench(corpus, toks);
    const bench::TokenizerStats& saa = rep.tokenizers[0];
    const bench::TokenizerStats& daa = rep.tokenizers[1];
    const bench::TokenizerStats& bpe_stats = rep.tokenizers[2];

    const bool pass = daa.compression_vs_saa == 0.5 &&
                      daa.mean_tokens_per_seq * 2.0 == saa.mean_tokens_per_seq &&
                      bpe.merges.size() >= 1 && bpe_stats.compression_vs_saa < 1.0 &&
                      saa.sequences_per_sec > 0.0;
    report(10, "tokenized length reduction and throughput", pass,
           fmt("daa/saa=%.6f bpe/saa=%.4f merges=%zu saa=%.0f seq/s daa=%.0f bpe=%.0f",
               daa.compression_vs_saa, bpe_stats.compression_vs_saa,
               bpe.merges.size(), saa.sequences_per_sec, daa.sequences_per_sec,
               bpe_stats.sequences_per_sec));
}

using Criterion = void (*)();

}  // namespace

int main(int argc, char** argv) {
    const Criterion criteria[] = {criterion_1, criterion_2, criterion_3, criterion_4,
                                  criterion_5, criterion_6, criterion_7, criterion_8,
                                  criterion_9, criterion_10};
    std::vector<int> wanted;  // empty = all
    for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

    int num = 0, run = 0;
    for (Criterion c : criteria) {
        ++num;
        if (!wanted.empty() &&
            std::find(wanted.begin(), wanted.end(), num) == wanted.end()) {
            continue;
        }
        ++run;
        try {
            c();
        } catch (const std::exception& e) {
            report(num, "criterion threw", false, e.what());
        }
    }
    std::printf("%d/%d criteria passed\n", run - failures, run);
    return failures == 0 ? 0 : 1;
}
