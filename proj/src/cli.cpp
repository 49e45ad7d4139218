#include "abtok/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "abtok/bench.hpp"
#include "abtok/checkpoint.hpp"
#include "abtok/data_ingest.hpp"
#include "abtok/embed.hpp"
#include "abtok/errors.hpp"
#include "abtok/log.hpp"
#include "abtok/metrics.hpp"
#include "abtok/model.hpp"
#include "abtok/rng.hpp"
#include "abtok/tokenizers.hpp"
#include "abtok/train.hpp"
#include "json.hpp"

namespace abtok::cli {

namespace {

using nlohmann::ordered_json;

ingest::ParseResult read_records_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    ingest::ParseResult result = ingest::parse_records(in);
    if (!result.errors.empty()) {
        log_info(path + ": skipped " + std::to_string(result.errors.size()) +
                 " malformed row(s)");
    }
    return result;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw io_error("write failed for " + path);
}

// Every artifact gets a sibling manifest so the run can be re-created.
void write_manifest(const std::string& primary_output, const std::string& command,
                    const ordered_json& config, const ordered_json& inputs,
                    const ordered_json& outputs, const ordered_json& result) {
    ordered_json manifest;
    manifest["command"] = command;
    manifest["version"] = kVersion;
    manifest["config"] = config;
    manifest["inputs"] = inputs;
    manifest["outputs"] = outputs;
    manifest["result"] = result;
    write_text_file(primary_output + ".manifest.json", manifest.dump(2) + "\n");
}

tok::Tokenizer load_tokenizer(const std::string& vocab_path) {
    tok::Vocab vocab = tok::load_vocab(vocab_path);
    if (vocab.kind == tok::VocabKind::bpe) {
        return tok::Tokenizer(
            tok::load_bpe(vocab_path, tok::default_merges_path(vocab_path)));
    }
    return tok::Tokenizer(std::move(vocab));
}

ingest::Task require_task(const std::string& name) {
    std::optional<ingest::Task> t = ingest::parse_task(name);
    if (!t) throw argument_error("unknown task '" + name + "'");
    return *t;
}

ingest::Chain require_chain(const std::string& name) {
    std::optional<ingest::Chain> c = ingest::parse_chain(name);
    if (!c) throw argument_error("unknown chain '" + name + "'");
    return *c;
}

// "--seeds 5" means seeds 1..5 (the protocol's five runs); "--seeds 3,7,9"
// names them explicitly.
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        seeds.push_back(std::stoull(item));
    }
    if (seeds.empty()) throw argument_error("--seeds is empty");
    if (seeds.size() == 1 && text.find(',') == std::string::npos && seeds[0] >= 1 &&
        seeds[0] <= 64) {
        const std::uint64_t n = seeds[0];
        seeds.clear();
        for (std::uint64_t s = 1; s <= n; ++s) seeds.push_back(s);
    }
    return seeds;
}

double sample_sd(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

// ---------------------------------------------------------------- filter --

struct FilterArgs {
    std::string input, output;
};

int cmd_filter(const FilterArgs& a) {
    ingest::ParseResult parsed = read_records_file(a.input);
    ingest::FilterCounts counts;
    counts.parse_error = parsed.errors.size();
    std::vector<ingest::SequenceRecord> kept;
    for (const ingest::SequenceRecord& r : parsed.records) {
        ingest::FilterDecision d = ingest::filter_record(r);
        if (d.keep) {
            kept.push_back(r);
            ++counts.kept;
        } else if (d.reason == ingest::DropReason::non_human) {
            ++counts.non_human;
        } else if (d.reason == ingest::DropReason::fr1_short) {
            ++counts.fr1_short;
        } else {
            ++counts.fr4_short;
        }
    }
    std::ostringstream body;
    ingest::write_records_csv(body, kept);
    write_text_file(a.output, body.str());

    ordered_json result = {{"kept", counts.kept},
                           {"dropped",
                            {{"non_human", counts.non_human},
                             {"fr1_short", counts.fr1_short},
                             {"fr4_short", counts.fr4_short}}},
                           {"malformed", counts.parse_error}};
    write_manifest(a.output, "filter", ordered_json::object(), {{"input", a.input}},
                   {{"output", a.output}}, result);
    std::cout << result.dump(2) << '\n';
    return 0;
}

// ----------------------------------------------------------------- split --

struct SplitArgs {
    std::string input, output_prefix;
    double train = 0.7, test = 0.15, valid = 0.15;
    std::uint64_t seed = 1;
};

int cmd_split(const SplitArgs& a) {
    ingest::ParseResult parsed = read_records_file(a.input);
    ingest::DatasetSplit split =
        ingest::split_dataset(parsed.records, a.train, a.test, a.valid, a.seed);

    const std::string train_path = a.output_prefix + ".train.csv";
    const std::string test_path = a.output_prefix + ".test.csv";
    const std::string valid_path = a.output_prefix + ".valid.csv";
    for (const auto& [path, part] :
         {std::pair{train_path, &split.train}, {test_path, &split.test},
          {valid_path, &split.valid}}) {
        std::ostringstream body;
        ingest::write_records_csv(body, *part);
        write_text_file(path, body.str());
    }

    ordered_json result = {{"train", split.train.size()},
                           {"test", split.test.size()},
                           {"valid", split.valid.size()}};
    write_manifest(train_path, "split",
                   {{"ratios", {a.train, a.test, a.valid}}, {"seed", a.seed}},
                   {{"input", a.input}},
                   {{"train", train_path}, {"test", test_path}, {"valid", valid_path}}, result);
    std::cout << result.dump(2) << '\n';
    return 0;
}

// ----------------------------------------------------------- build-vocab --

struct BuildVocabArgs {
    std::string kind = "saa";
    std::string corpus;
    std::string output;
    int target = tok::kDefaultBpeTarget;
    long long sample = 0;
    std::uint64_t seed = 1;
};

int cmd_build_vocab(const BuildVocabArgs& a) {
    std::optional<tok::VocabKind> kind = tok::parse_vocab_kind(a.kind);
    if (!kind) throw argument_error("unknown tokenizer kind '" + a.kind + "'");

    int vocab_size = 0;
    std::size_t merges = 0;
    if (*kind == tok::VocabKind::saa) {
        tok::Vocab v = tok::build_saa_vocab();
        tok::save_vocab(v, a.output);
        vocab_size = static_cast<int>(v.tokens.size());
    } else if (*kind == tok::VocabKind::daa) {
        tok::Vocab v = tok::build_daa_vocab();
        tok::save_vocab(v, a.output);
        vocab_size = static_cast<int>(v.tokens.size());
    } else {
        if (a.corpus.empty()) throw argument_error("bpe needs --corpus");
        ingest::ParseResult parsed = read_records_file(a.corpus);
        std::vector<std::string> seqs;
        seqs.reserve(parsed.records.size());
        for (const ingest::SequenceRecord& r : parsed.records) seqs.push_back(r.sequence);
        if (a.sample > 0 && a.sample < static_cast<long long>(seqs.size())) {
            det_rng rng(a.seed);
            fisher_yates(seqs, rng);
            seqs.resize(static_cast<std::size_t>(a.sample));
        }
        tok::BpeModel bpe = tok::bpe_train(seqs, a.target);
        tok::save_bpe(bpe, a.output, tok::default_merges_path(a.output));
        vocab_size = static_cast<int>(bpe.vocab.tokens.size());
        merges = bpe.merges.size();
    }

    ordered_json result = {{"kind", a.kind}, {"vocab_size", vocab_size}};
    if (*kind == tok::VocabKind::bpe) result["merges"] = merges;
    write_manifest(a.output, "build-vocab",
                   {{"kind", a.kind},
                    {"target", a.target},
                    {"sample", a.sample},
                    {"seed", a.seed}},
                   {{"corpus", a.corpus}}, {{"output", a.output}}, result);
    std::cout << result.dump(2) << '\n';
    return 0;
}

// -------------------------------------------------------------- pretrain --

struct PretrainArgs {
    std::string input, vocab, output;
    model::ModelConfig mcfg;
    train::PretrainConfig pcfg;
};

ordered_json model_config_json(const model::ModelConfig& m) {
    return {{"vocab_size", m.vocab_size},
            {"max_positions", m.max_positions},
            {"hidden_size", m.hidden_size},
            {"num_layers", m.num_layers},
            {"num_heads", m.num_heads},
            {"intermediate_size", m.intermediate_size},
            {"hidden_dropout", m.hidden_dropout},
            {"attention_dropout", m.attention_dropout}};
}

int cmd_pretrain(PretrainArgs& a) {
    tok::Tokenizer tokenizer = load_tokenizer(a.vocab);
    a.mcfg.vocab_size = static_cast<int>(tokenizer.vocab().tokens.size());
    a.mcfg.validate();

    ingest::ParseResult parsed = read_records_file(a.input);
    std::vector<std::string> corpus;
    corpus.reserve(parsed.records.size());
    for (const ingest::SequenceRecord& r : parsed.records) corpus.push_back(r.sequence);

    const std::string log_path = a.output + ".log.jsonl";
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw io_error("cannot open " + log_path + " for writing");

    log_info("pretraining on " + std::to_string(corpus.size()) + " sequences");
    auto [m, history] = train::train_mlm(corpus, tokenizer, a.mcfg, a.pcfg, &log);

    ordered_json extras = {{"vocab", a.vocab},
                           {"kind", tok::vocab_kind_name(tokenizer.vocab().kind)}};
    ckpt::save_checkpoint(m, a.output, extras);

    double total_seconds = 0.0;
    for (double s : history.seconds) total_seconds += s;
    ordered_json result = {{"epochs", a.pcfg.epochs},
                           {"final_loss", history.losses.empty() ? 0.0 : history.losses.back()},
                           {"seconds", total_seconds},
                           {"parameters", model::param_count(a.mcfg)}};
    ordered_json config = {{"model", model_config_json(a.mcfg)},
                           {"epochs", a.pcfg.epochs},
                           {"batch_size", a.pcfg.batch_size},
                           {"learning_rate", a.pcfg.learning_rate},
                           {"beta2", a.pcfg.beta2},
                           {"epsilon", a.pcfg.epsilon},
                           {"weight_decay", a.pcfg.weight_decay},
                           {"warmup_steps", a.pcfg.warmup_steps},
                           {"mask_select", a.pcfg.masking.p_select},
                           {"seed", a.pcfg.seed}};
    write_manifest(a.output, "pretrain", config,
                   {{"input", a.input}, {"vocab", a.vocab}},
                   {{"model", a.output}, {"log", log_path}}, result);
    std::cout << result.dump(2) << '\n';
    return 0;
}

// -------------------------------------------------------------- finetune --

struct FinetuneArgs {
    std::string input, vocab, output, task = "antigen", chain = "heavy";
    std::string pretrained;    // checkpoint path; empty = train from fresh init
    std::string output_model;  // optional checkpoint(s) for the tuned model
    std::string seeds = "1";
    model::ModelConfig mcfg;  // used only without --pretrained
    train::FinetuneConfig fcfg;
    double train_ratio = 0.7, test_ratio = 0.15, valid_ratio = 0.15;
    std::uint64_t split_seed = 1;
};

train::LabeledSet to_labeled_set(const std::vector<ingest::SequenceRecord>& records,
                                 const ingest::LabeledDataset& ld) {
    train::LabeledSet s;
    s.sequences.reserve(records.size());
    s.labels.reserve(records.size());
    for (const ingest::SequenceRecord& r : records) {
        s.sequences.push_back(r.sequence);
        s.labels.push_back(ld.class_index(r.labels.at(ld.task)));
    }
    return s;
}

ordered_json metric_fields(const metrics::EvalReport& r) {
    return {{"auroc", r.auroc},
            {"acc", r.accuracy},
            {"f1", r.f1_macro},
            {"precision", r.precision_macro},
            {"recall", r.recall_macro}};
}

int cmd_finetune(FinetuneArgs& a) {
    const ingest::Task task = require_task(a.task);
    const ingest::Chain chain = require_chain(a.chain);
    tok::Tokenizer tokenizer = load_tokenizer(a.vocab);

    std::ifstream in(a.input);
    if (!in) throw io_error("cannot open " + a.input);
    ingest::LabeledDataset ld = ingest::load_labeled_dataset(in, task, chain);
    const int num_classes = static_cast<int>(ld.class_names.size());
    if (num_classes < 2) {
        throw data_error("task has " + std::to_string(num_classes) +
                         " class(es); need at least 2");
    }

    ingest::DatasetSplit split = ingest::split_dataset(ld.records, a.train_ratio, a.test_ratio,
                                                       a.valid_ratio, a.split_seed);
    train::LabeledSet train_set = to_labeled_set(split.train, ld);
    train::LabeledSet held_out = to_labeled_set(split.test, ld);
    if (held_out.sequences.empty()) throw data_error("test split is empty");

    model::Model base;
    if (!a.pretrained.empty()) {
        base = ckpt::load_checkpoint(a.pretrained).model;
    } else {
        a.mcfg.vocab_size = static_cast<int>(tokenizer.vocab().tokens.size());
        a.mcfg.validate();
        base = model::init_model<float>(a.mcfg, 1);
    }

    const std::vector<std::uint64_t> seeds = parse_seeds(a.seeds);
    std::vector<metrics::EvalReport> finals;
    ordered_json per_seed = ordered_json::array();
    for (std::uint64_t seed : seeds) {
        train::FinetuneConfig fcfg = a.fcfg;
        fcfg.seed = seed;
        log_info("finetune seed " + std::to_string(seed));
        auto [tuned, history] = train::finetune(train_set, held_out, base, tokenizer,
                                                num_classes, fcfg);
        const metrics::EvalReport& final = history.reports.back();
        finals.push_back(final);
        ordered_json row = metric_fields(final);
        row["seed"] = seed;
        per_seed.push_back(std::move(row));
        if (!a.output_model.empty()) {
            const std::string path = seeds.size() == 1
                                         ? a.output_model
                                         : a.output_model + ".seed" + std::to_string(seed);
            ordered_json extras = {{"vocab", a.vocab},
                                   {"kind", tok::vocab_kind_name(tokenizer.vocab().kind)},
                                   {"task", a.task},
                                   {"chain", a.chain},
                                   {"classes", ld.class_names},
                                   {"seed", seed}};
            ckpt::save_checkpoint(tuned, path, extras);
        }
    }

    // Mean +/- sample standard deviation over seeds, one value per metric.
    ordered_json mean_json, sd_json;
    for (const char* key : {"auroc", "acc", "f1", "precision", "recall"}) {
        std::vector<double> values;
        for (const ordered_json& row : per_seed) values.push_back(row.at(key).get<double>());
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        mean_json[key] = mean;
        sd_json[key] = sample_sd(values, mean);
    }

    ordered_json result = {{"task", a.task},
                           {"chain", a.chain},
                           {"classes", ld.class_names},
                           {"seeds", seeds},
                           {"mean", mean_json},
                           {"sd", sd_json},
                           {"per_seed", per_seed}};
    write_text_file(a.output, result.dump(2) + "\n");
    ordered_json config = {{"epochs", a.fcfg.epochs},
                           {"batch_size", a.fcfg.batch_size},
                           {"learning_rate", a.fcfg.learning_rate},
                           {"beta2", a.fcfg.beta2},
                           {"epsilon", a.fcfg.epsilon},
                           {"weight_decay", a.fcfg.weight_decay},
                           {"warmup_steps", a.fcfg.warmup_steps},
                           {"dropout", a.fcfg.dropout},
                           {"split", {a.train_ratio, a.test_ratio, a.valid_ratio}},
                           {"split_seed", a.split_seed}};
    write_manifest(a.output, "finetune", config,
                   {{"input", a.input}, {"vocab", a.vocab}, {"pretrained", a.pretrained}},
                   {{"report", a.output}, {"model", a.output_model}},
                   {{"mean", mean_json}, {"sd", sd_json}});
    std::cout << result.dump(2) << '\n';
    return 0;
}

// -------------------------------------------------------------- evaluate --

struct EvaluateArgs {
    std::string model, input, vocab, output, task = "antigen", chain = "heavy";
};

int cmd_evaluate(const EvaluateArgs& a) {
    const ingest::Task task = require_task(a.task);
    const ingest::Chain chain = require_chain(a.chain);
    ckpt::LoadedCheckpoint loaded = ckpt::load_checkpoint(a.model);
    tok::Tokenizer tokenizer = load_tokenizer(a.vocab);

    // Class order must match training; the checkpoint remembers it.
    std::optional<std::vector<std::string>> fixed;
    if (loaded.extras.contains("classes")) {
        fixed = loaded.extras.at("classes").get<std::vector<std::string>>();
    }
    std::ifstream in(a.input);
    if (!in) throw io_error("cannot open " + a.input);
    ingest::LabeledDataset ld = ingest::load_labeled_dataset(in, task, chain, fixed);

    train::LabeledSet data;
    for (const ingest::SequenceRecord& r : ld.records) {
        data.sequences.push_back(r.sequence);
        data.labels.push_back(ld.class_index(r.labels.at(task)));
    }
    metrics::EvalReport report =
        train::evaluate_classifier(loaded.model, data, tokenizer, ld.class_names);
    const std::string text = metrics::report_to_json(report);
    write_text_file(a.output, text + "\n");
    write_manifest(a.output, "evaluate",
                   {{"task", a.task}, {"chain", a.chain}},
                   {{"model", a.model}, {"input", a.input}, {"vocab", a.vocab}},
                   {{"report", a.output}}, metric_fields(report));
    std::cout << text << '\n';
    return 0;
}

// ----------------------------------------------------------------- embed --

struct EmbedArgs {
    std::string model, input, vocab, output;
    std::string pooling = "mean";
    int batch_size = 64;
    long long sample = 0;
    std::uint64_t seed = 1;
};

int cmd_embed(const EmbedArgs& a) {
    ckpt::LoadedCheckpoint loaded = ckpt::load_checkpoint(a.model);
    tok::Tokenizer tokenizer = load_tokenizer(a.vocab);
    ingest::ParseResult parsed = read_records_file(a.input);
    std::vector<ingest::SequenceRecord> records = std::move(parsed.records);
    if (a.sample > 0 && a.sample < static_cast<long long>(records.size())) {
        det_rng rng(a.seed);
        fisher_yates(records, rng);
        records.resize(static_cast<std::size_t>(a.sample));
    }

    embed::EmbeddingMatrix m = embed::extract_embeddings(
        loaded.model, records, tokenizer, embed::parse_pooling(a.pooling), a.batch_size);
    embed::export_embeddings(m, a.output);
    ordered_json result = {{"rows", m.vectors.rows()}, {"dims", m.vectors.cols()}};
    write_manifest(a.output, "embed",
                   {{"pooling", a.pooling},
                    {"batch_size", a.batch_size},
                    {"sample", a.sample},
                    {"seed", a.seed}},
                   {{"model", a.model}, {"input", a.input}, {"vocab", a.vocab}},
                   {{"output", a.output}}, result);
    std::cout << result.dump(2) << '\n';
    return 0;
}

// ----------------------------------------------------------------- bench --

struct BenchArgs {
    std::string input, output;
    std::string tokenizers = "saa,daa";
    std::string bpe_vocab;
    int bpe_target = tok::kDefaultBpeTarget;
};

int cmd_bench(const BenchArgs& a) {
    ingest::ParseResult parsed = read_records_file(a.input);
    std::vector<std::string> corpus;
    corpus.reserve(parsed.records.size());
    for (const ingest::SequenceRecord& r : parsed.records) corpus.push_back(r.sequence);

    std::vector<std::pair<std::string, tok::Tokenizer>> toks;
    std::stringstream ss(a.tokenizers);
    std::string name;
    while (std::getline(ss, name, ',')) {
        if (name == "saa") {
            toks.emplace_back(name, tok::Tokenizer(tok::build_saa_vocab()));
        } else if (name == "daa") {
            toks.emplace_back(name, tok::Tokenizer(tok::build_daa_vocab()));
        } else if (name == "bpe") {
            if (!a.bpe_vocab.empty()) {
                toks.emplace_back(name, tok::Tokenizer(tok::load_bpe(
                                            a.bpe_vocab,
                                            tok::default_merges_path(a.bpe_vocab))));
            } else {
                log_info("training bpe on the benchmark corpus (target " +
                         std::to_string(a.bpe_target) + ")");
                toks.emplace_back(name, tok::Tokenizer(tok::bpe_train(corpus, a.bpe_target)));
            }
        } else {
            throw argument_error("unknown tokenizer '" + name + "'");
        }
    }

    bench::BenchReport report = bench::run_bench(corpus, toks);
    std::cout << bench::bench_to_table(report);
    if (!a.output.empty()) {
        write_text_file(a.output, bench::bench_to_json(report) + "\n");
        write_manifest(a.output, "bench",
                       {{"tokenizers", a.tokenizers},
                        {"bpe_vocab", a.bpe_vocab},
                        {"bpe_target", a.bpe_target}},
                       {{"input", a.input}}, {{"output", a.output}},
                       nlohmann::ordered_json::parse(bench::bench_to_json(report)));
    }
    return 0;
}

void add_model_flags(CLI::App* cmd, model::ModelConfig& mcfg) {
    cmd->add_option("--hidden-size", mcfg.hidden_size, "Hidden width");
    cmd->add_option("--layers", mcfg.num_layers, "Encoder blocks");
    cmd->add_option("--heads", mcfg.num_heads, "Attention heads");
    cmd->add_option("--intermediate", mcfg.intermediate_size, "Feed-forward width");
    cmd->add_option("--max-positions", mcfg.max_positions, "Positions in the learned table");
    cmd->add_option("--hidden-dropout", mcfg.hidden_dropout, "Hidden dropout");
    cmd->add_option("--attention-dropout", mcfg.attention_dropout, "Attention dropout");
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"antibody language-model toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    FilterArgs filter_args;
    CLI::App* filter_cmd = app.add_subcommand("filter", "Drop non-human and short-FR rows");
    filter_cmd->add_option("--input", filter_args.input, "Input CSV")->required();
    filter_cmd->add_option("--output", filter_args.output, "Filtered CSV")->required();

    SplitArgs split_args;
    CLI::App* split_cmd = app.add_subcommand("split", "Split a CSV into train/test/valid");
    split_cmd->add_option("--input", split_args.input, "Input CSV")->required();
    split_cmd->add_option("--output-prefix", split_args.output_prefix, "Output path prefix")
        ->required();
    split_cmd->add_option("--train-ratio", split_args.train, "Train fraction");
    split_cmd->add_option("--test-ratio", split_args.test, "Test fraction");
    split_cmd->add_option("--valid-ratio", split_args.valid, "Validation fraction");
    split_cmd->add_option("--seed", split_args.seed, "Shuffle seed");

    BuildVocabArgs vocab_args;
    CLI::App* vocab_cmd = app.add_subcommand("build-vocab", "Write a tokenizer vocabulary");
    vocab_cmd->add_option("--kind", vocab_args.kind, "saa|daa|bpe")->required();
    vocab_cmd->add_option("--output", vocab_args.output, "Vocabulary JSON path")->required();
    vocab_cmd->add_option("--corpus", vocab_args.corpus, "Training CSV (bpe only)");
    vocab_cmd->add_option("--target", vocab_args.target, "Target vocabulary size (bpe)");
    vocab_cmd->add_option("--sample", vocab_args.sample, "Train on a random sample of N rows");
    vocab_cmd->add_option("--seed", vocab_args.seed, "Sampling seed");

    PretrainArgs pre_args;
    CLI::App* pre_cmd = app.add_subcommand("pretrain", "Masked-LM pretraining");
    pre_cmd->add_option("--input", pre_args.input, "Corpus CSV")->required();
    pre_cmd->add_option("--vocab", pre_args.vocab, "Vocabulary JSON")->required();
    pre_cmd->add_option("--output", pre_args.output, "Checkpoint path")->required();
    add_model_flags(pre_cmd, pre_args.mcfg);
    pre_cmd->add_option("--epochs", pre_args.pcfg.epochs, "Training epochs");
    pre_cmd->add_option("--batch-size", pre_args.pcfg.batch_size, "Batch size");
    pre_cmd->add_option("--lr", pre_args.pcfg.learning_rate, "Peak learning rate");
    pre_cmd->add_option("--beta2", pre_args.pcfg.beta2, "Adam beta2");
    pre_cmd->add_option("--epsilon", pre_args.pcfg.epsilon, "Adam epsilon");
    pre_cmd->add_option("--weight-decay", pre_args.pcfg.weight_decay, "Decoupled weight decay");
    pre_cmd->add_option("--warmup", pre_args.pcfg.warmup_steps, "Warmup steps");
    pre_cmd->add_option("--mask-select", pre_args.pcfg.masking.p_select,
                        "Fraction of tokens selected for masking");
    pre_cmd->add_option("--seed", pre_args.pcfg.seed, "Training seed");

    FinetuneArgs ft_args;
    CLI::App* ft_cmd = app.add_subcommand("finetune", "Supervised fine-tuning");
    ft_cmd->add_option("--input", ft_args.input, "Labeled CSV")->required();
    ft_cmd->add_option("--vocab", ft_args.vocab, "Vocabulary JSON")->required();
    ft_cmd->add_option("--output", ft_args.output, "Metrics JSON path")->required();
    ft_cmd->add_option("--task", ft_args.task, "antigen|bcell|vgene");
    ft_cmd->add_option("--chain", ft_args.chain, "heavy|light");
    ft_cmd->add_option("--pretrained", ft_args.pretrained, "Pretrained checkpoint");
    ft_cmd->add_option("--output-model", ft_args.output_model, "Tuned checkpoint path");
    ft_cmd->add_option("--seeds", ft_args.seeds, "Count (5 -> 1..5) or list (3,7,9)");
    add_model_flags(ft_cmd, ft_args.mcfg);
    ft_cmd->add_option("--epochs", ft_args.fcfg.epochs, "Training epochs");
    ft_cmd->add_option("--batch-size", ft_args.fcfg.batch_size, "Batch size");
    ft_cmd->add_option("--lr", ft_args.fcfg.learning_rate, "Peak learning rate");
    ft_cmd->add_option("--beta2", ft_args.fcfg.beta2, "Adam beta2");
    ft_cmd->add_option("--epsilon", ft_args.fcfg.epsilon, "Adam epsilon");
    ft_cmd->add_option("--weight-decay", ft_args.fcfg.weight_decay, "Decoupled weight decay");
    ft_cmd->add_option("--warmup", ft_args.fcfg.warmup_steps, "Warmup steps");
    ft_cmd->add_option("--dropout", ft_args.fcfg.dropout, "Dropout during fine-tuning");
    ft_cmd->add_option("--train-ratio", ft_args.train_ratio, "Train fraction");
    ft_cmd->add_option("--test-ratio", ft_args.test_ratio, "Held-out fraction");
    ft_cmd->add_option("--valid-ratio", ft_args.valid_ratio, "Validation fraction");
    ft_cmd->add_option("--split-seed", ft_args.split_seed, "Split seed");

    EvaluateArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("evaluate", "Evaluate a tuned checkpoint");
    eval_cmd->add_option("--model", eval_args.model, "Checkpoint path")->required();
    eval_cmd->add_option("--input", eval_args.input, "Labeled CSV")->required();
    eval_cmd->add_option("--vocab", eval_args.vocab, "Vocabulary JSON")->required();
    eval_cmd->add_option("--output", eval_args.output, "Report JSON path")->required();
    eval_cmd->add_option("--task", eval_args.task, "antigen|bcell|vgene");
    eval_cmd->add_option("--chain", eval_args.chain, "heavy|light");

    EmbedArgs embed_args;
    CLI::App* embed_cmd = app.add_subcommand("embed", "Export pooled sequence embeddings");
    embed_cmd->add_option("--model", embed_args.model, "Checkpoint path")->required();
    embed_cmd->add_option("--input", embed_args.input, "Input CSV")->required();
    embed_cmd->add_option("--vocab", embed_args.vocab, "Vocabulary JSON")->required();
    embed_cmd->add_option("--output", embed_args.output, "Embeddings CSV path")->required();
    embed_cmd->add_option("--pooling", embed_args.pooling, "mean|first");
    embed_cmd->add_option("--batch-size", embed_args.batch_size, "Sequences per forward pass");
    embed_cmd->add_option("--sample", embed_args.sample, "Embed a random sample of N rows");
    embed_cmd->add_option("--seed", embed_args.seed, "Sampling seed");

    BenchArgs bench_args;
    CLI::App* bench_cmd = app.add_subcommand("bench", "Tokenizer throughput and compression");
    bench_cmd->add_option("--input", bench_args.input, "Corpus CSV")->required();
    bench_cmd->add_option("--tokenizers", bench_args.tokenizers, "Comma list: saa,daa,bpe");
    bench_cmd->add_option("--bpe-vocab", bench_args.bpe_vocab, "Trained BPE vocabulary");
    bench_cmd->add_option("--bpe-target", bench_args.bpe_target,
                          "Target size when training BPE in place");
    bench_cmd->add_option("--output", bench_args.output, "Report JSON path");

    std::vector<const char*> argv;
    argv.push_back("abtok");
    for (const std::string& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
        if (filter_cmd->parsed()) return cmd_filter(filter_args);
        if (split_cmd->parsed()) return cmd_split(split_args);
        if (vocab_cmd->parsed()) return cmd_build_vocab(vocab_args);
        if (pre_cmd->parsed()) return cmd_pretrain(pre_args);
        if (ft_cmd->parsed()) return cmd_finetune(ft_args);
        if (eval_cmd->parsed()) return cmd_evaluate(eval_args);
        if (embed_cmd->parsed()) return cmd_embed(embed_args);
        if (bench_cmd->parsed()) return cmd_bench(bench_args);
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const schema_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace abtok::cli
