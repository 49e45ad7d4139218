#include "abtok/bench.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>

#include "abtok/errors.hpp"
#include "json.hpp"

namespace abtok::bench {

BenchReport run_bench(const std::vector<std::string>& sequences,
                      const std::vector<std::pair<std::string, tok::Tokenizer>>& tokenizers) {
    if (sequences.empty()) throw argument_error("benchmark corpus is empty");
    if (tokenizers.empty()) throw argument_error("no tokenizers to benchmark");

    double saa_mean_payload = 0.0;
    for (const std::string& s : sequences) saa_mean_payload += static_cast<double>(s.size());
    saa_mean_payload /= static_cast<double>(sequences.size());

    BenchReport report;
    report.num_sequences = static_cast<long long>(sequences.size());
    for (const auto& [name, tokenizer] : tokenizers) {
        long long payload_tokens = 0;
        for (const std::string& s : sequences) {
            payload_tokens +=
                static_cast<long long>(tokenizer.encode(s).ids.size()) - 2;
        }

        // Timed passes: repeat until at least ~50ms elapsed so tiny corpora
        // do not report clock noise.
        long long passes = 0;
        const auto t0 = std::chrono::steady_clock::now();
        double elapsed = 0.0;
        do {
            for (const std::string& s : sequences) {
                volatile std::size_t sink = tokenizer.encode(s).ids.size();
                (void)sink;
            }
            ++passes;
            elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        } while (elapsed < 0.05 && passes < 10000);

        TokenizerStats stats;
        stats.name = name;
        const double seqs_done = static_cast<double>(passes) * static_cast<double>(sequences.size());
        stats.sequences_per_sec = seqs_done / elapsed;
        stats.mean_tokens_per_seq =
            static_cast<double>(payload_tokens) / static_cast<double>(sequences.size());
        stats.tokens_per_sec = stats.sequences_per_sec * stats.mean_tokens_per_seq;
        stats.compression_vs_saa = stats.mean_tokens_per_seq / saa_mean_payload;
        report.tokenizers.push_back(std::move(stats));
    }
    return report;
}

std::string bench_to_json(const BenchReport& report, int indent) {
    nlohmann::ordered_json j;
    j["num_sequences"] = report.num_sequences;
    j["tokenizers"] = nlohmann::ordered_json::array();
    for (const TokenizerStats& s : report.tokenizers) {
        j["tokenizers"].push_back({{"name", s.name},
                                   {"sequences_per_sec", s.sequences_per_sec},
                                   {"tokens_per_sec", s.tokens_per_sec},
                                   {"mean_tokens_per_seq", s.mean_tokens_per_seq},
                                   {"compression_vs_saa", s.compression_vs_saa}});
    }
    return j.dump(indent);
}

std::string bench_to_table(const BenchReport& report) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s %14s %14s %12s %12s\n", "tokenizer", "seqs/sec",
                  "tokens/sec", "tokens/seq", "vs-saa");
    out << line;
    for (const TokenizerStats& s : report.tokenizers) {
        std::snprintf(line, sizeof(line), "%-10s %14.1f %14.1f %12.3f %12.4f\n", s.name.c_str(),
                      s.sequences_per_sec, s.tokens_per_sec, s.mean_tokens_per_seq,
                      s.compression_vs_saa);
        out << line;
    }
    return out.str();
}

}  // namespace abtok::bench
