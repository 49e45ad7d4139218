#pragma once

#include <string>
#include <vector>

#include "abtok/tokenizers.hpp"

namespace abtok::bench {

struct TokenizerStats {
    std::string name;
    double sequences_per_sec = 0.0;
    double tokens_per_sec = 0.0;
    double mean_tokens_per_seq = 0.0;   // payload tokens, specials excluded
    double compression_vs_saa = 1.0;    // mean payload length relative to SAA
};

struct BenchReport {
    long long num_sequences = 0;
    std::vector<TokenizerStats> tokenizers;
};

// Encodes the corpus with every tokenizer, timing repeated passes until the
// clock resolution stops dominating. The SAA payload length (= residue count)
// is the compression baseline.
BenchReport run_bench(const std::vector<std::string>& sequences,
                      const std::vector<std::pair<std::string, tok::Tokenizer>>& tokenizers);

std::string bench_to_json(const BenchReport& report, int indent = 2);
std::string bench_to_table(const BenchReport& report);

}  // namespace abtok::bench
