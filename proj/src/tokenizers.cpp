#include "abtok/tokenizers.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "abtok/data_ingest.hpp"
#include "abtok/errors.hpp"

namespace abtok::tok {

namespace {

using ordered_json = nlohmann::ordered_json;

std::uint64_t pair_key(int left, int right) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) |
           static_cast<std::uint32_t>(right);
}

Vocab make_base_vocab(VocabKind kind) {
    Vocab v;
    v.kind = kind;
    v.tokens = {kPadToken, kStartToken, kEndToken, kUnkToken, kMaskToken};
    return v;
}

void finish_vocab(Vocab& v) {
    v.token_to_id.clear();
    v.token_to_id.reserve(v.tokens.size());
    for (std::size_t i = 0; i < v.tokens.size(); ++i) {
        v.token_to_id[v.tokens[i]] = static_cast<int>(i);
    }
    v.validate();
}

}  // namespace

std::string vocab_kind_name(VocabKind k) {
    switch (k) {
        case VocabKind::saa: return "saa";
        case VocabKind::daa: return "daa";
        case VocabKind::bpe: return "bpe";
    }
    return "?";
}

std::optional<VocabKind> parse_vocab_kind(const std::string& s) {
    if (s == "saa") return VocabKind::saa;
    if (s == "daa") return VocabKind::daa;
    if (s == "bpe") return VocabKind::bpe;
    return std::nullopt;
}

void Vocab::validate() const {
    if (tokens.size() != token_to_id.size()) {
        throw data_error("vocab tokens are not unique");
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        auto it = token_to_id.find(tokens[i]);
        if (it == token_to_id.end() || it->second != static_cast<int>(i)) {
            throw data_error("vocab token/id mapping is not bijective");
        }
    }
    const int n = size();
    const int special_ids[5] = {pad_id, start_id, end_id, unk_id, mask_id};
    for (int a = 0; a < 5; ++a) {
        if (special_ids[a] < 0 || special_ids[a] >= n) {
            throw data_error("special token id out of range");
        }
        for (int b = a + 1; b < 5; ++b) {
            if (special_ids[a] == special_ids[b]) {
                throw data_error("special token ids must be distinct");
            }
        }
    }
    if (kind == VocabKind::saa && n != 5 + ingest::kNumCanonical) {
        throw data_error("saa vocab must have 25 entries, got " + std::to_string(n));
    }
    if (kind == VocabKind::daa && n != 5 + ingest::kNumCanonical * (ingest::kNumCanonical + 1)) {
        throw data_error("daa vocab must have 425 entries, got " + std::to_string(n));
    }
}

Vocab build_saa_vocab() {
    Vocab v = make_base_vocab(VocabKind::saa);
    for (const char* p = ingest::kCanonicalAlphabet; *p; ++p) {
        v.tokens.emplace_back(1, *p);
    }
    finish_vocab(v);
    return v;
}

Vocab build_daa_vocab() {
    Vocab v = make_base_vocab(VocabKind::daa);
    for (const char* p = ingest::kCanonicalAlphabet; *p; ++p) {
        v.tokens.emplace_back(1, *p);
    }
    for (const char* a = ingest::kCanonicalAlphabet; *a; ++a) {
        for (const char* b = ingest::kCanonicalAlphabet; *b; ++b) {
            v.tokens.push_back(std::string{*a, *b});
        }
    }
    finish_vocab(v);
    return v;
}

void BpeModel::rebuild_pair_rank() {
    pair_rank.clear();
    pair_rank.reserve(merges.size());
    for (std::size_t rank = 0; rank < merges.size(); ++rank) {
        const auto& [left, right] = merges[rank];
        int left_id = vocab.id_of(left);
        int right_id = vocab.id_of(right);
        int merged_id = vocab.id_of(left + right);
        if (left_id < 0 || right_id < 0 || merged_id < 0) {
            throw data_error("merge rule references unknown token: " + left + " " + right);
        }
        pair_rank[pair_key(left_id, right_id)] = {static_cast<int>(rank), merged_id};
    }
}

BpeModel bpe_train(const std::vector<std::string>& corpus, int target_vocab,
                   const std::string& base_residues) {
    const std::string alphabet =
        base_residues.empty() ? std::string(ingest::kCanonicalAlphabet) : base_residues;

    Vocab vocab = make_base_vocab(VocabKind::bpe);
    for (char c : alphabet) {
        std::string t(1, c);
        if (std::find(vocab.tokens.begin(), vocab.tokens.end(), t) == vocab.tokens.end()) {
            vocab.tokens.push_back(std::move(t));
        }
    }
    const int base_size = vocab.size();
    if (target_vocab < base_size) {
        throw argument_error("target_vocab " + std::to_string(target_vocab) +
                             " smaller than base vocabulary " + std::to_string(base_size));
    }

    for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
        vocab.token_to_id[vocab.tokens[i]] = static_cast<int>(i);
    }

    bool any_symbol = false;
    std::vector<std::vector<int>> seqs;
    seqs.reserve(corpus.size());
    for (const std::string& s : corpus) {
        std::vector<int> ids;
        ids.reserve(s.size());
        for (char c : s) {
            int id = vocab.id_of(std::string(1, c));
            ids.push_back(id >= 5 ? id : vocab.unk_id);
        }
        if (!ids.empty()) any_symbol = true;
        seqs.push_back(std::move(ids));
    }
    if (!any_symbol) {
        throw data_error("bpe training corpus is empty");
    }

    BpeModel model;
    std::unordered_map<std::uint64_t, long long> counts;
    // Pairs whose concatenation already names an existing token are banned:
    // a merge must always append a fresh vocabulary entry.
    std::unordered_set<std::uint64_t> banned;

    std::vector<std::pair<std::string, std::string>> merges;
    while (vocab.size() < target_vocab) {
        counts.clear();
        for (const std::vector<int>& ids : seqs) {
            for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
                if (ids[i] == vocab.unk_id || ids[i + 1] == vocab.unk_id) continue;
                ++counts[pair_key(ids[i], ids[i + 1])];
            }
        }

        long long best_count = 0;
        int best_left = -1, best_right = -1;
        for (const auto& [key, count] : counts) {
            if (count < 2 || count < best_count || banned.contains(key)) continue;
            const int left = static_cast<int>(key >> 32);
            const int right = static_cast<int>(key & 0xFFFFFFFFu);
            if (count == best_count) {
                const auto lr = std::tie(vocab.tokens[left], vocab.tokens[right]);
                const auto best = std::tie(vocab.tokens[best_left], vocab.tokens[best_right]);
                if (lr >= best) continue;
            }
            best_count = count;
            best_left = left;
            best_right = right;
        }
        if (best_left < 0) break;

        const std::string merged = vocab.tokens[best_left] + vocab.tokens[best_right];
        if (vocab.id_of(merged) >= 0) {
            banned.insert(pair_key(best_left, best_right));
            continue;
        }

        const int merged_id = vocab.size();
        vocab.tokens.push_back(merged);
        vocab.token_to_id[merged] = merged_id;
        merges.emplace_back(vocab.tokens[best_left], vocab.tokens[best_right]);

        for (std::vector<int>& ids : seqs) {
            std::size_t w = 0;
            for (std::size_t r = 0; r < ids.size();) {
                if (r + 1 < ids.size() && ids[r] == best_left && ids[r + 1] == best_right) {
                    ids[w++] = merged_id;
                    r += 2;
                } else {
                    ids[w++] = ids[r++];
                }
            }
            ids.resize(w);
        }
    }

    finish_vocab(vocab);
    model.vocab = std::move(vocab);
    model.merges = std::move(merges);
    model.rebuild_pair_rank();
    return model;
}

namespace {

void check_length(const std::string& seq, std::size_t n_ids, int max_positions) {
    if (n_ids > static_cast<std::size_t>(max_positions)) {
        std::string head = seq.substr(0, 24);
        if (seq.size() > 24) head += "...";
        throw length_error("sequence '" + head + "' encodes to " + std::to_string(n_ids) +
                           " tokens, max_positions is " + std::to_string(max_positions));
    }
}

std::vector<int> base_symbols(const Vocab& vocab, const std::string& seq) {
    std::vector<int> ids;
    ids.reserve(seq.size());
    for (char c : seq) {
        int id = vocab.id_of(std::string(1, c));
        ids.push_back(id >= 5 ? id : vocab.unk_id);
    }
    return ids;
}

}  // namespace

TokenizedSeq encode(const Vocab& vocab, const std::string& seq, int max_positions) {
    if (seq.empty()) throw argument_error("cannot encode an empty sequence");
    if (vocab.kind == VocabKind::bpe) {
        throw argument_error("bpe vocab requires the merge list; encode via BpeModel");
    }

    TokenizedSeq out;
    out.source_len = static_cast<int>(seq.size());
    out.ids.push_back(vocab.start_id);
    if (vocab.kind == VocabKind::saa) {
        for (int id : base_symbols(vocab, seq)) out.ids.push_back(id);
    } else {
        // daa: non-overlapping pairs left to right, odd trailing residue as a single.
        std::size_t i = 0;
        while (i < seq.size()) {
            if (i + 1 < seq.size()) {
                int id = -1;
                if (ingest::is_canonical_residue(seq[i]) && ingest::is_canonical_residue(seq[i + 1])) {
                    id = vocab.id_of(seq.substr(i, 2));
                }
                out.ids.push_back(id >= 0 ? id : vocab.unk_id);
                i += 2;
            } else {
                int id = ingest::is_canonical_residue(seq[i]) ? vocab.id_of(std::string(1, seq[i])) : -1;
                out.ids.push_back(id >= 0 ? id : vocab.unk_id);
                i += 1;
            }
        }
    }
    out.ids.push_back(vocab.end_id);
    check_length(seq, out.ids.size(), max_positions);
    return out;
}

TokenizedSeq encode(const BpeModel& model, const std::string& seq, int max_positions) {
    if (seq.empty()) throw argument_error("cannot encode an empty sequence");

    std::vector<int> ids = base_symbols(model.vocab, seq);
    // Repeatedly apply the earliest-learned merge present anywhere in the
    // sequence; within one application, occurrences merge left to right.
    for (;;) {
        int best_rank = std::numeric_limits<int>::max();
        int best_left = -1, best_right = -1, best_merged = -1;
        for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
            auto it = model.pair_rank.find(pair_key(ids[i], ids[i + 1]));
            if (it != model.pair_rank.end() && it->second.first < best_rank) {
                best_rank = it->second.first;
                best_left = ids[i];
                best_right = ids[i + 1];
                best_merged = it->second.second;
            }
        }
        if (best_left < 0) break;
        std::size_t w = 0;
        for (std::size_t r = 0; r < ids.size();) {
            if (r + 1 < ids.size() && ids[r] == best_left && ids[r + 1] == best_right) {
                ids[w++] = best_merged;
                r += 2;
            } else {
                ids[w++] = ids[r++];
            }
        }
        ids.resize(w);
    }

    TokenizedSeq out;
    out.source_len = static_cast<int>(seq.size());
    out.ids.reserve(ids.size() + 2);
    out.ids.push_back(model.vocab.start_id);
    out.ids.insert(out.ids.end(), ids.begin(), ids.end());
    out.ids.push_back(model.vocab.end_id);
    check_length(seq, out.ids.size(), max_positions);
    return out;
}

std::string decode(const Vocab& vocab, const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= vocab.size()) {
            throw data_error("cannot decode id " + std::to_string(id) + ", vocab size is " +
                             std::to_string(vocab.size()));
        }
        if (id == vocab.unk_id) {
            out.push_back('X');
        } else if (!vocab.is_special(id)) {
            out += vocab.tokens[id];
        }
    }
    return out;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
    ordered_json j;
    j["kind"] = vocab_kind_name(vocab.kind);
    j["specials"] = {{"pad", vocab.pad_id}, {"start", vocab.start_id}, {"end", vocab.end_id},
                     {"unk", vocab.unk_id}, {"mask", vocab.mask_id}};
    j["tokens"] = vocab.tokens;
    std::ofstream out(path);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw io_error("failed writing " + path);
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw parse_error(std::string("malformed vocab file ") + path + ": " + e.what(), e.byte);
    }

    Vocab v;
    try {
        auto kind = parse_vocab_kind(j.at("kind").get<std::string>());
        if (!kind) throw data_error("unknown vocab kind");
        v.kind = *kind;
        const auto& sp = j.at("specials");
        v.pad_id = sp.at("pad").get<int>();
        v.start_id = sp.at("start").get<int>();
        v.end_id = sp.at("end").get<int>();
        v.unk_id = sp.at("unk").get<int>();
        v.mask_id = sp.at("mask").get<int>();
        v.tokens = j.at("tokens").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("malformed vocab file ") + path + ": " + e.what(), 0);
    }
    finish_vocab(v);
    return v;
}

void save_bpe(const BpeModel& model, const std::string& vocab_path, const std::string& merges_path) {
    save_vocab(model.vocab, vocab_path);
    std::ofstream out(merges_path);
    if (!out) throw io_error("cannot open " + merges_path + " for writing");
    for (const auto& [left, right] : model.merges) {
        out << left << " " << right << "\n";
    }
    if (!out) throw io_error("failed writing " + merges_path);
}

BpeModel load_bpe(const std::string& vocab_path, const std::string& merges_path) {
    BpeModel model;
    model.vocab = load_vocab(vocab_path);
    if (model.vocab.kind != VocabKind::bpe) {
        throw data_error("vocab at " + vocab_path + " is not a bpe vocab");
    }

    std::ifstream in(merges_path);
    if (!in) throw io_error("cannot open " + merges_path);
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        const std::size_t line_start = offset;
        offset += line.size() + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t space = line.find(' ');
        if (space == std::string::npos || space == 0 || space + 1 >= line.size() ||
            line.find(' ', space + 1) != std::string::npos) {
            throw parse_error("malformed merge line '" + line + "' in " + merges_path, line_start);
        }
        model.merges.emplace_back(line.substr(0, space), line.substr(space + 1));
    }

    // The merge list must regenerate exactly the non-special vocab entries.
    const int base_size = model.vocab.size() - static_cast<int>(model.merges.size());
    if (base_size < 5) {
        throw parse_error("merge list longer than vocabulary allows in " + merges_path, 0);
    }
    for (std::size_t k = 0; k < model.merges.size(); ++k) {
        const auto& [left, right] = model.merges[k];
        const int merged_id = base_size + static_cast<int>(k);
        const int left_id = model.vocab.id_of(left);
        const int right_id = model.vocab.id_of(right);
        if (left_id < 0 || left_id >= merged_id || right_id < 0 || right_id >= merged_id ||
            model.vocab.tokens[merged_id] != left + right) {
            throw parse_error("merge list does not generate the vocabulary (merge " +
                                  std::to_string(k) + ": " + left + " " + right + ")",
                              0);
        }
    }
    model.rebuild_pair_rank();
    return model;
}

std::string default_merges_path(const std::string& vocab_path) {
    const std::string suffix = ".json";
    if (vocab_path.size() > suffix.size() &&
        vocab_path.compare(vocab_path.size() - suffix.size(), suffix.size(), suffix) == 0) {
        return vocab_path.substr(0, vocab_path.size() - suffix.size()) + ".merges.txt";
    }
    return vocab_path + ".merges.txt";
}

}  // namespace abtok::tok
