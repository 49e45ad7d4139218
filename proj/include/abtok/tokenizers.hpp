#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

namespace abtok::tok {

inline constexpr int kDefaultMaxPositions = 150;
inline constexpr int kDefaultBpeTarget = 10260;

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kStartToken = "<s>";
inline constexpr const char* kEndToken = "</s>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kMaskToken = "<mask>";

enum class VocabKind { saa, daa, bpe };

std::string vocab_kind_name(VocabKind k);
std::optional<VocabKind> parse_vocab_kind(const std::string& s);

struct Vocab {
    VocabKind kind = VocabKind::saa;
    std::vector<std::string> tokens;  // index = id
    std::unordered_map<std::string, int> token_to_id;
    int pad_id = 0;
    int start_id = 1;
    int end_id = 2;
    int unk_id = 3;
    int mask_id = 4;

    int size() const { return static_cast<int>(tokens.size()); }
    bool is_special(int id) const {
        return id == pad_id || id == start_id || id == end_id || id == unk_id || id == mask_id;
    }
    int id_of(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? -1 : it->second;
    }

    // Checks id density, token/id bijectivity, special-token distinctness
    // and the fixed cardinality of the saa/daa kinds.
    void validate() const;
};

// 5 specials + the 20 canonical residues in alphabetical order.
Vocab build_saa_vocab();

// saa vocabulary plus the 400 ordered dipeptides, lexicographic.
Vocab build_daa_vocab();

struct BpeModel {
    Vocab vocab;
    std::vector<std::pair<std::string, std::string>> merges;  // applied top to bottom

    // (left_id, right_id) -> (rank, merged id); derived, rebuilt on load.
    std::unordered_map<std::uint64_t, std::pair<int, int>> pair_rank;

    void rebuild_pair_rank();
};

// Learns merges over whole sequences (no word boundaries). Starts from
// specials + base_residues, merges the most frequent adjacent pair until
// |V| == target_vocab or no pair occurs at least twice. Ties break
// lexicographically on (left, right).
BpeModel bpe_train(const std::vector<std::string>& corpus, int target_vocab,
                   const std::string& base_residues = "");

struct TokenizedSeq {
    std::vector<int> ids;  // start ... end, no interior pad
    int source_len = 0;    // amino-acid count
};

TokenizedSeq encode(const Vocab& vocab, const std::string& seq,
                    int max_positions = kDefaultMaxPositions);
TokenizedSeq encode(const BpeModel& model, const std::string& seq,
                    int max_positions = kDefaultMaxPositions);

std::string decode(const Vocab& vocab, const std::vector<int>& ids);

// Tokenizer-scheme dispatch wrapper used by the pipeline code.
class Tokenizer {
  public:
    explicit Tokenizer(Vocab vocab) : impl_(std::move(vocab)) {}
    explicit Tokenizer(BpeModel model) : impl_(std::move(model)) {}

    const Vocab& vocab() const {
        if (const Vocab* v = std::get_if<Vocab>(&impl_)) return *v;
        return std::get<BpeModel>(impl_).vocab;
    }
    bool is_bpe() const { return std::holds_alternative<BpeModel>(impl_); }
    const BpeModel& bpe() const { return std::get<BpeModel>(impl_); }

    TokenizedSeq encode(const std::string& seq, int max_positions = kDefaultMaxPositions) const {
        if (const Vocab* v = std::get_if<Vocab>(&impl_)) return tok::encode(*v, seq, max_positions);
        return tok::encode(std::get<BpeModel>(impl_), seq, max_positions);
    }
    std::string decode(const std::vector<int>& ids) const { return tok::decode(vocab(), ids); }

  private:
    std::variant<Vocab, BpeModel> impl_;
};

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

void save_bpe(const BpeModel& model, const std::string& vocab_path, const std::string& merges_path);
BpeModel load_bpe(const std::string& vocab_path, const std::string& merges_path);

// Default merges-file path for a given vocab path: x.json -> x.merges.txt.
std::string default_merges_path(const std::string& vocab_path);

}  // namespace abtok::tok
