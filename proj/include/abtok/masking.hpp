#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "abtok/tokenizers.hpp"

namespace abtok::mask {

// Label value for positions the MLM loss must skip; outside any valid id range.
inline constexpr int kIgnoreLabel = -100;

using IntMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MaskingConfig {
    double p_select = 0.15;
    double p_mask = 0.8;
    double p_random = 0.1;
    double p_keep = 0.1;
    // When set, random replacements never reproduce the original token.
    bool exclude_original = false;

    // Throws argument_error unless p_mask + p_random + p_keep == 1 within 1e-9
    // and every probability sits in [0,1].
    void validate() const;
};

struct PaddedBatch {
    IntMatrix input_ids;       // B x L, pad-filled on the right
    IntMatrix attention_mask;  // B x L, 1 = real token
};

struct MaskedBatch {
    IntMatrix input_ids;
    IntMatrix labels;          // original id at selected positions, else kIgnoreLabel
    IntMatrix attention_mask;
};

// Right-pads a batch of encoded sequences to the longest row.
PaddedBatch pad_batch(const std::vector<tok::TokenizedSeq>& batch, const tok::Vocab& vocab);

// Dynamic MLM corruption. Every non-start/end/pad position is selected
// independently with probability p_select; a selected position is masked,
// replaced by a random non-special token, or kept, per cfg. All randomness
// is a pure function of (seed, row, position).
MaskedBatch mask_batch(const std::vector<tok::TokenizedSeq>& batch, const MaskingConfig& cfg,
                       const tok::Vocab& vocab, std::uint64_t seed);

}  // namespace abtok::mask
