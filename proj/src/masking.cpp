#include "abtok/masking.hpp"

#include <cmath>
#include <cstddef>

#include "abtok/errors.hpp"
#include "abtok/rng.hpp"

namespace abtok::mask {

void MaskingConfig::validate() const {
    for (double p : {p_select, p_mask, p_random, p_keep}) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw argument_error("masking probabilities must lie in [0,1]");
        }
    }
    if (std::abs(p_mask + p_random + p_keep - 1.0) > 1e-9) {
        throw argument_error("p_mask + p_random + p_keep must sum to 1");
    }
}

namespace {

std::size_t longest_row(const std::vector<tok::TokenizedSeq>& batch) {
    std::size_t len = 0;
    for (const tok::TokenizedSeq& s : batch) len = std::max(len, s.ids.size());
    return len;
}

}  // namespace

PaddedBatch pad_batch(const std::vector<tok::TokenizedSeq>& batch, const tok::Vocab& vocab) {
    const auto rows = static_cast<Eigen::Index>(batch.size());
    const auto cols = static_cast<Eigen::Index>(longest_row(batch));
    PaddedBatch out;
    out.input_ids = IntMatrix::Constant(rows, cols, vocab.pad_id);
    out.attention_mask = IntMatrix::Zero(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const std::vector<int>& ids = batch[static_cast<std::size_t>(r)].ids;
        for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(ids.size()); ++c) {
            out.input_ids(r, c) = ids[static_cast<std::size_t>(c)];
            out.attention_mask(r, c) = 1;
        }
    }
    return out;
}

MaskedBatch mask_batch(const std::vector<tok::TokenizedSeq>& batch, const MaskingConfig& cfg,
                       const tok::Vocab& vocab, std::uint64_t seed) {
    cfg.validate();
    PaddedBatch padded = pad_batch(batch, vocab);

    MaskedBatch out;
    out.input_ids = padded.input_ids;
    out.attention_mask = padded.attention_mask;
    out.labels = IntMatrix::Constant(out.input_ids.rows(), out.input_ids.cols(), kIgnoreLabel);

    // Non-special ids occupy [5, V); specials hold ids 0..4 by construction.
    const int first_regular = 5;
    const int n_regular = vocab.size() - first_regular;
    counter_rng rng(seed);

    for (Eigen::Index r = 0; r < out.input_ids.rows(); ++r) {
        for (Eigen::Index c = 0; c < out.input_ids.cols(); ++c) {
            if (!out.attention_mask(r, c)) continue;
            const int original = out.input_ids(r, c);
            if (original == vocab.start_id || original == vocab.end_id ||
                original == vocab.pad_id) {
                continue;
            }
            const auto row = static_cast<std::uint64_t>(r);
            const auto col = static_cast<std::uint64_t>(c);
            if (rng.uniform(row, col, 0) >= cfg.p_select) continue;

            out.labels(r, c) = original;
            const double branch = rng.uniform(row, col, 1);
            if (branch < cfg.p_mask) {
                out.input_ids(r, c) = vocab.mask_id;
            } else if (branch < cfg.p_mask + cfg.p_random) {
                const double u = rng.uniform(row, col, 2);
                int replacement;
                if (cfg.exclude_original && original >= first_regular && n_regular > 1) {
                    int k = static_cast<int>(u * (n_regular - 1));
                    k = std::min(k, n_regular - 2);
                    replacement = first_regular + k + (k >= original - first_regular ? 1 : 0);
                } else {
                    int k = static_cast<int>(u * n_regular);
                    replacement = first_regular + std::min(k, n_regular - 1);
                }
                out.input_ids(r, c) = replacement;
            }
            // else: keep branch, input unchanged.
        }
    }
    return out;
}

}  // namespace abtok::mask
