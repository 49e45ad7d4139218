#pragma once

#include <string>
#include <vector>

#include "abtok/data_ingest.hpp"
#include "abtok/model.hpp"
#include "abtok/tokenizers.hpp"

namespace abtok::embed {

enum class Pooling { mean, first_token };

Pooling parse_pooling(const std::string& s);

struct RowMeta {
    std::string id;  // row index in the source unless records carry ids
    std::string chain;
    std::string antigen_label;
    std::string bcell_label;
    std::string vgene_label;
};

struct EmbeddingMatrix {
    model::MatX<float> vectors;  // N x H
    std::vector<RowMeta> row_meta;
    Pooling pooling = Pooling::mean;
};

// Final-layer hidden states pooled per sequence, dropout disabled. Mean
// pooling averages payload positions only (no start/end/pad); first_token
// takes the start-token state.
EmbeddingMatrix extract_embeddings(const model::Model& m,
                                   const std::vector<ingest::SequenceRecord>& records,
                                   const tok::Tokenizer& tokenizer, Pooling pooling,
                                   int batch_size = 64);

// CSV: id,chain,antigen_label,bcell_label,vgene_label,e0..e{H-1} with 9
// significant digits per value.
void export_embeddings(const EmbeddingMatrix& m, const std::string& path);

EmbeddingMatrix load_embeddings(const std::string& path);

}  // namespace abtok::embed
