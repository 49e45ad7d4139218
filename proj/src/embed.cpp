#include "abtok/embed.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "abtok/errors.hpp"
#include "abtok/masking.hpp"

namespace abtok::embed {

namespace {

std::string label_or_empty(const ingest::SequenceRecord& r, ingest::Task t) {
    auto it = r.labels.find(t);
    return it == r.labels.end() ? std::string() : it->second;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

Pooling parse_pooling(const std::string& s) {
    if (s == "mean") return Pooling::mean;
    if (s == "first" || s == "first_token") return Pooling::first_token;
    throw argument_error("unknown pooling '" + s + "' (expected mean or first)");
}

EmbeddingMatrix extract_embeddings(const model::Model& m,
                                   const std::vector<ingest::SequenceRecord>& records,
                                   const tok::Tokenizer& tokenizer, Pooling pooling,
                                   int batch_size) {
    if (batch_size < 1) throw argument_error("batch_size must be positive");
    const Eigen::Index H = m.cfg.hidden_size;

    EmbeddingMatrix out;
    out.pooling = pooling;
    out.vectors.resize(static_cast<Eigen::Index>(records.size()), H);
    out.row_meta.reserve(records.size());

    std::vector<tok::TokenizedSeq> encoded;
    encoded.reserve(records.size());
    for (const ingest::SequenceRecord& r : records) {
        try {
            encoded.push_back(tokenizer.encode(r.sequence, m.cfg.max_positions));
        } catch (const error& e) {
            throw data_error("sequence at row " + std::to_string(r.row_index) + ": " + e.what());
        }
        if (pooling == Pooling::mean && encoded.back().ids.size() <= 2) {
            throw data_error("sequence at row " + std::to_string(r.row_index) +
                             " has an empty payload; mean pooling is undefined");
        }
        out.row_meta.push_back({std::to_string(r.row_index), ingest::chain_name(r.chain),
                                label_or_empty(r, ingest::Task::antigen),
                                label_or_empty(r, ingest::Task::bcell_type),
                                label_or_empty(r, ingest::Task::germline_v)});
    }

    for (std::size_t lo = 0; lo < encoded.size(); lo += static_cast<std::size_t>(batch_size)) {
        const std::size_t hi =
            std::min(encoded.size(), lo + static_cast<std::size_t>(batch_size));
        std::vector<tok::TokenizedSeq> chunk(encoded.begin() + lo, encoded.begin() + hi);
        mask::PaddedBatch padded = mask::pad_batch(chunk, tokenizer.vocab());
        model::MatX<float> states = model::encode_states<float>(
            m, padded.input_ids, padded.attention_mask, model::Mode::eval, 0, nullptr);
        const Eigen::Index L = padded.input_ids.cols();
        for (std::size_t i = lo; i < hi; ++i) {
            const Eigen::Index base = static_cast<Eigen::Index>(i - lo) * L;
            if (pooling == Pooling::first_token) {
                out.vectors.row(static_cast<Eigen::Index>(i)) = states.row(base);
            } else {
                const Eigen::Index payload =
                    static_cast<Eigen::Index>(encoded[i].ids.size()) - 2;
                Eigen::RowVectorXf acc = Eigen::RowVectorXf::Zero(H);
                for (Eigen::Index p = 1; p <= payload; ++p) acc += states.row(base + p);
                out.vectors.row(static_cast<Eigen::Index>(i)) =
                    acc / static_cast<float>(payload);
            }
        }
    }
    if (!out.vectors.allFinite()) throw data_error("non-finite embedding produced");
    return out;
}

void export_embeddings(const EmbeddingMatrix& m, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << "id,chain,antigen_label,bcell_label,vgene_label";
    for (Eigen::Index j = 0; j < m.vectors.cols(); ++j) out << ",e" << j;
    out << '\n';
    char buf[32];
    for (Eigen::Index i = 0; i < m.vectors.rows(); ++i) {
        const RowMeta& meta = m.row_meta[static_cast<std::size_t>(i)];
        out << meta.id << ',' << meta.chain << ',' << meta.antigen_label << ','
            << meta.bcell_label << ',' << meta.vgene_label;
        for (Eigen::Index j = 0; j < m.vectors.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(m.vectors(i, j)));
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw io_error("write failed for " + path);
}

EmbeddingMatrix load_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw parse_error("empty embeddings file", 0);
    const std::vector<std::string> header = split_line(line);
    if (header.size() < 5 || header[0] != "id") {
        throw parse_error("unexpected embeddings header", 0);
    }
    const Eigen::Index H = static_cast<Eigen::Index>(header.size()) - 5;

    EmbeddingMatrix out;
    std::vector<std::vector<float>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_line(line);
        if (static_cast<Eigen::Index>(fields.size()) != 5 + H) {
            throw parse_error("embeddings row has " + std::to_string(fields.size()) +
                                  " fields, expected " + std::to_string(5 + H),
                              0);
        }
        out.row_meta.push_back({fields[0], fields[1], fields[2], fields[3], fields[4]});
        std::vector<float> v(static_cast<std::size_t>(H));
        for (Eigen::Index j = 0; j < H; ++j) {
            v[static_cast<std::size_t>(j)] = std::stof(fields[static_cast<std::size_t>(5 + j)]);
        }
        rows.push_back(std::move(v));
    }
    out.vectors.resize(static_cast<Eigen::Index>(rows.size()), H);
    for (Eigen::Index i = 0; i < out.vectors.rows(); ++i) {
        for (Eigen::Index j = 0; j < H; ++j) {
            out.vectors(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
    }
    return out;
}

}  // namespace abtok::embed
