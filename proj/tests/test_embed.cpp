#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "abtok/embed.hpp"
#include "abtok/errors.hpp"
#include "abtok/masking.hpp"

using namespace abtok;
using embed::Pooling;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("abtok_embed_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

model::ModelConfig toy_config() {
    model::ModelConfig cfg;
    cfg.vocab_size = 25;
    cfg.max_positions = 32;
    cfg.hidden_size = 8;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.intermediate_size = 16;
    return cfg;
}

ingest::SequenceRecord rec(const std::string& seq, std::size_t row = 0) {
    ingest::SequenceRecord r;
    r.sequence = seq;
    r.row_index = row;
    r.labels[ingest::Task::antigen] = "HIV";
    return r;
}

}  // namespace

TEST_CASE("parse_pooling accepts the documented names") {
    CHECK(embed::parse_pooling("mean") == Pooling::mean);
    CHECK(embed::parse_pooling("first") == Pooling::first_token);
    CHECK(embed::parse_pooling("first_token") == Pooling::first_token);
    CHECK_THROWS_AS(embed::parse_pooling("max"), argument_error);
}

TEST_CASE("embeddings have one row per sequence and H columns") {
    model::Model m = model::init_model<float>(toy_config(), 3);
    tok::Tokenizer tokenizer(tok::build_saa_vocab());
    std::vector<ingest::SequenceRecord> records = {rec("QVQLVQSG", 0), rec("ACDEF", 1),
                                                   rec("GHIKLMN", 2)};
    for (Pooling p : {Pooling::mean, Pooling::first_token}) {
        embed::EmbeddingMatrix e = extract_embeddings(m, records, tokenizer, p);
        CHECK(e.vectors.rows() == 3);
        CHECK(e.vectors.cols() == 8);
        CHECK(e.vectors.allFinite());
        CHECK(e.row_meta.size() == 3);
        CHECK(e.row_meta[1].id == "1");
        CHECK(e.row_meta[1].antigen_label == "HIV");
        CHECK(e.row_meta[1].chain == "heavy");
    }
}

TEST_CASE("identical sequences embed identically") {
    model::Model m = model::init_model<float>(toy_config(), 9);
    tok::Tokenizer tokenizer(tok::build_saa_vocab());
    std::vector<ingest::SequenceRecord> records = {rec("QVQLVQSG", 0), rec("ACD", 1),
                                                   rec("QVQLVQSG", 2)};
    embed::EmbeddingMatrix e = extract_embeddings(m, records, tokenizer, Pooling::mean);
    CHECK(e.vectors.row(0) == e.vectors.row(2));
}

TEST_CASE("mean pooling equals the arithmetic mean of payload states") {
    model::Model m = model::init_model<float>(toy_config(), 5);
    tok::Tokenizer tokenizer(tok::build_saa_vocab());
    const std::string seq = "QVQLVQ";
    std::vector<ingest::SequenceRecord> records = {rec(seq, 0)};

    tok::TokenizedSeq enc = tokenizer.encode(seq);
    mask::PaddedBatch padded = mask::pad_batch({enc}, tokenizer.vocab());
    model::MatX<float> states = model::encode_states<float>(
        m, padded.input_ids, padded.attention_mask, model::Mode::eval, 0, nullptr);
    Eigen::RowVectorXf mean = Eigen::RowVectorXf::Zero(8);
    for (std::size_t p = 1; p + 1 < enc.ids.size(); ++p)
        mean += states.row(static_cast<Eigen::Index>(p));
    mean /= static_cast<float>(enc.ids.size() - 2);

    embed::EmbeddingMatrix e = extract_embeddings(m, records, tokenizer, Pooling::mean);
    CHECK((e.vectors.row(0) - mean).cwiseAbs().maxCoeff() <= 1e-6f);

    embed::EmbeddingMatrix f = extract_embeddings(m, records, tokenizer, Pooling::first_token);
    CHECK(f.vectors.row(0) == states.row(0));
}

TEST_CASE("mean pooling of a single-residue payload is that position's state") {
    model::Model m = model::init_model<float>(toy_config(), 6);
    tok::Tokenizer tokenizer(tok::build_saa_vocab());
    std::vector<ingest::SequenceRecord> records = {rec("W", 0)};
    embed::EmbeddingMatrix e = extract_embeddings(m, records, tokenizer, Pooling::mean);

    mask::PaddedBatch padded = mask::pad_batch({tokenizer.encode("W")}, tokenizer.vocab());
    model::MatX<float> states = model::encode_states<float>(
        m, padded.input_ids, padded.attention_mask, model::Mode::eval, 0, nullptr);
    CHECK((e.vectors.row(0) - states.row(1)).cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("batch boundaries do not change embeddings") {
    model::Model m = model::init_model<float>(toy_config(), 11);
    tok::Tokenizer tokenizer(tok::build_saa_vocab());
    std::vector<ingest::SequenceRecord> records;
    const char* seqs[] = {"QVQLVQSG", "ACD", "GHIKLMNPQRST", "WY", "MNPQ"};
    for (std::size_t i = 0; i < 5; ++i) records.push_back(rec(seqs[i], i));

    embed::EmbeddingMatrix all = extract_embeddings(m, records, tokenizer, Pooling::mean, 64);
    embed::EmbeddingMatrix two = extract_embeddings(m, records, tokenizer, Pooling::mean, 2);
    embed::EmbeddingMatrix one = extract_embeddings(m, records, tokenizer, Pooling::mean, 1);
    CHECK((all.vectors - two.vectors).cwiseAbs().maxCoeff() <= 1e-6f);
    CHECK((all.vectors - one.vectors).cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("export/load roundtrip preserves vectors within 1e-6") {
    TempDir dir;
    model::Model m = model::init_model<float>(toy_config(), 13);
    tok::Tokenizer tokenizer(tok::build_saa_vocab());
    std::vector<ingest::SequenceRecord> records = {rec("QVQLVQSG", 0), rec("ACDEF", 1)};
    records[1].chain = ingest::Chain::light;
    records[1].labels[ingest::Task::germline_v] = "IGLV1";
    embed::EmbeddingMatrix e = extract_embeddings(m, records, tokenizer, Pooling::mean);

    const std::string path = dir.file("emb.csv");
    export_embeddings(e, path);
    embed::EmbeddingMatrix back = embed::load_embeddings(path);
    REQUIRE(back.vectors.rows() == 2);
    REQUIRE(back.vectors.cols() == 8);
    CHECK((back.vectors - e.vectors).cwiseAbs().maxCoeff() <= 1e-6f);
    CHECK(back.row_meta[0].id == "0");
    CHECK(back.row_meta[1].chain == "light");
    CHECK(back.row_meta[1].vgene_label == "IGLV1");
    CHECK(back.row_meta[0].antigen_label == "HIV");
    CHECK(back.row_meta[1].bcell_label == "");

    // Header carries the five metadata columns then e0..e7.
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "id,chain,antigen_label,bcell_label,vgene_label,e0,e1,e2,e3,e4,e5,e6,e7");
}

TEST_CASE("empty input exports a header-only file") {
    TempDir dir;
    model::Model m = model::init_model<float>(toy_config(), 2);
    tok::Tokenizer tokenizer(tok::build_saa_vocab());
    embed::EmbeddingMatrix e =
        extract_embeddings(m, {}, tokenizer, Pooling::mean);
    CHECK(e.vectors.rows() == 0);
    const std::string path = dir.file("empty.csv");
    export_embeddings(e, path);

    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 1);
    embed::EmbeddingMatrix back = embed::load_embeddings(path);
    CHECK(back.vectors.rows() == 0);
}

TEST_CASE("unencodable sequences are reported with their row") {
    model::Model m = model::init_model<float>(toy_config(), 2);
    tok::Tokenizer tokenizer(tok::build_saa_vocab());
    std::vector<ingest::SequenceRecord> records = {rec(std::string(100, 'A'), 17)};
    CHECK_THROWS_WITH_AS(extract_embeddings(m, records, tokenizer, Pooling::mean),
                         doctest::Contains("17"), data_error);
}
