#pragma once

#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace abtok::ingest {

inline constexpr char kCanonicalAlphabet[] = "ACDEFGHIKLMNPQRSTVWY";
inline constexpr int kNumCanonical = 20;

bool is_canonical_residue(char c);

enum class Chain { heavy, light };

std::string chain_name(Chain c);
std::optional<Chain> parse_chain(const std::string& s);

enum class Task { antigen, bcell_type, germline_v };

std::string task_name(Task t);
std::optional<Task> parse_task(const std::string& s);

// Class counts per task and chain as used by the classification datasets.
int expected_class_count(Task t, Chain c);

struct SequenceRecord {
    std::string sequence;
    Chain chain = Chain::heavy;
    std::string species;
    std::string fwr1;
    std::string fwr4;
    std::map<Task, std::string> labels;  // absent key = unlabeled for that task
    bool non_canonical = false;          // sequence contains residues outside the 20-letter alphabet
    std::size_t row_index = 0;           // 0-based data row in the source file
};

// sequence_aa,chain,species,fwr1_aa,fwr4_aa,antigen_label,bcell_label,vgene_label
extern const std::vector<std::string> kColumns;

struct RowError {
    std::size_t row_index;
    std::string message;
};

struct ParseResult {
    std::vector<SequenceRecord> records;
    std::vector<RowError> errors;
};

// Streaming parse: on_record is invoked per well-formed row in file order,
// on_error per malformed row. Throws schema_error if the header is missing
// a required column.
void parse_records_stream(std::istream& source,
                          const std::function<void(SequenceRecord&&)>& on_record,
                          const std::function<void(const RowError&)>& on_error);

ParseResult parse_records(std::istream& source);

enum class DropReason { non_human, fr1_short, fr4_short };

std::string drop_reason_name(DropReason r);

struct FilterDecision {
    bool keep;
    std::optional<DropReason> reason;  // first failing rule when dropped
};

// Keep human records whose FR1 has at least 20 residues and FR4 at least 10.
FilterDecision filter_record(const SequenceRecord& r);

struct FilterCounts {
    std::uint64_t kept = 0;
    std::uint64_t non_human = 0;
    std::uint64_t fr1_short = 0;
    std::uint64_t fr4_short = 0;
    std::uint64_t parse_error = 0;
};

struct DatasetSplit {
    std::vector<SequenceRecord> train;
    std::vector<SequenceRecord> test;
    std::vector<SequenceRecord> valid;
    std::uint64_t seed = 0;
    double ratios[3] = {0.7, 0.15, 0.15};
};

// Sizes are floor(n*ratio) per partition with the remainder going to train;
// membership is a seed-determined permutation of the input.
DatasetSplit split_dataset(const std::vector<SequenceRecord>& records,
                           double train_ratio, double test_ratio, double valid_ratio,
                           std::uint64_t seed);

struct LabeledDataset {
    std::vector<SequenceRecord> records;
    Task task = Task::antigen;
    std::vector<std::string> class_names;
    Chain chain = Chain::heavy;

    int class_index(const std::string& name) const;
    std::vector<int> label_ids() const;
};

// Records are filtered to `chain`; rows without a value for `task` are
// skipped. With fixed_classes set, any other label value is a data_error;
// otherwise classes are ordered by first appearance.
LabeledDataset load_labeled_dataset(std::istream& source, Task task, Chain chain,
                                    const std::optional<std::vector<std::string>>& fixed_classes = std::nullopt);

LabeledDataset make_labeled_dataset(std::vector<SequenceRecord> records, Task task, Chain chain,
                                    const std::optional<std::vector<std::string>>& fixed_classes = std::nullopt);

std::string record_to_csv_row(const SequenceRecord& r);
void write_records_csv(std::ostream& out, const std::vector<SequenceRecord>& records);

}  // namespace abtok::ingest
