#include "abtok/data_ingest.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstring>
#include <numeric>
#include <unordered_map>

#include "abtok/csv.hpp"
#include "abtok/errors.hpp"
#include "abtok/rng.hpp"

namespace abtok::ingest {

bool is_canonical_residue(char c) {
    return c != '\0' && std::strchr(kCanonicalAlphabet, c) != nullptr;
}

std::string chain_name(Chain c) {
    return c == Chain::heavy ? "heavy" : "light";
}

std::optional<Chain> parse_chain(const std::string& s) {
    if (s == "heavy") return Chain::heavy;
    if (s == "light") return Chain::light;
    return std::nullopt;
}

std::string task_name(Task t) {
    switch (t) {
        case Task::antigen: return "antigen";
        case Task::bcell_type: return "bcell_type";
        case Task::germline_v: return "germline_v";
    }
    return "?";
}

std::optional<Task> parse_task(const std::string& s) {
    if (s == "antigen") return Task::antigen;
    if (s == "bcell_type" || s == "bcell") return Task::bcell_type;
    if (s == "germline_v" || s == "vgene") return Task::germline_v;
    return std::nullopt;
}

int expected_class_count(Task t, Chain c) {
    switch (t) {
        case Task::antigen: return 5;
        case Task::bcell_type: return c == Chain::heavy ? 4 : 3;
        case Task::germline_v: return c == Chain::heavy ? 7 : 16;
    }
    return 0;
}

const std::vector<std::string> kColumns = {
    "sequence_aa", "chain", "species", "fwr1_aa", "fwr4_aa",
    "antigen_label", "bcell_label", "vgene_label",
};

namespace {

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

constexpr std::array<Task, 3> kLabelTasks = {Task::antigen, Task::bcell_type, Task::germline_v};

}  // namespace

void parse_records_stream(std::istream& source,
                          const std::function<void(SequenceRecord&&)>& on_record,
                          const std::function<void(const RowError&)>& on_error) {
    std::string line;
    if (!read_line(source, line)) {
        throw schema_error("empty input: missing header row");
    }
    std::vector<std::string> header = split_csv_row(line);
    std::unordered_map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const std::string& name : kColumns) {
        if (col.find(name) == col.end()) {
            throw schema_error("missing required column: " + name);
        }
    }

    const std::size_t c_seq = col["sequence_aa"];
    const std::size_t c_chain = col["chain"];
    const std::size_t c_species = col["species"];
    const std::size_t c_fwr1 = col["fwr1_aa"];
    const std::size_t c_fwr4 = col["fwr4_aa"];
    const std::size_t c_labels[3] = {col["antigen_label"], col["bcell_label"], col["vgene_label"]};

    std::size_t row_index = 0;
    while (read_line(source, line)) {
        const std::size_t row = row_index++;
        if (line.empty() || line == "\r") continue;
        std::vector<std::string> fields = split_csv_row(line);
        if (fields.size() < header.size()) {
            on_error({row, "expected " + std::to_string(header.size()) + " fields, got " +
                               std::to_string(fields.size())});
            continue;
        }

        SequenceRecord r;
        r.row_index = row;
        r.sequence = fields[c_seq];
        if (r.sequence.empty()) {
            on_error({row, "empty sequence"});
            continue;
        }
        bool bad_char = false;
        for (char c : r.sequence) {
            if (c < 'A' || c > 'Z') {
                on_error({row, std::string("non-alphabetic sequence character '") + c + "'"});
                bad_char = true;
                break;
            }
            if (!is_canonical_residue(c)) r.non_canonical = true;
        }
        if (bad_char) continue;

        auto chain = parse_chain(fields[c_chain]);
        if (!chain) {
            on_error({row, "unknown chain value '" + fields[c_chain] + "'"});
            continue;
        }
        r.chain = *chain;
        r.species = fields[c_species];
        r.fwr1 = fields[c_fwr1];
        r.fwr4 = fields[c_fwr4];
        for (std::size_t t = 0; t < kLabelTasks.size(); ++t) {
            if (!fields[c_labels[t]].empty()) r.labels[kLabelTasks[t]] = fields[c_labels[t]];
        }
        on_record(std::move(r));
    }
}

ParseResult parse_records(std::istream& source) {
    ParseResult out;
    parse_records_stream(
        source,
        [&](SequenceRecord&& r) { out.records.push_back(std::move(r)); },
        [&](const RowError& e) { out.errors.push_back(e); });
    return out;
}

FilterDecision filter_record(const SequenceRecord& r) {
    if (lowercase(r.species) != "human") return {false, DropReason::non_human};
    if (r.fwr1.size() < 20) return {false, DropReason::fr1_short};
    if (r.fwr4.size() < 10) return {false, DropReason::fr4_short};
    return {true, std::nullopt};
}

std::string drop_reason_name(DropReason r) {
    switch (r) {
        case DropReason::non_human: return "non_human";
        case DropReason::fr1_short: return "fr1_short";
        case DropReason::fr4_short: return "fr4_short";
    }
    return "?";
}

DatasetSplit split_dataset(const std::vector<SequenceRecord>& records,
                           double train_ratio, double test_ratio, double valid_ratio,
                           std::uint64_t seed) {
    if (train_ratio < 0 || test_ratio < 0 || valid_ratio < 0) {
        throw argument_error("split ratios must be non-negative");
    }
    const double sum = train_ratio + test_ratio + valid_ratio;
    if (std::abs(sum - 1.0) > 1e-9) {
        throw argument_error("split ratios must sum to 1, got " + std::to_string(sum));
    }

    const std::size_t n = records.size();
    std::size_t n_test = static_cast<std::size_t>(static_cast<double>(n) * test_ratio);
    std::size_t n_valid = static_cast<std::size_t>(static_cast<double>(n) * valid_ratio);
    std::size_t n_train = static_cast<std::size_t>(static_cast<double>(n) * train_ratio);
    n_train += n - n_train - n_test - n_valid;  // remainder goes to train

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    det_rng rng(seed);
    fisher_yates(order, rng);

    DatasetSplit split;
    split.seed = seed;
    split.ratios[0] = train_ratio;
    split.ratios[1] = test_ratio;
    split.ratios[2] = valid_ratio;
    split.train.reserve(n_train);
    split.test.reserve(n_test);
    split.valid.reserve(n_valid);
    for (std::size_t i = 0; i < n; ++i) {
        const SequenceRecord& r = records[order[i]];
        if (i < n_train) {
            split.train.push_back(r);
        } else if (i < n_train + n_test) {
            split.test.push_back(r);
        } else {
            split.valid.push_back(r);
        }
    }
    return split;
}

int LabeledDataset::class_index(const std::string& name) const {
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        if (class_names[i] == name) return static_cast<int>(i);
    }
    return -1;
}

std::vector<int> LabeledDataset::label_ids() const {
    std::vector<int> ids;
    ids.reserve(records.size());
    for (const SequenceRecord& r : records) {
        ids.push_back(class_index(r.labels.at(task)));
    }
    return ids;
}

LabeledDataset make_labeled_dataset(std::vector<SequenceRecord> records, Task task, Chain chain,
                                    const std::optional<std::vector<std::string>>& fixed_classes) {
    LabeledDataset ds;
    ds.task = task;
    ds.chain = chain;
    if (fixed_classes) ds.class_names = *fixed_classes;

    for (SequenceRecord& r : records) {
        if (r.chain != chain) continue;
        auto it = r.labels.find(task);
        if (it == r.labels.end()) continue;
        const std::string& value = it->second;
        if (ds.class_index(value) < 0) {
            if (fixed_classes) {
                throw data_error("unknown class name '" + value + "' for task " + task_name(task));
            }
            ds.class_names.push_back(value);
        }
        ds.records.push_back(std::move(r));
    }
    return ds;
}

LabeledDataset load_labeled_dataset(std::istream& source, Task task, Chain chain,
                                    const std::optional<std::vector<std::string>>& fixed_classes) {
    ParseResult parsed = parse_records(source);
    if (!parsed.errors.empty()) {
        const RowError& first = parsed.errors.front();
        throw data_error("row " + std::to_string(first.row_index) + ": " + first.message);
    }
    return make_labeled_dataset(std::move(parsed.records), task, chain, fixed_classes);
}

std::string record_to_csv_row(const SequenceRecord& r) {
    auto label = [&](Task t) -> std::string {
        auto it = r.labels.find(t);
        return it == r.labels.end() ? std::string() : it->second;
    };
    return join_csv_row({r.sequence, chain_name(r.chain), r.species, r.fwr1, r.fwr4,
                         label(Task::antigen), label(Task::bcell_type), label(Task::germline_v)});
}

void write_records_csv(std::ostream& out, const std::vector<SequenceRecord>& records) {
    out << join_csv_row(kColumns) << "\n";
    for (const SequenceRecord& r : records) {
        out << record_to_csv_row(r) << "\n";
    }
}

}  // namespace abtok::ingest
