#include "abtok/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "abtok/errors.hpp"

namespace abtok::ckpt {

namespace {

constexpr char kMagic[8] = {'A', 'B', 'T', 'O', 'K', 'C', 'K', '1'};

void put_u64_le(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

nlohmann::ordered_json config_to_json(const model::ModelConfig& c) {
    return {{"vocab_size", c.vocab_size},
            {"max_positions", c.max_positions},
            {"hidden_size", c.hidden_size},
            {"num_layers", c.num_layers},
            {"num_heads", c.num_heads},
            {"intermediate_size", c.intermediate_size},
            {"hidden_dropout", c.hidden_dropout},
            {"attention_dropout", c.attention_dropout},
            {"layer_norm_eps", c.layer_norm_eps}};
}

model::ModelConfig config_from_json(const nlohmann::ordered_json& j) {
    model::ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.hidden_size = j.at("hidden_size").get<int>();
    c.num_layers = j.at("num_layers").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.intermediate_size = j.at("intermediate_size").get<int>();
    c.hidden_dropout = j.at("hidden_dropout").get<double>();
    c.attention_dropout = j.at("attention_dropout").get<double>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
    return c;
}

}  // namespace

void save_checkpoint(const model::Model& m, const std::string& path,
                     const nlohmann::ordered_json& extras) {
    nlohmann::ordered_json header;
    header["config"] = config_to_json(m.cfg);
    header["num_classes"] = m.num_classes;
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < m.specs.size(); ++i) {
        const model::TensorSpec& s = m.specs[i];
        table.push_back({{"name", s.name},
                         {"rows", m.tensors[i].rows()},
                         {"cols", m.tensors[i].cols()},
                         {"offset", offset}});
        offset += static_cast<std::uint64_t>(m.tensors[i].size()) * 4;
    }
    header["tensors"] = std::move(table);
    header["extras"] = extras;
    const std::string header_text = header.dump();

    std::vector<unsigned char> payload;
    payload.reserve(offset);
    for (const model::MatX<float>& t : m.tensors) {
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.cols(); ++c) {
                const std::uint32_t bits = std::bit_cast<std::uint32_t>(t(r, c));
                for (int b = 0; b < 4; ++b)
                    payload.push_back(static_cast<unsigned char>(bits >> (8 * b)));
            }
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out.write(kMagic, sizeof(kMagic));
    std::vector<unsigned char> len;
    put_u64_le(len, header_text.size());
    out.write(reinterpret_cast<const char*>(len.data()), 8);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw io_error("write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 16) throw parse_error("checkpoint truncated before header", bytes.size());
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw parse_error("bad checkpoint magic", 0);
    }
    const std::uint64_t header_len = get_u64_le(bytes.data() + 8);
    if (16 + header_len > bytes.size()) {
        throw parse_error("checkpoint truncated inside header", bytes.size());
    }
    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(bytes.begin() + 16,
                                               bytes.begin() + 16 + header_len);
    } catch (const nlohmann::json::parse_error& e) {
        throw parse_error(std::string("checkpoint header: ") + e.what(), 16);
    }

    LoadedCheckpoint result{model::Model{}, nlohmann::ordered_json::object()};
    try {
        result.model.cfg = config_from_json(header.at("config"));
        result.model.cfg.validate();
        result.model.num_classes = header.at("num_classes").get<int>();
        if (header.contains("extras")) result.extras = header.at("extras");

        const std::vector<model::TensorSpec> specs =
            model::shape_registry(result.model.cfg, result.model.num_classes);
        const nlohmann::ordered_json& table = header.at("tensors");
        if (table.size() != specs.size()) {
            throw parse_error("tensor table size " + std::to_string(table.size()) +
                                  " does not match the config's " + std::to_string(specs.size()),
                              16);
        }
        const std::size_t payload_start = 16 + header_len;
        result.model.specs = specs;
        result.model.tensors.reserve(specs.size());
        for (std::size_t i = 0; i < specs.size(); ++i) {
            const nlohmann::ordered_json& row = table[i];
            if (row.at("name").get<std::string>() != specs[i].name ||
                row.at("rows").get<long long>() != specs[i].rows ||
                row.at("cols").get<long long>() != specs[i].cols) {
                throw parse_error("tensor " + std::to_string(i) + " does not match spec " +
                                      specs[i].name,
                                  16);
            }
            const std::uint64_t offset = row.at("offset").get<std::uint64_t>();
            const std::uint64_t count =
                static_cast<std::uint64_t>(specs[i].rows) * static_cast<std::uint64_t>(specs[i].cols);
            const std::size_t begin = payload_start + offset;
            if (begin + count * 4 > bytes.size()) {
                throw parse_error("checkpoint truncated inside tensor " + specs[i].name,
                                  bytes.size());
            }
            model::MatX<float> t(specs[i].rows, specs[i].cols);
            const unsigned char* p = bytes.data() + begin;
            for (Eigen::Index r = 0; r < t.rows(); ++r) {
                for (Eigen::Index c = 0; c < t.cols(); ++c) {
                    std::uint32_t v = 0;
                    for (int b = 0; b < 4; ++b)
                        v |= static_cast<std::uint32_t>(p[b]) << (8 * b);
                    p += 4;
                    t(r, c) = std::bit_cast<float>(v);
                }
            }
            result.model.tensors.push_back(std::move(t));
            result.model.index[specs[i].name] = static_cast<int>(i);
        }
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("checkpoint header: ") + e.what(), 16);
    }
    return result;
}

}  // namespace abtok::ckpt
