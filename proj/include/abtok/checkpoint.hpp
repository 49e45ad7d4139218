#pragma once

#include <string>

#include "abtok/model.hpp"
#include "json.hpp"

namespace abtok::ckpt {

// Self-describing model container: an 8-byte magic, a little-endian u64
// header length, a JSON header (model config, tensor name/shape/offset table,
// free-form extras) and a raw little-endian float32 payload.
//
// `extras` travels untouched; the CLI uses it to remember the tokenizer that
// produced the model's vocabulary.
void save_checkpoint(const model::Model& m, const std::string& path,
                     const nlohmann::ordered_json& extras = nlohmann::ordered_json::object());

struct LoadedCheckpoint {
    model::Model model;
    nlohmann::ordered_json extras;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace abtok::ckpt
