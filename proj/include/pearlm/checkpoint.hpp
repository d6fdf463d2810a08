#pragma once

// Checkpoint container:
//   "PEARLMCKPT1\n" <header byte count> "\n" <JSON header> <float32 parameters>
// The header holds the model config, the vocabulary fingerprint and the
// tensor table; loading refuses a vocabulary with a different fingerprint.

#include <cstring>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "pearlm/model.hpp"
#include "pearlm/tsv.hpp"

namespace pearlm {

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},       {"d_ff", c.d_ff},         {"context_length", c.context_length},
            {"n_types", c.n_types},       {"dropout", c.dropout},   {"init_std", c.init_std},
            {"seed", c.seed},             {"final_norm", c.final_norm}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size");
    c.d_model = j.at("d_model");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.d_ff = j.at("d_ff");
    c.context_length = j.at("context_length");
    c.n_types = j.at("n_types");
    c.dropout = j.at("dropout");
    c.init_std = j.at("init_std");
    c.seed = j.at("seed");
    c.final_norm = j.at("final_norm");
    return c;
}

inline std::string serialize_checkpoint(const LanguageModel& model, const Vocabulary& vocab,
                                        const nlohmann::ordered_json& manifest = nullptr) {
    nlohmann::ordered_json header;
    header["format"] = "pearlm-checkpoint";
    header["version"] = 1;
    header["config"] = to_json(model.config());
    header["vocab_fingerprint"] = hex64(vocab.fingerprint());
    header["scalar"] = "float32";
    header["parameters"] = model.parameters().size();
    auto& tensors = header["tensors"] = nlohmann::ordered_json::array();
    for (const auto& t : model.layout().tensors)
        tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", t.offset}});
    if (!manifest.is_null()) header["manifest"] = manifest;

    const std::string text = header.dump();
    std::string out = "PEARLMCKPT1\n" + std::to_string(text.size()) + "\n" + text;
    const auto params = model.parameters();
    const std::size_t bytes = params.size() * sizeof(float);
    const std::size_t start = out.size();
    out.resize(start + bytes);
    std::memcpy(out.data() + start, params.data(), bytes);
    return out;
}

namespace detail {

// Returns the JSON header and the byte offset of the parameter block.
inline std::pair<nlohmann::json, std::size_t> checkpoint_header(const std::string& blob) {
    const std::string magic = "PEARLMCKPT1\n";
    if (blob.compare(0, magic.size(), magic) != 0) throw DataError("not a pearlm checkpoint");
    const auto nl = blob.find('\n', magic.size());
    if (nl == std::string::npos) throw DataError("truncated checkpoint header");
    try {
        const auto header_len = std::stoull(blob.substr(magic.size(), nl - magic.size()));
        if (nl + 1 + header_len > blob.size()) throw DataError("truncated checkpoint header");
        return {nlohmann::json::parse(blob.substr(nl + 1, header_len)), nl + 1 + header_len};
    } catch (const std::logic_error&) {
        throw DataError("malformed checkpoint header length");
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint header: ") + e.what());
    }
}

}  // namespace detail

inline LanguageModel deserialize_checkpoint(const std::string& blob, const Vocabulary& vocab) {
    const auto [header, offset] = detail::checkpoint_header(blob);
    if (header.at("vocab_fingerprint") != hex64(vocab.fingerprint()))
        throw DataError("checkpoint vocabulary fingerprint " + header.at("vocab_fingerprint").get<std::string>() +
                        " does not match vocabulary " + hex64(vocab.fingerprint()));
    LanguageModel model(model_config_from_json(header.at("config")));
    auto params = model.parameters();
    if (header.at("parameters").get<std::size_t>() != params.size() ||
        blob.size() != offset + params.size() * sizeof(float))
        throw DataError("checkpoint parameter block has the wrong size");
    std::memcpy(params.data(), blob.data() + offset, params.size() * sizeof(float));
    return model;
}

inline void save_checkpoint(const std::string& file, const LanguageModel& model, const Vocabulary& vocab,
                            const nlohmann::ordered_json& manifest = nullptr) {
    tsv::write_file(file, serialize_checkpoint(model, vocab, manifest));
}

inline LanguageModel load_checkpoint(const std::string& file, const Vocabulary& vocab) {
    return deserialize_checkpoint(tsv::read_file(file), vocab);
}

// Manifest stored by the train stage (null when absent).
inline nlohmann::json read_checkpoint_manifest(const std::string& file) {
    const auto header = detail::checkpoint_header(tsv::read_file(file)).first;
    return header.contains("manifest") ? header["manifest"] : nlohmann::json();
}

}  // namespace pearlm
