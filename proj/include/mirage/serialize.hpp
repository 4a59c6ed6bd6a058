#pragma once

// Model file: little-endian binary, magic "MIRG", u32 format version,
// dimension header, then parameter tensors in declared order, each prefixed
// by its element count. Tokenizer state travels in a JSON sidecar.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mirage/model.hpp"
#include "mirage/tokenize.hpp"

namespace mirage {

struct SerializeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr char kModelMagic[4] = {'M', 'I', 'R', 'G'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
    write_u32(out, static_cast<std::uint32_t>(v & 0xffffffffULL));
    write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) {
        throw SerializeError(std::string("truncated model file reading ") +
                             what);
    }
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& in, const char* what) {
    const std::uint64_t lo = read_u32(in, what);
    const std::uint64_t hi = read_u32(in, what);
    return lo | (hi << 32);
}

}  // namespace detail

inline void save_model(const Parameters<float>& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw SerializeError("cannot open model file for writing: " + path);
    }
    out.write(kModelMagic, 4);
    detail::write_u32(out, kModelFormatVersion);
    detail::write_u32(out, static_cast<std::uint32_t>(p.cfg.vocab));
    detail::write_u32(out, static_cast<std::uint32_t>(p.cfg.dim));
    detail::write_u32(out, static_cast<std::uint32_t>(p.cfg.layers));
    detail::write_u32(out, static_cast<std::uint32_t>(p.cfg.heads));
    detail::write_u32(out, static_cast<std::uint32_t>(p.cfg.ctx));
    for (const auto* t : p.tensors()) {
        detail::write_u64(out, t->size());
        static_assert(sizeof(float) == 4);
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(t->size() * 4));
    }
    if (!out) {
        throw SerializeError("write failed for model file: " + path);
    }
}

inline Parameters<float> load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw SerializeError("cannot open model file: " + path);
    }
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0) {
        throw SerializeError("bad magic bytes in model file: " + path);
    }
    const std::uint32_t version = detail::read_u32(in, "version");
    if (version != kModelFormatVersion) {
        throw SerializeError("unsupported model format version " +
                             std::to_string(version) + " in " + path);
    }
    ModelConfig cfg;
    cfg.vocab = static_cast<int>(detail::read_u32(in, "vocab"));
    cfg.dim = static_cast<int>(detail::read_u32(in, "dim"));
    cfg.layers = static_cast<int>(detail::read_u32(in, "layers"));
    cfg.heads = static_cast<int>(detail::read_u32(in, "heads"));
    cfg.ctx = static_cast<int>(detail::read_u32(in, "ctx"));
    try {
        cfg.validate();
    } catch (const ModelError& e) {
        throw SerializeError(std::string("inconsistent dimension header: ") +
                             e.what());
    }
    Parameters<float> p = Parameters<float>::zeros(cfg);
    for (auto* t : p.tensors()) {
        const std::uint64_t count = detail::read_u64(in, "tensor length");
        if (count != t->size()) {
            throw SerializeError(
                "tensor length mismatch in " + path + ": expected " +
                std::to_string(t->size()) + ", got " + std::to_string(count));
        }
        in.read(reinterpret_cast<char*>(t->data()),
                static_cast<std::streamsize>(count * 4));
        if (!in) {
            throw SerializeError("truncated model file: " + path);
        }
    }
    return p;
}

// Tokenizer sidecar: {"type": "byte"} or {"type": "word", "pieces": [...]}.
inline void save_tokenizer(const Tokenizer& tok, const std::string& path) {
    nlohmann::json j;
    if (dynamic_cast<const ByteTokenizer*>(&tok)) {
        j["type"] = "byte";
    } else if (auto* wt = dynamic_cast<const WordTokenizer*>(&tok)) {
        j["type"] = "word";
        j["pieces"] = wt->pieces();
        j["drop_whitespace"] = wt->drop_whitespace();
    } else {
        throw SerializeError("unknown tokenizer type");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw SerializeError("cannot open tokenizer file for writing: " +
                             path);
    }
    out << j.dump(2) << "\n";
}

inline std::unique_ptr<Tokenizer> load_tokenizer(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw SerializeError("cannot open tokenizer file: " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SerializeError("malformed tokenizer file " + path + ": " +
                             e.what());
    }
    const std::string type = j.value("type", "");
    if (type == "byte") {
        return std::make_unique<ByteTokenizer>();
    }
    if (type == "word") {
        auto pieces = j.at("pieces").get<std::vector<std::string>>();
        return std::make_unique<WordTokenizer>(WordTokenizer::from_pieces(
            std::move(pieces), j.value("drop_whitespace", false)));
    }
    throw SerializeError("unknown tokenizer type in " + path);
}

}  // namespace mirage
