#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "s2s/error.hpp"
#include "s2s/model.hpp"
#include "s2s/tensor.hpp"
#include "s2s/train.hpp"

namespace s2s {

/// Pins a checkpoint to the exact vocabularies it was trained with.
struct VocabFingerprint {
    std::uint64_t source_hash = 0;
    std::uint64_t target_hash = 0;
    std::size_t source_size = 0;
    std::size_t target_size = 0;

    static VocabFingerprint of(const Vocabulary& source, const Vocabulary& target) {
        return {source.fingerprint(), target.fingerprint(), source.size(), target.size()};
    }

    friend bool operator==(const VocabFingerprint&, const VocabFingerprint&) = default;
};

/// A complete training snapshot: model, optimizer state, and progress.
struct Checkpoint {
    ModelConfig config;
    VocabFingerprint vocab;
    AdamConfig adam;
    std::int64_t step_count = 0;
    int epoch_reached = 0;
    std::vector<std::pair<std::string, Tensor<float>>> parameters;
    std::vector<std::pair<std::string, Tensor<float>>> moments;
};

namespace detail {

constexpr char kCheckpointMagic[4] = {'S', '2', 'S', 'F'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::string& out, std::uint32_t x) {
    for (int i = 0; i < 4; ++i) out += static_cast<char>((x >> (8 * i)) & 0xFF);
}

inline void put_u64(std::string& out, std::uint64_t x) {
    for (int i = 0; i < 8; ++i) out += static_cast<char>((x >> (8 * i)) & 0xFF);
}

inline void put_f32(std::string& out, float x) {
    put_u32(out, std::bit_cast<std::uint32_t>(x));
}

/// Sequential reader over an in-memory checkpoint image. Every read is
/// bounds-checked; running past the end means a truncated file.
struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;
    std::size_t limit;

    explicit ByteReader(const std::string& b, std::size_t lim) : buf(b), limit(lim) {}

    void need(std::size_t n) const {
        if (pos + n > limit)
            throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint is truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t x = 0;
        for (int i = 0; i < 4; ++i)
            x |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return x;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i)
            x |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return x;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline std::uint64_t fnv1a64(const char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline void put_tensor(std::string& out, const std::string& name, const Tensor<float>& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (float x : t.values()) put_f32(out, x);
}

inline std::pair<std::string, Tensor<float>> read_tensor(ByteReader& r) {
    std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    std::uint32_t rank = r.u32();
    if (rank > 8)
        throw CheckpointError(CheckpointError::Kind::corrupt,
                              "checkpoint tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape[i] = r.u32();
        n *= shape[i];
    }
    Tensor<float> t(shape);
    auto vals = t.values();
    for (std::size_t i = 0; i < n; ++i) vals[i] = r.f32();
    return {std::move(name), std::move(t)};
}

inline nlohmann::json config_to_json(const Checkpoint& ck) {
    const ModelConfig& c = ck.config;
    return nlohmann::json{
        {"cell", cell_name(c.cell)},
        {"embed_dim", c.embed_dim},
        {"units", c.units},
        {"encoder_activation", activation_name(c.encoder_activation)},
        {"decoder_activation", activation_name(c.decoder_activation)},
        {"attention_inner", activation_name(c.attention_inner)},
        {"attention_outer", activation_name(c.attention_outer)},
        {"source_vocab_size", c.source_vocab_size},
        {"target_vocab_size", c.target_vocab_size},
        {"max_source_len", c.max_source_len},
        {"max_target_len", c.max_target_len},
        {"source_vocab_hash", ck.vocab.source_hash},
        {"target_vocab_hash", ck.vocab.target_hash},
        {"vocab_source_size", ck.vocab.source_size},
        {"vocab_target_size", ck.vocab.target_size},
        {"learning_rate", ck.adam.learning_rate},
        {"beta1", ck.adam.beta1},
        {"beta2", ck.adam.beta2},
        {"epsilon", ck.adam.epsilon},
        {"clip_norm", ck.adam.clip_norm},
        {"step_count", ck.step_count},
        {"epoch_reached", ck.epoch_reached},
        {"parameter_count", ck.parameters.size()},
        {"moment_count", ck.moments.size()},
    };
}

inline ActivationKind parse_activation_checked(const std::string& s) {
    try {
        return parse_activation(s);
    } catch (const ValueError& e) {
        throw CheckpointError(CheckpointError::Kind::corrupt, e.what());
    }
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::string body;
    body.append(detail::kCheckpointMagic, 4);
    detail::put_u32(body, detail::kCheckpointVersion);
    std::string config = detail::config_to_json(ck).dump();
    detail::put_u32(body, static_cast<std::uint32_t>(config.size()));
    body += config;
    for (const auto& [name, t] : ck.parameters) detail::put_tensor(body, name, t);
    for (const auto& [name, t] : ck.moments) detail::put_tensor(body, name, t);
    detail::put_u64(body, detail::fnv1a64(body.data(), body.size()));

    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError(CheckpointError::Kind::io,
                                        "cannot write checkpoint file '" + tmp + "'");
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        out.flush();
        if (!out) throw CheckpointError(CheckpointError::Kind::io,
                                        "failed writing checkpoint file '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw CheckpointError(CheckpointError::Kind::io,
                              "cannot move checkpoint into place at '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::string body;
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw CheckpointError(CheckpointError::Kind::io,
                                       "cannot read checkpoint file '" + path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        body = buf.str();
    }
    if (body.size() < 4 + 4 + 4 + 8)
        throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint is truncated");

    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(body[body.size() - 8 + i]))
                  << (8 * i);
    if (detail::fnv1a64(body.data(), body.size() - 8) != stored)
        throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint checksum mismatch");

    detail::ByteReader r(body, body.size() - 8);
    if (r.bytes(4) != std::string(detail::kCheckpointMagic, 4))
        throw CheckpointError(CheckpointError::Kind::corrupt, "not a checkpoint file");
    std::uint32_t version = r.u32();
    if (version != detail::kCheckpointVersion)
        throw CheckpointError(CheckpointError::Kind::version,
                              "unsupported checkpoint version " + std::to_string(version));

    std::uint32_t config_len = r.u32();
    std::string config_text = r.bytes(config_len);
    nlohmann::json j = nlohmann::json::parse(config_text, nullptr, false);
    if (j.is_discarded())
        throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint config is not valid JSON");

    Checkpoint ck;
    try {
        ck.config.cell = parse_cell(j.at("cell").get<std::string>());
        ck.config.embed_dim = j.at("embed_dim").get<std::size_t>();
        ck.config.units = j.at("units").get<std::size_t>();
        ck.config.encoder_activation =
            detail::parse_activation_checked(j.at("encoder_activation").get<std::string>());
        ck.config.decoder_activation =
            detail::parse_activation_checked(j.at("decoder_activation").get<std::string>());
        ck.config.attention_inner =
            detail::parse_activation_checked(j.at("attention_inner").get<std::string>());
        ck.config.attention_outer =
            detail::parse_activation_checked(j.at("attention_outer").get<std::string>());
        ck.config.source_vocab_size = j.at("source_vocab_size").get<std::size_t>();
        ck.config.target_vocab_size = j.at("target_vocab_size").get<std::size_t>();
        ck.config.max_source_len = j.at("max_source_len").get<std::size_t>();
        ck.config.max_target_len = j.at("max_target_len").get<std::size_t>();
        ck.vocab.source_hash = j.at("source_vocab_hash").get<std::uint64_t>();
        ck.vocab.target_hash = j.at("target_vocab_hash").get<std::uint64_t>();
        ck.vocab.source_size = j.at("vocab_source_size").get<std::size_t>();
        ck.vocab.target_size = j.at("vocab_target_size").get<std::size_t>();
        ck.adam.learning_rate = j.at("learning_rate").get<double>();
        ck.adam.beta1 = j.at("beta1").get<double>();
        ck.adam.beta2 = j.at("beta2").get<double>();
        ck.adam.epsilon = j.at("epsilon").get<double>();
        ck.adam.clip_norm = j.at("clip_norm").get<double>();
        ck.step_count = j.at("step_count").get<std::int64_t>();
        ck.epoch_reached = j.at("epoch_reached").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Kind::corrupt,
                              std::string("checkpoint config is incomplete: ") + e.what());
    } catch (const ValueError& e) {
        throw CheckpointError(CheckpointError::Kind::corrupt, e.what());
    }
    std::size_t n_params = j.value("parameter_count", std::size_t(0));
    std::size_t n_moments = j.value("moment_count", std::size_t(0));

    for (std::size_t i = 0; i < n_params; ++i) ck.parameters.push_back(detail::read_tensor(r));
    for (std::size_t i = 0; i < n_moments; ++i) ck.moments.push_back(detail::read_tensor(r));
    if (r.pos != r.limit)
        throw CheckpointError(CheckpointError::Kind::corrupt,
                              "checkpoint has trailing bytes");
    return ck;
}

/// Snapshot the model and optimizer after finishing epoch_reached.
inline Checkpoint make_checkpoint(const Model<float>& model, const AdamOptimizer<float>& opt,
                                  const VocabFingerprint& vocab, int epoch_reached) {
    Checkpoint ck;
    ck.config = model.config;
    ck.vocab = vocab;
    ck.adam = opt.config();
    ck.step_count = opt.step_count();
    ck.epoch_reached = epoch_reached;
    for (const auto& [name, t] : model.params) ck.parameters.emplace_back(name, t);
    for (const auto& [name, t] : opt.moment_entries(model.params))
        ck.moments.emplace_back(name, *t);
    return ck;
}

/// Reject a checkpoint that was written against different vocabularies.
inline void verify_vocab(const Checkpoint& ck, const VocabFingerprint& expected) {
    if (!(ck.vocab == expected))
        throw CheckpointError(CheckpointError::Kind::fingerprint,
                              "checkpoint was trained with different vocabularies");
}

/// Load checkpoint tensors into a model of the same configuration, and build
/// an optimizer carrying the saved moments and step count.
inline AdamOptimizer<float> apply_checkpoint(const Checkpoint& ck, Model<float>& model) {
    if (!(model.config == ck.config))
        throw CheckpointError(CheckpointError::Kind::corrupt,
                              "checkpoint configuration does not match the model");
    std::size_t applied = 0;
    for (const auto& [name, t] : ck.parameters) {
        if (!model.params.has(name))
            throw CheckpointError(CheckpointError::Kind::corrupt,
                                  "checkpoint has unknown parameter '" + name + "'");
        Tensor<float>& dst = model.params.get(name);
        if (!dst.same_shape(t))
            throw CheckpointError(CheckpointError::Kind::corrupt,
                                  "checkpoint parameter '" + name + "' has shape " +
                                      shape_str(t.shape()) + ", expected " +
                                      shape_str(dst.shape()));
        dst = t;
        ++applied;
    }
    if (applied != model.params.size())
        throw CheckpointError(CheckpointError::Kind::corrupt,
                              "checkpoint is missing parameters");

    AdamOptimizer<float> opt(model.params, ck.adam);
    std::map<std::string, Tensor<float>> moment_values;
    for (const auto& [name, t] : ck.moments) moment_values.emplace(name, t);
    try {
        opt.restore(ck.step_count, moment_values);
    } catch (const Error& e) {
        throw CheckpointError(CheckpointError::Kind::corrupt, e.what());
    }
    return opt;
}

}  // namespace s2s
