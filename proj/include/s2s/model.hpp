#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "s2s/dense.hpp"
#include "s2s/error.hpp"
#include "s2s/ops.hpp"
#include "s2s/rng.hpp"
#include "s2s/tape.hpp"
#include "s2s/tensor.hpp"
#include "s2s/text.hpp"

namespace s2s {

enum class CellKind { GRU, LSTM };

inline const char* cell_name(CellKind k) { return k == CellKind::GRU ? "gru" : "lstm"; }

inline CellKind parse_cell(std::string_view name) {
    if (name == "gru") return CellKind::GRU;
    if (name == "lstm") return CellKind::LSTM;
    throw ValueError("unknown cell kind '" + std::string(name) + "'");
}

/// Everything needed to rebuild a model's parameter shapes. Defaults follow
/// the best configuration from the study: GRU, linear encoder, tanh decoder,
/// sigmoid attention scores normalized by softmax.
struct ModelConfig {
    CellKind cell = CellKind::GRU;
    std::size_t embed_dim = 256;
    std::size_t units = 1024;
    ActivationKind encoder_activation = ActivationKind::Linear;
    ActivationKind decoder_activation = ActivationKind::Tanh;
    ActivationKind attention_inner = ActivationKind::Sigmoid;
    ActivationKind attention_outer = ActivationKind::Softmax;
    std::size_t source_vocab_size = 0;
    std::size_t target_vocab_size = 0;
    std::size_t max_source_len = 0;
    std::size_t max_target_len = 0;

    void validate() const {
        if (embed_dim < 1 || units < 1)
            throw ValueError("config: embed_dim and units must be >= 1");
        if (source_vocab_size < 5 || target_vocab_size < 5)
            throw ValueError("config: vocabulary sizes must be >= 5 (4 specials + words)");
        if (max_source_len < 2 || max_target_len < 2)
            throw ValueError("config: max sequence lengths must be >= 2");
        auto cell_act = [](ActivationKind a) {
            return a == ActivationKind::Linear || a == ActivationKind::Tanh;
        };
        if (!cell_act(encoder_activation) || !cell_act(decoder_activation))
            throw ValueError("config: cell activations must be linear or tanh");
        if (attention_inner != ActivationKind::Sigmoid && attention_inner != ActivationKind::Tanh)
            throw ValueError("config: attention inner activation must be sigmoid or tanh");
        if (attention_outer != ActivationKind::Softmax && attention_outer != ActivationKind::Sigmoid)
            throw ValueError("config: attention outer activation must be softmax or sigmoid");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named parameters in fixed creation order. Order is the serialization
/// order and the optimizer's update order.
template <class T = float>
class ParameterStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> value) {
        if (index_.count(name)) throw ValueError("duplicate parameter '" + name + "'");
        index_.emplace(name, items_.size());
        items_.emplace_back(name, std::move(value));
        return items_.back().second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValueError("unknown parameter '" + name + "'");
        return items_[it->second].second;
    }
    const Tensor<T>& get(const std::string& name) const {
        return const_cast<ParameterStore*>(this)->get(name);
    }

    std::size_t size() const { return items_.size(); }
    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

private:
    std::vector<std::pair<std::string, Tensor<T>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

/// Glorot-uniform weight matrix; limit sqrt(6/(fan_in+fan_out)).
template <class T>
Tensor<T> glorot(std::size_t rows, std::size_t cols, Rng& rng) {
    T limit = static_cast<T>(std::sqrt(6.0 / static_cast<double>(rows + cols)));
    return Tensor<T>::uniform({rows, cols}, limit, rng);
}

inline const std::vector<std::string>& gate_names(CellKind kind) {
    static const std::vector<std::string> gru = {"update", "reset", "cand"};
    static const std::vector<std::string> lstm = {"input", "forget", "output", "cand"};
    return kind == CellKind::GRU ? gru : lstm;
}

}  // namespace detail

/// The full translation model: config plus its parameters.
template <class T = float>
struct Model {
    ModelConfig config;
    ParameterStore<T> params;

    /// Seeded Glorot init for weights, zeros for biases. Identical seeds
    /// yield identical parameters regardless of platform.
    static Model init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Model m;
        m.config = cfg;
        Rng rng(seed);
        auto& p = m.params;
        const std::size_t E = cfg.embed_dim, U = cfg.units;
        const std::string prefix = cell_name(cfg.cell);

        auto add_cell = [&](const std::string& side, std::size_t in_dim) {
            for (const auto& g : detail::gate_names(cfg.cell)) {
                std::string base = side + "." + prefix + "." + g;
                p.add(base + ".w", detail::glorot<T>(in_dim, U, rng));
                p.add(base + ".u", detail::glorot<T>(U, U, rng));
                p.add(base + ".b", Tensor<T>::zeros({U}));
            }
        };

        p.add("enc.embed", detail::glorot<T>(cfg.source_vocab_size, E, rng));
        add_cell("enc", E);
        p.add("dec.embed", detail::glorot<T>(cfg.target_vocab_size, E, rng));
        add_cell("dec", E + U);
        p.add("att.enc_proj", detail::glorot<T>(U, U, rng));
        p.add("att.dec_proj", detail::glorot<T>(U, U, rng));
        p.add("att.score", detail::glorot<T>(U, 1, rng));
        p.add("out.weight", detail::glorot<T>(U, cfg.target_vocab_size, rng));
        p.add("out.bias", Tensor<T>::zeros({cfg.target_vocab_size}));
        return m;
    }
};

/// One gate's parameters: w multiplies the input, u the previous hidden
/// state, b is the bias.
template <class T>
struct GateTensors {
    Tensor<T> w, u, b;
};

/// Model parameters resolved for one forward pass. Bound with a tape the
/// tensors are watched leaves; without, plain values (inference).
template <class T>
struct BoundModel {
    ModelConfig config;
    Tensor<T> enc_embed, dec_embed;
    std::vector<GateTensors<T>> enc_gates, dec_gates;
    Tensor<T> att_enc_proj, att_dec_proj, att_score;
    DenseLayer<T> out_head;
};

template <class T>
BoundModel<T> bind(Model<T>& model, Tape<T>* tape = nullptr) {
    auto fetch = [&](const std::string& name) {
        Tensor<T>& t = model.params.get(name);
        return tape ? tape->watch(t, name) : t;
    };
    BoundModel<T> b;
    b.config = model.config;
    const std::string prefix = cell_name(model.config.cell);
    auto fetch_cell = [&](const std::string& side) {
        std::vector<GateTensors<T>> gates;
        for (const auto& g : detail::gate_names(model.config.cell)) {
            std::string base = side + "." + prefix + "." + g;
            gates.push_back({fetch(base + ".w"), fetch(base + ".u"), fetch(base + ".b")});
        }
        return gates;
    };
    b.enc_embed = fetch("enc.embed");
    b.enc_gates = fetch_cell("enc");
    b.dec_embed = fetch("dec.embed");
    b.dec_gates = fetch_cell("dec");
    b.att_enc_proj = fetch("att.enc_proj");
    b.att_dec_proj = fetch("att.dec_proj");
    b.att_score = fetch("att.score");
    b.out_head = DenseLayer<T>{fetch("out.weight"), fetch("out.bias"), ActivationKind::Linear};
    return b;
}

/// Recurrent state; cell is empty for GRU.
template <class T>
struct RecurrentState {
    Tensor<T> hidden;
    Tensor<T> cell;
};

namespace detail {

template <class T>
Tensor<T> gate_preact(const GateTensors<T>& g, const Tensor<T>& x, const Tensor<T>& h) {
    return add_bias(add(matmul(x, g.w), matmul(h, g.u)), g.b);
}

}  // namespace detail

/// One GRU step. The update gate carries the previous state:
///   h' = z * h_prev + (1 - z) * candidate
/// so all-zero parameters give h' = 0.5 * h_prev. The configured activation
/// applies to the candidate; gates are always sigmoid.
template <class T>
Tensor<T> gru_cell_step(const std::vector<GateTensors<T>>& gates, const Tensor<T>& x,
                        const Tensor<T>& h_prev, ActivationKind activation) {
    if (gates.size() != 3) throw ValueError("gru step: expected 3 gates");
    const auto& zg = gates[0];
    const auto& rg = gates[1];
    const auto& cg = gates[2];
    Tensor<T> z = sigmoid(detail::gate_preact(zg, x, h_prev));
    Tensor<T> r = sigmoid(detail::gate_preact(rg, x, h_prev));
    Tensor<T> cand = apply_activation(
        activation, add_bias(add(matmul(x, cg.w), matmul(mul(r, h_prev), cg.u)), cg.b));
    Tensor<T> one_minus_z = affine(z, T(-1), T(1));
    return add(mul(z, h_prev), mul(one_minus_z, cand));
}

/// One LSTM step; returns (h, c). The configured activation applies to the
/// candidate and the output nonlinearity; gates are always sigmoid.
template <class T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell_step(const std::vector<GateTensors<T>>& gates,
                                               const Tensor<T>& x, const Tensor<T>& h_prev,
                                               const Tensor<T>& c_prev,
                                               ActivationKind activation) {
    if (gates.size() != 4) throw ValueError("lstm step: expected 4 gates");
    Tensor<T> i = sigmoid(detail::gate_preact(gates[0], x, h_prev));
    Tensor<T> f = sigmoid(detail::gate_preact(gates[1], x, h_prev));
    Tensor<T> o = sigmoid(detail::gate_preact(gates[2], x, h_prev));
    Tensor<T> cand = apply_activation(activation, detail::gate_preact(gates[3], x, h_prev));
    Tensor<T> c = add(mul(f, c_prev), mul(i, cand));
    Tensor<T> h = mul(o, apply_activation(activation, c));
    return {std::move(h), std::move(c)};
}

/// Advance one step of either cell kind, updating state in place.
template <class T>
Tensor<T> cell_step(CellKind kind, const std::vector<GateTensors<T>>& gates, const Tensor<T>& x,
                    RecurrentState<T>& state, ActivationKind activation) {
    if (kind == CellKind::GRU) {
        state.hidden = gru_cell_step(gates, x, state.hidden, activation);
    } else {
        auto [h, c] = lstm_cell_step(gates, x, state.hidden, state.cell, activation);
        state.hidden = std::move(h);
        state.cell = std::move(c);
    }
    return state.hidden;
}

/// Encoder pass over a batch: per-position hidden states, the final state,
/// and a (batch, len) pad mask with 1 on real tokens.
template <class T>
struct EncoderOutput {
    std::vector<Tensor<T>> states;  // each (batch, units)
    RecurrentState<T> final_state;
    Tensor<T> mask;  // (batch, len), untracked constant
};

template <class T>
EncoderOutput<T> encode(const BoundModel<T>& m, std::span<const EncodedSequence> batch) {
    if (batch.empty()) throw ValueError("encode: empty batch");
    const std::size_t B = batch.size();
    const std::size_t L = batch[0].ids.size();
    for (const auto& s : batch)
        if (s.ids.size() != L) throw ValueError("encode: ragged batch");
    if (L == 0) throw ValueError("encode: zero-length sequences");

    EncoderOutput<T> out;
    out.mask = Tensor<T>::zeros({B, L});
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t t = 0; t < batch[i].true_length && t < L; ++t)
            out.mask.at(i, t) = T(1);

    RecurrentState<T> state{Tensor<T>::zeros({B, m.config.units}),
                            Tensor<T>::zeros({B, m.config.units})};
    std::vector<std::int32_t> column(B);
    out.states.reserve(L);
    for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t i = 0; i < B; ++i) column[i] = batch[i].ids[t];
        Tensor<T> x = gather_rows(m.enc_embed, column);
        out.states.push_back(
            cell_step(m.config.cell, m.enc_gates, x, state, m.config.encoder_activation));
    }
    out.final_state = std::move(state);
    return out;
}

template <class T>
struct AttentionOutput {
    Tensor<T> weights;  // (batch, len)
    Tensor<T> context;  // (batch, units)
};

/// Projected encoder states, computed once per batch and reused across
/// decoder steps.
template <class T>
std::vector<Tensor<T>> attention_keys(const BoundModel<T>& m, const EncoderOutput<T>& enc) {
    std::vector<Tensor<T>> keys;
    keys.reserve(enc.states.size());
    for (const auto& s : enc.states) keys.push_back(matmul(s, m.att_enc_proj));
    return keys;
}

/// Additive attention against the pre-step decoder hidden state. Scores pass
/// through the inner activation, are normalized by the outer one (masked
/// softmax, or sigmoid zeroed on pads), and weight the encoder states into a
/// context vector.
template <class T>
AttentionOutput<T> attention_with_keys(const BoundModel<T>& m, const std::vector<Tensor<T>>& keys,
                                       const EncoderOutput<T>& enc, const Tensor<T>& dec_hidden) {
    const std::size_t L = enc.states.size();
    if (keys.size() != L) throw ValueError("attention: key/state count mismatch");
    Tensor<T> query = matmul(dec_hidden, m.att_dec_proj);
    std::vector<Tensor<T>> per_step;
    per_step.reserve(L);
    for (std::size_t t = 0; t < L; ++t)
        per_step.push_back(
            matmul(apply_activation(m.config.attention_inner, add(keys[t], query)), m.att_score));
    Tensor<T> scores = concat_cols<T>(per_step);  // (batch, L)

    AttentionOutput<T> out;
    if (m.config.attention_outer == ActivationKind::Softmax) {
        out.weights = masked_softmax(scores, enc.mask);
    } else {
        out.weights = mul(sigmoid(scores), enc.mask);
    }
    for (std::size_t t = 0; t < L; ++t) {
        Tensor<T> piece = scale_rows(enc.states[t], slice_col(out.weights, t));
        out.context = t == 0 ? std::move(piece) : add(out.context, piece);
    }
    return out;
}

template <class T>
AttentionOutput<T> attention(const BoundModel<T>& m, const EncoderOutput<T>& enc,
                             const Tensor<T>& dec_hidden) {
    return attention_with_keys(m, attention_keys(m, enc), enc, dec_hidden);
}

/// One decoder step: attend from the current state, feed the previous token's
/// embedding concatenated with the context through the cell, project to
/// vocabulary logits. The loss applies the softmax.
template <class T>
Tensor<T> decoder_step(const BoundModel<T>& m, const std::vector<Tensor<T>>& keys,
                       const EncoderOutput<T>& enc, std::span<const std::int32_t> prev_ids,
                       RecurrentState<T>& state) {
    AttentionOutput<T> att = attention_with_keys(m, keys, enc, state.hidden);
    Tensor<T> embedded = gather_rows(m.dec_embed, prev_ids);
    Tensor<T> x = concat_cols<T>({embedded, att.context});
    Tensor<T> h = cell_step(m.config.cell, m.dec_gates, x, state, m.config.decoder_activation);
    return m.out_head.apply(h);
}

/// Greedy decode for one encoded sentence; returns target ids (no start, may
/// end with the end token).
template <class T>
std::vector<std::int32_t> greedy_decode(const BoundModel<T>& m, const EncoderOutput<T>& enc) {
    if (enc.mask.extent(0) != 1)
        throw ValueError("greedy decode expects a single encoded sequence");
    RecurrentState<T> state = enc.final_state;
    std::vector<Tensor<T>> keys = attention_keys(m, enc);
    std::vector<std::int32_t> out;
    std::int32_t prev = Vocabulary::start_id;
    for (std::size_t step = 0; step < m.config.max_target_len; ++step) {
        std::vector<std::int32_t> ids{prev};
        Tensor<T> logits = decoder_step(m, keys, enc, ids, state);
        auto row = logits.values();
        std::size_t best = 0;
        for (std::size_t j = 1; j < row.size(); ++j)
            if (row[j] > row[best]) best = j;
        prev = static_cast<std::int32_t>(best);
        out.push_back(prev);
        if (prev == Vocabulary::end_id) break;
    }
    return out;
}

/// Normalize, encode, run the model greedily, and render the result.
template <class T>
std::string translate(Model<T>& model, const Vocabulary& source_vocab,
                      const Vocabulary& target_vocab, std::string_view sentence,
                      Script source_script) {
    std::string normalized = normalize_text(sentence, source_script);
    if (normalized.empty())
        throw ValueError("translate: sentence is empty after normalization");
    EncodedSequence seq =
        encode_sentence(source_vocab, normalized, model.config.max_source_len);
    BoundModel<T> m = bind(model);
    EncoderOutput<T> enc = encode<T>(m, std::span<const EncodedSequence>(&seq, 1));
    return decode_sequence(target_vocab, greedy_decode(m, enc));
}

}  // namespace s2s
