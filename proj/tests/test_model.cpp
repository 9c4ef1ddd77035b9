#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "s2s/model.hpp"
#include "s2s/ops.hpp"
#include "s2s/tape.hpp"
#include "s2s/train.hpp"

using s2s::ActivationKind;
using s2s::CellKind;
using s2s::GateTensors;
using s2s::ModelConfig;
using s2s::Tensor;

namespace {

ModelConfig tiny_config(CellKind cell = CellKind::GRU) {
    ModelConfig cfg;
    cfg.cell = cell;
    cfg.units = 3;
    cfg.embed_dim = 2;
    cfg.source_vocab_size = 8;
    cfg.target_vocab_size = 7;
    cfg.max_source_len = 4;
    cfg.max_target_len = 4;
    return cfg;
}

std::vector<GateTensors<double>> zero_gates(std::size_t count, std::size_t in_dim,
                                            std::size_t units) {
    std::vector<GateTensors<double>> gates;
    for (std::size_t g = 0; g < count; ++g)
        gates.push_back({Tensor<double>::zeros({in_dim, units}),
                         Tensor<double>::zeros({units, units}),
                         Tensor<double>::zeros({units})});
    return gates;
}

s2s::EncodedSequence seq_of(std::vector<std::int32_t> ids) {
    s2s::EncodedSequence s;
    s.ids = std::move(ids);
    s.true_length = s.ids.size();
    for (std::size_t i = 0; i < s.ids.size(); ++i)
        if (s.ids[i] == 0) {
            s.true_length = i;
            break;
        }
    return s;
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("cell names parse and round-trip") {
    REQUIRE(s2s::parse_cell("gru") == CellKind::GRU);
    REQUIRE(s2s::parse_cell("lstm") == CellKind::LSTM);
    REQUIRE(std::string(s2s::cell_name(CellKind::LSTM)) == "lstm");
    REQUIRE_THROWS_AS(s2s::parse_cell("rnn"), s2s::ValueError);
}

TEST_CASE("config validation rejects each bad field") {
    REQUIRE_NOTHROW(tiny_config().validate());
    auto bad = tiny_config();
    bad.units = 0;
    REQUIRE_THROWS_AS(bad.validate(), s2s::ValueError);
    bad = tiny_config();
    bad.source_vocab_size = 4;
    REQUIRE_THROWS_AS(bad.validate(), s2s::ValueError);
    bad = tiny_config();
    bad.max_target_len = 1;
    REQUIRE_THROWS_AS(bad.validate(), s2s::ValueError);
    bad = tiny_config();
    bad.encoder_activation = ActivationKind::Softmax;
    REQUIRE_THROWS_AS(bad.validate(), s2s::ValueError);
    bad = tiny_config();
    bad.attention_inner = ActivationKind::Linear;
    REQUIRE_THROWS_AS(bad.validate(), s2s::ValueError);
    bad = tiny_config();
    bad.attention_outer = ActivationKind::Tanh;
    REQUIRE_THROWS_AS(bad.validate(), s2s::ValueError);
}

TEST_CASE("model init is seed-deterministic with zero biases") {
    auto a = s2s::Model<float>::init(tiny_config(), 5);
    auto b = s2s::Model<float>::init(tiny_config(), 5);
    auto c = s2s::Model<float>::init(tiny_config(), 6);
    REQUIRE(a.params.size() == 25);  // embeds(2) + 2*3 gates*3 + attention(3) + head(2)
    bool any_diff = false;
    for (const auto& [name, value] : a.params) {
        const auto& bv = b.params.get(name);
        REQUIRE(value.same_shape(bv));
        for (std::size_t i = 0; i < value.numel(); ++i) REQUIRE(value[i] == bv[i]);
        const auto& cv = c.params.get(name);
        for (std::size_t i = 0; i < value.numel(); ++i)
            if (value[i] != cv[i]) any_diff = true;
        if (name.ends_with(".b") || name == "out.bias")
            for (std::size_t i = 0; i < value.numel(); ++i) REQUIRE(value[i] == 0.0f);
    }
    REQUIRE(any_diff);

    auto l = s2s::Model<float>::init(tiny_config(CellKind::LSTM), 5);
    REQUIRE(l.params.size() == 31);  // one extra gate per side
}

TEST_CASE("model init respects the fan-based uniform bound") {
    auto m = s2s::Model<float>::init(tiny_config(), 9);
    const auto& w = m.params.get("att.enc_proj");  // (units, units)
    float limit = std::sqrt(6.0f / 6.0f);
    for (float v : w.values()) {
        REQUIRE(v >= -limit);
        REQUIRE(v <= limit);
    }
    const auto& e = m.params.get("enc.embed");  // (8, 2)
    float elimit = std::sqrt(6.0f / 10.0f);
    for (float v : e.values()) {
        REQUIRE(v >= -elimit);
        REQUIRE(v <= elimit);
    }
}

TEST_CASE("parameter store preserves insertion order and rejects duplicates") {
    s2s::ParameterStore<float> store;
    store.add("b", Tensor<float>::zeros({1}));
    store.add("a", Tensor<float>::zeros({1}));
    std::vector<std::string> names;
    for (const auto& [name, value] : store) names.push_back(name);
    REQUIRE(names == std::vector<std::string>{"b", "a"});
    REQUIRE_THROWS_AS(store.add("a", Tensor<float>::zeros({1})), s2s::ValueError);
    REQUIRE_THROWS_AS(store.get("missing"), s2s::ValueError);
    REQUIRE(store.has("a"));
    REQUIRE_FALSE(store.has("z"));
}

TEST_CASE("zero-parameter GRU halves the previous hidden state") {
    auto gates = zero_gates(3, 2, 3);
    Tensor<double> x({1, 2}, {0.7, -1.2});
    Tensor<double> h({1, 3}, {0.4, -0.8, 1.6});
    for (auto act : {ActivationKind::Linear, ActivationKind::Tanh}) {
        Tensor<double> out = s2s::gru_cell_step(gates, x, h, act);
        REQUIRE(out.at(0, 0) == 0.2);
        REQUIRE(out.at(0, 1) == -0.4);
        REQUIRE(out.at(0, 2) == 0.8);
    }
    REQUIRE_THROWS_AS(s2s::gru_cell_step(zero_gates(2, 2, 3), x, h, ActivationKind::Tanh),
                      s2s::ValueError);
}

TEST_CASE("zero-parameter LSTM halves the cell and gates the output") {
    auto gates = zero_gates(4, 2, 3);
    Tensor<double> x({1, 2}, {0.3, 0.9});
    Tensor<double> h({1, 3}, {1.0, -1.0, 0.5});
    Tensor<double> c({1, 3}, {0.4, -0.8, 1.6});
    auto [h2, c2] = s2s::lstm_cell_step(gates, x, h, c, ActivationKind::Tanh);
    for (std::size_t j = 0; j < 3; ++j) {
        REQUIRE(c2.at(0, j) == Catch::Approx(0.5 * c.at(0, j)).margin(1e-15));
        REQUIRE(h2.at(0, j) ==
                Catch::Approx(0.5 * std::tanh(0.5 * c.at(0, j))).margin(1e-12));
    }
    REQUIRE_THROWS_AS(
        s2s::lstm_cell_step(zero_gates(3, 2, 3), x, h, c, ActivationKind::Tanh),
        s2s::ValueError);
}

TEST_CASE("one-unit GRU matches a scalar re-derivation") {
    std::vector<GateTensors<double>> gates;
    for (int g = 0; g < 3; ++g)
        gates.push_back({Tensor<double>({1, 1}, {0.1}), Tensor<double>({1, 1}, {0.2}),
                         Tensor<double>({1}, {0.3})});
    Tensor<double> x({1, 1}, {2.0});
    Tensor<double> h({1, 1}, {3.0});
    double z = sigmoid_ref(0.1 * 2 + 0.2 * 3 + 0.3);
    double r = z;
    double cand = std::tanh(0.1 * 2 + (r * 3) * 0.2 + 0.3);
    double expected = z * 3 + (1 - z) * cand;
    Tensor<double> out = s2s::gru_cell_step(gates, x, h, ActivationKind::Tanh);
    REQUIRE(out.item() == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("one-unit LSTM matches a scalar re-derivation") {
    std::vector<GateTensors<double>> gates;
    for (int g = 0; g < 4; ++g)
        gates.push_back({Tensor<double>({1, 1}, {0.1}), Tensor<double>({1, 1}, {0.2}),
                         Tensor<double>({1}, {0.3})});
    Tensor<double> x({1, 1}, {2.0});
    Tensor<double> h({1, 1}, {3.0});
    Tensor<double> c({1, 1}, {4.0});
    double gate = sigmoid_ref(0.1 * 2 + 0.2 * 3 + 0.3);
    double cand = std::tanh(0.1 * 2 + 0.2 * 3 + 0.3);
    double c2 = gate * 4 + gate * cand;
    double h2 = gate * std::tanh(c2);
    auto [hh, cc] = s2s::lstm_cell_step(gates, x, h, c, ActivationKind::Tanh);
    REQUIRE(cc.item() == Catch::Approx(c2).margin(1e-12));
    REQUIRE(hh.item() == Catch::Approx(h2).margin(1e-12));
}

TEST_CASE("tanh GRU keeps hidden states inside the unit box") {
    s2s::Rng rng(55);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<GateTensors<double>> gates;
        for (int g = 0; g < 3; ++g)
            gates.push_back({Tensor<double>::uniform({2, 3}, 2.0, rng),
                             Tensor<double>::uniform({3, 3}, 2.0, rng),
                             Tensor<double>::uniform({3}, 2.0, rng)});
        Tensor<double> h = Tensor<double>::uniform({2, 3}, 1.0, rng);
        for (int step = 0; step < 5; ++step) {
            Tensor<double> x = Tensor<double>::uniform({2, 2}, 3.0, rng);
            h = s2s::gru_cell_step(gates, x, h, ActivationKind::Tanh);
            for (double v : h.values()) {
                REQUIRE(v >= -1.0);
                REQUIRE(v <= 1.0);
            }
        }
    }
}

TEST_CASE("encoder emits one state per position and masks padding") {
    auto model = s2s::Model<float>::init(tiny_config(), 21);
    auto bound = s2s::bind(model);
    std::vector<s2s::EncodedSequence> batch{seq_of({4, 5, 2, 0}), seq_of({6, 2, 0, 0})};
    auto enc = s2s::encode<float>(bound, batch);
    REQUIRE(enc.states.size() == 4);
    REQUIRE(enc.final_state.hidden.shape() == (s2s::Shape{2, 3}));
    REQUIRE(enc.mask.shape() == (s2s::Shape{2, 4}));
    float expected_mask[2][4] = {{1, 1, 1, 0}, {1, 1, 0, 0}};
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t t = 0; t < 4; ++t) REQUIRE(enc.mask.at(i, t) == expected_mask[i][t]);
}

TEST_CASE("encoder rows are independent of their batch mates") {
    auto model = s2s::Model<float>::init(tiny_config(), 22);
    auto bound = s2s::bind(model);
    std::vector<s2s::EncodedSequence> pairb{seq_of({4, 5, 2, 0}), seq_of({7, 6, 5, 2})};
    std::vector<s2s::EncodedSequence> solo{pairb[0]};
    auto enc2 = s2s::encode<float>(bound, pairb);
    auto enc1 = s2s::encode<float>(bound, solo);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t j = 0; j < 3; ++j)
            REQUIRE(enc1.states[t].at(0, j) == enc2.states[t].at(0, j));
}

TEST_CASE("encoder rejects empty and ragged batches") {
    auto model = s2s::Model<float>::init(tiny_config(), 23);
    auto bound = s2s::bind(model);
    std::vector<s2s::EncodedSequence> empty;
    REQUIRE_THROWS_AS(s2s::encode<float>(bound, empty), s2s::ValueError);
    std::vector<s2s::EncodedSequence> ragged{seq_of({4, 2}), seq_of({4, 5, 2})};
    REQUIRE_THROWS_AS(s2s::encode<float>(bound, ragged), s2s::ValueError);
}

TEST_CASE("attention with zero parameters averages the unmasked states") {
    s2s::BoundModel<double> m;
    m.config = tiny_config();
    m.att_enc_proj = Tensor<double>::zeros({3, 3});
    m.att_dec_proj = Tensor<double>::zeros({3, 3});
    m.att_score = Tensor<double>::zeros({3, 1});
    s2s::EncoderOutput<double> enc;
    enc.states = {Tensor<double>({1, 3}, {1, 2, 3}), Tensor<double>({1, 3}, {5, 6, 7}),
                  Tensor<double>({1, 3}, {9, 9, 9})};
    enc.mask = Tensor<double>({1, 3}, {1, 1, 0});
    Tensor<double> query({1, 3}, {0.2, -0.4, 0.6});
    auto out = s2s::attention(m, enc, query);
    REQUIRE(out.weights.at(0, 0) == 0.5);
    REQUIRE(out.weights.at(0, 1) == 0.5);
    REQUIRE(out.weights.at(0, 2) == 0.0);
    REQUIRE(out.context.at(0, 0) == Catch::Approx(3.0).margin(1e-12));
    REQUIRE(out.context.at(0, 1) == Catch::Approx(4.0).margin(1e-12));
    REQUIRE(out.context.at(0, 2) == Catch::Approx(5.0).margin(1e-12));
}

TEST_CASE("attention over a single live position returns that state") {
    s2s::Rng rng(77);
    s2s::BoundModel<double> m;
    m.config = tiny_config();
    m.att_enc_proj = Tensor<double>::uniform({3, 3}, 1.0, rng);
    m.att_dec_proj = Tensor<double>::uniform({3, 3}, 1.0, rng);
    m.att_score = Tensor<double>::uniform({3, 1}, 1.0, rng);
    s2s::EncoderOutput<double> enc;
    enc.states = {Tensor<double>::uniform({1, 3}, 1.0, rng),
                  Tensor<double>::uniform({1, 3}, 1.0, rng),
                  Tensor<double>::uniform({1, 3}, 1.0, rng)};
    enc.mask = Tensor<double>({1, 3}, {0, 1, 0});
    auto out = s2s::attention(m, enc, Tensor<double>::uniform({1, 3}, 1.0, rng));
    REQUIRE(out.weights.at(0, 1) == 1.0);
    REQUIRE(out.weights.at(0, 0) == 0.0);
    REQUIRE(out.weights.at(0, 2) == 0.0);
    for (std::size_t j = 0; j < 3; ++j)
        REQUIRE(out.context.at(0, j) == enc.states[1].at(0, j));
}

TEST_CASE("softmax attention weights form a convex combination") {
    s2s::Rng rng(78);
    for (int rep = 0; rep < 20; ++rep) {
        s2s::BoundModel<double> m;
        m.config = tiny_config();
        m.config.attention_inner =
            rng.below(2) ? ActivationKind::Tanh : ActivationKind::Sigmoid;
        m.att_enc_proj = Tensor<double>::uniform({3, 3}, 1.5, rng);
        m.att_dec_proj = Tensor<double>::uniform({3, 3}, 1.5, rng);
        m.att_score = Tensor<double>::uniform({3, 1}, 1.5, rng);
        s2s::EncoderOutput<double> enc;
        std::size_t L = 2 + rng.below(3);
        for (std::size_t t = 0; t < L; ++t)
            enc.states.push_back(Tensor<double>::uniform({2, 3}, 2.0, rng));
        enc.mask = Tensor<double>({2, L});
        for (std::size_t i = 0; i < 2; ++i) {
            enc.mask.at(i, 0) = 1.0;
            for (std::size_t t = 1; t < L; ++t) enc.mask.at(i, t) = rng.below(2) ? 1.0 : 0.0;
        }
        auto out = s2s::attention(m, enc, Tensor<double>::uniform({2, 3}, 1.0, rng));
        for (std::size_t i = 0; i < 2; ++i) {
            double sum = 0;
            for (std::size_t t = 0; t < L; ++t) {
                double w = out.weights.at(i, t);
                if (enc.mask.at(i, t) == 0.0) REQUIRE(w == 0.0);
                REQUIRE(w >= 0.0);
                REQUIRE(w <= 1.0);
                sum += w;
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
            for (std::size_t j = 0; j < 3; ++j) {
                double lo = 1e18, hi = -1e18;
                for (std::size_t t = 0; t < L; ++t) {
                    if (enc.mask.at(i, t) == 0.0) continue;
                    lo = std::min(lo, enc.states[t].at(i, j));
                    hi = std::max(hi, enc.states[t].at(i, j));
                }
                REQUIRE(out.context.at(i, j) >= lo - 1e-9);
                REQUIRE(out.context.at(i, j) <= hi + 1e-9);
            }
        }
    }
}

TEST_CASE("sigmoid attention zeroes pads without normalizing") {
    s2s::Rng rng(79);
    s2s::BoundModel<double> m;
    m.config = tiny_config();
    m.config.attention_outer = ActivationKind::Sigmoid;
    m.att_enc_proj = Tensor<double>::uniform({3, 3}, 1.0, rng);
    m.att_dec_proj = Tensor<double>::uniform({3, 3}, 1.0, rng);
    m.att_score = Tensor<double>::uniform({3, 1}, 1.0, rng);
    s2s::EncoderOutput<double> enc;
    enc.states = {Tensor<double>::uniform({1, 3}, 1.0, rng),
                  Tensor<double>::uniform({1, 3}, 1.0, rng)};
    enc.mask = Tensor<double>({1, 2}, {1, 0});
    auto out = s2s::attention(m, enc, Tensor<double>::uniform({1, 3}, 1.0, rng));
    REQUIRE(out.weights.at(0, 1) == 0.0);
    REQUIRE(out.weights.at(0, 0) > 0.0);
    REQUIRE(out.weights.at(0, 0) < 1.0);
}

TEST_CASE("decoder with zero output head produces zero logits") {
    auto model = s2s::Model<float>::init(tiny_config(), 31);
    auto& w = model.params.get("out.weight");
    for (auto& v : w.values()) v = 0.0f;
    auto bound = s2s::bind(model);
    std::vector<s2s::EncodedSequence> batch{seq_of({4, 2, 0, 0})};
    auto enc = s2s::encode<float>(bound, batch);
    auto keys = s2s::attention_keys(bound, enc);
    s2s::RecurrentState<float> state = enc.final_state;
    std::vector<std::int32_t> prev{s2s::Vocabulary::start_id};
    Tensor<float> logits = s2s::decoder_step(bound, keys, enc, prev, state);
    REQUIRE(logits.shape() == (s2s::Shape{1, 7}));
    for (float v : logits.values()) REQUIRE(v == 0.0f);
}

TEST_CASE("swapping the cell kind changes no shapes at module boundaries") {
    auto gru = s2s::Model<float>::init(tiny_config(CellKind::GRU), 36);
    auto lstm = s2s::Model<float>::init(tiny_config(CellKind::LSTM), 36);
    std::vector<s2s::EncodedSequence> batch{seq_of({4, 2, 5, 0}), seq_of({6, 0, 0, 0})};
    std::vector<std::int32_t> prev{s2s::Vocabulary::start_id, s2s::Vocabulary::start_id};
    auto run = [&](s2s::Model<float>& model) {
        auto bound = s2s::bind(model);
        auto enc = s2s::encode<float>(bound, batch);
        auto keys = s2s::attention_keys(bound, enc);
        s2s::RecurrentState<float> state = enc.final_state;
        auto att = s2s::attention_with_keys(bound, keys, enc, state.hidden);
        Tensor<float> logits = s2s::decoder_step(bound, keys, enc, prev, state);
        std::vector<s2s::Shape> shapes;
        shapes.push_back(enc.mask.shape());
        shapes.push_back(enc.final_state.hidden.shape());
        shapes.push_back(att.weights.shape());
        shapes.push_back(att.context.shape());
        shapes.push_back(logits.shape());
        for (const auto& s : enc.states) shapes.push_back(s.shape());
        return shapes;
    };
    REQUIRE(run(gru) == run(lstm));
}

TEST_CASE("greedy decode breaks logit ties toward the lowest id") {
    auto model = s2s::Model<float>::init(tiny_config(), 32);
    for (auto& [name, value] : model.params)
        for (auto& v : value.values()) v = 0.0f;
    auto bound = s2s::bind(model);
    std::vector<s2s::EncodedSequence> batch{seq_of({4, 2, 0, 0})};
    auto enc = s2s::encode<float>(bound, batch);
    auto ids = s2s::greedy_decode(bound, enc);
    REQUIRE(ids.size() == 4);  // never hits the end token, stops at max length
    for (auto id : ids) REQUIRE(id == 0);
}

TEST_CASE("greedy decode requires a single sequence") {
    auto model = s2s::Model<float>::init(tiny_config(), 33);
    auto bound = s2s::bind(model);
    std::vector<s2s::EncodedSequence> batch{seq_of({4, 2, 0, 0}), seq_of({5, 2, 0, 0})};
    auto enc = s2s::encode<float>(bound, batch);
    REQUIRE_THROWS_AS(s2s::greedy_decode(bound, enc), s2s::ValueError);
}

TEST_CASE("translate is total on unseen words and bounded in length") {
    std::vector<std::string> src_side{"alpha beta gamma", "alpha beta", "alpha"};
    std::vector<std::string> tgt_side{"un deux trois", "un deux", "un"};
    auto sv = s2s::Vocabulary::build(src_side);
    auto tv = s2s::Vocabulary::build(tgt_side);
    ModelConfig cfg = tiny_config();
    cfg.source_vocab_size = sv.size();
    cfg.target_vocab_size = tv.size();
    auto model = s2s::Model<float>::init(cfg, 40);

    std::string a = s2s::translate(model, sv, tv, "Alpha UNSEEN beta!!", s2s::Script::english);
    std::string b = s2s::translate(model, sv, tv, "alpha unseen beta", s2s::Script::english);
    REQUIRE(a == b);
    REQUIRE(s2s::split_words(a).size() <= cfg.max_target_len);
    REQUIRE_THROWS_AS(s2s::translate(model, sv, tv, "123 !!!", s2s::Script::english),
                      s2s::ValueError);
}

TEST_CASE("every parameter receives gradient from the teacher-forced loss") {
    for (auto cell : {CellKind::GRU, CellKind::LSTM}) {
        auto model = s2s::Model<float>::init(tiny_config(cell), 50);
        std::vector<s2s::EncodedPair> batch{
            {seq_of({4, 5, 2, 0}), seq_of({4, 2, 0, 0})},
            {seq_of({6, 2, 0, 0}), seq_of({5, 6, 2, 0})}};
        s2s::Tape<float> tape;
        auto bound = s2s::bind(model, &tape);
        auto loss = s2s::teacher_forced_loss<float>(bound, batch);
        auto grads = tape.backward(loss);
        REQUIRE(grads.size() == model.params.size());
        for (const auto& [name, g] : grads) {
            bool any = false;
            for (float v : g.values()) any = any || v != 0.0f;
            INFO("parameter " << name);
            REQUIRE(any);
        }
    }
}

TEST_CASE("loss decreases after a few optimizer steps on one example") {
    auto model = s2s::Model<float>::init(tiny_config(), 60);
    std::vector<s2s::EncodedPair> batch{{seq_of({4, 5, 2, 0}), seq_of({6, 4, 2, 0})}};
    s2s::AdamConfig adam;
    adam.learning_rate = 0.02;
    s2s::AdamOptimizer<float> opt(model.params, adam);
    float first = 0, last = 0;
    for (int step = 0; step < 50; ++step) {
        s2s::Tape<float> tape;
        auto bound = s2s::bind(model, &tape);
        auto loss = s2s::teacher_forced_loss<float>(bound, batch);
        if (step == 0) first = loss.item();
        last = loss.item();
        opt.step(model.params, tape.backward(loss));
    }
    REQUIRE(last < first * 0.5f);
}
