#pragma once

#include <cstdint>
#include <fstream>
#include <future>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "s2s/error.hpp"
#include "s2s/model.hpp"
#include "s2s/rng.hpp"
#include "s2s/text.hpp"
#include "s2s/train.hpp"

namespace s2s {

/// Mean and population standard deviation.
inline std::pair<double, double> summarize(std::span<const double> xs) {
    if (xs.empty()) throw ValueError("summarize: empty series");
    double sum = 0;
    for (double x : xs) sum += x;
    double mean = sum / static_cast<double>(xs.size());
    double sq = 0;
    for (double x : xs) sq += (x - mean) * (x - mean);
    return {mean, std::sqrt(sq / static_cast<double>(xs.size()))};
}

enum class SynthKind { copy, reverse, mapped_bilingual };

inline const char* synth_name(SynthKind k) {
    switch (k) {
        case SynthKind::copy: return "copy";
        case SynthKind::reverse: return "reverse";
        case SynthKind::mapped_bilingual: return "mapped-bilingual";
    }
    return "?";
}

inline SynthKind parse_synth(std::string_view name) {
    if (name == "copy") return SynthKind::copy;
    if (name == "reverse") return SynthKind::reverse;
    if (name == "mapped-bilingual") return SynthKind::mapped_bilingual;
    throw ValueError("unknown synthetic corpus kind '" + std::string(name) + "'");
}

struct SyntheticSpec {
    SynthKind kind = SynthKind::copy;
    std::size_t pairs = 64;
    std::size_t vocab = 20;      // distinct words per side
    std::size_t max_words = 4;   // sentence length drawn from 1..max_words
    std::uint64_t seed = 1;
};

namespace detail {

/// Lowercase base-26 suffix, so generated words pass English normalization.
inline std::string word_suffix(std::size_t i) {
    std::string s;
    do {
        s += static_cast<char>('a' + i % 26);
        i /= 26;
    } while (i > 0);
    return {s.rbegin(), s.rend()};
}

}  // namespace detail

///// Deterministic toy corpora with a known source-to-target relationship:
/// copy repeats the sentence, reverse flips word order, mapped-bilingual
/// applies a bijective word substitution and reverses the order.
inline ParallelCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
    if (spec.pairs < 1) throw ValueError("synthetic corpus: need at least one pair");
    if (spec.vocab < 5) throw ValueError("synthetic corpus: vocab must be >= 5");
    if (spec.max_words < 2) throw ValueError("synthetic corpus: max_words must be >= 2");

    std::vector<std::string> src_words(spec.vocab), tgt_words(spec.vocab);
    for (std::size_t i = 0; i < spec.vocab; ++i) {
        src_words[i] = "s" + detail::word_suffix(i);
        tgt_words[i] = "t" + detail::word_suffix(i);
    }
    Rng rng(spec.seed);
    std::vector<std::size_t> word_map(spec.vocab);
    for (std::size_t i = 0; i < spec.vocab; ++i) word_map[i] = i;
    rng.shuffle(word_map);

    ParallelCorpus corpus;
    corpus.pairs.reserve(spec.pairs);
    std::vector<std::size_t> picks;
    for (std::size_t p = 0; p < spec.pairs; ++p) {
        std::size_t words = 1 + rng.below(spec.max_words);
        picks.clear();
        for (std::size_t w = 0; w < words; ++w) picks.push_back(rng.below(spec.vocab));

        std::string src;
        for (std::size_t w : picks) {
            if (!src.empty()) src += ' ';
            src += src_words[w];
        }
        std::string tgt;
        auto append_tgt = [&tgt](const std::string& w) {
            if (!tgt.empty()) tgt += ' ';
            tgt += w;
        };
        switch (spec.kind) {
            case SynthKind::copy:
                tgt = src;
                break;
            case SynthKind::reverse:
                for (auto it = picks.rbegin(); it != picks.rend(); ++it)
                    append_tgt(src_words[*it]);
                break;
            case SynthKind::mapped_bilingual:
                for (auto it = picks.rbegin(); it != picks.rend(); ++it)
                    append_tgt(tgt_words[word_map[*it]]);
                break;
        }
        corpus.pairs.push_back({std::move(src), std::move(tgt)});
    }
    return corpus;
}

/// Where an experiment's sentences come from: a corpus file, or a generated
/// one when synthetic is set.
struct CorpusSpec {
    std::string path;
    Script source_script = Script::english;
    Script target_script = Script::bangla;
    std::optional<SyntheticSpec> synthetic;
};

/// Config fields a sweep row may override.
struct ConfigOverride {
    std::optional<CellKind> cell;
    std::optional<ActivationKind> encoder_activation;
    std::optional<ActivationKind> decoder_activation;
    std::optional<ActivationKind> attention_inner;
    std::optional<ActivationKind> attention_outer;

    ModelConfig apply(ModelConfig base) const {
        if (cell) base.cell = *cell;
        if (encoder_activation) base.encoder_activation = *encoder_activation;
        if (decoder_activation) base.decoder_activation = *decoder_activation;
        if (attention_inner) base.attention_inner = *attention_inner;
        if (attention_outer) base.attention_outer = *attention_outer;
        return base;
    }
};

struct SweepEntry {
    std::string label;
    ConfigOverride override;
};

struct ExperimentSpec {
    std::string study;
    ModelConfig base;  // vocab sizes and max lengths filled from the corpus
    CorpusSpec corpus;
    int epochs = 30;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
    AdamConfig adam;
    bool parallel = false;
    std::vector<SweepEntry> sweep;
};

struct ResultRow {
    std::string label;
    double mean_error = 0;
    double std_dev = 0;
    std::vector<double> per_epoch_losses;
    std::string error;  // non-empty when this row failed

    bool failed() const { return !error.empty(); }
};

/// Load or generate the corpus and fill the config's data-dependent fields
/// (vocabulary sizes; max lengths when left 0).
inline Dataset prepare_experiment_data(const ExperimentSpec& spec, ModelConfig& base,
                                       Vocabulary* source_out = nullptr,
                                       Vocabulary* target_out = nullptr) {
    ParallelCorpus corpus;
    if (spec.corpus.synthetic) {
        corpus = generate_synthetic_corpus(*spec.corpus.synthetic);
    } else {
        corpus = load_corpus(spec.corpus.path, spec.corpus.source_script,
                             spec.corpus.target_script)
                     .corpus;
    }
    std::vector<std::string> src_side, tgt_side;
    src_side.reserve(corpus.size());
    tgt_side.reserve(corpus.size());
    for (const auto& p : corpus.pairs) {
        src_side.push_back(p.source);
        tgt_side.push_back(p.target);
    }
    Vocabulary source = Vocabulary::build(src_side);
    Vocabulary target = Vocabulary::build(tgt_side);
    base.source_vocab_size = source.size();
    base.target_vocab_size = target.size();
    if (base.max_source_len == 0)
        base.max_source_len = longest_sentence_words(corpus, true) + 1;
    if (base.max_target_len == 0)
        base.max_target_len = longest_sentence_words(corpus, false) + 1;
    Dataset data = encode_corpus(corpus, source, target, base.max_source_len,
                                 base.max_target_len);
    if (source_out) *source_out = std::move(source);
    if (target_out) *target_out = std::move(target);
    return data;
}

namespace detail {

inline ResultRow run_row(const SweepEntry& entry, const ModelConfig& base, const Dataset& data,
                         const ExperimentSpec& spec) {
    ResultRow row;
    row.label = entry.label;
    try {
        ModelConfig cfg = entry.override.apply(base);
        Model<float> model = Model<float>::init(cfg, spec.seed);
        AdamOptimizer<float> opt(model.params, spec.adam);
        TrainLog log;
        for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
            double loss = train_epoch(model, data, opt, spec.seed, epoch, log,
                                      spec.batch_size, /*timing=*/false);
            row.per_epoch_losses.push_back(loss);
        }
        auto [mean, sd] = summarize(row.per_epoch_losses);
        row.mean_error = mean;
        row.std_dev = sd;
    } catch (const std::exception& e) {
        row.error = e.what();
        row.per_epoch_losses.clear();
    }
    return row;
}

}  // namespace detail

/// Train one model per sweep entry, every row starting from the same seed.
/// A failing row is captured in its ResultRow; the others still run. Output
/// order always follows the sweep order, parallel or not.
inline std::vector<ResultRow> run_sweep(const ExperimentSpec& spec) {
    if (spec.sweep.empty()) throw ValueError("experiment: empty sweep");
    if (spec.epochs < 1) throw ValueError("experiment: epochs must be >= 1");
    ModelConfig base = spec.base;
    Dataset data = prepare_experiment_data(spec, base);

    std::vector<ResultRow> rows(spec.sweep.size());
    if (spec.parallel) {
        std::vector<std::future<ResultRow>> futures;
        futures.reserve(spec.sweep.size());
        for (const auto& entry : spec.sweep)
            futures.push_back(std::async(std::launch::async, [&entry, &base, &data, &spec] {
                return detail::run_row(entry, base, data, spec);
            }));
        for (std::size_t i = 0; i < futures.size(); ++i) rows[i] = futures[i].get();
    } else {
        for (std::size_t i = 0; i < spec.sweep.size(); ++i)
            rows[i] = detail::run_row(spec.sweep[i], base, data, spec);
    }
    return rows;
}

/// Encoder/decoder activation grid (cells stay at the base setting).
inline std::vector<SweepEntry> activation_grid_sweep() {
    auto entry = [](const char* label, ActivationKind enc, ActivationKind dec) {
        SweepEntry e;
        e.label = label;
        e.override.encoder_activation = enc;
        e.override.decoder_activation = dec;
        return e;
    };
    using A = ActivationKind;
    return {entry("Linear-Linear", A::Linear, A::Linear),
            entry("Linear-Tanh", A::Linear, A::Tanh),
            entry("Tanh-Linear", A::Tanh, A::Linear),
            entry("Tanh-Tanh", A::Tanh, A::Tanh)};
}

/// Attention score/normalizer grid.
inline std::vector<SweepEntry> attention_grid_sweep() {
    auto entry = [](const char* label, ActivationKind inner, ActivationKind outer) {
        SweepEntry e;
        e.label = label;
        e.override.attention_inner = inner;
        e.override.attention_outer = outer;
        return e;
    };
    using A = ActivationKind;
    return {entry("Sigmoid-Softmax", A::Sigmoid, A::Softmax),
            entry("Sigmoid-Sigmoid", A::Sigmoid, A::Sigmoid),
            entry("Tanh-Softmax", A::Tanh, A::Softmax),
            entry("Tanh-Sigmoid", A::Tanh, A::Sigmoid)};
}

/// GRU against LSTM, both under the linear-encoder tanh-decoder setting.
inline std::vector<SweepEntry> cell_comparison_sweep() {
    auto entry = [](const char* label, CellKind cell) {
        SweepEntry e;
        e.label = label;
        e.override.cell = cell;
        e.override.encoder_activation = ActivationKind::Linear;
        e.override.decoder_activation = ActivationKind::Tanh;
        e.override.attention_inner = ActivationKind::Sigmoid;
        e.override.attention_outer = ActivationKind::Softmax;
        return e;
    };
    return {entry("GRU", CellKind::GRU), entry("LSTM", CellKind::LSTM)};
}

/// One long run summarized over its first and second halves.
struct EpochStudy {
    ResultRow row;
    double first_half_mean = 0, first_half_std = 0;
    double second_half_mean = 0, second_half_std = 0;

    bool second_half_improved() const { return second_half_mean < first_half_mean; }
};

inline EpochStudy run_epoch_study(ExperimentSpec spec) {
    if (spec.epochs < 2 || spec.epochs % 2 != 0)
        throw ValueError("epoch study: epochs must be even and >= 2");
    spec.sweep = {SweepEntry{"full-run", {}}};
    EpochStudy study;
    study.row = run_sweep(spec)[0];
    if (study.row.failed()) return study;
    std::span<const double> losses(study.row.per_epoch_losses);
    auto half = losses.size() / 2;
    std::tie(study.first_half_mean, study.first_half_std) = summarize(losses.first(half));
    std::tie(study.second_half_mean, study.second_half_std) = summarize(losses.subspan(half));
    return study;
}

/// Published values the report footers cite for comparison.
inline std::vector<std::string> paper_reference_lines(const std::string& study) {
    if (study == "activation-grid")
        return {"#paper_reference,Linear-Linear,0.805,0.787",
                "#paper_reference,Linear-Tanh,0.740,0.770",
                "#paper_reference,Tanh-Linear,0.783,0.781",
                "#paper_reference,Tanh-Tanh,0.799,0.790"};
    if (study == "attention-grid")
        return {"#paper_reference,best,Sigmoid-Softmax"};
    if (study == "cells")
        return {"#paper_reference,GRU,0.508", "#paper_reference,LSTM,0.602"};
    if (study == "epoch-study")
        return {"#paper_reference,first-half,0.506,0.680",
                "#paper_reference,second-half,0.107,0.003"};
    return {};
}

namespace detail {

inline std::string csv_safe(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

}  // namespace detail

/// Result table: one data row per sweep entry, then #losses footers with the
/// raw per-epoch series, #error footers for failed rows, and #paper_reference
/// footers citing the published numbers.
inline void write_report_csv(const std::string& path, std::span<const ResultRow> rows,
                             int epochs, const std::string& study) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write report file '" + path + "'");
    out << "label,mean_error,std_dev,epochs\n";
    for (const auto& r : rows) {
        if (r.failed()) continue;
        out << r.label << ',' << detail::format_double(r.mean_error, "%.12g") << ','
            << detail::format_double(r.std_dev, "%.12g") << ',' << epochs << '\n';
    }
    for (const auto& r : rows) {
        if (r.failed()) continue;
        out << "#losses," << r.label;
        for (double x : r.per_epoch_losses) out << ',' << detail::format_double(x, "%.12g");
        out << '\n';
    }
    for (const auto& r : rows)
        if (r.failed()) out << "#error," << r.label << ',' << detail::csv_safe(r.error) << '\n';
    for (const auto& line : paper_reference_lines(study)) out << line << '\n';
    if (!out) throw DataError("failed writing report file '" + path + "'");
}

/// Epoch-study variant: half-run summaries as the data rows.
inline void write_epoch_study_csv(const std::string& path, const EpochStudy& study,
                                  int epochs) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write report file '" + path + "'");
    out << "label,mean_error,std_dev,epochs\n";
    if (!study.row.failed()) {
        int half = epochs / 2;
        out << "first-half," << detail::format_double(study.first_half_mean, "%.12g") << ','
            << detail::format_double(study.first_half_std, "%.12g") << ',' << half << '\n';
        out << "second-half," << detail::format_double(study.second_half_mean, "%.12g") << ','
            << detail::format_double(study.second_half_std, "%.12g") << ',' << half << '\n';
        out << "#losses," << study.row.label;
        for (double x : study.row.per_epoch_losses)
            out << ',' << detail::format_double(x, "%.12g");
        out << '\n';
    } else {
        out << "#error," << study.row.label << ',' << detail::csv_safe(study.row.error) << '\n';
    }
    for (const auto& line : paper_reference_lines("epoch-study")) out << line << '\n';
    if (!out) throw DataError("failed writing report file '" + path + "'");
}

/// Machine-readable record of exactly what was run.
inline nlohmann::json experiment_to_json(const ExperimentSpec& spec) {
    nlohmann::json base{
        {"cell", cell_name(spec.base.cell)},
        {"embed_dim", spec.base.embed_dim},
        {"units", spec.base.units},
        {"encoder_activation", activation_name(spec.base.encoder_activation)},
        {"decoder_activation", activation_name(spec.base.decoder_activation)},
        {"attention_inner", activation_name(spec.base.attention_inner)},
        {"attention_outer", activation_name(spec.base.attention_outer)},
        {"max_source_len", spec.base.max_source_len},
        {"max_target_len", spec.base.max_target_len},
    };
    nlohmann::json corpus;
    if (spec.corpus.synthetic) {
        const auto& s = *spec.corpus.synthetic;
        corpus = {{"synthetic",
                   {{"kind", synth_name(s.kind)},
                    {"pairs", s.pairs},
                    {"vocab", s.vocab},
                    {"max_words", s.max_words},
                    {"seed", s.seed}}}};
    } else {
        corpus = {{"path", spec.corpus.path},
                  {"source_script", script_name(spec.corpus.source_script)},
                  {"target_script", script_name(spec.corpus.target_script)}};
    }
    nlohmann::json sweep = nlohmann::json::array();
    for (const auto& e : spec.sweep) {
        nlohmann::json o;
        if (e.override.cell) o["cell"] = cell_name(*e.override.cell);
        if (e.override.encoder_activation)
            o["encoder_activation"] = activation_name(*e.override.encoder_activation);
        if (e.override.decoder_activation)
            o["decoder_activation"] = activation_name(*e.override.decoder_activation);
        if (e.override.attention_inner)
            o["attention_inner"] = activation_name(*e.override.attention_inner);
        if (e.override.attention_outer)
            o["attention_outer"] = activation_name(*e.override.attention_outer);
        sweep.push_back({{"label", e.label}, {"override", o}});
    }
    return nlohmann::json{{"study", spec.study},       {"epochs", spec.epochs},
                          {"batch_size", spec.batch_size}, {"seed", spec.seed},
                          {"learning_rate", spec.adam.learning_rate},
                          {"parallel", spec.parallel}, {"base_config", base},
                          {"corpus", corpus},          {"sweep", sweep}};
}

inline void write_experiment_sidecar(const std::string& path, const ExperimentSpec& spec) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write experiment sidecar '" + path + "'");
    out << experiment_to_json(spec).dump(2) << '\n';
    if (!out) throw DataError("failed writing experiment sidecar '" + path + "'");
}

}  // namespace s2s
