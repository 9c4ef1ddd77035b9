#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include "s2s/experiment.hpp"
#include "s2s/text.hpp"

using s2s::ActivationKind;
using s2s::CellKind;
using s2s::ExperimentSpec;
using s2s::ModelConfig;
using s2s::ResultRow;
using s2s::SweepEntry;
using s2s::SyntheticSpec;
using s2s::SynthKind;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "s2s_experiment_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    return fields;
}

/// Small copy-task experiment that trains in well under a second per row.
ExperimentSpec tiny_spec() {
    ExperimentSpec spec;
    spec.study = "activation-grid";
    spec.base.cell = CellKind::GRU;
    spec.base.units = 6;
    spec.base.embed_dim = 4;
    SyntheticSpec synth;
    synth.kind = SynthKind::copy;
    synth.pairs = 12;
    synth.vocab = 6;
    synth.max_words = 3;
    synth.seed = 5;
    spec.corpus.synthetic = synth;
    spec.epochs = 3;
    spec.batch_size = 4;
    spec.seed = 3;
    spec.sweep = s2s::activation_grid_sweep();
    return spec;
}

}  // namespace

TEST_CASE("summarize returns the mean and population standard deviation") {
    std::vector<double> xs{1.0, 2.0, 3.0};
    auto [mean, sd] = s2s::summarize(xs);
    REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(2.0, 1e-15));
    REQUIRE_THAT(sd, Catch::Matchers::WithinAbs(0.816496580927726, 1e-12));
}

TEST_CASE("summarize of a single value has zero spread") {
    std::vector<double> xs{5.0};
    auto [mean, sd] = s2s::summarize(xs);
    REQUIRE(mean == 5.0);
    REQUIRE(sd == 0.0);
}

TEST_CASE("summarize of a constant series has zero spread") {
    std::vector<double> xs{7.25, 7.25, 7.25, 7.25};
    auto [mean, sd] = s2s::summarize(xs);
    REQUIRE(mean == 7.25);
    REQUIRE(sd == 0.0);
}

TEST_CASE("summarize rejects an empty series") {
    REQUIRE_THROWS_AS(s2s::summarize(std::vector<double>{}), s2s::ValueError);
}

TEST_CASE("synthetic corpus kinds round trip through their names") {
    for (auto kind : {SynthKind::copy, SynthKind::reverse, SynthKind::mapped_bilingual})
        REQUIRE(s2s::parse_synth(s2s::synth_name(kind)) == kind);
    REQUIRE_THROWS_AS(s2s::parse_synth("shuffle"), s2s::ValueError);
}

TEST_CASE("copy corpus repeats each source sentence as its target") {
    SyntheticSpec spec;
    spec.kind = SynthKind::copy;
    spec.pairs = 40;
    spec.vocab = 9;
    spec.max_words = 4;
    spec.seed = 11;
    auto corpus = s2s::generate_synthetic_corpus(spec);
    REQUIRE(corpus.size() == 40);
    for (const auto& p : corpus.pairs) {
        REQUIRE_FALSE(p.source.empty());
        REQUIRE(p.target == p.source);
    }
}

TEST_CASE("reverse corpus flips the word order of each sentence") {
    SyntheticSpec spec;
    spec.kind = SynthKind::reverse;
    spec.pairs = 40;
    spec.vocab = 7;
    spec.max_words = 5;
    spec.seed = 12;
    auto corpus = s2s::generate_synthetic_corpus(spec);
    for (const auto& p : corpus.pairs) {
        auto src = s2s::split_words(p.source);
        auto tgt = s2s::split_words(p.target);
        std::vector<std::string> reversed(src.rbegin(), src.rend());
        REQUIRE(tgt == reversed);
    }
}

TEST_CASE("mapped-bilingual corpus applies one bijective word map and reverses order") {
    SyntheticSpec spec;
    spec.kind = SynthKind::mapped_bilingual;
    spec.pairs = 120;
    spec.vocab = 8;
    spec.max_words = 4;
    spec.seed = 13;
    auto corpus = s2s::generate_synthetic_corpus(spec);

    std::map<std::string, std::string> mapping;
    for (const auto& p : corpus.pairs) {
        auto src = s2s::split_words(p.source);
        auto tgt = s2s::split_words(p.target);
        REQUIRE(src.size() == tgt.size());
        for (std::size_t i = 0; i < src.size(); ++i) {
            const auto& image = tgt[tgt.size() - 1 - i];
            auto [it, inserted] = mapping.emplace(src[i], image);
            if (!inserted) REQUIRE(it->second == image);
        }
    }
    std::set<std::string> images;
    for (const auto& [word, image] : mapping) {
        REQUIRE(word.starts_with("s"));
        REQUIRE(image.starts_with("t"));
        images.insert(image);
    }
    REQUIRE(images.size() == mapping.size());
}

TEST_CASE("synthetic sentences survive english normalization unchanged") {
    SyntheticSpec spec;
    spec.kind = SynthKind::mapped_bilingual;
    spec.pairs = 60;
    spec.vocab = 30;
    spec.max_words = 5;
    spec.seed = 14;
    auto corpus = s2s::generate_synthetic_corpus(spec);
    for (const auto& p : corpus.pairs) {
        REQUIRE(s2s::normalize_text(p.source, s2s::Script::english) == p.source);
        REQUIRE(s2s::normalize_text(p.target, s2s::Script::english) == p.target);
    }
}

TEST_CASE("synthetic corpus respects the sentence length bound") {
    SyntheticSpec spec;
    spec.pairs = 100;
    spec.vocab = 5;
    spec.max_words = 3;
    spec.seed = 15;
    auto corpus = s2s::generate_synthetic_corpus(spec);
    bool saw_multi = false;
    for (const auto& p : corpus.pairs) {
        auto words = s2s::split_words(p.source);
        REQUIRE(words.size() >= 1);
        REQUIRE(words.size() <= 3);
        saw_multi = saw_multi || words.size() > 1;
    }
    REQUIRE(saw_multi);
}

TEST_CASE("synthetic corpus is a pure function of its spec") {
    SyntheticSpec spec;
    spec.kind = SynthKind::mapped_bilingual;
    spec.pairs = 25;
    spec.vocab = 10;
    spec.max_words = 4;
    spec.seed = 21;
    auto a = s2s::generate_synthetic_corpus(spec);
    auto b = s2s::generate_synthetic_corpus(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a.pairs[i].source == b.pairs[i].source);
        REQUIRE(a.pairs[i].target == b.pairs[i].target);
    }
    spec.seed = 22;
    auto c = s2s::generate_synthetic_corpus(spec);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        differs = differs || a.pairs[i].source != c.pairs[i].source;
    REQUIRE(differs);
}

TEST_CASE("synthetic corpus validates its spec") {
    SyntheticSpec spec;
    spec.pairs = 0;
    REQUIRE_THROWS_AS(s2s::generate_synthetic_corpus(spec), s2s::ValueError);
    spec.pairs = 4;
    spec.vocab = 4;
    REQUIRE_THROWS_AS(s2s::generate_synthetic_corpus(spec), s2s::ValueError);
    spec.vocab = 5;
    spec.max_words = 1;
    REQUIRE_THROWS_AS(s2s::generate_synthetic_corpus(spec), s2s::ValueError);
    spec.max_words = 2;
    REQUIRE_NOTHROW(s2s::generate_synthetic_corpus(spec));
}

TEST_CASE("experiment data preparation fills the data-dependent config fields") {
    auto spec = tiny_spec();
    ModelConfig base = spec.base;
    s2s::Vocabulary source, target;
    auto data = s2s::prepare_experiment_data(spec, base, &source, &target);

    auto corpus = s2s::generate_synthetic_corpus(*spec.corpus.synthetic);
    REQUIRE(base.source_vocab_size == source.size());
    REQUIRE(base.target_vocab_size == target.size());
    REQUIRE(base.max_source_len == s2s::longest_sentence_words(corpus, true) + 1);
    REQUIRE(base.max_target_len == s2s::longest_sentence_words(corpus, false) + 1);
    REQUIRE(data.size() == corpus.size());
    for (const auto& p : corpus.pairs) {
        for (const auto& w : s2s::split_words(p.source))
            REQUIRE(source.id_of(w) != s2s::Vocabulary::unk_id);
        for (const auto& w : s2s::split_words(p.target))
            REQUIRE(target.id_of(w) != s2s::Vocabulary::unk_id);
    }
}

TEST_CASE("grid sweeps carry their published row labels in order") {
    auto activation = s2s::activation_grid_sweep();
    REQUIRE(activation.size() == 4);
    REQUIRE(activation[0].label == "Linear-Linear");
    REQUIRE(activation[1].label == "Linear-Tanh");
    REQUIRE(activation[2].label == "Tanh-Linear");
    REQUIRE(activation[3].label == "Tanh-Tanh");

    auto attention = s2s::attention_grid_sweep();
    REQUIRE(attention.size() == 4);
    REQUIRE(attention[0].label == "Sigmoid-Softmax");
    REQUIRE(attention[1].label == "Sigmoid-Sigmoid");
    REQUIRE(attention[2].label == "Tanh-Softmax");
    REQUIRE(attention[3].label == "Tanh-Sigmoid");

    auto cells = s2s::cell_comparison_sweep();
    REQUIRE(cells.size() == 2);
    REQUIRE(cells[0].label == "GRU");
    REQUIRE(cells[1].label == "LSTM");
    REQUIRE(cells[0].override.cell == CellKind::GRU);
    REQUIRE(cells[1].override.cell == CellKind::LSTM);
}

TEST_CASE("config overrides change only the fields they set") {
    ModelConfig base;
    base.cell = CellKind::GRU;
    base.units = 11;
    base.encoder_activation = ActivationKind::Tanh;
    s2s::ConfigOverride o;
    o.cell = CellKind::LSTM;
    o.decoder_activation = ActivationKind::Linear;
    auto cfg = o.apply(base);
    REQUIRE(cfg.cell == CellKind::LSTM);
    REQUIRE(cfg.decoder_activation == ActivationKind::Linear);
    REQUIRE(cfg.units == 11);
    REQUIRE(cfg.encoder_activation == ActivationKind::Tanh);
}

TEST_CASE("a sweep trains one model per entry and summarizes its loss curve") {
    auto spec = tiny_spec();
    auto rows = s2s::run_sweep(spec);

    REQUIRE(rows.size() == 4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        REQUIRE(rows[i].label == spec.sweep[i].label);
        REQUIRE_FALSE(rows[i].failed());
        REQUIRE(rows[i].per_epoch_losses.size() == 3);
        for (double x : rows[i].per_epoch_losses) {
            REQUIRE(std::isfinite(x));
            REQUIRE(x > 0.0);
        }
        auto [mean, sd] = s2s::summarize(rows[i].per_epoch_losses);
        REQUIRE(rows[i].mean_error == mean);
        REQUIRE(rows[i].std_dev == sd);
    }
    REQUIRE(rows[0].mean_error != rows[3].mean_error);
}

TEST_CASE("a sweep reruns to bitwise identical rows") {
    auto spec = tiny_spec();
    auto first = s2s::run_sweep(spec);
    auto second = s2s::run_sweep(spec);
    REQUIRE(first.size() == second.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        REQUIRE(first[i].mean_error == second[i].mean_error);
        REQUIRE(first[i].std_dev == second[i].std_dev);
        REQUIRE(first[i].per_epoch_losses == second[i].per_epoch_losses);
    }
}

TEST_CASE("parallel and sequential sweeps agree row for row") {
    auto spec = tiny_spec();
    spec.sweep.resize(2);
    auto sequential = s2s::run_sweep(spec);
    spec.parallel = true;
    auto parallel = s2s::run_sweep(spec);
    REQUIRE(parallel.size() == sequential.size());
    for (std::size_t i = 0; i < parallel.size(); ++i) {
        REQUIRE(parallel[i].label == sequential[i].label);
        REQUIRE(parallel[i].per_epoch_losses == sequential[i].per_epoch_losses);
    }
}

TEST_CASE("a sweep validates its spec") {
    auto spec = tiny_spec();
    spec.sweep.clear();
    REQUIRE_THROWS_AS(s2s::run_sweep(spec), s2s::ValueError);
    spec = tiny_spec();
    spec.epochs = 0;
    REQUIRE_THROWS_AS(s2s::run_sweep(spec), s2s::ValueError);
}

TEST_CASE("a failing row is captured without aborting the sweep") {
    auto spec = tiny_spec();
    spec.adam.learning_rate = std::nan("");
    std::vector<ResultRow> rows;
    REQUIRE_NOTHROW(rows = s2s::run_sweep(spec));
    REQUIRE(rows.size() == 4);
    for (const auto& r : rows) {
        REQUIRE(r.failed());
        REQUIRE_FALSE(r.error.empty());
        REQUIRE(r.per_epoch_losses.empty());
    }
}

TEST_CASE("an epoch study summarizes the two halves of one long run") {
    auto spec = tiny_spec();
    spec.study = "epoch-study";
    spec.epochs = 4;
    auto study = s2s::run_epoch_study(spec);

    REQUIRE_FALSE(study.row.failed());
    REQUIRE(study.row.label == "full-run");
    REQUIRE(study.row.per_epoch_losses.size() == 4);
    const auto& losses = study.row.per_epoch_losses;
    auto [m1, s1] = s2s::summarize(std::span<const double>(losses).first(2));
    auto [m2, s2] = s2s::summarize(std::span<const double>(losses).subspan(2));
    REQUIRE(study.first_half_mean == m1);
    REQUIRE(study.first_half_std == s1);
    REQUIRE(study.second_half_mean == m2);
    REQUIRE(study.second_half_std == s2);
    REQUIRE(study.second_half_improved() == (m2 < m1));
}

TEST_CASE("an epoch study needs an even epoch count") {
    auto spec = tiny_spec();
    spec.epochs = 5;
    REQUIRE_THROWS_AS(s2s::run_epoch_study(spec), s2s::ValueError);
    spec.epochs = 0;
    REQUIRE_THROWS_AS(s2s::run_epoch_study(spec), s2s::ValueError);
}

TEST_CASE("published comparison footers quote the reported numbers verbatim") {
    auto grid = s2s::paper_reference_lines("activation-grid");
    REQUIRE(grid == std::vector<std::string>{
                        "#paper_reference,Linear-Linear,0.805,0.787",
                        "#paper_reference,Linear-Tanh,0.740,0.770",
                        "#paper_reference,Tanh-Linear,0.783,0.781",
                        "#paper_reference,Tanh-Tanh,0.799,0.790"});
    REQUIRE(s2s::paper_reference_lines("attention-grid") ==
            std::vector<std::string>{"#paper_reference,best,Sigmoid-Softmax"});
    REQUIRE(s2s::paper_reference_lines("cells") ==
            std::vector<std::string>{"#paper_reference,GRU,0.508",
                                     "#paper_reference,LSTM,0.602"});
    REQUIRE(s2s::paper_reference_lines("epoch-study") ==
            std::vector<std::string>{"#paper_reference,first-half,0.506,0.680",
                                     "#paper_reference,second-half,0.107,0.003"});
    REQUIRE(s2s::paper_reference_lines("unknown-study").empty());
}

TEST_CASE("the report file lists rows, loss curves, failures, and references") {
    ResultRow ok;
    ok.label = "A";
    ok.mean_error = 1.5;
    ok.std_dev = 0.25;
    ok.per_epoch_losses = {2.0, 1.0};
    ResultRow bad;
    bad.label = "B";
    bad.error = "boom, line\nbad";
    std::vector<ResultRow> rows{ok, bad};

    auto path = temp_file("report.csv");
    s2s::write_report_csv(path.string(), rows, 2, "cells");
    auto lines = read_lines(path);

    REQUIRE(lines.size() == 6);
    REQUIRE(lines[0] == "label,mean_error,std_dev,epochs");
    REQUIRE(lines[1] == "A,1.5,0.25,2");
    REQUIRE(lines[2] == "#losses,A,2,1");
    REQUIRE(lines[3] == "#error,B,boom; line;bad");
    REQUIRE(lines[4] == "#paper_reference,GRU,0.508");
    REQUIRE(lines[5] == "#paper_reference,LSTM,0.602");
}

TEST_CASE("report summaries can be recomputed from the written loss curves") {
    auto spec = tiny_spec();
    auto rows = s2s::run_sweep(spec);
    auto path = temp_file("recompute.csv");
    s2s::write_report_csv(path.string(), rows, spec.epochs, spec.study);

    auto lines = read_lines(path);
    std::map<std::string, std::pair<double, double>> summaries;
    std::map<std::string, std::vector<double>> curves;
    for (const auto& line : lines) {
        auto fields = split_csv(line);
        if (fields[0] == "#losses") {
            std::vector<double> xs;
            for (std::size_t i = 2; i < fields.size(); ++i)
                xs.push_back(std::stod(fields[i]));
            curves[fields[1]] = xs;
        } else if (!fields[0].starts_with("#") && fields[0] != "label") {
            summaries[fields[0]] = {std::stod(fields[1]), std::stod(fields[2])};
        }
    }
    REQUIRE(summaries.size() == 4);
    REQUIRE(curves.size() == 4);
    for (const auto& [label, summary] : summaries) {
        REQUIRE(curves.count(label) == 1);
        auto [mean, sd] = s2s::summarize(curves[label]);
        REQUIRE_THAT(summary.first, Catch::Matchers::WithinAbs(mean, 1e-9));
        REQUIRE_THAT(summary.second, Catch::Matchers::WithinAbs(sd, 1e-9));
    }
}

TEST_CASE("the epoch study report carries both half summaries") {
    auto spec = tiny_spec();
    spec.study = "epoch-study";
    spec.epochs = 4;
    auto study = s2s::run_epoch_study(spec);
    auto path = temp_file("epoch_study.csv");
    s2s::write_epoch_study_csv(path.string(), study, spec.epochs);

    auto lines = read_lines(path);
    REQUIRE(lines.size() == 6);
    REQUIRE(lines[0] == "label,mean_error,std_dev,epochs");
    REQUIRE(split_csv(lines[1])[0] == "first-half");
    REQUIRE(split_csv(lines[1])[3] == "2");
    REQUIRE(split_csv(lines[2])[0] == "second-half");
    REQUIRE(split_csv(lines[2])[3] == "2");
    REQUIRE(split_csv(lines[3])[0] == "#losses");
    REQUIRE(split_csv(lines[3])[1] == "full-run");
    REQUIRE(split_csv(lines[3]).size() == 6);
    REQUIRE(lines[4] == "#paper_reference,first-half,0.506,0.680");
    REQUIRE(lines[5] == "#paper_reference,second-half,0.107,0.003");
}

TEST_CASE("the experiment sidecar records the full run configuration") {
    auto spec = tiny_spec();
    auto path = temp_file("sidecar.json");
    s2s::write_experiment_sidecar(path.string(), spec);

    std::ifstream in(path, std::ios::binary);
    auto j = nlohmann::json::parse(in);
    REQUIRE(j["study"] == "activation-grid");
    REQUIRE(j["epochs"] == 3);
    REQUIRE(j["batch_size"] == 4);
    REQUIRE(j["seed"] == 3);
    REQUIRE(j["parallel"] == false);
    REQUIRE(j["base_config"]["cell"] == "gru");
    REQUIRE(j["base_config"]["units"] == 6);
    REQUIRE(j["corpus"]["synthetic"]["kind"] == "copy");
    REQUIRE(j["corpus"]["synthetic"]["pairs"] == 12);
    REQUIRE(j["sweep"].size() == 4);
    REQUIRE(j["sweep"][0]["label"] == "Linear-Linear");
    REQUIRE(j["sweep"][0]["override"]["encoder_activation"] == "linear");
}
