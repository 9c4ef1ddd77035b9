// Command-line front end: prep -> train -> translate workflows plus the
// experiment harness. Exit codes: 0 success, 1 usage, 2 data error,
// 3 runtime/numeric error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "s2s/s2s.hpp"

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kFullUnits = 1024;
constexpr std::size_t kFullEmbed = 256;
constexpr std::size_t kFullBatch = 64;
constexpr std::size_t kDeskUnits = 64;
constexpr std::size_t kDeskEmbed = 32;
constexpr std::size_t kDeskBatch = 16;

struct ModelFlags {
    std::string cell = "gru";
    std::size_t units = kFullUnits;
    std::size_t embed = kFullEmbed;
    std::string encoder_activation = "linear";
    std::string decoder_activation = "tanh";
    std::string attention_inner = "sigmoid";
    std::string attention_outer = "softmax";

    void fill(s2s::ModelConfig& cfg) const {
        cfg.cell = s2s::parse_cell(cell);
        cfg.units = units;
        cfg.embed_dim = embed;
        cfg.encoder_activation = s2s::parse_activation(encoder_activation);
        cfg.decoder_activation = s2s::parse_activation(decoder_activation);
        cfg.attention_inner = s2s::parse_activation(attention_inner);
        cfg.attention_outer = s2s::parse_activation(attention_outer);
    }
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
    cmd->add_option("--cell", mf.cell, "Recurrent cell kind")
        ->check(CLI::IsMember({"gru", "lstm"}))
        ->capture_default_str();
    cmd->add_option("--units", mf.units, "Recurrent state width")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--embed-dim", mf.embed, "Embedding width")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--encoder-activation", mf.encoder_activation, "Encoder cell activation")
        ->check(CLI::IsMember({"linear", "tanh"}))
        ->capture_default_str();
    cmd->add_option("--decoder-activation", mf.decoder_activation, "Decoder cell activation")
        ->check(CLI::IsMember({"linear", "tanh"}))
        ->capture_default_str();
    cmd->add_option("--attention-inner", mf.attention_inner, "Attention score activation")
        ->check(CLI::IsMember({"sigmoid", "tanh"}))
        ->capture_default_str();
    cmd->add_option("--attention-outer", mf.attention_outer, "Attention weight normalizer")
        ->check(CLI::IsMember({"softmax", "sigmoid"}))
        ->capture_default_str();
}

/// Desk preset rescales whatever the user did not set explicitly.
void apply_preset(CLI::App* cmd, const std::string& preset, ModelFlags& mf,
                  std::size_t* batch) {
    if (preset != "desk") return;
    if (!cmd->count("--units")) mf.units = kDeskUnits;
    if (!cmd->count("--embed-dim")) mf.embed = kDeskEmbed;
    if (batch && !cmd->count("--batch")) *batch = kDeskBatch;
}

void echo_kv(std::ostream& out, const char* key, const std::string& value) {
    out << key << '=' << value << '\n';
}

void echo_model(std::ostream& out, const s2s::ModelConfig& cfg) {
    echo_kv(out, "cell", s2s::cell_name(cfg.cell));
    echo_kv(out, "units", std::to_string(cfg.units));
    echo_kv(out, "embed_dim", std::to_string(cfg.embed_dim));
    echo_kv(out, "encoder_activation", s2s::activation_name(cfg.encoder_activation));
    echo_kv(out, "decoder_activation", s2s::activation_name(cfg.decoder_activation));
    echo_kv(out, "attention_inner", s2s::activation_name(cfg.attention_inner));
    echo_kv(out, "attention_outer", s2s::activation_name(cfg.attention_outer));
    echo_kv(out, "source_vocab_size", std::to_string(cfg.source_vocab_size));
    echo_kv(out, "target_vocab_size", std::to_string(cfg.target_vocab_size));
    echo_kv(out, "max_source_len", std::to_string(cfg.max_source_len));
    echo_kv(out, "max_target_len", std::to_string(cfg.max_target_len));
}

std::string fmt(double x) { return s2s::detail::format_double(x, "%.12g"); }

// ---------------------------------------------------------------- prep ----

struct PrepArgs {
    std::string corpus;
    std::string out_dir;
    std::string source_script = "english";
    std::string target_script = "bangla";
    std::size_t max_source_len = 0;  // 0 = longest sentence + end token
    std::size_t max_target_len = 0;
    std::uint64_t seed = 1;
};

int cmd_prep(const PrepArgs& a) {
    auto loaded = s2s::load_corpus(a.corpus, s2s::parse_script(a.source_script),
                                   s2s::parse_script(a.target_script));
    const s2s::ParallelCorpus& corpus = loaded.corpus;

    std::vector<std::string> src_side, tgt_side;
    for (const auto& p : corpus.pairs) {
        src_side.push_back(p.source);
        tgt_side.push_back(p.target);
    }
    s2s::Vocabulary source = s2s::Vocabulary::build(src_side);
    s2s::Vocabulary target = s2s::Vocabulary::build(tgt_side);

    std::size_t max_src_words = s2s::longest_sentence_words(corpus, true);
    std::size_t max_tgt_words = s2s::longest_sentence_words(corpus, false);
    std::size_t max_src = a.max_source_len ? a.max_source_len : max_src_words + 1;
    std::size_t max_tgt = a.max_target_len ? a.max_target_len : max_tgt_words + 1;

    s2s::EncodeStats stats;
    s2s::Dataset data = s2s::encode_corpus(corpus, source, target, max_src, max_tgt, &stats);

    std::cerr << "# prep configuration\n";
    echo_kv(std::cerr, "corpus", a.corpus);
    echo_kv(std::cerr, "out", a.out_dir);
    echo_kv(std::cerr, "source_script", a.source_script);
    echo_kv(std::cerr, "target_script", a.target_script);
    echo_kv(std::cerr, "max_source_len", std::to_string(max_src));
    echo_kv(std::cerr, "max_target_len", std::to_string(max_tgt));
    echo_kv(std::cerr, "seed", std::to_string(a.seed));

    fs::create_directories(a.out_dir);
    source.save((fs::path(a.out_dir) / "source.vocab").string());
    target.save((fs::path(a.out_dir) / "target.vocab").string());
    s2s::save_dataset((fs::path(a.out_dir) / "dataset.txt").string(), data);

    std::string report;
    auto line = [&report](const std::string& k, std::size_t v) {
        report += k + "=" + std::to_string(v) + "\n";
    };
    line("pairs", corpus.size());
    line("dropped_pairs", loaded.dropped_pairs);
    line("source_total_words", source.total_words());
    line("source_unique_words", source.unique_words());
    line("target_total_words", target.total_words());
    line("target_unique_words", target.unique_words());
    line("longest_source_words", max_src_words);
    line("longest_target_words", max_tgt_words);
    line("truncated_sequences", stats.truncated);
    std::ofstream sf(fs::path(a.out_dir) / "stats.txt", std::ios::binary | std::ios::trunc);
    if (!sf) throw s2s::DataError("cannot write stats file in '" + a.out_dir + "'");
    sf << report;
    std::cout << report;
    return 0;
}

// --------------------------------------------------------------- train ----

struct TrainArgs {
    std::string data_dir;
    std::string out_dir;
    ModelFlags model;
    int epochs = 30;
    std::size_t batch = kFullBatch;
    double learning_rate = 1e-3;
    double clip_norm = 0;
    double split_ratio = 0.8;
    int checkpoint_every = 10;
    std::uint64_t seed = 1;
    bool timing = false;
};

int cmd_train(const TrainArgs& a) {
    s2s::Vocabulary source =
        s2s::Vocabulary::load((fs::path(a.data_dir) / "source.vocab").string());
    s2s::Vocabulary target =
        s2s::Vocabulary::load((fs::path(a.data_dir) / "target.vocab").string());
    s2s::Dataset data = s2s::load_dataset((fs::path(a.data_dir) / "dataset.txt").string());
    s2s::VocabFingerprint fp = s2s::VocabFingerprint::of(source, target);

    s2s::ModelConfig cfg;
    a.model.fill(cfg);
    cfg.source_vocab_size = source.size();
    cfg.target_vocab_size = target.size();
    cfg.max_source_len = data.max_source_len;
    cfg.max_target_len = data.max_target_len;
    cfg.validate();

    s2s::AdamConfig adam;
    adam.learning_rate = a.learning_rate;
    adam.clip_norm = a.clip_norm;

    auto [train_set, test_set] = s2s::split_dataset(data, a.split_ratio, a.seed);

    std::cerr << "# train configuration\n";
    echo_kv(std::cerr, "data", a.data_dir);
    echo_kv(std::cerr, "out", a.out_dir);
    echo_model(std::cerr, cfg);
    echo_kv(std::cerr, "epochs", std::to_string(a.epochs));
    echo_kv(std::cerr, "batch", std::to_string(a.batch));
    echo_kv(std::cerr, "learning_rate", fmt(a.learning_rate));
    echo_kv(std::cerr, "clip_norm", fmt(a.clip_norm));
    echo_kv(std::cerr, "split", fmt(a.split_ratio));
    echo_kv(std::cerr, "checkpoint_every", std::to_string(a.checkpoint_every));
    echo_kv(std::cerr, "seed", std::to_string(a.seed));
    echo_kv(std::cerr, "timing", a.timing ? "true" : "false");
    echo_kv(std::cerr, "train_pairs", std::to_string(train_set.size()));
    echo_kv(std::cerr, "test_pairs", std::to_string(test_set.size()));

    fs::create_directories(a.out_dir);
    std::string ck_path = (fs::path(a.out_dir) / "checkpoint.s2s").string();
    std::string metrics_path = (fs::path(a.out_dir) / "metrics.csv").string();

    s2s::Model<float> model;
    std::optional<s2s::AdamOptimizer<float>> opt;
    int start_epoch = 0;
    if (fs::exists(ck_path)) {
        s2s::Checkpoint ck = s2s::load_checkpoint(ck_path);
        s2s::verify_vocab(ck, fp);
        if (!(ck.config == cfg))
            throw s2s::DataError(
                "existing checkpoint at '" + ck_path +
                "' was trained with a different model configuration; match the flags or "
                "remove the checkpoint");
        if (ck.adam.learning_rate != adam.learning_rate || ck.adam.clip_norm != adam.clip_norm)
            throw s2s::DataError("existing checkpoint at '" + ck_path +
                                 "' used different optimizer settings");
        model = s2s::Model<float>::init(cfg, a.seed);
        opt.emplace(s2s::apply_checkpoint(ck, model));
        start_epoch = ck.epoch_reached;
        std::cerr << "resuming from epoch " << start_epoch << "\n";
    } else {
        model = s2s::Model<float>::init(cfg, a.seed);
        opt.emplace(model.params, adam);
    }

    if (start_epoch >= a.epochs) {
        std::cout << "training already complete at epoch " << start_epoch << "\n";
        return 0;
    }

    s2s::TrainLog log(start_epoch);
    for (int epoch = start_epoch + 1; epoch <= a.epochs; ++epoch) {
        double loss =
            s2s::train_epoch(model, train_set, *opt, a.seed, epoch, log, a.batch, a.timing);
        s2s::append_metrics_csv(metrics_path, log.rows().subspan(log.rows().size() - 1));
        std::cout << "epoch " << epoch << " train_loss=" << fmt(loss) << "\n";
        bool due = a.checkpoint_every > 0 && epoch % a.checkpoint_every == 0;
        if (due || epoch == a.epochs)
            s2s::save_checkpoint(ck_path, s2s::make_checkpoint(model, *opt, fp, epoch));
    }
    double test_loss = s2s::evaluate(model, test_set, a.batch);
    std::cout << "test_loss=" << fmt(test_loss) << "\n";
    return 0;
}

// ----------------------------------------------------------- translate ----

struct TranslateArgs {
    std::string data_dir;
    std::string checkpoint;
    std::vector<std::string> sentences;
    std::string input_file;
    std::string source_script = "english";
};

int cmd_translate(const TranslateArgs& a) {
    s2s::Vocabulary source =
        s2s::Vocabulary::load((fs::path(a.data_dir) / "source.vocab").string());
    s2s::Vocabulary target =
        s2s::Vocabulary::load((fs::path(a.data_dir) / "target.vocab").string());
    s2s::Checkpoint ck = s2s::load_checkpoint(a.checkpoint);
    s2s::verify_vocab(ck, s2s::VocabFingerprint::of(source, target));
    s2s::Model<float> model = s2s::Model<float>::init(ck.config, 0);
    s2s::apply_checkpoint(ck, model);

    std::cerr << "# translate configuration\n";
    echo_kv(std::cerr, "data", a.data_dir);
    echo_kv(std::cerr, "checkpoint", a.checkpoint);
    echo_kv(std::cerr, "source_script", a.source_script);
    echo_model(std::cerr, ck.config);

    std::vector<std::string> lines = a.sentences;
    if (!a.input_file.empty()) {
        std::ifstream in(a.input_file, std::ios::binary);
        if (!in) throw s2s::DataError("cannot read input file '" + a.input_file + "'");
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            lines.push_back(line);
        }
    } else if (a.sentences.empty()) {
        std::string line;
        while (std::getline(std::cin, line)) lines.push_back(line);
    }

    s2s::Script script = s2s::parse_script(a.source_script);
    bool any_error = false;
    for (const auto& line : lines) {
        try {
            std::cout << s2s::translate(model, source, target, line, script) << "\n";
        } catch (const s2s::Error& e) {
            std::cout << "<error: " << e.what() << ">\n";
            any_error = true;
        }
    }
    return any_error ? 2 : 0;
}

// ---------------------------------------------------------- experiment ----

struct ExperimentArgs {
    std::string study;
    std::string out_dir;
    std::string corpus;
    std::string source_script = "english";
    std::string target_script = "bangla";
    std::string synth_kind = "mapped-bilingual";
    std::size_t synth_pairs = 64;
    std::size_t synth_vocab = 20;
    std::size_t synth_words = 4;
    std::uint64_t synth_seed = 1;
    ModelFlags model;
    int epochs = 0;  // 0 = per-study default
    std::size_t batch = kFullBatch;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
    bool parallel = false;
};

int default_epochs(const std::string& study) {
    if (study == "cells") return 50;
    if (study == "epoch-study") return 100;
    return 30;
}

int cmd_experiment(const ExperimentArgs& a) {
    s2s::ExperimentSpec spec;
    spec.study = a.study;
    a.model.fill(spec.base);
    spec.epochs = a.epochs > 0 ? a.epochs : default_epochs(a.study);
    spec.batch_size = a.batch;
    spec.seed = a.seed;
    spec.adam.learning_rate = a.learning_rate;
    spec.parallel = a.parallel;
    if (!a.corpus.empty()) {
        spec.corpus.path = a.corpus;
        spec.corpus.source_script = s2s::parse_script(a.source_script);
        spec.corpus.target_script = s2s::parse_script(a.target_script);
    } else {
        s2s::SyntheticSpec synth;
        synth.kind = s2s::parse_synth(a.synth_kind);
        synth.pairs = a.synth_pairs;
        synth.vocab = a.synth_vocab;
        synth.max_words = a.synth_words;
        synth.seed = a.synth_seed;
        spec.corpus.synthetic = synth;
    }

    std::cerr << "# experiment configuration\n";
    echo_kv(std::cerr, "study", a.study);
    echo_kv(std::cerr, "out", a.out_dir);
    if (!a.corpus.empty()) {
        echo_kv(std::cerr, "corpus", a.corpus);
    } else {
        echo_kv(std::cerr, "synthetic", a.synth_kind);
        echo_kv(std::cerr, "synth_pairs", std::to_string(a.synth_pairs));
        echo_kv(std::cerr, "synth_vocab", std::to_string(a.synth_vocab));
        echo_kv(std::cerr, "synth_words", std::to_string(a.synth_words));
        echo_kv(std::cerr, "synth_seed", std::to_string(a.synth_seed));
    }
    echo_kv(std::cerr, "cell", a.model.cell);
    echo_kv(std::cerr, "units", std::to_string(a.model.units));
    echo_kv(std::cerr, "embed_dim", std::to_string(a.model.embed));
    echo_kv(std::cerr, "encoder_activation", a.model.encoder_activation);
    echo_kv(std::cerr, "decoder_activation", a.model.decoder_activation);
    echo_kv(std::cerr, "attention_inner", a.model.attention_inner);
    echo_kv(std::cerr, "attention_outer", a.model.attention_outer);
    echo_kv(std::cerr, "epochs", std::to_string(spec.epochs));
    echo_kv(std::cerr, "batch", std::to_string(spec.batch_size));
    echo_kv(std::cerr, "learning_rate", fmt(a.learning_rate));
    echo_kv(std::cerr, "seed", std::to_string(a.seed));
    echo_kv(std::cerr, "parallel", a.parallel ? "true" : "false");

    std::string csv_path = (fs::path(a.out_dir) / "report.csv").string();
    std::string json_path = (fs::path(a.out_dir) / "experiment.json").string();

    bool any_failed = false;
    if (a.study == "epoch-study") {
        s2s::EpochStudy study = s2s::run_epoch_study(spec);
        spec.sweep = {s2s::SweepEntry{"full-run", {}}};
        fs::create_directories(a.out_dir);
        s2s::write_epoch_study_csv(csv_path, study, spec.epochs);
        s2s::write_experiment_sidecar(json_path, spec);
        any_failed = study.row.failed();
        if (!any_failed) {
            std::cout << "first-half mean=" << fmt(study.first_half_mean)
                      << " std=" << fmt(study.first_half_std) << "\n";
            std::cout << "second-half mean=" << fmt(study.second_half_mean)
                      << " std=" << fmt(study.second_half_std) << "\n";
        } else {
            std::cout << "full-run failed: " << study.row.error << "\n";
        }
    } else {
        if (a.study == "activation-grid") spec.sweep = s2s::activation_grid_sweep();
        else if (a.study == "attention-grid") spec.sweep = s2s::attention_grid_sweep();
        else spec.sweep = s2s::cell_comparison_sweep();
        std::vector<s2s::ResultRow> rows = s2s::run_sweep(spec);
        fs::create_directories(a.out_dir);
        s2s::write_report_csv(csv_path, rows, spec.epochs, spec.study);
        s2s::write_experiment_sidecar(json_path, spec);
        for (const auto& r : rows) {
            if (r.failed()) {
                std::cout << r.label << " failed: " << r.error << "\n";
                any_failed = true;
            } else {
                std::cout << r.label << " mean=" << fmt(r.mean_error)
                          << " std=" << fmt(r.std_dev) << "\n";
            }
        }
    }
    return any_failed ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequence-to-sequence translation: data prep, training, translation, "
                 "and the experiment harness"};
    app.require_subcommand(1);

    PrepArgs prep;
    CLI::App* prep_cmd = app.add_subcommand("prep", "Normalize a corpus, build vocabularies, "
                                                    "encode the dataset");
    prep_cmd->set_config("--config", "", "Read options from a key=value file");
    prep_cmd->add_option("--corpus", prep.corpus, "Tab-separated source/target corpus file")
        ->required();
    prep_cmd->add_option("--out", prep.out_dir, "Output directory")->required();
    prep_cmd->add_option("--source-script", prep.source_script, "Source language script")
        ->check(CLI::IsMember({"english", "bangla"}))
        ->capture_default_str();
    prep_cmd->add_option("--target-script", prep.target_script, "Target language script")
        ->check(CLI::IsMember({"english", "bangla"}))
        ->capture_default_str();
    prep_cmd->add_option("--max-source-len", prep.max_source_len,
                         "Source sequence slots (0 = fit longest sentence)")
        ->capture_default_str();
    prep_cmd->add_option("--max-target-len", prep.max_target_len,
                         "Target sequence slots (0 = fit longest sentence)")
        ->capture_default_str();
    prep_cmd->add_option("--seed", prep.seed, "Random seed")->capture_default_str();

    TrainArgs train;
    std::string train_preset = "full";
    CLI::App* train_cmd = app.add_subcommand("train", "Train a model on prepped data");
    train_cmd->set_config("--config", "", "Read options from a key=value file");
    train_cmd->add_option("--data", train.data_dir, "Directory written by prep")->required();
    train_cmd->add_option("--out", train.out_dir, "Checkpoint/metrics directory")->required();
    add_model_flags(train_cmd, train.model);
    train_cmd->add_option("--epochs", train.epochs, "Training epochs")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train_cmd->add_option("--batch", train.batch, "Batch size")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train_cmd->add_option("--lr", train.learning_rate, "Adam learning rate")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    train_cmd->add_option("--clip-norm", train.clip_norm, "Global gradient norm cap (0 = off)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    train_cmd->add_option("--split", train.split_ratio, "Training fraction of the dataset")
        ->check(CLI::Range(1e-9, 1.0 - 1e-9))
        ->capture_default_str();
    train_cmd->add_option("--checkpoint-every", train.checkpoint_every,
                          "Save a checkpoint every N epochs")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train_cmd->add_option("--seed", train.seed, "Random seed")->capture_default_str();
    train_cmd->add_flag("--timing,!--no-timing", train.timing,
                        "Record wall-clock seconds in metrics (off keeps reruns byte-identical)")
        ->capture_default_str();
    train_cmd->add_option("--preset", train_preset, "Dimension preset")
        ->check(CLI::IsMember({"full", "desk"}))
        ->capture_default_str();

    TranslateArgs tr;
    CLI::App* tr_cmd = app.add_subcommand("translate", "Translate sentences with a checkpoint");
    tr_cmd->set_config("--config", "", "Read options from a key=value file");
    tr_cmd->add_option("--data", tr.data_dir, "Directory written by prep (vocabularies)")
        ->required();
    tr_cmd->add_option("--checkpoint", tr.checkpoint, "Checkpoint file")->required();
    tr_cmd->add_option("--sentence", tr.sentences, "Sentence to translate (repeatable)");
    tr_cmd->add_option("--input", tr.input_file, "File of sentences, one per line")
        ->excludes("--sentence");
    tr_cmd->add_option("--source-script", tr.source_script, "Source language script")
        ->check(CLI::IsMember({"english", "bangla"}))
        ->capture_default_str();
    std::uint64_t tr_seed = 1;
    tr_cmd->add_option("--seed", tr_seed, "Random seed (translation is deterministic)")
        ->capture_default_str();

    ExperimentArgs ex;
    std::string ex_preset = "full";
    CLI::App* ex_cmd = app.add_subcommand("experiment",
                                          "Run a preconfigured comparison study and write "
                                          "its report");
    ex_cmd->set_config("--config", "", "Read options from a key=value file");
    ex_cmd->add_option("study", ex.study, "Which study to run")
        ->required()
        ->check(CLI::IsMember({"activation-grid", "attention-grid", "cells", "epoch-study"}));
    ex_cmd->add_option("--out", ex.out_dir, "Report directory")->required();
    ex_cmd->add_option("--corpus", ex.corpus, "Corpus file (default: synthetic corpus)");
    ex_cmd->add_option("--source-script", ex.source_script, "Source language script")
        ->check(CLI::IsMember({"english", "bangla"}))
        ->capture_default_str();
    ex_cmd->add_option("--target-script", ex.target_script, "Target language script")
        ->check(CLI::IsMember({"english", "bangla"}))
        ->capture_default_str();
    ex_cmd->add_option("--synth-kind", ex.synth_kind, "Synthetic corpus kind")
        ->check(CLI::IsMember({"copy", "reverse", "mapped-bilingual"}))
        ->capture_default_str();
    ex_cmd->add_option("--synth-pairs", ex.synth_pairs, "Synthetic corpus size")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    ex_cmd->add_option("--synth-vocab", ex.synth_vocab, "Synthetic words per side")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    ex_cmd->add_option("--synth-words", ex.synth_words, "Synthetic max sentence words")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    ex_cmd->add_option("--synth-seed", ex.synth_seed, "Synthetic corpus seed")
        ->capture_default_str();
    add_model_flags(ex_cmd, ex.model);
    ex_cmd->add_option("--epochs", ex.epochs,
                       "Training epochs (0 = study default: 30, cells 50, epoch-study 100)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    ex_cmd->add_option("--batch", ex.batch, "Batch size")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    ex_cmd->add_option("--lr", ex.learning_rate, "Adam learning rate")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    ex_cmd->add_option("--seed", ex.seed, "Random seed")->capture_default_str();
    ex_cmd->add_flag("--parallel", ex.parallel, "Train sweep rows on worker threads")
        ->capture_default_str();
    ex_cmd->add_option("--preset", ex_preset, "Dimension preset")
        ->check(CLI::IsMember({"full", "desk"}))
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (prep_cmd->parsed()) return cmd_prep(prep);
        if (train_cmd->parsed()) {
            apply_preset(train_cmd, train_preset, train.model, &train.batch);
            return cmd_train(train);
        }
        if (tr_cmd->parsed()) return cmd_translate(tr);
        if (ex_cmd->parsed()) {
            apply_preset(ex_cmd, ex_preset, ex.model, &ex.batch);
            return cmd_experiment(ex);
        }
    } catch (const s2s::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
