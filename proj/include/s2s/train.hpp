#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "s2s/error.hpp"
#include "s2s/model.hpp"
#include "s2s/ops.hpp"
#include "s2s/tape.hpp"
#include "s2s/tensor.hpp"
#include "s2s/text.hpp"

namespace s2s {

struct EncodedPair {
    EncodedSequence source;
    EncodedSequence target;
};

/// Encoded pairs plus the fixed lengths they were padded to.
struct Dataset {
    std::vector<EncodedPair> pairs;
    std::size_t max_source_len = 0;
    std::size_t max_target_len = 0;

    std::size_t size() const { return pairs.size(); }
};

inline Dataset encode_corpus(const ParallelCorpus& c, const Vocabulary& source_vocab,
                             const Vocabulary& target_vocab, std::size_t max_source_len,
                             std::size_t max_target_len, EncodeStats* stats = nullptr) {
    Dataset d;
    d.max_source_len = max_source_len;
    d.max_target_len = max_target_len;
    d.pairs.reserve(c.size());
    for (const auto& p : c.pairs)
        d.pairs.push_back({encode_sentence(source_vocab, p.source, max_source_len, stats),
                           encode_sentence(target_vocab, p.target, max_target_len, stats)});
    return d;
}

inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double ratio,
                                                 std::uint64_t seed) {
    auto [a, b] = split_indices(d.size(), ratio, seed);
    Dataset first{{}, d.max_source_len, d.max_target_len};
    Dataset second{{}, d.max_source_len, d.max_target_len};
    first.pairs.reserve(a.size());
    second.pairs.reserve(b.size());
    for (std::size_t i : a) first.pairs.push_back(d.pairs[i]);
    for (std::size_t i : b) second.pairs.push_back(d.pairs[i]);
    return {std::move(first), std::move(second)};
}

/// Text serialization of an encoded dataset: a counted header, then one
/// "source ids<TAB>target ids" line per pair. True lengths are implicit
/// (tokens before the first pad).
inline void save_dataset(const std::string& path, const Dataset& d) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write dataset file '" + path + "'");
    out << "#encoded v1 " << d.size() << ' ' << d.max_source_len << ' ' << d.max_target_len
        << "\n";
    auto put = [&out](const EncodedSequence& s) {
        for (std::size_t i = 0; i < s.ids.size(); ++i) {
            if (i) out << ' ';
            out << s.ids[i];
        }
    };
    for (const auto& p : d.pairs) {
        put(p.source);
        out << '\t';
        put(p.target);
        out << '\n';
    }
    if (!out) throw DataError("failed writing dataset file '" + path + "'");
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read dataset file '" + path + "'");
    std::string header;
    std::getline(in, header);
    std::istringstream hs(header);
    std::string tag, ver;
    std::size_t count = 0, max_src = 0, max_tgt = 0;
    if (!(hs >> tag >> ver >> count >> max_src >> max_tgt) || tag != "#encoded" || ver != "v1")
        throw DataError("dataset file '" + path + "': bad header '" + header + "'");
    auto parse_side = [&path](std::string_view text, std::size_t want,
                              std::size_t line_no) {
        EncodedSequence seq;
        std::istringstream is{std::string(text)};
        std::int64_t id;
        while (is >> id) {
            if (id < 0)
                throw DataError("dataset file '" + path + "', line " + std::to_string(line_no) +
                                ": negative id");
            seq.ids.push_back(static_cast<std::int32_t>(id));
        }
        if (seq.ids.size() != want)
            throw DataError("dataset file '" + path + "', line " + std::to_string(line_no) +
                            ": expected " + std::to_string(want) + " ids, found " +
                            std::to_string(seq.ids.size()));
        seq.true_length = seq.ids.size();
        for (std::size_t i = 0; i < seq.ids.size(); ++i)
            if (seq.ids[i] == Vocabulary::pad_id) {
                seq.true_length = i;
                break;
            }
        if (seq.true_length == 0)
            throw DataError("dataset file '" + path + "', line " + std::to_string(line_no) +
                            ": sequence starts with padding");
        return seq;
    };
    Dataset d{{}, max_src, max_tgt};
    d.pairs.reserve(count);
    std::string line;
    std::size_t line_no = 1;
    while (d.pairs.size() < count && std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("dataset file '" + path + "', line " + std::to_string(line_no) +
                            ": missing tab separator");
        d.pairs.push_back({parse_side(std::string_view(line).substr(0, tab), max_src, line_no),
                           parse_side(std::string_view(line).substr(tab + 1), max_tgt, line_no)});
    }
    if (d.pairs.size() != count)
        throw DataError("dataset file '" + path + "': expected " + std::to_string(count) +
                        " pairs, found " + std::to_string(d.pairs.size()));
    return d;
}

/// Mean cross-entropy over non-pad target positions. logits is (batch, len,
/// vocab) from stacked decoder steps; targets supply ids and true lengths.
template <class T>
Tensor<T> sequence_loss(const Tensor<T>& logits, std::span<const EncodedSequence> targets) {
    if (logits.rank() != 3)
        throw ShapeError("sequence_loss: logits must be rank 3, got " +
                         shape_str(logits.shape()));
    const std::size_t B = logits.extent(0), L = logits.extent(1), V = logits.extent(2);
    if (targets.size() != B)
        throw ShapeError("sequence_loss: " + std::to_string(B) + " logit rows but " +
                         std::to_string(targets.size()) + " targets");
    std::vector<std::int32_t> flat_ids(B * L, 0);
    std::vector<T> mask(B * L, T(0));
    std::size_t count = 0;
    for (std::size_t i = 0; i < B; ++i) {
        if (targets[i].ids.size() != L)
            throw ShapeError("sequence_loss: target length " +
                             std::to_string(targets[i].ids.size()) + " != " + std::to_string(L));
        for (std::size_t t = 0; t < L; ++t) {
            flat_ids[i * L + t] = targets[i].ids[t];
            if (t < targets[i].true_length) {
                mask[i * L + t] = T(1);
                ++count;
            }
        }
    }
    if (count == 0) throw ValueError("sequence_loss: batch has no non-pad target tokens");
    Tensor<T> flat = reshape(logits, {B * L, V});
    Tensor<T> total = masked_nll_sum(flat, flat_ids, mask);
    return affine(total, T(1) / static_cast<T>(count), T(0));
}

/// Tokens actually scored by sequence_loss for this batch.
inline std::size_t target_token_count(std::span<const EncodedSequence> targets) {
    std::size_t count = 0;
    for (const auto& t : targets) count += t.true_length;
    return count;
}

/// Teacher-forced forward pass: the decoder consumes the gold previous token
/// at every step (start token first), and the loss averages over non-pad
/// positions.
template <class T>
Tensor<T> teacher_forced_loss(const BoundModel<T>& m, std::span<const EncodedPair> batch) {
    if (batch.empty()) throw ValueError("teacher_forced_loss: empty batch");
    const std::size_t B = batch.size();
    std::vector<EncodedSequence> sources(B);
    std::vector<EncodedSequence> targets(B);
    for (std::size_t i = 0; i < B; ++i) {
        sources[i] = batch[i].source;
        targets[i] = batch[i].target;
    }
    const std::size_t L = targets[0].ids.size();
    EncoderOutput<T> enc = encode<T>(m, sources);
    std::vector<Tensor<T>> keys = attention_keys(m, enc);
    RecurrentState<T> state = enc.final_state;
    std::vector<std::int32_t> prev(B, Vocabulary::start_id);
    std::vector<Tensor<T>> steps;
    steps.reserve(L);
    for (std::size_t t = 0; t < L; ++t) {
        if (t > 0)
            for (std::size_t i = 0; i < B; ++i) prev[i] = targets[i].ids[t - 1];
        steps.push_back(decoder_step(m, keys, enc, prev, state));
    }
    Tensor<T> logits = stack_steps(std::span<const Tensor<T>>(steps));
    return sequence_loss(logits, targets);
}

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
    double clip_norm = 0.0;  // 0 disables global-norm clipping
};

/// Adam with bias correction. Moments are allocated eagerly, one (m, v) pair
/// per parameter, zero-initialized; step_count starts at 0.
template <class T = float>
class AdamOptimizer {
public:
    AdamOptimizer(const ParameterStore<T>& params, AdamConfig cfg = {}) : cfg_(cfg) {
        if (!(cfg.learning_rate >= 0)) throw ValueError("adam: learning rate must be >= 0");
        if (!(cfg.beta1 >= 0 && cfg.beta1 < 1) || !(cfg.beta2 >= 0 && cfg.beta2 < 1))
            throw ValueError("adam: betas must lie in [0,1)");
        if (!(cfg.epsilon > 0)) throw ValueError("adam: epsilon must be > 0");
        for (const auto& [name, value] : params)
            moments_.emplace(name, std::pair<Tensor<T>, Tensor<T>>{
                                       Tensor<T>::zeros(value.shape()),
                                       Tensor<T>::zeros(value.shape())});
    }

    const AdamConfig& config() const { return cfg_; }
    std::int64_t step_count() const { return step_count_; }

    /// One update over every parameter in store order. Throws on non-finite
    /// gradients, naming the parameter.
    void step(ParameterStore<T>& params, const GradientMap<T>& grads) {
        for (const auto& [name, value] : params) {
            auto git = grads.find(name);
            if (git == grads.end())
                throw ValueError("adam: no gradient for parameter '" + name + "'");
            if (!value.same_shape(git->second))
                throw ShapeError("adam: gradient shape " + shape_str(git->second.shape()) +
                                 " != parameter shape " + shape_str(value.shape()) +
                                 " for '" + name + "'");
            for (T g : git->second.values())
                if (!std::isfinite(static_cast<double>(g)))
                    throw Error("adam: non-finite gradient for parameter '" + name + "'");
        }

        double scale = 1.0;
        if (cfg_.clip_norm > 0) {
            double sq = 0;
            for (const auto& [name, value] : params)
                for (T g : grads.at(name).values()) sq += double(g) * double(g);
            double norm = std::sqrt(sq);
            if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
        }

        ++step_count_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (auto& [name, value] : params) {
            const Tensor<T>& grad = grads.at(name);
            auto& [m, v] = moments_.at(name);
            auto vals = value.values();
            auto gs = grad.values();
            auto ms = m.values();
            auto vs = v.values();
            for (std::size_t i = 0; i < vals.size(); ++i) {
                double g = double(gs[i]) * scale;
                double mi = cfg_.beta1 * double(ms[i]) + (1.0 - cfg_.beta1) * g;
                double vi = cfg_.beta2 * double(vs[i]) + (1.0 - cfg_.beta2) * g * g;
                ms[i] = static_cast<T>(mi);
                vs[i] = static_cast<T>(vi);
                double update = cfg_.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg_.epsilon);
                vals[i] = static_cast<T>(double(vals[i]) - update);
            }
        }
    }

    /// Serialization access: moments in the given store's parameter order.
    std::vector<std::pair<std::string, const Tensor<T>*>> moment_entries(
        const ParameterStore<T>& params) const {
        std::vector<std::pair<std::string, const Tensor<T>*>> out;
        for (const auto& [name, value] : params) {
            const auto& mv = moments_.at(name);
            out.emplace_back("m/" + name, &mv.first);
            out.emplace_back("v/" + name, &mv.second);
        }
        return out;
    }

    void restore(std::int64_t step_count,
                 const std::map<std::string, Tensor<T>>& moment_values) {
        if (step_count < 0) throw ValueError("adam: negative step count");
        for (auto& [name, mv] : moments_) {
            auto mit = moment_values.find("m/" + name);
            auto vit = moment_values.find("v/" + name);
            if (mit == moment_values.end() || vit == moment_values.end())
                throw ValueError("adam: missing moments for parameter '" + name + "'");
            if (!mv.first.same_shape(mit->second) || !mv.second.same_shape(vit->second))
                throw ShapeError("adam: moment shape mismatch for '" + name + "'");
            mv.first = mit->second;
            mv.second = vit->second;
        }
        step_count_ = step_count;
    }

private:
    AdamConfig cfg_;
    std::int64_t step_count_ = 0;
    std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> moments_;
};

struct LogRow {
    int epoch = 0;
    double mean_loss = 0;
    double wall_seconds = 0;
};

/// Per-epoch training record. Appends enforce consecutive epochs and finite
/// losses; a resumed run starts counting after the checkpointed epoch.
class TrainLog {
public:
    explicit TrainLog(int start_epoch = 0) : last_epoch_(start_epoch) {
        if (start_epoch < 0) throw ValueError("train log: negative start epoch");
    }

    void append(int epoch, double mean_loss, double wall_seconds) {
        if (epoch != last_epoch_ + 1)
            throw ValueError("train log: expected epoch " + std::to_string(last_epoch_ + 1) +
                             ", got " + std::to_string(epoch));
        if (!std::isfinite(mean_loss))
            throw Error("train log: non-finite loss at epoch " + std::to_string(epoch));
        rows_.push_back({epoch, mean_loss, wall_seconds});
        last_epoch_ = epoch;
    }

    std::span<const LogRow> rows() const { return rows_; }
    int last_epoch() const { return last_epoch_; }

private:
    std::vector<LogRow> rows_;
    int last_epoch_ = 0;
};

/// One pass over the training set: shuffled batches under (seed, epoch), one
/// Adam step per batch. Returns the token-weighted mean loss, also appended
/// to the log. wall_seconds is recorded as 0 when timing is off so that runs
/// with identical inputs produce identical logs.
template <class T>
double train_epoch(Model<T>& model, const Dataset& data, AdamOptimizer<T>& opt,
                   std::uint64_t seed, int epoch, TrainLog& log, std::size_t batch_size,
                   bool timing = true) {
    if (data.size() == 0) throw ValueError("train: empty dataset");
    auto started = std::chrono::steady_clock::now();
    auto batches = batch_indices(data.size(), batch_size, seed, static_cast<std::size_t>(epoch));
    double loss_sum = 0;
    std::size_t token_sum = 0;
    std::vector<EncodedPair> batch;
    for (const auto& idx : batches) {
        batch.clear();
        for (std::size_t i : idx) batch.push_back(data.pairs[i]);
        Tape<T> tape;
        BoundModel<T> bm = bind(model, &tape);
        Tensor<T> loss = teacher_forced_loss<T>(bm, batch);
        GradientMap<T> grads = tape.backward(loss);
        opt.step(model.params, grads);
        std::size_t tokens = 0;
        for (const auto& p : batch) tokens += p.target.true_length;
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(tokens);
        token_sum += tokens;
    }
    double mean = loss_sum / static_cast<double>(token_sum);
    double wall = 0;
    if (timing) {
        wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    log.append(epoch, mean, wall);
    return mean;
}

/// Forward-only token-weighted mean loss over a dataset.
template <class T>
double evaluate(Model<T>& model, const Dataset& data, std::size_t batch_size) {
    if (data.size() == 0) throw ValueError("evaluate: empty dataset");
    if (batch_size < 1) throw ValueError("evaluate: batch size must be >= 1");
    BoundModel<T> bm = bind(model);
    double loss_sum = 0;
    std::size_t token_sum = 0;
    std::vector<EncodedPair> batch;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        std::size_t stop = std::min(data.size(), start + batch_size);
        batch.assign(data.pairs.begin() + static_cast<std::ptrdiff_t>(start),
                     data.pairs.begin() + static_cast<std::ptrdiff_t>(stop));
        Tensor<T> loss = teacher_forced_loss<T>(bm, batch);
        std::size_t tokens = 0;
        for (const auto& p : batch) tokens += p.target.true_length;
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(tokens);
        token_sum += tokens;
    }
    return loss_sum / static_cast<double>(token_sum);
}

namespace detail {

inline std::string format_double(double x, const char* fmt) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, x);
    return buf;
}

}  // namespace detail

/// Append epoch rows to a metrics CSV, writing the header when the file is
/// created. Fixed formatting keeps identical runs byte-identical.
inline void append_metrics_csv(const std::string& path, std::span<const LogRow> rows) {
    bool fresh = true;
    {
        std::ifstream probe(path, std::ios::binary);
        fresh = !probe.good() || probe.peek() == std::ifstream::traits_type::eof();
    }
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw DataError("cannot write metrics file '" + path + "'");
    if (fresh) out << "epoch,mean_loss,wall_seconds\n";
    for (const auto& r : rows)
        out << r.epoch << ',' << detail::format_double(r.mean_loss, "%.12g") << ','
            << detail::format_double(r.wall_seconds, "%.6f") << '\n';
    if (!out) throw DataError("failed writing metrics file '" + path + "'");
}

}  // namespace s2s
