#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "s2s/error.hpp"
#include "s2s/rng.hpp"

namespace s2s {

enum class Script { english, bangla };

inline const char* script_name(Script s) {
    return s == Script::english ? "english" : "bangla";
}

inline Script parse_script(std::string_view name) {
    if (name == "english") return Script::english;
    if (name == "bangla") return Script::bangla;
    throw ValueError("unknown script '" + std::string(name) + "'");
}

namespace utf8 {

/// Decode UTF-8 into code points. In strict mode malformed bytes throw
/// DataError; otherwise they are skipped.
inline std::vector<char32_t> decode(std::string_view s, bool strict) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char b0 = static_cast<unsigned char>(s[i]);
        std::size_t len;
        char32_t cp;
        if (b0 < 0x80) { len = 1; cp = b0; }
        else if ((b0 & 0xE0) == 0xC0) { len = 2; cp = b0 & 0x1F; }
        else if ((b0 & 0xF0) == 0xE0) { len = 3; cp = b0 & 0x0F; }
        else if ((b0 & 0xF8) == 0xF0) { len = 4; cp = b0 & 0x07; }
        else {
            if (strict) throw DataError("invalid UTF-8 lead byte");
            ++i;
            continue;
        }
        if (i + len > s.size()) {
            if (strict) throw DataError("truncated UTF-8 sequence");
            break;
        }
        bool ok = true;
        for (std::size_t j = 1; j < len; ++j) {
            unsigned char b = static_cast<unsigned char>(s[i + j]);
            if ((b & 0xC0) != 0x80) { ok = false; break; }
            cp = (cp << 6) | (b & 0x3F);
        }
        static constexpr char32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
        if (ok && len > 1 && cp < kMin[len]) ok = false;       // overlong
        if (ok && (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))) ok = false;
        if (!ok) {
            if (strict) throw DataError("invalid UTF-8 sequence");
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

inline void append(std::string& s, char32_t cp) {
    if (cp < 0x80) {
        s += static_cast<char>(cp);
    } else if (cp < 0x800) {
        s += static_cast<char>(0xC0 | (cp >> 6));
        s += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        s += static_cast<char>(0xE0 | (cp >> 12));
        s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        s += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        s += static_cast<char>(0xF0 | (cp >> 18));
        s += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        s += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

}  // namespace utf8

/// Lowercase (English), strip everything outside the script's letters and
/// whitespace, collapse whitespace runs, trim. Total on any input; an
/// all-punctuation sentence simply comes back empty.
inline std::string normalize_text(std::string_view raw, Script script) {
    auto cps = utf8::decode(raw, /*strict=*/false);
    std::string out;
    bool pending_space = false;
    for (char32_t cp : cps) {
        if (cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' ||
            cp == U'\f' || cp == U'\v') {
            pending_space = true;
            continue;
        }
        bool keep = false;
        if (script == Script::english) {
            if (cp >= U'A' && cp <= U'Z') cp += 32;
            keep = cp >= U'a' && cp <= U'z';
        } else {
            keep = cp >= 0x0980 && cp <= 0x09FF;
        }
        if (!keep) continue;
        if (pending_space && !out.empty()) out += ' ';
        pending_space = false;
        utf8::append(out, cp);
    }
    return out;
}

inline std::vector<std::string> split_words(std::string_view sentence) {
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < sentence.size()) {
        std::size_t j = sentence.find(' ', i);
        if (j == std::string_view::npos) j = sentence.size();
        if (j > i) words.emplace_back(sentence.substr(i, j - i));
        i = j + 1;
    }
    return words;
}

struct SentencePair {
    std::string source;
    std::string target;
};

/// Normalized parallel sentences. Immutable after construction; safe for
/// shared concurrent reads.
struct ParallelCorpus {
    std::vector<SentencePair> pairs;

    std::size_t size() const { return pairs.size(); }
};

/// Bidirectional word<->id map. Ids 0..3 are reserved (pad, start, end, unk);
/// word ids start at 4 and are assigned by descending frequency, ties broken
/// by first occurrence in the corpus. Id 0 is never a word.
class Vocabulary {
public:
    static constexpr std::int32_t pad_id = 0;
    static constexpr std::int32_t start_id = 1;
    static constexpr std::int32_t end_id = 2;
    static constexpr std::int32_t unk_id = 3;

    Vocabulary() : id_to_word_{"<pad>", "<s>", "</s>", "<unk>"} {}

    /// Frequency-ranked construction from one side of a normalized corpus.
    static Vocabulary build(std::span<const std::string> sentences) {
        if (sentences.empty())
            throw ValueError("vocabulary: corpus side is empty");
        struct Entry {
            std::size_t count = 0;
            std::size_t first_seen = 0;
        };
        std::unordered_map<std::string, Entry> freq;
        std::size_t total = 0, order = 0;
        for (const auto& s : sentences) {
            for (auto& w : split_words(s)) {
                auto [it, fresh] = freq.try_emplace(std::move(w));
                if (fresh) it->second.first_seen = order++;
                ++it->second.count;
                ++total;
            }
        }
        if (total == 0)
            throw ValueError("vocabulary: corpus side has no words");

        std::vector<std::pair<std::string, Entry>> ranked(freq.begin(), freq.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second.count != b.second.count) return a.second.count > b.second.count;
            return a.second.first_seen < b.second.first_seen;
        });

        Vocabulary v;
        v.total_words_ = total;
        for (auto& [word, entry] : ranked) v.add_word(word);
        return v;
    }

    /// Id for a word; unknown words map to unk.
    std::int32_t id_of(std::string_view word) const {
        auto it = word_to_id_.find(std::string(word));
        return it == word_to_id_.end() ? unk_id : it->second;
    }

    const std::string& word_of(std::int32_t id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= id_to_word_.size())
            throw ValueError("vocabulary: id " + std::to_string(id) +
                             " out of range [0," + std::to_string(id_to_word_.size()) + ")");
        return id_to_word_[static_cast<std::size_t>(id)];
    }

    /// Total entries including the four specials.
    std::size_t size() const { return id_to_word_.size(); }
    std::size_t unique_words() const { return id_to_word_.size() - 4; }
    std::size_t total_words() const { return total_words_; }

    /// Content hash over words in id order; used to pin checkpoints to the
    /// vocabulary they were trained with.
    std::uint64_t fingerprint() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&h](unsigned char b) {
            h ^= b;
            h *= 0x100000001b3ULL;
        };
        for (std::size_t i = 4; i < id_to_word_.size(); ++i) {
            for (char c : id_to_word_[i]) mix(static_cast<unsigned char>(c));
            mix(0);
        }
        return h;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write vocabulary file '" + path + "'");
        out << "#vocab v1 " << unique_words() << "\n";
        for (std::size_t i = 4; i < id_to_word_.size(); ++i)
            out << id_to_word_[i] << "\n";
        if (!out) throw DataError("failed writing vocabulary file '" + path + "'");
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot read vocabulary file '" + path + "'");
        std::string header;
        std::getline(in, header);
        std::istringstream hs(header);
        std::string tag, ver;
        std::size_t count = 0;
        if (!(hs >> tag >> ver >> count) || tag != "#vocab" || ver != "v1")
            throw DataError("vocabulary file '" + path + "': bad header '" + header + "'");
        Vocabulary v;
        std::string line;
        std::size_t read = 0;
        while (read < count && std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty())
                throw DataError("vocabulary file '" + path + "': empty word at line " +
                                std::to_string(read + 2));
            utf8::decode(line, /*strict=*/true);
            v.add_word(line);
            ++read;
        }
        if (read != count)
            throw DataError("vocabulary file '" + path + "': expected " +
                            std::to_string(count) + " words, found " + std::to_string(read));
        return v;
    }

private:
    void add_word(const std::string& word) {
        auto id = static_cast<std::int32_t>(id_to_word_.size());
        if (!word_to_id_.emplace(word, id).second)
            throw DataError("vocabulary: duplicate word '" + word + "'");
        id_to_word_.push_back(word);
    }

    std::unordered_map<std::string, std::int32_t> word_to_id_;
    std::vector<std::string> id_to_word_;
    std::size_t total_words_ = 0;
};

/// Fixed-length id sequence: word ids, then the end token, then zero padding.
struct EncodedSequence {
    std::vector<std::int32_t> ids;
    std::size_t true_length = 0;  // count of non-pad positions (includes end)
};

struct EncodeStats {
    std::size_t truncated = 0;
};

/// Encode a normalized sentence into max_len slots. Sentences too long for
/// max_len (word count + end token) are truncated, counted via stats.
inline EncodedSequence encode_sentence(const Vocabulary& v, std::string_view sentence,
                                       std::size_t max_len, EncodeStats* stats = nullptr) {
    if (sentence.empty()) throw ValueError("encode: empty sentence");
    if (max_len < 2) throw ValueError("encode: max_len must be at least 2");
    auto words = split_words(sentence);
    if (words.empty()) throw ValueError("encode: empty sentence");
    if (words.size() + 1 > max_len) {
        words.resize(max_len - 1);
        if (stats) ++stats->truncated;
    }
    EncodedSequence seq;
    seq.ids.reserve(max_len);
    for (const auto& w : words) seq.ids.push_back(v.id_of(w));
    seq.ids.push_back(Vocabulary::end_id);
    seq.true_length = seq.ids.size();
    seq.ids.resize(max_len, Vocabulary::pad_id);
    return seq;
}

/// Render ids back to text: stops at the first end token, skips pad/start,
/// renders unk as its surface form.
inline std::string decode_sequence(const Vocabulary& v, std::span<const std::int32_t> ids) {
    std::string out;
    for (std::int32_t id : ids) {
        if (id == Vocabulary::end_id) break;
        if (id == Vocabulary::pad_id || id == Vocabulary::start_id) continue;
        const std::string& w = v.word_of(id);
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

/// Deterministic shuffled index split: floor(n*ratio) indices first, the
/// rest second. Either side empty is an error.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw ValueError("split: ratio must be in (0,1), got " + std::to_string(ratio));
    std::size_t n_first = static_cast<std::size_t>(static_cast<double>(n) * ratio);
    if (n_first == 0 || n_first == n)
        throw ValueError("split: " + std::to_string(n) + " items at ratio " +
                         std::to_string(ratio) + " leaves an empty side");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<std::size_t> first(order.begin(),
                                   order.begin() + static_cast<std::ptrdiff_t>(n_first));
    std::vector<std::size_t> second(order.begin() + static_cast<std::ptrdiff_t>(n_first),
                                    order.end());
    return {std::move(first), std::move(second)};
}

inline std::pair<ParallelCorpus, ParallelCorpus> split_corpus(const ParallelCorpus& c,
                                                              double ratio,
                                                              std::uint64_t seed) {
    auto [a, b] = split_indices(c.size(), ratio, seed);
    ParallelCorpus train, test;
    train.pairs.reserve(a.size());
    test.pairs.reserve(b.size());
    for (std::size_t i : a) train.pairs.push_back(c.pairs[i]);
    for (std::size_t i : b) test.pairs.push_back(c.pairs[i]);
    return {std::move(train), std::move(test)};
}

/// Index batches for one epoch: reshuffled under (seed, epoch), final partial
/// batch kept.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n,
                                                           std::size_t batch_size,
                                                           std::uint64_t seed,
                                                           std::size_t epoch) {
    if (batch_size < 1) throw ValueError("batch size must be >= 1");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng::derive(seed, epoch);
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        std::size_t j = std::min(n, i + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(j));
    }
    return batches;
}

struct CorpusLoadResult {
    ParallelCorpus corpus;
    std::size_t dropped_pairs = 0;  // emptied by normalization
};

/// Read a tab-separated parallel corpus, normalizing both sides. Lines that
/// do not split on exactly one tab are a hard error naming the line; pairs
/// with a side emptied by normalization are dropped and counted.
inline CorpusLoadResult load_corpus(const std::string& path, Script source_script,
                                    Script target_script) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read corpus file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string content = buf.str();
    utf8::decode(content, /*strict=*/true);

    CorpusLoadResult result;
    std::size_t line_no = 0, pos = 0;
    while (pos < content.size()) {
        std::size_t eol = content.find('\n', pos);
        if (eol == std::string::npos) eol = content.size();
        std::string_view line(content.data() + pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

        std::size_t tab = line.find('\t');
        if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos)
            throw DataError("corpus file '" + path + "', line " + std::to_string(line_no) +
                            ": expected exactly one tab separator");
        std::string src = normalize_text(line.substr(0, tab), source_script);
        std::string tgt = normalize_text(line.substr(tab + 1), target_script);
        if (src.empty() || tgt.empty()) {
            ++result.dropped_pairs;
            continue;
        }
        result.corpus.pairs.push_back({std::move(src), std::move(tgt)});
    }
    if (line_no == 0) throw DataError("corpus file '" + path + "' is empty");
    if (result.corpus.pairs.empty())
        throw DataError("corpus file '" + path + "': no usable pairs after normalization");
    return result;
}

/// Longest sentence in words, over one side of a normalized corpus.
inline std::size_t longest_sentence_words(const ParallelCorpus& c, bool source_side) {
    std::size_t best = 0;
    for (const auto& p : c.pairs)
        best = std::max(best, split_words(source_side ? p.source : p.target).size());
    return best;
}

}  // namespace s2s
