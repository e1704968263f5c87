#pragma once

// Dataset ingestion: tokenization, vocabulary, embedding tables, WikiQA TSV,
// the canonical JSONL record format, answerability filtering, and batching.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "msranker/rng.hpp"
#include "msranker/tensor.hpp"

namespace msranker {

struct Candidate {
    std::string cid;
    std::string text;
    int label = 0;
};

struct QAInstance {
    std::string qid;
    std::string question;
    std::vector<Candidate> candidates;
};

// ---- tokenization ----
//
// Lowercase, split on whitespace, then peel leading/trailing ASCII
// punctuation into separate tokens. Internal punctuation (hyphens,
// apostrophes) stays attached. Bytes >= 0x80 are treated as letters.

namespace detail {
inline bool is_punct_byte(unsigned char c) { return c < 0x80 && std::ispunct(c); }
}  // namespace detail

inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string piece;
    auto flush = [&out](std::string w) {
        size_t lo = 0, hi = w.size();
        std::vector<std::string> tail;
        while (hi - lo > 1 && detail::is_punct_byte(static_cast<unsigned char>(w[lo]))) {
            out.push_back(w.substr(lo, 1));
            ++lo;
        }
        while (hi - lo > 1 && detail::is_punct_byte(static_cast<unsigned char>(w[hi - 1]))) {
            tail.push_back(w.substr(hi - 1, 1));
            --hi;
        }
        out.push_back(w.substr(lo, hi - lo));
        for (auto it = tail.rbegin(); it != tail.rend(); ++it) out.push_back(*it);
    };
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::isspace(c)) {
            if (!piece.empty()) {
                flush(piece);
                piece.clear();
            }
        } else {
            piece.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
        }
    }
    if (!piece.empty()) flush(piece);
    return out;
}

// ---- vocabulary ----

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kOov = 1;
    static constexpr const char* kPadToken = "<pad>";
    static constexpr const char* kOovToken = "<unk>";

    Vocabulary() : tokens_{kPadToken, kOovToken} {
        index_[kPadToken] = kPad;
        index_[kOovToken] = kOov;
    }

    // Tokens become indices 2.. in (count desc, token asc) order.
    static Vocabulary build(const std::vector<QAInstance>& corpus, int min_count) {
        if (min_count < 1) throw ValidationError("build_vocab: min_count must be >= 1");
        if (corpus.empty()) throw ValidationError("build_vocab: empty corpus");
        std::unordered_map<std::string, long long> counts;
        auto tally = [&counts](const std::string& text) {
            for (const auto& tok : tokenize(text)) ++counts[tok];
        };
        for (const auto& inst : corpus) {
            tally(inst.question);
            for (const auto& c : inst.candidates) tally(c.text);
        }
        std::vector<std::pair<std::string, long long>> kept;
        for (const auto& [tok, cnt] : counts)
            if (cnt >= min_count) kept.emplace_back(tok, cnt);
        std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Vocabulary v;
        for (const auto& [tok, cnt] : kept) v.push(tok);
        return v;
    }

    static Vocabulary from_tokens(const std::vector<std::string>& tokens_in_index_order) {
        Vocabulary v;
        size_t start = 0;
        // Accept lists that include the two reserved entries up front.
        if (tokens_in_index_order.size() >= 2 && tokens_in_index_order[0] == kPadToken &&
            tokens_in_index_order[1] == kOovToken)
            start = 2;
        for (size_t i = start; i < tokens_in_index_order.size(); ++i)
            v.push(tokens_in_index_order[i]);
        return v;
    }

    int lookup(const std::string& tok) const {
        auto it = index_.find(tok);
        return it == index_.end() ? kOov : it->second;
    }
    const std::string& token(int idx) const { return tokens_.at(static_cast<size_t>(idx)); }
    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::vector<int> encode(const std::vector<std::string>& toks) const {
        std::vector<int> out;
        out.reserve(toks.size());
        for (const auto& t : toks) out.push_back(lookup(t));
        return out;
    }
    std::vector<int> encode_text(const std::string& text) const { return encode(tokenize(text)); }

    void save(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw ValidationError("cannot write vocabulary: " + path);
        for (size_t i = 2; i < tokens_.size(); ++i) os << tokens_[i] << "\n";
    }
    static Vocabulary load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ValidationError("cannot open vocabulary: " + path);
        Vocabulary v;
        std::string line;
        while (std::getline(is, line))
            if (!line.empty()) v.push(line);
        return v;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;

    void push(const std::string& tok) {
        if (index_.count(tok)) throw ValidationError("vocabulary: duplicate token " + tok);
        index_[tok] = static_cast<int>(tokens_.size());
        tokens_.push_back(tok);
    }
};

// ---- embedding tables ----

// Random table in [-0.5, 0.5] (roughly the scale of pretrained word vectors),
// row order = vocab order, padding row zeroed.
inline Tensor init_embeddings(const Vocabulary& vocab, int dim, uint64_t seed) {
    Tensor table = Tensor::zeros({vocab.size(), dim});
    Rng rng = make_rng(seed, /*stream=*/101);
    for (int r = 1; r < vocab.size(); ++r)
        for (int j = 0; j < dim; ++j) table.at(r, j) = rng_uniform(rng, -0.5, 0.5);
    return table;
}

// Pretrained text table: `token v_1 ... v_dim` per line. Vocab tokens found in
// the file are copied verbatim; missing ones are drawn uniformly from
// [-0.1, 0.1] in vocab index order; the padding row stays zero.
inline Tensor load_embeddings(const std::string& path, const Vocabulary& vocab, int dim,
                              uint64_t seed) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open embedding file: " + path);
    std::unordered_map<std::string, std::vector<double>> file_vecs;
    std::string line;
    long long lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        std::vector<double> vec;
        double v;
        while (ss >> v) vec.push_back(v);
        if (static_cast<int>(vec.size()) != dim)
            throw ValidationError("embedding file line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(dim) + " values, found " +
                                  std::to_string(vec.size()));
        file_vecs[tok] = std::move(vec);
    }
    Tensor table = Tensor::zeros({vocab.size(), dim});
    Rng rng = make_rng(seed, /*stream=*/101);
    for (int r = 1; r < vocab.size(); ++r) {
        auto it = file_vecs.find(vocab.token(r));
        if (it != file_vecs.end()) {
            for (int j = 0; j < dim; ++j) table.at(r, j) = it->second[static_cast<size_t>(j)];
        } else {
            for (int j = 0; j < dim; ++j) table.at(r, j) = rng_uniform(rng, -0.1, 0.1);
        }
    }
    return table;
}

// ---- WikiQA TSV ----

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cols;
    std::string cur;
    for (char c : line) {
        if (c == '\t') {
            cols.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cols.push_back(cur);
    return cols;
}

// Rows grouped by QuestionID in file order; no filtering applied here.
inline std::vector<QAInstance> load_wikiqa_tsv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open WikiQA file: " + path);
    std::string line;
    if (!std::getline(is, line)) throw ValidationError("empty WikiQA file: " + path);
    const auto header = split_tabs(line);
    const std::vector<std::string> expected = {"QuestionID", "Question",   "DocumentID",
                                               "DocumentTitle", "SentenceID", "Sentence",
                                               "Label"};
    if (header != expected)
        throw ValidationError(path + " line 1: unexpected header; need QuestionID\\tQuestion\\t"
                                     "DocumentID\\tDocumentTitle\\tSentenceID\\tSentence\\tLabel");
    std::vector<QAInstance> out;
    std::unordered_map<std::string, size_t> by_qid;
    long long lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cols = split_tabs(line);
        if (cols.size() != 7)
            throw ValidationError(path + " line " + std::to_string(lineno) + ": expected 7 columns, found " +
                                  std::to_string(cols.size()));
        const std::string& qid = cols[0];
        const std::string& label_s = cols[6];
        if (label_s != "0" && label_s != "1")
            throw ValidationError(path + " line " + std::to_string(lineno) +
                                  ": label must be 0 or 1, found '" + label_s + "'");
        if (tokenize(cols[5]).empty())
            throw ValidationError(path + " line " + std::to_string(lineno) +
                                  ": candidate sentence is empty after tokenization");
        auto it = by_qid.find(qid);
        if (it == by_qid.end()) {
            by_qid[qid] = out.size();
            out.push_back(QAInstance{qid, cols[1], {}});
            it = by_qid.find(qid);
        }
        out[it->second].candidates.push_back(Candidate{cols[4], cols[5], label_s == "1" ? 1 : 0});
    }
    return out;
}

// ---- answerability filtering ----

inline std::vector<QAInstance> filter_answerable(const std::vector<QAInstance>& instances) {
    std::vector<QAInstance> out;
    for (const auto& inst : instances) {
        bool any = false;
        for (const auto& c : inst.candidates)
            if (c.label == 1) any = true;
        if (any) out.push_back(inst);
    }
    return out;
}

// ---- canonical record format (one JSON object per line) ----

inline nlohmann::json instance_to_json(const QAInstance& inst) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : inst.candidates)
        cands.push_back({{"cid", c.cid}, {"label", c.label}, {"text", c.text}});
    return {{"candidates", cands}, {"qid", inst.qid}, {"question", inst.question}};
}

inline void save_canonical(const std::string& path, const std::vector<QAInstance>& instances) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot write dataset file: " + path);
    for (const auto& inst : instances) os << instance_to_json(inst).dump() << "\n";
}

// `require_labels` off allows label-free records (ranking input); such
// candidates default to label 0.
inline std::vector<QAInstance> load_canonical(const std::string& path,
                                              bool require_labels = true) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open dataset file: " + path);
    std::vector<QAInstance> out;
    std::string line;
    long long lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path + " line " + std::to_string(lineno) + ": " + e.what());
        }
        QAInstance inst;
        try {
            inst.qid = j.at("qid").get<std::string>();
            inst.question = j.at("question").get<std::string>();
            for (const auto& cj : j.at("candidates")) {
                Candidate c;
                c.cid = cj.at("cid").get<std::string>();
                c.text = cj.at("text").get<std::string>();
                if (cj.contains("label"))
                    c.label = cj.at("label").get<int>();
                else if (require_labels)
                    throw ValidationError("missing label");
                if (c.label != 0 && c.label != 1) throw ValidationError("label must be 0 or 1");
                if (tokenize(c.text).empty())
                    throw ValidationError("candidate text empty after tokenization");
                inst.candidates.push_back(std::move(c));
            }
        } catch (const std::exception& e) {
            throw ValidationError(path + " line " + std::to_string(lineno) + ": " + e.what());
        }
        if (inst.candidates.empty())
            throw ValidationError(path + " line " + std::to_string(lineno) +
                                  ": question has no candidates");
        out.push_back(std::move(inst));
    }
    return out;
}

// ---- index-space views ----

struct IndexedCandidate {
    std::string cid;
    std::vector<int> ids;
    int label = 0;
};

struct IndexedInstance {
    std::string qid;
    std::vector<int> q_ids;
    std::vector<IndexedCandidate> cands;
};

inline std::vector<int> truncate_ids(std::vector<int> ids, int max_len) {
    if (static_cast<int>(ids.size()) > max_len) ids.resize(static_cast<size_t>(max_len));
    return ids;
}

inline std::vector<IndexedInstance> index_instances(const std::vector<QAInstance>& instances,
                                                    const Vocabulary& vocab, int max_q_len,
                                                    int max_c_len) {
    std::vector<IndexedInstance> out;
    out.reserve(instances.size());
    for (const auto& inst : instances) {
        IndexedInstance ix;
        ix.qid = inst.qid;
        ix.q_ids = truncate_ids(vocab.encode_text(inst.question), max_q_len);
        if (ix.q_ids.empty())
            throw ValidationError("question " + inst.qid + " is empty after tokenization");
        for (const auto& c : inst.candidates) {
            IndexedCandidate ic;
            ic.cid = c.cid;
            ic.label = c.label;
            ic.ids = truncate_ids(vocab.encode_text(c.text), max_c_len);
            if (ic.ids.empty())
                throw ValidationError("candidate " + c.cid + " is empty after tokenization");
            ix.cands.push_back(std::move(ic));
        }
        out.push_back(std::move(ix));
    }
    return out;
}

// ---- padding ----

struct PaddedBatch {
    int max_len = 0;
    std::vector<std::vector<int>> ids;       // right-padded with index 0
    std::vector<std::vector<uint8_t>> mask;  // 1 at real tokens
    std::vector<int> lengths;                // original (pre-truncation) lengths
};

inline PaddedBatch pad_sequences(const std::vector<std::vector<int>>& seqs, int max_len) {
    PaddedBatch b;
    b.max_len = max_len;
    for (const auto& s : seqs) {
        if (s.empty()) throw ValidationError("pad_sequences: empty sequence");
        const int keep = std::min<int>(static_cast<int>(s.size()), max_len);
        std::vector<int> row(static_cast<size_t>(max_len), Vocabulary::kPad);
        std::vector<uint8_t> m(static_cast<size_t>(max_len), 0);
        for (int i = 0; i < keep; ++i) {
            row[static_cast<size_t>(i)] = s[static_cast<size_t>(i)];
            m[static_cast<size_t>(i)] = 1;
        }
        b.ids.push_back(std::move(row));
        b.mask.push_back(std::move(m));
        b.lengths.push_back(static_cast<int>(s.size()));
    }
    return b;
}

struct QABatch {
    PaddedBatch questions;                      // one row per instance
    PaddedBatch candidates;                     // rows for all candidates, grouped
    std::vector<std::pair<int, int>> spans;     // [begin, end) candidate rows per instance
};

inline QABatch pad_batch(const std::vector<IndexedInstance>& instances, int max_q_len,
                         int max_c_len) {
    std::vector<std::vector<int>> qs, cs;
    QABatch out;
    for (const auto& inst : instances) {
        qs.push_back(inst.q_ids);
        const int begin = static_cast<int>(cs.size());
        for (const auto& c : inst.cands) cs.push_back(c.ids);
        out.spans.emplace_back(begin, static_cast<int>(cs.size()));
    }
    out.questions = pad_sequences(qs, max_q_len);
    out.candidates = pad_sequences(cs, max_c_len);
    return out;
}

}  // namespace msranker
