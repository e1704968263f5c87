#pragma once

// Synthetic evidence-chain corpora. Each question gets one "anchor" correct
// candidate that overlaps the question, further correct candidates that
// overlap only the anchor, and distractors that overlap neither. Ranking the
// chained candidates correctly requires carrying information across
// candidates, which is what the evidence path is for.

#include <cstdio>
#include <string>
#include <vector>

#include "msranker/data.hpp"
#include "msranker/rng.hpp"

namespace msranker {

struct SynthConfig {
    int vocab_size = 400;
    int question_len = 6;
    int candidate_len = 5;
    int candidates = 10;    // per question
    int correct = 3;        // anchor + chained corrects
    int anchor_overlap = 3; // question tokens inside the anchor (>= 2)
    int chain_overlap = 2;  // anchor tokens inside each chained correct (>= 2)
    int train_questions = 500;
    int dev_questions = 100;
    int test_questions = 100;

    void validate() const {
        if (correct < 1) throw ValidationError("synth: correct count must be >= 1");
        if (correct > candidates)
            throw ValidationError("synth: correct count exceeds candidates per question");
        if (anchor_overlap < 2 || chain_overlap < 2)
            throw ValidationError("synth: overlaps must be >= 2 tokens");
        if (question_len < anchor_overlap)
            throw ValidationError("synth: question shorter than the anchor overlap");
        if (candidate_len <= anchor_overlap)
            throw ValidationError("synth: candidates must hold the anchor overlap plus "
                                  "private tokens");
        if (correct > 1 && anchor_private() < chain_overlap)
            throw ValidationError("synth: not enough private anchor tokens for the chain "
                                  "overlap");
        if (correct > 1 && candidate_len <= chain_overlap)
            throw ValidationError("synth: candidates must hold the chain overlap plus fresh "
                                  "tokens");
        if (tokens_per_question() > vocab_size)
            throw ValidationError("synth: vocabulary too small for one question (needs " +
                                  std::to_string(tokens_per_question()) + " distinct tokens)");
    }

    int anchor_private() const { return candidate_len - anchor_overlap; }

    int tokens_per_question() const {
        const int chain_fresh = (correct - 1) * (candidate_len - chain_overlap);
        const int distractor = (candidates - correct) * candidate_len;
        return question_len + anchor_private() + chain_fresh + distractor;
    }
};

namespace detail {

inline std::string synth_token(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%05d", i);
    return buf;
}

inline std::string join_tokens(const std::vector<int>& ids) {
    std::string s;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) s.push_back(' ');
        s += synth_token(ids[i]);
    }
    return s;
}

}  // namespace detail

// One split. Deterministic in (cfg, seed, stream, qid_prefix).
inline std::vector<QAInstance> gen_synthetic(const SynthConfig& cfg, int n_questions,
                                             uint64_t seed, uint64_t stream,
                                             const std::string& qid_prefix) {
    cfg.validate();
    Rng rng = make_rng(seed, stream);
    std::vector<QAInstance> out;
    out.reserve(static_cast<size_t>(n_questions));
    for (int q = 0; q < n_questions; ++q) {
        const auto pool = rng_sample_distinct(rng, cfg.vocab_size, cfg.tokens_per_question());
        size_t next = 0;
        auto take = [&pool, &next](int k) {
            std::vector<int> v(pool.begin() + static_cast<long>(next),
                               pool.begin() + static_cast<long>(next) + k);
            next += static_cast<size_t>(k);
            return v;
        };
        const std::vector<int> question = take(cfg.question_len);
        const std::vector<int> anchor_private = take(cfg.anchor_private());

        auto pick_from = [&rng](const std::vector<int>& src, int k) {
            const auto idx = rng_sample_distinct(rng, static_cast<int>(src.size()), k);
            std::vector<int> out;
            for (int i : idx) out.push_back(src[static_cast<size_t>(i)]);
            return out;
        };

        std::vector<std::pair<std::vector<int>, int>> cands;  // (token ids, label)
        std::vector<int> anchor = pick_from(question, cfg.anchor_overlap);
        anchor.insert(anchor.end(), anchor_private.begin(), anchor_private.end());
        rng_shuffle(anchor, rng);
        cands.emplace_back(anchor, 1);

        for (int i = 1; i < cfg.correct; ++i) {
            std::vector<int> chain = pick_from(anchor_private, cfg.chain_overlap);
            const std::vector<int> fresh = take(cfg.candidate_len - cfg.chain_overlap);
            chain.insert(chain.end(), fresh.begin(), fresh.end());
            rng_shuffle(chain, rng);
            cands.emplace_back(chain, 1);
        }
        for (int i = cfg.correct; i < cfg.candidates; ++i) {
            std::vector<int> noise = take(cfg.candidate_len);
            rng_shuffle(noise, rng);
            cands.emplace_back(noise, 0);
        }
        rng_shuffle(cands, rng);

        QAInstance inst;
        char qidbuf[32];
        std::snprintf(qidbuf, sizeof(qidbuf), "%s-q%05d", qid_prefix.c_str(), q);
        inst.qid = qidbuf;
        inst.question = detail::join_tokens(question);
        for (size_t ci = 0; ci < cands.size(); ++ci) {
            char cidbuf[48];
            std::snprintf(cidbuf, sizeof(cidbuf), "%s-c%02d", qidbuf, static_cast<int>(ci));
            inst.candidates.push_back(
                Candidate{cidbuf, detail::join_tokens(cands[ci].first), cands[ci].second});
        }
        out.push_back(std::move(inst));
    }
    return out;
}

struct SynthSplits {
    std::vector<QAInstance> train, dev, test;
};

inline SynthSplits gen_synthetic_splits(const SynthConfig& cfg, uint64_t seed) {
    SynthSplits s;
    s.train = gen_synthetic(cfg, cfg.train_questions, seed, 11, "train");
    s.dev = gen_synthetic(cfg, cfg.dev_questions, seed, 12, "dev");
    s.test = gen_synthetic(cfg, cfg.test_questions, seed, 13, "test");
    return s;
}

}  // namespace msranker
