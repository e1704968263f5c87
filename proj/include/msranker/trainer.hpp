#pragma once

// Two-stage training: supervised pre-ranker, then REINFORCE fine-tuning of
// the full agent over per-question episodes. Also hosts evaluation and the
// ablation wiring.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "msranker/data.hpp"
#include "msranker/model.hpp"
#include "msranker/params.hpp"
#include "msranker/ranking.hpp"

namespace msranker {

struct TrainConfig {
    int d_e = 300;
    int d_g = 128;
    double dropout = 0.5;
    double evidence_threshold = 0.5;
    double learning_rate = 1e-3;
    double lr_decay = 0.99;
    int batch_questions = 10;
    int preranker_epochs = 5;
    int rl_epochs = 30;
    std::string optimizer = "adam";
    // policy-gradient credit per step: "return" pairs log p(a_t) with the
    // undiscounted return from t; "step" pairs it with r_t alone
    std::string credit = "return";
    bool baseline = false;
    // copy the pre-ranker head into the policy head before RL (the evidence
    // half of the first layer starts at zero)
    bool warm_start_policy = true;
    uint64_t seed = 0;
    bool no_rewards = false;
    bool no_preranker = false;
    bool no_evidence = false;
    bool no_rl_action = false;
    bool no_gate = false;
    bool gate_on_sampled_action = true;
    bool separate_summary_encoder = false;
    int max_q_len = 40;
    int max_c_len = 200;
    int min_count = 1;
    bool deterministic = true;

    ModelConfig model() const {
        ModelConfig m;
        m.d_e = d_e;
        m.d_g = d_g;
        m.dropout = dropout;
        m.evidence_threshold = evidence_threshold;
        m.no_evidence = no_evidence;
        m.no_rl_action = no_rl_action;
        m.no_gate = no_gate;
        m.gate_on_sampled_action = gate_on_sampled_action;
        m.separate_summary_encoder = separate_summary_encoder;
        return m;
    }

    nlohmann::json to_json() const {
        return {{"d_e", d_e},
                {"d_g", d_g},
                {"dropout", dropout},
                {"evidence_threshold", evidence_threshold},
                {"learning_rate", learning_rate},
                {"lr_decay", lr_decay},
                {"batch_questions", batch_questions},
                {"preranker_epochs", preranker_epochs},
                {"rl_epochs", rl_epochs},
                {"optimizer", optimizer},
                {"credit", credit},
                {"baseline", baseline},
                {"warm_start_policy", warm_start_policy},
                {"seed", seed},
                {"no_rewards", no_rewards},
                {"no_preranker", no_preranker},
                {"no_evidence", no_evidence},
                {"no_rl_action", no_rl_action},
                {"no_gate", no_gate},
                {"gate_on_sampled_action", gate_on_sampled_action},
                {"separate_summary_encoder", separate_summary_encoder},
                {"max_q_len", max_q_len},
                {"max_c_len", max_c_len},
                {"min_count", min_count},
                {"deterministic", deterministic}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        apply_json(c, j);
        return c;
    }

    // Overlays only the keys present in j.
    static void apply_json(TrainConfig& c, const nlohmann::json& j) {
        auto get = [&j](const char* key, auto& slot) {
            if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
        };
        get("d_e", c.d_e);
        get("d_g", c.d_g);
        get("dropout", c.dropout);
        get("evidence_threshold", c.evidence_threshold);
        get("learning_rate", c.learning_rate);
        get("lr_decay", c.lr_decay);
        get("batch_questions", c.batch_questions);
        get("preranker_epochs", c.preranker_epochs);
        get("rl_epochs", c.rl_epochs);
        get("optimizer", c.optimizer);
        get("credit", c.credit);
        get("baseline", c.baseline);
        get("warm_start_policy", c.warm_start_policy);
        get("seed", c.seed);
        get("no_rewards", c.no_rewards);
        get("no_preranker", c.no_preranker);
        get("no_evidence", c.no_evidence);
        get("no_rl_action", c.no_rl_action);
        get("no_gate", c.no_gate);
        get("gate_on_sampled_action", c.gate_on_sampled_action);
        get("separate_summary_encoder", c.separate_summary_encoder);
        get("max_q_len", c.max_q_len);
        get("max_c_len", c.max_c_len);
        get("min_count", c.min_count);
        get("deterministic", c.deterministic);
    }

    std::string fingerprint() const { return to_json().dump(); }
};

// ---- episodes ----

struct StepRecord {
    int cand_index = 0;  // index into the instance's candidate array
    uint64_t state_digest = 0;
    int action = 0;
    double logp_action = 0.0;
    double p_pos = 0.0;
    double ap = 0.0;
    double reward = 0.0;
    int label = 0;
    bool integrated = false;  // evidence branch taken at this step
};

struct EpisodeTrace {
    std::string qid;
    std::vector<StepRecord> steps;
    RankedList list;
    uint64_t params_version = 0;
};

// Train-mode episodes keep their tape alive so reinforce_update can run the
// backward pass later.
struct Episode {
    EpisodeTrace trace;
    std::unique_ptr<Tape> tape;
    std::unique_ptr<BoundModel> bound;
    std::vector<Var> step_logp;  // [2] per step
};

// Fixes discrete choices of an episode. Order and actions are always pinned;
// rewards and gate branches are pinned only when non-empty, otherwise they are
// recomputed (against the frozen actions). Full freezing makes the surrogate a
// smooth function of the parameters for the finite-difference check.
struct FrozenChoices {
    std::vector<int> order;
    std::vector<int> actions;
    std::vector<double> rewards;     // optional
    std::vector<uint8_t> integrate;  // optional
};

enum class RunMode { Train, Eval };

inline std::vector<double> prerank_scores(const IndexedInstance& inst, const ParamStore& store,
                                          const ModelConfig& mcfg) {
    Tape tape;
    BoundModel bm(tape, store, mcfg, /*train=*/false, nullptr);
    const SequenceEncoding q = bm.encode(inst.q_ids);
    std::vector<double> scores;
    scores.reserve(inst.cands.size());
    for (const auto& c : inst.cands) scores.push_back(bm.prerank_score(q, bm.encode(c.ids)));
    return scores;
}

// Visit order for the RL agent: pre-ranker score descending, stable on ties.
// The no_preranker ablation keeps the dataset order.
inline std::vector<int> order_candidates(const IndexedInstance& inst, const ParamStore& store,
                                         const TrainConfig& cfg) {
    std::vector<int> order(inst.cands.size());
    std::iota(order.begin(), order.end(), 0);
    if (cfg.no_preranker) return order;
    const auto scores = prerank_scores(inst, store, cfg.model());
    std::stable_sort(order.begin(), order.end(), [&scores](int a, int b) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    });
    return order;
}

inline Episode run_episode(const IndexedInstance& inst, const ParamStore& store,
                           const TrainConfig& cfg, RunMode mode, Rng& rng,
                           const FrozenChoices* frozen = nullptr) {
    if (inst.cands.empty()) throw ValidationError("run_episode: instance has no candidates");
    const ModelConfig mcfg = cfg.model();
    Episode ep;
    ep.trace.qid = inst.qid;
    ep.trace.params_version = store.version();
    ep.tape = std::make_unique<Tape>();
    ep.bound = std::make_unique<BoundModel>(*ep.tape, store, mcfg, mode == RunMode::Train, &rng);
    BoundModel& bm = *ep.bound;
    Tape& t = *ep.tape;

    const std::vector<int> order =
        frozen ? frozen->order : order_candidates(inst, store, cfg);

    const SequenceEncoding qenc = bm.encode(inst.q_ids);
    Var evidence;
    if (!mcfg.no_evidence) {
        evidence = mcfg.separate_summary_encoder
                       ? bm.init_evidence(bm.encode(inst.q_ids, EncoderRole::Summary))
                       : bm.init_evidence(qenc);
    }

    double ap_prev = 0.0;
    for (size_t step = 0; step < order.size(); ++step) {
        const int ci = order[step];
        const IndexedCandidate& cand = inst.cands.at(static_cast<size_t>(ci));
        const SequenceEncoding cenc = bm.encode(cand.ids);
        Var v_qc = bm.qc_attention(qenc, cenc);
        Var state = mcfg.no_evidence ? v_qc
                                     : t.concat_vec({v_qc, bm.ec_attention(evidence, cenc)});
        const ActionDistribution dist = bm.policy(state);

        int action;
        if (frozen)
            action = frozen->actions.at(step);
        else if (mode == RunMode::Train)
            action = rng_uniform(rng) < dist.p1 ? 1 : 0;
        else
            action = dist.p1 >= dist.p0 ? 1 : 0;

        const double ap = ep.trace.list.insert(ci, dist.p1, cand.label);
        const double reward = (frozen && !frozen->rewards.empty())
                                  ? frozen->rewards.at(step)
                                  : step_reward(ap, ap_prev);

        StepRecord rec;
        rec.cand_index = ci;
        rec.state_digest = digest(t.val(state));
        rec.action = action;
        rec.logp_action = action == 1 ? dist.logp1 : dist.logp0;
        rec.p_pos = dist.p1;
        rec.ap = ap;
        rec.reward = reward;
        rec.label = cand.label;

        if (!mcfg.no_evidence) {
            bool integrate;
            if (frozen && !frozen->integrate.empty())
                integrate = frozen->integrate.at(step) != 0;
            else if (mode == RunMode::Train && mcfg.gate_on_sampled_action)
                integrate = action == 1;
            else
                integrate = dist.p1 >= mcfg.evidence_threshold;
            Var summary = mcfg.separate_summary_encoder
                              ? bm.encode(cand.ids, EncoderRole::Summary).summary
                              : cenc.summary;
            evidence = bm.update_evidence(evidence, summary, dist.p1_var, integrate);
            rec.integrated = integrate;
        }
        ep.trace.steps.push_back(rec);
        ep.step_logp.push_back(dist.logp);
        ap_prev = ap;
    }
    return ep;
}

// The REINFORCE surrogate of one episode, built on the episode's own tape:
// -sum_t c_t * log p(a_t|s_t), where c_t is the undiscounted return from step
// t (credit "return") or the step reward alone (credit "step"). The
// no_rewards ablation swaps in per-step cross-entropy against the gold
// labels. `baseline` is subtracted from every step reward before credit
// assignment.
inline Var episode_loss(Episode& ep, const TrainConfig& cfg, double baseline = 0.0) {
    Tape& t = *ep.tape;
    const size_t n = ep.trace.steps.size();
    std::vector<Var> picks;
    std::vector<double> weights(n, 1.0);
    if (!cfg.no_rewards) {
        if (cfg.credit == "return") {
            double g = 0.0;
            for (size_t s = n; s-- > 0;) {
                g += ep.trace.steps[s].reward - baseline;
                weights[s] = g;
            }
        } else if (cfg.credit == "step") {
            for (size_t s = 0; s < n; ++s) weights[s] = ep.trace.steps[s].reward - baseline;
        } else {
            throw ValidationError("unknown credit mode: " + cfg.credit);
        }
    }
    for (size_t s = 0; s < n; ++s) {
        const StepRecord& rec = ep.trace.steps[s];
        picks.push_back(t.slice_vec(ep.step_logp[s], cfg.no_rewards ? rec.label : rec.action, 1));
    }
    Var logps = t.concat_vec(picks);
    Var w = t.leaf(Tensor::vec(std::move(weights)), /*requires_grad=*/false);
    return t.affine(t.dot(logps, w), -1.0, 0.0);
}

// One optimizer step from a batch of train-mode episodes: per-episode
// backward passes accumulate into the store, then the step fires and the
// gradients reset.
inline void reinforce_update(std::vector<Episode>& episodes, ParamStore& store, Optimizer& opt,
                             const TrainConfig& cfg, double lr) {
    double baseline = 0.0;
    if (cfg.baseline && !cfg.no_rewards) {
        double sum = 0.0;
        long long n = 0;
        for (const Episode& ep : episodes) {
            for (const StepRecord& rec : ep.trace.steps) sum += rec.reward;
            n += static_cast<long long>(ep.trace.steps.size());
        }
        if (n > 0) baseline = sum / static_cast<double>(n);
    }
    for (Episode& ep : episodes) {
        if (ep.trace.params_version != store.version())
            throw ValidationError("reinforce_update: episode was run against parameter version " +
                                  std::to_string(ep.trace.params_version) + ", store is at " +
                                  std::to_string(store.version()));
        Var loss = episode_loss(ep, cfg, baseline);
        ep.tape->backward(loss);
        ep.bound->accumulate_grads(store);
    }
    opt.step(store, lr);
    store.zero_grads();
}

// ---- evaluation ----

struct QuestionResult {
    std::string qid;
    double ap = 0.0;
    double rr = 0.0;
    std::vector<RankEntry> ranking;
    std::vector<std::string> cids;  // aligned with ranking entries
};

struct EvalReport {
    double map = 0.0;
    double mrr = 0.0;
    std::vector<QuestionResult> per_question;

    nlohmann::json to_json() const {
        nlohmann::json pq = nlohmann::json::array();
        for (const auto& q : per_question) {
            nlohmann::json ranking = nlohmann::json::array();
            for (size_t i = 0; i < q.ranking.size(); ++i)
                ranking.push_back({{"cid", q.cids[i]},
                                   {"label", q.ranking[i].label},
                                   {"score", q.ranking[i].score}});
            pq.push_back({{"ap", q.ap}, {"qid", q.qid}, {"ranking", ranking}, {"rr", q.rr}});
        }
        return {{"map", map}, {"mrr", mrr}, {"per_question", pq}};
    }
};

namespace detail {

inline EvalReport report_from_lists(const std::vector<IndexedInstance>& data,
                                    std::vector<RankedList> lists) {
    EvalReport rep;
    const MapMrr mm = map_mrr(lists);
    rep.map = mm.map;
    rep.mrr = mm.mrr;
    for (size_t i = 0; i < data.size(); ++i) {
        QuestionResult qr;
        qr.qid = data[i].qid;
        qr.ap = lists[i].average_precision();
        qr.rr = lists[i].reciprocal_rank();
        qr.ranking = lists[i].entries();
        for (const RankEntry& e : qr.ranking)
            qr.cids.push_back(data[i].cands.at(static_cast<size_t>(e.cand_index)).cid);
        rep.per_question.push_back(std::move(qr));
    }
    return rep;
}

}  // namespace detail

// Full-agent evaluation: deterministic episodes, ranking by P_pos.
inline EvalReport evaluate(const std::vector<IndexedInstance>& data, const ParamStore& store,
                           const TrainConfig& cfg) {
    std::vector<RankedList> lists;
    Rng rng = make_rng(cfg.seed, /*stream=*/31);  // unused in eval mode
    for (const auto& inst : data) {
        Episode ep = run_episode(inst, store, cfg, RunMode::Eval, rng);
        lists.push_back(std::move(ep.trace.list));
    }
    return detail::report_from_lists(data, std::move(lists));
}

// Pre-ranker-only evaluation: ranking by the supervised matching score.
inline EvalReport evaluate_preranker(const std::vector<IndexedInstance>& data,
                                     const ParamStore& store, const TrainConfig& cfg) {
    std::vector<RankedList> lists;
    for (const auto& inst : data) {
        const auto scores = prerank_scores(inst, store, cfg.model());
        RankedList list;
        for (size_t c = 0; c < inst.cands.size(); ++c)
            list.insert(static_cast<int>(c), scores[c], inst.cands[c].label);
        lists.push_back(std::move(list));
    }
    return detail::report_from_lists(data, std::move(lists));
}

// ---- training ----

struct LogEntry {
    int epoch = 0;
    std::string stage;
    double loss = 0.0;         // preranker stage: mean pair cross-entropy
    double mean_reward = 0.0;  // rl stage: mean per-episode reward sum
    double dev_map = 0.0;
    double dev_mrr = 0.0;
    double lr = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json j{{"epoch", epoch}, {"stage", stage}, {"dev_map", dev_map},
                         {"dev_mrr", dev_mrr}, {"lr", lr}};
        if (stage == "preranker")
            j["loss"] = loss;
        else
            j["mean_reward"] = mean_reward;
        return j;
    }
};

// Supervised pre-ranker: mean binary cross-entropy over all question-candidate
// pairs, batched by question.
inline std::vector<LogEntry> train_preranker(const std::vector<IndexedInstance>& train,
                                             const std::vector<IndexedInstance>& dev,
                                             ParamStore& store, const TrainConfig& cfg) {
    Optimizer opt(cfg.optimizer);
    Rng shuffle_rng = make_rng(cfg.seed, /*stream=*/41);
    Rng drop_rng = make_rng(cfg.seed, /*stream=*/42);
    std::vector<LogEntry> log;
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= cfg.preranker_epochs; ++epoch) {
        const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, epoch - 1);
        rng_shuffle(order, shuffle_rng);
        double loss_sum = 0.0;
        long long pair_count = 0;
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(cfg.batch_questions)) {
            const size_t end =
                std::min(order.size(), start + static_cast<size_t>(cfg.batch_questions));
            Tape tape;
            BoundModel bm(tape, store, cfg.model(), /*train=*/true, &drop_rng);
            std::vector<Var> terms;
            for (size_t k = start; k < end; ++k) {
                const IndexedInstance& inst = train[static_cast<size_t>(order[k])];
                const SequenceEncoding q = bm.encode(inst.q_ids);
                for (const auto& cand : inst.cands) {
                    const ActionDistribution head = bm.prerank_head(
                        bm.qc_attention(q, bm.encode(cand.ids)));
                    terms.push_back(tape.slice_vec(head.logp, cand.label, 1));
                }
            }
            Var loss = tape.affine(tape.sum(tape.concat_vec(terms)),
                                   -1.0 / static_cast<double>(terms.size()), 0.0);
            tape.backward(loss);
            bm.accumulate_grads(store);
            opt.step(store, lr);
            store.zero_grads();
            loss_sum += tape.scalar(loss) * static_cast<double>(terms.size());
            pair_count += static_cast<long long>(terms.size());
        }
        LogEntry e;
        e.epoch = epoch;
        e.stage = "preranker";
        e.loss = loss_sum / static_cast<double>(pair_count);
        e.lr = lr;
        if (!dev.empty()) {
            const EvalReport rep = evaluate_preranker(dev, store, cfg);
            e.dev_map = rep.map;
            e.dev_mrr = rep.mrr;
        }
        log.push_back(e);
    }
    return log;
}

// Copies the trained pre-ranker head into the policy head so RL starts from
// near-pre-ranker scoring. The first-layer columns that read the evidence
// half of the state keep a scaled-down random initialization: they must be
// nonzero for evidence to influence P_pos at all (otherwise integrating
// evidence has no downstream effect and the policy gradient carries no
// signal), but small enough not to drown the copied matching behavior.
inline void init_policy_from_preranker(ParamStore& store, const TrainConfig& cfg,
                                       double evidence_col_scale = 0.5) {
    const int ed = cfg.model().enc_dim();
    const Tensor& pre_w1 = store.param("pre.W1");
    Tensor& pol_w1 = store.param("pol.W1");
    for (int i = 0; i < pre_w1.rows(); ++i) {
        for (int j = 0; j < pol_w1.cols(); ++j) {
            if (j < ed)
                pol_w1.at(i, j) = pre_w1.at(i, j);
            else
                pol_w1.at(i, j) *= evidence_col_scale;
        }
    }
    store.param("pol.b1") = store.param("pre.b1");
    store.param("pol.W2") = store.param("pre.W2");
    store.param("pol.b2") = store.param("pre.b2");
}

struct RlResult {
    std::vector<LogEntry> log;
    double best_dev_map = 0.0;
    int best_epoch = 0;
};

// REINFORCE fine-tuning. The store ends up holding the best-dev-MAP
// parameters seen across epochs.
inline RlResult train_rl(const std::vector<IndexedInstance>& train,
                         const std::vector<IndexedInstance>& dev, ParamStore& store,
                         const TrainConfig& cfg) {
    Optimizer opt(cfg.optimizer);
    Rng shuffle_rng = make_rng(cfg.seed, /*stream=*/51);
    Rng episode_rng = make_rng(cfg.seed, /*stream=*/52);
    RlResult res;
    ParamStore best = store;
    double best_map = -1.0;
    int best_epoch = 0;
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= cfg.rl_epochs; ++epoch) {
        const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, epoch - 1);
        rng_shuffle(order, shuffle_rng);
        double reward_sum = 0.0;
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(cfg.batch_questions)) {
            const size_t end =
                std::min(order.size(), start + static_cast<size_t>(cfg.batch_questions));
            std::vector<Episode> episodes;
            for (size_t k = start; k < end; ++k) {
                episodes.push_back(run_episode(train[static_cast<size_t>(order[k])], store, cfg,
                                               RunMode::Train, episode_rng));
                for (const StepRecord& rec : episodes.back().trace.steps)
                    reward_sum += rec.reward;
            }
            reinforce_update(episodes, store, opt, cfg, lr);
        }
        const EvalReport dev_rep = evaluate(dev, store, cfg);
        LogEntry e;
        e.epoch = epoch;
        e.stage = "rl";
        e.mean_reward = train.empty() ? 0.0 : reward_sum / static_cast<double>(train.size());
        e.dev_map = dev_rep.map;
        e.dev_mrr = dev_rep.mrr;
        e.lr = lr;
        res.log.push_back(e);
        if (dev_rep.map > best_map) {
            best_map = dev_rep.map;
            best_epoch = epoch;
            best = store;
        }
    }
    store = best;
    res.best_dev_map = best_map;
    res.best_epoch = best_epoch;
    return res;
}

}  // namespace msranker
