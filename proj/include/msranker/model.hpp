#pragma once

// The matching module (BiGRU encoder, question-candidate attention,
// evidence-candidate attention, inference MLP) and the evidence module
// (threshold-gated accumulation). Everything is expressed as tape ops, so one
// backward() pass yields exact gradients through a whole episode.

#include <map>
#include <string>
#include <vector>

#include "msranker/params.hpp"
#include "msranker/rng.hpp"
#include "msranker/tape.hpp"

namespace msranker {

struct ModelConfig {
    int d_e = 300;
    int d_g = 128;
    double dropout = 0.5;
    double evidence_threshold = 0.5;
    bool no_evidence = false;
    bool no_rl_action = false;
    bool no_gate = false;
    // Train-mode evidence integration follows the sampled action, so actions
    // have consequences and the policy gradient carries signal. Evaluation
    // always uses the deterministic threshold rule on P_pos (identical to
    // argmax gating at threshold 0.5).
    bool gate_on_sampled_action = true;
    bool separate_summary_encoder = false;

    int enc_dim() const { return 2 * d_g; }
    int hidden_dim() const { return 2 * d_g; }
    int state_dim() const { return no_evidence ? enc_dim() : 2 * enc_dim(); }
};

// ---- parameter construction ----

namespace detail {

inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng_uniform(rng, -bound, bound);
    return t;
}

inline void add_gru_dir(ParamStore& s, const std::string& prefix, int d_in, int d_g, Rng& rng) {
    const double wb = 1.0 / std::sqrt(static_cast<double>(d_in));
    const double ub = 1.0 / std::sqrt(static_cast<double>(d_g));
    s.add(prefix + ".Wx", uniform_tensor({3 * d_g, d_in}, wb, rng));
    s.add(prefix + ".Uzr", uniform_tensor({2 * d_g, d_g}, ub, rng));
    s.add(prefix + ".Uh", uniform_tensor({d_g, d_g}, ub, rng));
    s.add(prefix + ".bx", Tensor::zeros({3 * d_g}));
}

}  // namespace detail

// All learnable tensors except the embedding table, which the caller provides
// (pretrained or randomly initialized). Matrices start uniform in
// [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases start at zero.
inline void build_model_params(ParamStore& s, const ModelConfig& cfg, Tensor embedding,
                               uint64_t seed) {
    if (embedding.rank() != 2 || embedding.cols() != cfg.d_e)
        throw ValidationError("embedding table shape " + shape_str(embedding.shape) +
                              " does not match d_e=" + std::to_string(cfg.d_e));
    Rng rng = make_rng(seed, /*stream=*/7);
    const int dg = cfg.d_g, ed = cfg.enc_dim(), hid = cfg.hidden_dim();
    const double eb = 1.0 / std::sqrt(static_cast<double>(ed));

    s.add("embed", std::move(embedding));
    detail::add_gru_dir(s, "enc.fw", cfg.d_e, dg, rng);
    detail::add_gru_dir(s, "enc.bw", cfg.d_e, dg, rng);
    if (cfg.separate_summary_encoder) {
        detail::add_gru_dir(s, "enc2.fw", cfg.d_e, dg, rng);
        detail::add_gru_dir(s, "enc2.bw", cfg.d_e, dg, rng);
    }
    s.add("qc.v1", detail::uniform_tensor({ed}, eb, rng));
    s.add("qc.v2", detail::uniform_tensor({ed}, eb, rng));
    s.add("qc.v3", detail::uniform_tensor({ed}, eb, rng));
    s.add("qc.W", detail::uniform_tensor({ed, 4 * ed}, 1.0 / std::sqrt(4.0 * ed), rng));
    s.add("qc.b", Tensor::zeros({ed}));
    if (!cfg.no_evidence) {
        s.add("ec.v4", detail::uniform_tensor({ed}, eb, rng));
        s.add("ec.v5", detail::uniform_tensor({ed}, eb, rng));
        s.add("ec.v6", detail::uniform_tensor({ed}, eb, rng));
        s.add("ec.W", detail::uniform_tensor({ed, 2 * ed}, 1.0 / std::sqrt(2.0 * ed), rng));
        s.add("ec.b", Tensor::zeros({ed}));
        if (!cfg.no_gate) {
            s.add("gate.We", detail::uniform_tensor({ed, ed}, eb, rng));
            s.add("gate.Wo", detail::uniform_tensor({ed, ed}, eb, rng));
        }
    }
    const int sdim = cfg.state_dim();
    s.add("pol.W1",
          detail::uniform_tensor({hid, sdim}, 1.0 / std::sqrt(static_cast<double>(sdim)), rng));
    s.add("pol.b1", Tensor::zeros({hid}));
    s.add("pol.W2", detail::uniform_tensor({2, hid}, 1.0 / std::sqrt(static_cast<double>(hid)), rng));
    s.add("pol.b2", Tensor::zeros({2}));
    s.add("pre.W1", detail::uniform_tensor({hid, ed}, eb, rng));
    s.add("pre.b1", Tensor::zeros({hid}));
    s.add("pre.W2", detail::uniform_tensor({2, hid}, 1.0 / std::sqrt(static_cast<double>(hid)), rng));
    s.add("pre.b2", Tensor::zeros({2}));
}

// ---- spec-level GRU cell ----

struct GruCellVars {
    Var Wx;   // [3*d_g, d_in], rows stacked z|r|h
    Var Uzr;  // [2*d_g, d_g]
    Var Uh;   // [d_g, d_g]
    Var bx;   // [3*d_g]
    int d_g = 0;
};

// Update/reset-gate step from precomputed input projections (Wx x + bx).
inline Var gru_step(Tape& t, Var xpre, Var h_prev, Var Uzr, Var Uh, int d_g) {
    Var hu = t.matvec(Uzr, h_prev);
    Var z = t.sigmoid(t.add(t.slice_vec(xpre, 0, d_g), t.slice_vec(hu, 0, d_g)));
    Var r = t.sigmoid(t.add(t.slice_vec(xpre, d_g, d_g), t.slice_vec(hu, d_g, d_g)));
    Var hh = t.tanh_(t.add(t.slice_vec(xpre, 2 * d_g, d_g), t.matvec(Uh, t.mul(r, h_prev))));
    return t.add(t.mul(t.affine(z, -1.0, 1.0), h_prev), t.mul(z, hh));
}

inline Var gru_cell(Tape& t, Var x, Var h_prev, const GruCellVars& w) {
    Var xpre = t.add(t.matvec(w.Wx, x), w.bx);
    return gru_step(t, xpre, h_prev, w.Uzr, w.Uh, w.d_g);
}

// ---- per-tape bound model ----

struct SequenceEncoding {
    Var H;        // [len, 2*d_g], one row per real token
    Var summary;  // [2*d_g]: final forward state ++ final backward state
    int len = 0;
};

struct ActionDistribution {
    double p0 = 0.0, p1 = 0.0;
    double logp0 = 0.0, logp1 = 0.0;
    Var logp;    // [2]
    Var p1_var;  // [1]
};

enum class EncoderRole { Matching, Summary };

class BoundModel {
public:
    BoundModel(Tape& tape, const ParamStore& store, const ModelConfig& cfg, bool train,
               Rng* rng)
        : tape_(&tape), store_(&store), cfg_(cfg), train_(train), rng_(rng) {
        for (const auto& name : store.names()) {
            if (name == "embed") continue;
            vars_[name] = tape.leaf(store.param(name), /*requires_grad=*/true);
        }
        if (train_ && cfg_.dropout > 0.0 && rng_ == nullptr)
            throw ValidationError("BoundModel: training with dropout requires an rng");
    }

    Tape& tape() { return *tape_; }
    const ModelConfig& cfg() const { return cfg_; }
    bool train_mode() const { return train_; }

    Var p(const std::string& name) const {
        auto it = vars_.find(name);
        if (it == vars_.end()) throw ValidationError("unbound parameter: " + name);
        return it->second;
    }

    Var embed(const std::vector<int>& ids) {
        Var v = tape_->embed_rows(store_->param("embed"), ids);
        embed_nodes_.push_back(v);
        return v;
    }

    // Harvest accumulated gradients back into the store (+= semantics). The
    // embedding padding row is never updated.
    void accumulate_grads(ParamStore& target) const {
        for (const auto& [name, var] : vars_) {
            const Tensor* g = tape_->grad(var);
            if (!g) continue;
            Tensor& acc = target.grad(name);
            for (long long i = 0; i < g->size(); ++i) acc.data[i] += g->data[i];
        }
        Tensor& eg = target.grad("embed");
        for (Var v : embed_nodes_) {
            const Tensor* g = tape_->grad(v);
            if (!g) continue;
            const auto& ids = tape_->embed_ids(v);
            for (size_t r = 0; r < ids.size(); ++r) {
                if (ids[r] == 0) continue;  // padding row is frozen
                for (int j = 0; j < g->shape[1]; ++j)
                    eg.at(ids[r], j) += g->at(static_cast<int>(r), j);
            }
        }
    }

    // ---- encoding layer ----

    // `ids` may carry trailing padding (index 0), which is stripped; H then
    // contains exactly one row per real token, so downstream attention never
    // sees a padded position.
    SequenceEncoding encode(const std::vector<int>& ids, EncoderRole role = EncoderRole::Matching) {
        int n = static_cast<int>(ids.size());
        while (n > 0 && ids[static_cast<size_t>(n - 1)] == 0) --n;
        if (n == 0) throw ValidationError("encode: sequence is empty or all padding");
        for (int i = 0; i < n; ++i)
            if (ids[static_cast<size_t>(i)] == 0)
                throw ValidationError("encode: padding index inside sequence");
        std::vector<int> real(ids.begin(), ids.begin() + n);

        Tape& t = *tape_;
        Var X = drop(embed(real));
        const std::string enc =
            (role == EncoderRole::Summary && cfg_.separate_summary_encoder) ? "enc2" : "enc";
        const int dg = cfg_.d_g;

        auto run_dir = [&](const std::string& dir, bool reverse) {
            Var Xp = t.row_broadcast_add(t.matmul(X, p(enc + "." + dir + ".Wx"), false, true),
                                         p(enc + "." + dir + ".bx"));
            Var Uzr = p(enc + "." + dir + ".Uzr");
            Var Uh = p(enc + "." + dir + ".Uh");
            Var h = t.leaf(Tensor::zeros({dg}), false);
            std::vector<Var> states(static_cast<size_t>(n));
            for (int k = 0; k < n; ++k) {
                const int pos = reverse ? n - 1 - k : k;
                h = gru_step(t, t.row_view(Xp, pos), h, Uzr, Uh, dg);
                states[static_cast<size_t>(pos)] = h;
            }
            return states;
        };
        const auto fw = run_dir("fw", false);
        const auto bw = run_dir("bw", true);

        SequenceEncoding out;
        out.len = n;
        out.H = t.concat_cols({t.stack_rows(fw), t.stack_rows(bw)});
        out.summary = t.concat_vec({fw.back(), bw.front()});
        return out;
    }

    // ---- attention layer ----

    // Pooled question-candidate matching vector V_qc.
    Var qc_attention(const SequenceEncoding& q, const SequenceEncoding& c) {
        Tape& t = *tape_;
        Var a = t.matvec(q.H, p("qc.v1"));                                   // [|Q|]
        Var b = t.matvec(c.H, p("qc.v2"));                                   // [|C|]
        Var alpha = t.matmul(t.row_broadcast_mul(q.H, p("qc.v3")), c.H, false, true);
        alpha = t.row_broadcast_add(t.col_broadcast_add(alpha, a), b);       // [|Q|,|C|]
        Var P = t.softmax_cols(alpha, q.len);                                // over i
        Var Uc = t.matmul(P, q.H, true, false);                              // [|C|,2d_g]
        Var beta = t.maxpool_cols(alpha, q.len);                             // [|C|]
        Var pj = t.softmax_vec(beta, c.len);
        Var Uq = t.matvec(c.H, pj, true);                                    // [2d_g]
        Var M = t.concat_cols({c.H, Uc, t.mul(c.H, Uc), t.row_broadcast_mul(Uc, Uq)});
        Var Mt = t.tanh_(t.row_broadcast_add(t.matmul(drop(M), p("qc.W"), false, true), p("qc.b")));
        return t.maxpool_cols(Mt, c.len);
    }

    // Pooled evidence-candidate matching vector V_ec.
    Var ec_attention(Var evidence, const SequenceEncoding& c) {
        Tape& t = *tape_;
        Var s4 = t.dot(p("ec.v4"), evidence);
        Var av = t.add(t.matvec(c.H, p("ec.v5")),
                       t.matvec(t.row_broadcast_mul(c.H, evidence), p("ec.v6")));
        Var alpha = t.scalar_broadcast_add(av, s4);                          // [|C|]
        Var pj = t.softmax_vec(alpha, c.len);
        Var Ue = t.matvec(c.H, pj, true);                                    // [2d_g]
        Var M = t.concat_cols({c.H, t.row_broadcast_mul(c.H, Ue)});
        Var Mt = t.tanh_(t.row_broadcast_add(t.matmul(drop(M), p("ec.W"), false, true), p("ec.b")));
        return t.maxpool_cols(Mt, c.len);
    }

    // ---- inference layer ----

    ActionDistribution policy(Var state) {
        Tape& t = *tape_;
        Var f = t.tanh_(t.add(t.matvec(p("pol.W1"), drop(state)), p("pol.b1")));
        Var logits = t.add(t.matvec(p("pol.W2"), f), p("pol.b2"));
        return finish_distribution(logits);
    }

    // Pre-ranker head: 2-way softmax over the pooled QC representation.
    ActionDistribution prerank_head(Var v_qc) {
        Tape& t = *tape_;
        Var f = t.tanh_(t.add(t.matvec(p("pre.W1"), drop(v_qc)), p("pre.b1")));
        Var logits = t.add(t.matvec(p("pre.W2"), f), p("pre.b2"));
        return finish_distribution(logits);
    }

    double prerank_score(const SequenceEncoding& q, const SequenceEncoding& c) {
        return prerank_head(qc_attention(q, c)).p1;
    }

    // ---- evidence module ----

    Var init_evidence(const SequenceEncoding& question_summary_encoding) const {
        return question_summary_encoding.summary;
    }

    // Threshold rule: below the threshold the evidence passes through
    // untouched (same Var, bit-exact). Otherwise the candidate summary is
    // scaled by P_pos and mixed in through the gate.
    Var update_evidence(Var evidence, Var cand_summary, Var p_pos, bool integrate) {
        if (!integrate) return evidence;
        Tape& t = *tape_;
        Var otilde = cfg_.no_rl_action ? cand_summary : t.scale_vs(cand_summary, p_pos);
        if (cfg_.no_gate)
            return t.add(t.affine(evidence, 0.5, 0.0), t.affine(otilde, 0.5, 0.0));
        Var g = t.sigmoid(t.add(t.matvec(p("gate.We"), evidence), t.matvec(p("gate.Wo"), otilde)));
        return t.add(t.mul(t.affine(g, -1.0, 1.0), evidence), t.mul(g, otilde));
    }

    Var update_evidence(Var evidence, Var cand_summary, Var p_pos) {
        const bool integrate = tape_->scalar(p_pos) >= cfg_.evidence_threshold;
        return update_evidence(evidence, cand_summary, p_pos, integrate);
    }

private:
    Tape* tape_;
    const ParamStore* store_;
    ModelConfig cfg_;
    bool train_;
    Rng* rng_;
    std::map<std::string, Var> vars_;
    std::vector<Var> embed_nodes_;

    Var drop(Var x) {
        if (!train_ || cfg_.dropout <= 0.0) return x;
        return tape_->dropout(x, cfg_.dropout, *rng_, true);
    }

    ActionDistribution finish_distribution(Var logits) {
        Tape& t = *tape_;
        ActionDistribution d;
        d.logp = t.log_softmax_vec(logits);
        Var probs = t.exp_(d.logp);
        d.p1_var = t.slice_vec(probs, 1, 1);
        d.logp0 = t.val(d.logp).at(0);
        d.logp1 = t.val(d.logp).at(1);
        d.p0 = t.val(probs).at(0);
        d.p1 = t.val(probs).at(1);
        return d;
    }
};

}  // namespace msranker
