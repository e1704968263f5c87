#pragma once

// Central finite-difference verification of analytic gradients, plus the
// canned whole-model check: one frozen episode surrogate at tiny dimensions,
// differentiated both ways.

#include <functional>
#include <string>
#include <vector>

#include "msranker/params.hpp"
#include "msranker/trainer.hpp"

namespace msranker {

struct GradCheckEntry {
    std::string name;
    long long checked = 0;
    double max_rel_err = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> per_param;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool ok = false;
};

// Relative error with a small floor so positions where both gradients vanish
// compare on an absolute scale instead of dividing by ~0.
inline double grad_rel_err(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
    return std::fabs(analytic - numeric) / denom;
}

// Compares the analytic gradients already accumulated in `store` against
// central differences of `fn`. Entries of tensors larger than
// `max_entries_per_tensor` are subsampled (0 checks everything).
inline GradCheckReport grad_check(const std::function<double(const ParamStore&)>& fn,
                                  ParamStore& store, double eps, double tol,
                                  long long max_entries_per_tensor = 0, uint64_t seed = 0) {
    if (eps <= 0.0) throw ValidationError("grad_check: eps must be positive");
    GradCheckReport report;
    report.tol = tol;
    Rng rng = make_rng(seed, /*stream=*/61);
    for (const auto& name : store.names()) {
        Tensor& p = store.param(name);
        const Tensor& g = store.grad(name);
        std::vector<long long> idx;
        if (max_entries_per_tensor > 0 && p.size() > max_entries_per_tensor) {
            for (long long k = 0; k < max_entries_per_tensor; ++k)
                idx.push_back(static_cast<long long>(
                    rng_below(rng, static_cast<uint64_t>(p.size()))));
        } else {
            idx.resize(static_cast<size_t>(p.size()));
            for (long long k = 0; k < p.size(); ++k) idx[static_cast<size_t>(k)] = k;
        }
        GradCheckEntry entry;
        entry.name = name;
        for (long long i : idx) {
            const double saved = p.data[static_cast<size_t>(i)];
            p.data[static_cast<size_t>(i)] = saved + eps;
            const double f_plus = fn(store);
            p.data[static_cast<size_t>(i)] = saved - eps;
            const double f_minus = fn(store);
            p.data[static_cast<size_t>(i)] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * eps);
            const double analytic = g.data[static_cast<size_t>(i)];
            const double rel = grad_rel_err(analytic, numeric);
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_analytic = analytic;
                entry.worst_numeric = numeric;
            }
            ++entry.checked;
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.per_param.push_back(std::move(entry));
    }
    report.ok = report.max_rel_err < tol;
    return report;
}

struct EpisodeGradCheckSpec {
    int d_g = 4;
    int d_e = 8;
    int question_len = 3;
    int candidates = 2;
    uint64_t seed = 0;
    double eps = 1e-5;
    double tol = 1e-4;
    bool no_evidence = false;
};

// Builds a tiny random model and instance, runs one sampled episode, freezes
// its discrete choices, and checks the surrogate's gradient for every
// parameter entry.
inline GradCheckReport episode_gradcheck(const EpisodeGradCheckSpec& spec) {
    TrainConfig cfg;
    cfg.d_g = spec.d_g;
    cfg.d_e = spec.d_e;
    cfg.dropout = 0.0;  // the frozen surrogate must be deterministic
    cfg.seed = spec.seed;
    cfg.no_evidence = spec.no_evidence;
    cfg.max_q_len = spec.question_len;
    cfg.max_c_len = 16;

    const int vocab_size = 12;
    Rng data_rng = make_rng(spec.seed, /*stream=*/62);
    Tensor embedding = Tensor::zeros({vocab_size, spec.d_e});
    for (int r = 1; r < vocab_size; ++r)
        for (int j = 0; j < spec.d_e; ++j) embedding.at(r, j) = rng_uniform(data_rng, -0.1, 0.1);

    ParamStore store;
    build_model_params(store, cfg.model(), std::move(embedding), spec.seed);

    auto random_ids = [&data_rng, vocab_size](int len) {
        std::vector<int> ids(static_cast<size_t>(len));
        for (int& id : ids)
            id = 2 + static_cast<int>(rng_below(data_rng, static_cast<uint64_t>(vocab_size - 2)));
        return ids;
    };
    IndexedInstance inst;
    inst.qid = "gradcheck-q";
    inst.q_ids = random_ids(spec.question_len);
    for (int c = 0; c < spec.candidates; ++c) {
        IndexedCandidate cand;
        cand.cid = "gradcheck-c" + std::to_string(c);
        cand.ids = random_ids(4 + c % 3);
        cand.label = c % 2 == 0 ? 1 : 0;
        inst.cands.push_back(std::move(cand));
    }

    // Reference episode fixes the order, actions, rewards, and gate branches.
    FrozenChoices frozen;
    {
        Rng ep_rng = make_rng(spec.seed, /*stream=*/63);
        Episode ref = run_episode(inst, store, cfg, RunMode::Train, ep_rng);
        for (const StepRecord& s : ref.trace.steps) {
            frozen.order.push_back(s.cand_index);
            frozen.actions.push_back(s.action);
            frozen.rewards.push_back(s.reward);
            frozen.integrate.push_back(s.integrated ? 1 : 0);
        }
    }

    auto surrogate = [&inst, &cfg, &frozen](const ParamStore& s) {
        Rng unused = make_rng(0, 0);
        Episode ep = run_episode(inst, s, cfg, RunMode::Train, unused, &frozen);
        Var loss = episode_loss(ep, cfg);
        return ep.tape->scalar(loss);
    };

    store.zero_grads();
    {
        Rng unused = make_rng(0, 0);
        Episode ep = run_episode(inst, store, cfg, RunMode::Train, unused, &frozen);
        Var loss = episode_loss(ep, cfg);
        ep.tape->backward(loss);
        ep.bound->accumulate_grads(store);
    }
    GradCheckReport report = grad_check(surrogate, store, spec.eps, spec.tol);
    store.zero_grads();
    return report;
}

}  // namespace msranker
