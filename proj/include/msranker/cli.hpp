#pragma once

// Command implementations behind the msranker CLI. The binary in tools/ only
// parses flags and maps exceptions to exit codes; everything here is directly
// callable from tests.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "msranker/gradcheck.hpp"
#include "msranker/manifest.hpp"
#include "msranker/synth.hpp"
#include "msranker/trainer.hpp"

namespace msranker {

namespace detail {

class WallClock {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline void require_dir(const std::string& path, const char* what) {
    if (!std::filesystem::is_directory(path))
        throw ValidationError(std::string(what) + " is not a directory: " + path);
}
inline void require_file(const std::string& path, const char* what) {
    if (!std::filesystem::is_regular_file(path))
        throw ValidationError(std::string(what) + " not found: " + path);
}
inline void ensure_parent_dir(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline long long pair_count(const std::vector<QAInstance>& v) {
    long long n = 0;
    for (const auto& i : v) n += static_cast<long long>(i.candidates.size());
    return n;
}

inline void write_log(const std::string& path, const std::vector<LogEntry>& log) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot write training log: " + path);
    for (const auto& e : log) os << e.to_json().dump() << "\n";
}

struct LoadedData {
    Vocabulary vocab;
    std::vector<QAInstance> raw;
    std::vector<IndexedInstance> indexed;
};

inline LoadedData load_split(const std::string& data_dir, const std::string& split,
                             const Vocabulary& vocab, const TrainConfig& cfg) {
    LoadedData d;
    d.vocab = vocab;
    const std::string path = data_dir + "/" + split + ".jsonl";
    require_file(path, "dataset split");
    d.raw = filter_answerable(load_canonical(path));
    d.indexed = index_instances(d.raw, vocab, cfg.max_q_len, cfg.max_c_len);
    return d;
}

}  // namespace detail

// ---- prep ----

struct PrepOptions {
    std::string wikiqa_dir;    // one of the two inputs must be set
    std::string canonical_in;  // directory holding train/dev/test.jsonl
    std::string out_dir;
    int min_count = 1;
    uint64_t seed = 0;
};

inline void cmd_prep(const PrepOptions& opt) {
    detail::WallClock clock;
    if (opt.wikiqa_dir.empty() == opt.canonical_in.empty())
        throw ValidationError("prep: exactly one of --wikiqa-dir / --canonical-in is required");
    if (opt.out_dir.empty()) throw ValidationError("prep: --out is required");

    RunManifest manifest;
    manifest.command = "prep";
    manifest.seed = opt.seed;
    manifest.config = {{"min_count", opt.min_count}};

    const std::vector<std::string> splits = {"train", "dev", "test"};
    std::vector<std::vector<QAInstance>> data;
    if (!opt.wikiqa_dir.empty()) {
        detail::require_dir(opt.wikiqa_dir, "--wikiqa-dir");
        const std::vector<std::string> files = {"WikiQA-train.tsv", "WikiQA-dev.tsv",
                                                "WikiQA-test.tsv"};
        for (size_t i = 0; i < splits.size(); ++i) {
            const std::string path = opt.wikiqa_dir + "/" + files[i];
            detail::require_file(path, "WikiQA split");
            manifest.add_input(path);
            data.push_back(load_wikiqa_tsv(path));
        }
    } else {
        detail::require_dir(opt.canonical_in, "--canonical-in");
        for (const auto& split : splits) {
            const std::string path = opt.canonical_in + "/" + split + ".jsonl";
            detail::require_file(path, "canonical split");
            manifest.add_input(path);
            data.push_back(load_canonical(path));
        }
    }

    std::filesystem::create_directories(opt.out_dir);
    for (size_t i = 0; i < splits.size(); ++i) {
        const auto filtered = filter_answerable(data[i]);
        const std::string out_path = opt.out_dir + "/" + splits[i] + ".jsonl";
        save_canonical(out_path, filtered);
        manifest.outputs.push_back(out_path);
        std::cout << splits[i] << ": " << filtered.size() << " questions, "
                  << detail::pair_count(filtered) << " pairs (dropped "
                  << (data[i].size() - filtered.size()) << " unanswerable)\n";
        if (i == 0) {
            const Vocabulary vocab = Vocabulary::build(filtered, opt.min_count);
            const std::string vocab_path = opt.out_dir + "/vocab.txt";
            vocab.save(vocab_path);
            manifest.outputs.push_back(vocab_path);
            std::cout << "vocab: " << vocab.size() << " entries (min_count=" << opt.min_count
                      << ")\n";
        }
    }
    manifest.wall_clock_sec = clock.seconds();
    manifest.write(opt.out_dir + "/manifest.prep.json");
}

// ---- synth ----

struct SynthOptions {
    SynthConfig synth;
    uint64_t seed = 0;
    std::string out_dir;
};

inline void cmd_synth(const SynthOptions& opt) {
    detail::WallClock clock;
    if (opt.out_dir.empty()) throw ValidationError("synth: --out is required");
    opt.synth.validate();

    const SynthSplits splits = gen_synthetic_splits(opt.synth, opt.seed);
    std::filesystem::create_directories(opt.out_dir);
    RunManifest manifest;
    manifest.command = "synth";
    manifest.seed = opt.seed;
    manifest.config = {{"vocab_size", opt.synth.vocab_size},
                       {"question_len", opt.synth.question_len},
                       {"candidate_len", opt.synth.candidate_len},
                       {"candidates", opt.synth.candidates},
                       {"correct", opt.synth.correct},
                       {"train_questions", opt.synth.train_questions},
                       {"dev_questions", opt.synth.dev_questions},
                       {"test_questions", opt.synth.test_questions}};
    const std::vector<std::pair<std::string, const std::vector<QAInstance>*>> parts = {
        {"train", &splits.train}, {"dev", &splits.dev}, {"test", &splits.test}};
    for (const auto& [name, inst] : parts) {
        const std::string path = opt.out_dir + "/" + name + ".jsonl";
        save_canonical(path, *inst);
        manifest.outputs.push_back(path);
        std::cout << name << ": " << inst->size() << " questions\n";
    }
    const Vocabulary vocab = Vocabulary::build(splits.train, 1);
    const std::string vocab_path = opt.out_dir + "/vocab.txt";
    vocab.save(vocab_path);
    manifest.outputs.push_back(vocab_path);
    manifest.wall_clock_sec = clock.seconds();
    manifest.write(opt.out_dir + "/manifest.synth.json");
}

// ---- training commands ----

struct TrainPrerankerOptions {
    std::string data_dir;
    std::string embeddings;  // optional pretrained table
    TrainConfig config;
    std::string out_checkpoint;
};

inline void cmd_train_preranker(const TrainPrerankerOptions& opt) {
    detail::WallClock clock;
    if (opt.data_dir.empty()) throw ValidationError("train-preranker: --data is required");
    if (opt.out_checkpoint.empty())
        throw ValidationError("train-preranker: --out-checkpoint is required");
    detail::require_dir(opt.data_dir, "--data");
    const std::string vocab_path = opt.data_dir + "/vocab.txt";
    detail::require_file(vocab_path, "vocabulary");

    RunManifest manifest;
    manifest.command = "train-preranker";
    manifest.seed = opt.config.seed;
    manifest.config = opt.config.to_json();
    manifest.add_input(vocab_path);

    const Vocabulary vocab = Vocabulary::load(vocab_path);
    const auto train = detail::load_split(opt.data_dir, "train", vocab, opt.config);
    const auto dev = detail::load_split(opt.data_dir, "dev", vocab, opt.config);
    manifest.add_input(opt.data_dir + "/train.jsonl");
    manifest.add_input(opt.data_dir + "/dev.jsonl");

    Tensor embedding;
    if (!opt.embeddings.empty()) {
        detail::require_file(opt.embeddings, "--embeddings");
        manifest.add_input(opt.embeddings);
        embedding = load_embeddings(opt.embeddings, vocab, opt.config.d_e, opt.config.seed);
    } else {
        embedding = init_embeddings(vocab, opt.config.d_e, opt.config.seed);
    }

    ParamStore store;
    build_model_params(store, opt.config.model(), std::move(embedding), opt.config.seed);
    const auto log = train_preranker(train.indexed, dev.indexed, store, opt.config);
    for (const auto& e : log)
        std::cout << "epoch " << e.epoch << " loss " << e.loss << " dev MAP " << e.dev_map
                  << " dev MRR " << e.dev_mrr << "\n";

    detail::ensure_parent_dir(opt.out_checkpoint);
    save_checkpoint(opt.out_checkpoint, store, opt.config.fingerprint(), vocab.tokens());
    detail::write_log(opt.out_checkpoint + ".log.jsonl", log);
    manifest.outputs = {opt.out_checkpoint, opt.out_checkpoint + ".log.jsonl"};
    manifest.wall_clock_sec = clock.seconds();
    manifest.write(opt.out_checkpoint + ".manifest.json");
}

struct TrainRlOptions {
    std::string data_dir;
    std::string init_checkpoint;  // required unless no_preranker
    TrainConfig config;
    std::string out_checkpoint;
};

inline void cmd_train_rl(const TrainRlOptions& opt) {
    detail::WallClock clock;
    if (opt.data_dir.empty()) throw ValidationError("train-rl: --data is required");
    if (opt.out_checkpoint.empty()) throw ValidationError("train-rl: --out-checkpoint is required");
    if (opt.init_checkpoint.empty() && !opt.config.no_preranker)
        throw ValidationError(
            "train-rl: --init-checkpoint is required unless --no-preranker is set");
    detail::require_dir(opt.data_dir, "--data");

    RunManifest manifest;
    manifest.command = "train-rl";
    manifest.seed = opt.config.seed;
    manifest.config = opt.config.to_json();

    Vocabulary vocab;
    std::optional<Checkpoint> init;
    if (!opt.init_checkpoint.empty()) {
        detail::require_file(opt.init_checkpoint, "--init-checkpoint");
        manifest.add_input(opt.init_checkpoint);
        init = load_checkpoint(opt.init_checkpoint);
        const TrainConfig init_cfg =
            TrainConfig::from_json(nlohmann::json::parse(init->config_json));
        if (init_cfg.d_e != opt.config.d_e || init_cfg.d_g != opt.config.d_g)
            throw ValidationError("train-rl: checkpoint dims (d_e=" + std::to_string(init_cfg.d_e) +
                                  ", d_g=" + std::to_string(init_cfg.d_g) +
                                  ") do not match the requested configuration");
        vocab = Vocabulary::from_tokens(init->vocab_tokens);
    } else {
        const std::string vocab_path = opt.data_dir + "/vocab.txt";
        detail::require_file(vocab_path, "vocabulary");
        manifest.add_input(vocab_path);
        vocab = Vocabulary::load(vocab_path);
    }

    const auto train = detail::load_split(opt.data_dir, "train", vocab, opt.config);
    const auto dev = detail::load_split(opt.data_dir, "dev", vocab, opt.config);
    manifest.add_input(opt.data_dir + "/train.jsonl");
    manifest.add_input(opt.data_dir + "/dev.jsonl");

    // Fresh parameters for this configuration, then encoder/attention (and
    // everything else with a matching shape) copied from the pre-ranker.
    ParamStore store;
    {
        Tensor embedding = init ? init->store.param("embed")
                                : init_embeddings(vocab, opt.config.d_e, opt.config.seed);
        build_model_params(store, opt.config.model(), std::move(embedding), opt.config.seed);
    }
    if (init) {
        for (const auto& name : store.names()) {
            if (name == "embed" || !init->store.has(name)) continue;
            const Tensor& src = init->store.param(name);
            Tensor& dst = store.param(name);
            if (src.shape == dst.shape) dst = src;
        }
        if (opt.config.warm_start_policy) init_policy_from_preranker(store, opt.config);
    }

    const RlResult res = train_rl(train.indexed, dev.indexed, store, opt.config);
    for (const auto& e : res.log)
        std::cout << "epoch " << e.epoch << " mean reward " << e.mean_reward << " dev MAP "
                  << e.dev_map << " dev MRR " << e.dev_mrr << "\n";
    std::cout << "best dev MAP " << res.best_dev_map << " at epoch " << res.best_epoch << "\n";

    detail::ensure_parent_dir(opt.out_checkpoint);
    save_checkpoint(opt.out_checkpoint, store, opt.config.fingerprint(), vocab.tokens());
    detail::write_log(opt.out_checkpoint + ".log.jsonl", res.log);
    manifest.outputs = {opt.out_checkpoint, opt.out_checkpoint + ".log.jsonl"};
    manifest.wall_clock_sec = clock.seconds();
    manifest.write(opt.out_checkpoint + ".manifest.json");
}

// ---- eval ----

struct EvalOptions {
    std::string data_dir;
    std::string split = "test";
    std::string checkpoint;
    std::string report_path;  // defaults next to the checkpoint
    bool preranker_only = false;
};

inline EvalReport cmd_eval(const EvalOptions& opt) {
    detail::WallClock clock;
    if (opt.checkpoint.empty()) throw ValidationError("eval: --checkpoint is required");
    if (opt.data_dir.empty()) throw ValidationError("eval: --data is required");
    detail::require_file(opt.checkpoint, "--checkpoint");
    detail::require_dir(opt.data_dir, "--data");

    Checkpoint ck = load_checkpoint(opt.checkpoint);
    const TrainConfig cfg = TrainConfig::from_json(nlohmann::json::parse(ck.config_json));
    const Vocabulary vocab = Vocabulary::from_tokens(ck.vocab_tokens);
    const auto data = detail::load_split(opt.data_dir, opt.split, vocab, cfg);

    const EvalReport report = opt.preranker_only
                                  ? evaluate_preranker(data.indexed, ck.store, cfg)
                                  : evaluate(data.indexed, ck.store, cfg);

    const std::string report_path = opt.report_path.empty()
                                        ? opt.checkpoint + "." + opt.split + ".report.json"
                                        : opt.report_path;
    detail::ensure_parent_dir(report_path);
    {
        std::ofstream os(report_path, std::ios::binary);
        if (!os) throw ValidationError("cannot write report: " + report_path);
        os << report.to_json().dump(2) << "\n";
    }
    std::cout << "questions " << report.per_question.size() << " MAP " << report.map << " MRR "
              << report.mrr << "\n";

    RunManifest manifest;
    manifest.command = "eval";
    manifest.seed = cfg.seed;
    manifest.config = cfg.to_json();
    manifest.config["split"] = opt.split;
    manifest.config["preranker_only"] = opt.preranker_only;
    manifest.add_input(opt.checkpoint);
    manifest.add_input(opt.data_dir + "/" + opt.split + ".jsonl");
    manifest.outputs = {report_path};
    manifest.wall_clock_sec = clock.seconds();
    manifest.write(report_path + ".manifest.json");
    return report;
}

// ---- rank ----

struct RankOptions {
    std::string question_file;  // canonical records; labels optional
    std::string checkpoint;
    std::string out_path;  // defaults next to the input
};

inline void cmd_rank(const RankOptions& opt) {
    detail::WallClock clock;
    if (opt.checkpoint.empty()) throw ValidationError("rank: --checkpoint is required");
    if (opt.question_file.empty()) throw ValidationError("rank: --question-file is required");
    detail::require_file(opt.checkpoint, "--checkpoint");
    detail::require_file(opt.question_file, "--question-file");

    Checkpoint ck = load_checkpoint(opt.checkpoint);
    const TrainConfig cfg = TrainConfig::from_json(nlohmann::json::parse(ck.config_json));
    const Vocabulary vocab = Vocabulary::from_tokens(ck.vocab_tokens);
    const auto raw = load_canonical(opt.question_file, /*require_labels=*/false);
    const auto indexed = index_instances(raw, vocab, cfg.max_q_len, cfg.max_c_len);

    nlohmann::json out = nlohmann::json::array();
    Rng rng = make_rng(cfg.seed, /*stream=*/32);
    for (const auto& inst : indexed) {
        Episode ep = run_episode(inst, ck.store, cfg, RunMode::Eval, rng);
        nlohmann::json ranking = nlohmann::json::array();
        for (const RankEntry& e : ep.trace.list.entries()) {
            const auto& cand = inst.cands.at(static_cast<size_t>(e.cand_index));
            std::cout << inst.qid << "\t" << cand.cid << "\t" << e.score << "\n";
            ranking.push_back({{"cid", cand.cid}, {"score", e.score}});
        }
        out.push_back({{"qid", inst.qid}, {"ranking", ranking}});
    }
    const std::string out_path =
        opt.out_path.empty() ? opt.question_file + ".ranked.json" : opt.out_path;
    detail::ensure_parent_dir(out_path);
    {
        std::ofstream os(out_path, std::ios::binary);
        if (!os) throw ValidationError("cannot write ranking: " + out_path);
        os << out.dump(2) << "\n";
    }
    RunManifest manifest;
    manifest.command = "rank";
    manifest.seed = cfg.seed;
    manifest.config = cfg.to_json();
    manifest.add_input(opt.checkpoint);
    manifest.add_input(opt.question_file);
    manifest.outputs = {out_path};
    manifest.wall_clock_sec = clock.seconds();
    manifest.write(out_path + ".manifest.json");
}

// ---- gradcheck ----

struct GradcheckOptions {
    EpisodeGradCheckSpec spec;
    std::string out_path;  // optional JSON report
};

// Returns the process exit code: 0 when every entry is inside tolerance.
inline int cmd_gradcheck(const GradcheckOptions& opt) {
    detail::WallClock clock;
    const GradCheckReport report = episode_gradcheck(opt.spec);
    nlohmann::json per = nlohmann::json::array();
    for (const auto& e : report.per_param) {
        std::cout << (e.max_rel_err < report.tol ? "ok   " : "FAIL ") << e.name << " entries "
                  << e.checked << " max_rel_err " << e.max_rel_err << "\n";
        per.push_back({{"name", e.name},
                       {"checked", e.checked},
                       {"max_rel_err", e.max_rel_err},
                       {"worst_analytic", e.worst_analytic},
                       {"worst_numeric", e.worst_numeric}});
    }
    std::cout << (report.ok ? "PASS" : "FAIL") << " max relative error " << report.max_rel_err
              << " (tolerance " << report.tol << ")\n";
    if (!opt.out_path.empty()) {
        detail::ensure_parent_dir(opt.out_path);
        std::ofstream os(opt.out_path, std::ios::binary);
        os << nlohmann::json{{"ok", report.ok},
                             {"max_rel_err", report.max_rel_err},
                             {"tol", report.tol},
                             {"per_param", per}}
                  .dump(2)
           << "\n";
        RunManifest manifest;
        manifest.command = "gradcheck";
        manifest.seed = opt.spec.seed;
        manifest.config = {{"d_g", opt.spec.d_g},
                           {"d_e", opt.spec.d_e},
                           {"question_len", opt.spec.question_len},
                           {"candidates", opt.spec.candidates},
                           {"eps", opt.spec.eps},
                           {"tol", opt.spec.tol}};
        manifest.outputs = {opt.out_path};
        manifest.wall_clock_sec = clock.seconds();
        manifest.write(opt.out_path + ".manifest.json");
    }
    return report.ok ? 0 : 1;
}

}  // namespace msranker
