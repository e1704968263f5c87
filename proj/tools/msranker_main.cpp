// msranker command-line entry point: dataset prep, synthetic corpora, the
// two training stages, evaluation, ranking, and the gradient check.

#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "msranker/cli.hpp"

namespace {

using msranker::TrainConfig;

struct ConfigFlags {
    std::optional<int> d_e, d_g, batch_questions, preranker_epochs, rl_epochs, max_q_len,
        max_c_len, min_count;
    std::optional<double> dropout, evidence_threshold, learning_rate, lr_decay;
    std::optional<uint64_t> seed;
    std::optional<std::string> optimizer;
};

void add_config_options(CLI::App* cmd, ConfigFlags& f, std::string& config_path) {
    cmd->add_option("--config", config_path, "JSON config file (flags override it)");
    cmd->add_option("--d-e", f.d_e, "word embedding dimension");
    cmd->add_option("--d-g", f.d_g, "GRU hidden size");
    cmd->add_option("--dropout", f.dropout, "dropout rate");
    cmd->add_option("--threshold", f.evidence_threshold, "evidence threshold");
    cmd->add_option("--lr", f.learning_rate, "learning rate");
    cmd->add_option("--lr-decay", f.lr_decay, "per-epoch learning rate decay");
    cmd->add_option("--batch-questions", f.batch_questions, "questions per mini-batch");
    cmd->add_option("--preranker-epochs", f.preranker_epochs, "pre-ranker training epochs");
    cmd->add_option("--rl-epochs", f.rl_epochs, "RL training epochs");
    cmd->add_option("--max-q-len", f.max_q_len, "question truncation cap");
    cmd->add_option("--max-c-len", f.max_c_len, "candidate truncation cap");
    cmd->add_option("--min-count", f.min_count, "vocabulary min count");
    cmd->add_option("--seed", f.seed, "run seed");
    cmd->add_option("--optimizer", f.optimizer, "adam or sgd");
}

TrainConfig resolve_config(const std::string& config_path, const ConfigFlags& f,
                           TrainConfig c = TrainConfig{}) {
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw msranker::ValidationError("cannot open config file: " + config_path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(is);
        } catch (const nlohmann::json::exception& e) {
            throw msranker::ValidationError(std::string("config file: ") + e.what());
        }
        TrainConfig::apply_json(c, j);
    }
    if (f.d_e) c.d_e = *f.d_e;
    if (f.d_g) c.d_g = *f.d_g;
    if (f.dropout) c.dropout = *f.dropout;
    if (f.evidence_threshold) c.evidence_threshold = *f.evidence_threshold;
    if (f.learning_rate) c.learning_rate = *f.learning_rate;
    if (f.lr_decay) c.lr_decay = *f.lr_decay;
    if (f.batch_questions) c.batch_questions = *f.batch_questions;
    if (f.preranker_epochs) c.preranker_epochs = *f.preranker_epochs;
    if (f.rl_epochs) c.rl_epochs = *f.rl_epochs;
    if (f.max_q_len) c.max_q_len = *f.max_q_len;
    if (f.max_c_len) c.max_c_len = *f.max_c_len;
    if (f.min_count) c.min_count = *f.min_count;
    if (f.seed) c.seed = *f.seed;
    if (f.optimizer) c.optimizer = *f.optimizer;
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"msranker: multi-step answer-candidate ranking"};
    app.require_subcommand(1);

    // prep
    msranker::PrepOptions prep;
    auto* prep_cmd = app.add_subcommand("prep", "ingest a dataset into canonical files");
    prep_cmd->add_option("--wikiqa-dir", prep.wikiqa_dir, "directory with WikiQA-{train,dev,test}.tsv")
        ->envname("MSRANKER_DATA_DIR");
    prep_cmd->add_option("--canonical-in", prep.canonical_in,
                         "directory with canonical {train,dev,test}.jsonl");
    prep_cmd->add_option("--out", prep.out_dir, "output directory")->required();
    prep_cmd->add_option("--min-count", prep.min_count, "vocabulary min count");

    // synth
    msranker::SynthOptions synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic evidence-chain corpus");
    synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
    synth_cmd->add_option("--seed", synth.seed, "generation seed");
    synth_cmd->add_option("--questions", synth.synth.train_questions, "train questions");
    synth_cmd->add_option("--dev-questions", synth.synth.dev_questions, "dev questions");
    synth_cmd->add_option("--test-questions", synth.synth.test_questions, "test questions");
    synth_cmd->add_option("--candidates", synth.synth.candidates, "candidates per question");
    synth_cmd->add_option("--correct", synth.synth.correct, "correct candidates per question");
    synth_cmd->add_option("--vocab", synth.synth.vocab_size, "synthetic vocabulary size");
    synth_cmd->add_option("--qlen", synth.synth.question_len, "question length in tokens");
    synth_cmd->add_option("--clen", synth.synth.candidate_len, "candidate length in tokens");

    // train-preranker
    msranker::TrainPrerankerOptions tpre;
    ConfigFlags tpre_flags;
    std::string tpre_config;
    auto* tpre_cmd = app.add_subcommand("train-preranker", "supervised pre-ranker training");
    tpre_cmd->add_option("--data", tpre.data_dir, "canonical data directory")
        ->envname("MSRANKER_DATA_DIR");
    tpre_cmd->add_option("--embeddings", tpre.embeddings, "pretrained embedding text file");
    tpre_cmd->add_option("--out-checkpoint", tpre.out_checkpoint, "checkpoint path")->required();
    add_config_options(tpre_cmd, tpre_flags, tpre_config);

    // train-rl
    msranker::TrainRlOptions trl;
    ConfigFlags trl_flags;
    std::string trl_config;
    auto* trl_cmd = app.add_subcommand("train-rl", "REINFORCE fine-tuning of the full agent");
    trl_cmd->add_option("--data", trl.data_dir, "canonical data directory")
        ->envname("MSRANKER_DATA_DIR");
    trl_cmd->add_option("--init-checkpoint", trl.init_checkpoint, "pre-ranker checkpoint");
    trl_cmd->add_option("--out-checkpoint", trl.out_checkpoint, "checkpoint path")->required();
    add_config_options(trl_cmd, trl_flags, trl_config);
    trl_cmd->add_flag("--no-rewards", "train with cross-entropy instead of ranking rewards");
    trl_cmd->add_flag("--no-preranker", "visit candidates in dataset order");
    trl_cmd->add_flag("--no-evidence", "drop the evidence module and EC-attention");
    trl_cmd->add_flag("--no-rl-action", "integrate candidate summaries without P_pos scaling");
    trl_cmd->add_flag("--no-gate", "replace the gate with a fixed 0.5/0.5 mix");
    trl_cmd->add_flag("--gate-on-p-pos",
                      "key train-time evidence updates on the P_pos threshold instead of the "
                      "sampled action");
    trl_cmd->add_flag("--separate-summary-encoder", "separate BiGRU for evidence summaries");
    trl_cmd->add_flag("--baseline", "subtract the batch-mean reward baseline");
    std::string trl_credit;
    trl_cmd->add_option("--credit", trl_credit,
                        "policy-gradient credit: return (default) or step");
    trl_cmd->add_flag("--no-warm-start-policy",
                      "keep the randomly initialized policy head instead of copying the "
                      "pre-ranker head");
    trl_cmd->add_flag("--deterministic", "single-threaded reproducible mode (always on)");

    // eval
    msranker::EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a data split");
    eval_cmd->add_option("--data", eval.data_dir, "canonical data directory")
        ->envname("MSRANKER_DATA_DIR");
    eval_cmd->add_option("--split", eval.split, "train, dev, or test");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint path")->required();
    eval_cmd->add_option("--report", eval.report_path, "metrics report path");
    eval_cmd->add_flag("--preranker-only", eval.preranker_only,
                       "rank by pre-ranker scores instead of running episodes");

    // rank
    msranker::RankOptions rank;
    auto* rank_cmd = app.add_subcommand("rank", "rank candidates for new questions");
    rank_cmd->add_option("--question-file", rank.question_file, "canonical records; labels optional")
        ->required();
    rank_cmd->add_option("--checkpoint", rank.checkpoint, "checkpoint path")->required();
    rank_cmd->add_option("--out", rank.out_path, "ranked output path");

    // gradcheck
    msranker::GradcheckOptions gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc_cmd->add_option("--d-g", gc.spec.d_g, "GRU hidden size");
    gc_cmd->add_option("--d-e", gc.spec.d_e, "embedding dimension");
    gc_cmd->add_option("--qlen", gc.spec.question_len, "question length");
    gc_cmd->add_option("--candidates", gc.spec.candidates, "candidate count");
    gc_cmd->add_option("--seed", gc.spec.seed, "seed");
    gc_cmd->add_option("--eps", gc.spec.eps, "finite-difference step");
    gc_cmd->add_option("--tol", gc.spec.tol, "relative-error tolerance");
    gc_cmd->add_option("--out", gc.out_path, "JSON report path");
    gc_cmd->add_flag("--no-evidence", gc.spec.no_evidence, "check the no-evidence variant");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (prep_cmd->parsed()) {
            msranker::cmd_prep(prep);
        } else if (synth_cmd->parsed()) {
            msranker::cmd_synth(synth);
        } else if (tpre_cmd->parsed()) {
            tpre.config = resolve_config(tpre_config, tpre_flags);
            msranker::cmd_train_preranker(tpre);
        } else if (trl_cmd->parsed()) {
            // shape-critical dims default to the init checkpoint's values
            TrainConfig base;
            if (!trl.init_checkpoint.empty() &&
                std::filesystem::is_regular_file(trl.init_checkpoint)) {
                const msranker::Checkpoint peek = msranker::load_checkpoint(trl.init_checkpoint);
                const TrainConfig ck =
                    TrainConfig::from_json(nlohmann::json::parse(peek.config_json));
                base.d_e = ck.d_e;
                base.d_g = ck.d_g;
                base.max_q_len = ck.max_q_len;
                base.max_c_len = ck.max_c_len;
            }
            trl.config = resolve_config(trl_config, trl_flags, base);
            if (trl_cmd->count("--no-rewards")) trl.config.no_rewards = true;
            if (trl_cmd->count("--no-preranker")) trl.config.no_preranker = true;
            if (trl_cmd->count("--no-evidence")) trl.config.no_evidence = true;
            if (trl_cmd->count("--no-rl-action")) trl.config.no_rl_action = true;
            if (trl_cmd->count("--no-gate")) trl.config.no_gate = true;
            if (trl_cmd->count("--gate-on-p-pos")) trl.config.gate_on_sampled_action = false;
            if (trl_cmd->count("--separate-summary-encoder"))
                trl.config.separate_summary_encoder = true;
            if (trl_cmd->count("--baseline")) trl.config.baseline = true;
            if (trl_cmd->count("--credit")) trl.config.credit = trl_credit;
            if (trl_cmd->count("--no-warm-start-policy")) trl.config.warm_start_policy = false;
            msranker::cmd_train_rl(trl);
        } else if (eval_cmd->parsed()) {
            msranker::cmd_eval(eval);
        } else if (rank_cmd->parsed()) {
            msranker::cmd_rank(rank);
        } else if (gc_cmd->parsed()) {
            return msranker::cmd_gradcheck(gc);
        }
    } catch (const msranker::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
