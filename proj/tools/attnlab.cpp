// Command-line laboratory for the four attention variants: pre-train on a
// small corpus, sample, report parameter budgets, run the score-estimator
// experiment, and fine-tune a frozen-backbone classifier.
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attnlab/data.hpp"
#include "attnlab/errors.hpp"
#include "attnlab/estimator.hpp"
#include "attnlab/model.hpp"
#include "attnlab/runconfig.hpp"
#include "attnlab/train.hpp"

namespace {

using namespace attnlab;

// Flags are recorded as (key, raw string) and replayed over the config after
// the file loads, so flag text survives verbatim into the echoed config.
struct Overrides {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> kv;

    void bind_value(CLI::App* cmd, const std::string& flag, const std::string& key,
                    const std::string& desc) {
        cmd->add_option_function<std::string>(
            flag, [this, key](const std::string& v) { kv.emplace_back(key, v); }, desc);
    }
    void bind_switch(CLI::App* cmd, const std::string& flag, const std::string& key,
                     const std::string& desc) {
        cmd->add_flag_callback(
            flag, [this, key]() { kv.emplace_back(key, "true"); }, desc);
    }

    RunConfig merged() const {
        RunConfig cfg = RunConfig::defaults();
        if (!config_path.empty()) cfg.load_file(config_path);
        for (const auto& [k, v] : kv) cfg.set(k, v);
        return cfg;
    }
};

void add_shared(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--config", ov.config_path, "config file (key = value, [section] headers)");
    ov.bind_value(cmd, "--seed", "run.seed", "root seed for all random streams");
    ov.bind_value(cmd, "--out", "run.out_dir", "output directory");
    ov.bind_value(cmd, "--variant", "model.variant", "base | symmetric | noise-v1 | noise-v2");
}

std::filesystem::path ensure_out_dir(const RunConfig& cfg) {
    const std::filesystem::path dir = cfg.get("run.out_dir");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

uint64_t param_bytes_hash(const Model& m) {
    uint64_t h = 1469598103934665603ull;
    for (const NamedParam& p : m.params) {
        for (const double v : p.t.data()) {
            unsigned char bytes[sizeof v];
            std::memcpy(bytes, &v, sizeof v);
            for (const unsigned char b : bytes) {
                h ^= b;
                h *= 1099511628211ull;
            }
        }
    }
    return h;
}

Model load_required_checkpoint(const RunConfig& cfg) {
    const std::string path = cfg.get("run.checkpoint");
    if (path.empty()) throw UsageError("this command needs --checkpoint");
    return load_checkpoint(path);
}

int run_train(const RunConfig& cfg) {
    const std::filesystem::path out = ensure_out_dir(cfg);
    cfg.write_echo((out / "config.ini").string());

    auto [vocab, tokens] = load_corpus(cfg.get("run.corpus"));
    ModelConfig mc = cfg.model_config();
    if (mc.vocab_size == 0) mc.vocab_size = vocab.size();
    if (mc.vocab_size < vocab.size())
        throw ConfigError("vocab_size " + std::to_string(mc.vocab_size) +
                          " is smaller than the corpus vocabulary (" +
                          std::to_string(vocab.size()) + ")");
    write_token_cache((out / "tokens.cache").string(), vocab, tokens);

    TrainConfig tc = cfg.train_config();
    auto [train_tokens, val_tokens] = split_train_val(tokens, tc.val_fraction, mc.block_size);

    Model model = build_model(mc, substream(tc.seed, "init"));
    model.vocab_chars = vocab.chars;
    std::printf("variant: %s\n", variant_name(mc.variant));
    std::printf("parameters: %lld\n", count_params(mc).total_params);
    std::printf("tokens: %zu train / %zu val\n", train_tokens.size(), val_tokens.size());

    TrainIO io;
    io.metrics_path = (out / "metrics.csv").string();
    io.best_ckpt_path = (out / "ckpt_best.bin").string();
    io.last_ckpt_path = (out / "ckpt_last.bin").string();
    const TrainResult result = train(model, train_tokens, val_tokens, tc, io);

    std::printf("initial val nll: %.6f\n", result.initial_val);
    std::printf("best val nll: %.6f (step %d)\n", result.best_val, result.best_step);
    std::printf("final val nll: %.6f\n", result.final_val);
    std::printf("metrics: %s\n", io.metrics_path.c_str());
    return 0;
}

int run_sample(const RunConfig& cfg) {
    const Model model = load_required_checkpoint(cfg);
    if (model.vocab_chars.empty())
        throw DataError("checkpoint carries no vocabulary listing; cannot decode samples");
    const Vocab vocab = Vocab::from_chars(model.vocab_chars);

    const std::string prompt = cfg.get("sample.prompt");
    const double temperature = cfg.get_double("sample.temperature");
    const int n_samples = cfg.get_int("sample.samples");
    const int max_new = cfg.get_int("sample.max_new");
    const std::string noise_mode = cfg.get("sample.noise_mode");
    if (noise_mode != "fresh" && noise_mode != "frozen")
        throw ConfigError("noise mode must be 'fresh' or 'frozen' (got '" + noise_mode + "')");
    if (n_samples < 1) throw UsageError("need at least 1 sample");

    const uint64_t seed = cfg.get_u64("run.seed");
    Rng sample_rng(substream(seed, "sampling"));
    Rng noise_rng(substream(seed, "noise"));
    FreshNoise fresh(noise_rng);
    FrozenNoise frozen(model.cfg, noise_rng);
    NoiseSource* noise = nullptr;
    if (variant_is_noisy(model.cfg.variant))
        noise = noise_mode == "frozen" ? static_cast<NoiseSource*>(&frozen) : &fresh;

    const std::vector<int> prompt_ids = vocab.encode(prompt);
    std::printf("prompt: %s\n", prompt.c_str());
    for (int i = 0; i < n_samples; ++i) {
        const std::vector<int> seq =
            generate(model, prompt_ids, max_new, temperature, sample_rng, noise);
        std::printf("%s\n---------------\n", vocab.decode(seq).c_str());
    }
    return 0;
}

int run_params(const RunConfig& cfg) {
    ModelConfig mc = cfg.model_config();
    if (mc.vocab_size == 0) {
        const std::string corpus = cfg.get("run.corpus");
        try {
            mc.vocab_size = load_corpus(corpus).first.size();
        } catch (const DataError&) {
            throw ConfigError("vocab_size is 0 and the corpus at '" + corpus +
                              "' is unreadable; pass --vocab");
        }
    }
    std::printf("config: L=%d N=%d H=%d T=%d V=%d %s\n", mc.n_layer, mc.n_head, mc.n_embd,
                mc.block_size, mc.vocab_size,
                mc.tie_embeddings ? "tied-embeddings" : "untied-embeddings");
    std::printf("%-10s %14s %14s %12s %10s %20s\n", "variant", "total", "qk_params",
                "noise_params", "reduction", "qk_act_bytes/layer");
    for (const Variant v :
         {Variant::Base, Variant::Symmetric, Variant::NoiseV1, Variant::NoiseV2}) {
        ModelConfig m = mc;
        m.variant = v;
        const ParamReport r = count_params(m);
        std::printf("%-10s %14lld %14lld %12lld %9.3f%% %20lld\n", variant_name(v),
                    r.total_params, r.qk_projection_params, r.noise_params,
                    100.0 * r.reduction_vs_base, r.activation_qk_bytes_per_layer);
    }
    return 0;
}

int run_estimate(const RunConfig& cfg) {
    const std::filesystem::path out = ensure_out_dir(cfg);
    const uint64_t seed = cfg.get_u64("run.seed");
    Rng rng(substream(seed, "estimate"));
    const bool full = cfg.get_bool("estimate.full_matrix");
    const long long pairs = cfg.get_i64("estimate.pairs");

    ResidualSet residuals;
    ResidualSet generic_scores;
    if (!cfg.get("run.checkpoint").empty()) {
        // Realism mode: real attention inputs and projections from a trained
        // generic-variant checkpoint.
        const Model model = load_checkpoint(cfg.get("run.checkpoint"));
        if (!variant_has_wk(model.cfg.variant))
            throw UsageError("estimator realism mode needs the generic variant (separate W_k); "
                             "checkpoint is " + std::string(variant_name(model.cfg.variant)));
        if (model.vocab_chars.empty())
            throw DataError("checkpoint carries no vocabulary listing");
        auto [vocab, tokens] = load_corpus(cfg.get("run.corpus"));
        if (vocab.chars != model.vocab_chars)
            throw DataError("corpus vocabulary differs from the checkpoint's");
        const int t = model.cfg.block_size;
        if (static_cast<int>(tokens.size()) < t + 1)
            throw DataError("corpus too short for one context window");
        const std::span<const int> window(tokens.data(), static_cast<size_t>(t));
        std::vector<Tensor> ln1;
        model.forward_hidden(window, nullptr, &ln1);
        const int dk = model.cfg.n_embd / model.cfg.n_head;
        for (int layer = 0; layer < model.cfg.n_layer; ++layer) {
            const AttentionWeights& w = model.blocks[static_cast<size_t>(layer)].attn;
            for (int head = 0; head < model.cfg.n_head; ++head) {
                const Tensor wq = slice_cols(w.w_q, head * dk, (head + 1) * dk);
                const Tensor wk = slice_cols(w.w_k, head * dk, (head + 1) * dk);
                append_residuals(residuals,
                                 residual_scores(ln1[static_cast<size_t>(layer)], wq, wk, dk, full));
                append_residuals(generic_scores,
                                 score_entries(ln1[static_cast<size_t>(layer)], wq, wk, dk, full));
            }
        }
    } else {
        const int t = cfg.get_int("estimate.t");
        const int h = cfg.get_int("estimate.h");
        const int n_head = cfg.get_int("estimate.n_head");
        if (t < 2 || h < 1 || n_head < 1 || h % n_head != 0)
            throw ConfigError("estimate dims need t >= 2, h divisible by n_head");
        const int dk = h / n_head;
        const bool tied = cfg.get_bool("estimate.tied_weights");
        const double wscale = 1.0 / std::sqrt(static_cast<double>(h));
        std::vector<double> xd(static_cast<size_t>(t) * h);
        for (double& v : xd) v = rng.normal();
        std::vector<double> wqd(static_cast<size_t>(h) * h);
        for (double& v : wqd) v = wscale * rng.normal();
        const Tensor x = Tensor::from_data({t, h}, std::move(xd));
        const Tensor w_q = Tensor::from_data({h, h}, std::move(wqd));
        Tensor w_k = w_q;
        if (!tied) {
            std::vector<double> wkd(static_cast<size_t>(h) * h);
            for (double& v : wkd) v = wscale * rng.normal();
            w_k = Tensor::from_data({h, h}, std::move(wkd));
        }
        for (int head = 0; head < n_head; ++head) {
            const Tensor wq = slice_cols(w_q, head * dk, (head + 1) * dk);
            const Tensor wk = slice_cols(w_k, head * dk, (head + 1) * dk);
            append_residuals(residuals, residual_scores(x, wq, wk, dk, full));
            append_residuals(generic_scores, score_entries(x, wq, wk, dk, full));
        }
    }

    // Observation model: the weight-shared score observes the generic score
    // plus noise, so the prior is fitted on generic entries and the noise on
    // shared-minus-generic (the negated residual).
    const GaussianStats prior = fit_gaussian_mle(generic_scores);
    ResidualSet negated = residuals;
    for (double& v : negated.samples) v = -v;
    const GaussianStats noise_fit = fit_gaussian_mle(negated);
    const EstimatorSim sim = simulate_estimator(prior, noise_fit, pairs, rng);

    const std::string report =
        estimator_report(prior, noise_fit, sim, static_cast<long long>(residuals.samples.size()));
    std::fputs(report.c_str(), stdout);
    const std::filesystem::path report_path = out / "estimate_report.txt";
    std::FILE* rf = std::fopen(report_path.string().c_str(), "wb");
    if (rf == nullptr) throw DataError("cannot write " + report_path.string());
    std::fputs(report.c_str(), rf);
    std::fclose(rf);
    std::printf("report: %s\n", report_path.string().c_str());
    return 0;
}

int run_eval(const RunConfig& cfg) {
    Model model = load_required_checkpoint(cfg);
    if (model.vocab_chars.empty())
        throw DataError("checkpoint carries no vocabulary listing; cannot encode the task");
    const Vocab vocab = Vocab::from_chars(model.vocab_chars);
    const int n_classes = cfg.get_int("eval.classes");
    const auto examples = load_labeled_task(cfg.get("run.task"), vocab, n_classes);

    FinetuneConfig fc;
    fc.steps = cfg.get_int("eval.steps");
    fc.lr = cfg.get_double("eval.lr");
    fc.holdout_fraction = cfg.get_double("eval.holdout_fraction");
    fc.seed = cfg.get_u64("run.seed");
    fc.shuffle_labels = cfg.get_bool("eval.shuffle_labels");

    const uint64_t before = param_bytes_hash(model);
    const FinetuneResult result = finetune_classifier(model, examples, n_classes, fc);
    const uint64_t after = param_bytes_hash(model);

    std::printf("examples: %zu (%d held out)\n", examples.size(), result.holdout_count);
    std::printf("accuracy: %.4f\n", result.accuracy);
    std::printf("backbone frozen: %s\n", before == after ? "true" : "false");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention variant laboratory"};
    app.require_subcommand(1);

    Overrides train_ov, sample_ov, params_ov, estimate_ov, eval_ov;

    CLI::App* train_cmd = app.add_subcommand("train", "pre-train on a character corpus");
    add_shared(train_cmd, train_ov);
    train_ov.bind_value(train_cmd, "--corpus", "run.corpus", "corpus text file or token cache");
    train_ov.bind_value(train_cmd, "--steps", "train.max_iters", "optimizer steps");
    train_ov.bind_value(train_cmd, "--batch-size", "train.batch_size", "sequences per micro-batch");
    train_ov.bind_value(train_cmd, "--accum", "train.accum_steps", "micro-batches per step");
    train_ov.bind_value(train_cmd, "--alpha", "train.alpha", "KL weight");
    train_ov.bind_value(train_cmd, "--lr-max", "train.lr_max", "peak learning rate");
    train_ov.bind_value(train_cmd, "--lr-min", "train.lr_min", "floor learning rate");
    train_ov.bind_value(train_cmd, "--warmup", "train.warmup_iters", "warmup steps");
    train_ov.bind_value(train_cmd, "--decay", "train.decay_iters", "cosine decay end step");
    train_ov.bind_value(train_cmd, "--eval-interval", "train.eval_interval", "steps between evals");
    train_ov.bind_value(train_cmd, "--eval-iters", "train.eval_iters", "batches per eval");
    train_ov.bind_value(train_cmd, "--val-fraction", "train.val_fraction", "validation split");
    train_ov.bind_switch(train_cmd, "--freeze-noise", "train.freeze_noise",
                         "keep noise params out of the optimizer");
    train_ov.bind_value(train_cmd, "--n-layer", "model.n_layer", "transformer blocks");
    train_ov.bind_value(train_cmd, "--n-head", "model.n_head", "attention heads");
    train_ov.bind_value(train_cmd, "--n-embd", "model.n_embd", "hidden width");
    train_ov.bind_value(train_cmd, "--block-size", "model.block_size", "context length");
    train_ov.bind_value(train_cmd, "--vocab", "model.vocab_size", "vocabulary size (0 = derive)");

    CLI::App* sample_cmd = app.add_subcommand("sample", "generate from a checkpoint");
    add_shared(sample_cmd, sample_ov);
    sample_ov.bind_value(sample_cmd, "--checkpoint", "run.checkpoint", "checkpoint to sample from");
    sample_ov.bind_value(sample_cmd, "--prompt", "sample.prompt", "prompt text");
    sample_ov.bind_value(sample_cmd, "--temperature", "sample.temperature", "0 = greedy");
    sample_ov.bind_value(sample_cmd, "--samples", "sample.samples", "completions to print");
    sample_ov.bind_value(sample_cmd, "--max-new", "sample.max_new", "new tokens per completion");
    sample_ov.bind_value(sample_cmd, "--noise", "sample.noise_mode",
                         "fresh (new draw per forward) or frozen (one draw reused)");

    CLI::App* params_cmd = app.add_subcommand("params", "parameter accounting for all variants");
    add_shared(params_cmd, params_ov);
    params_ov.bind_value(params_cmd, "--corpus", "run.corpus", "corpus used to derive vocab");
    params_ov.bind_value(params_cmd, "--n-layer", "model.n_layer", "transformer blocks");
    params_ov.bind_value(params_cmd, "--n-head", "model.n_head", "attention heads");
    params_ov.bind_value(params_cmd, "--n-embd", "model.n_embd", "hidden width");
    params_ov.bind_value(params_cmd, "--block-size", "model.block_size", "context length");
    params_ov.bind_value(params_cmd, "--vocab", "model.vocab_size", "vocabulary size");

    CLI::App* estimate_cmd =
        app.add_subcommand("estimate", "score-residual fit and MMSE/MAP comparison");
    add_shared(estimate_cmd, estimate_ov);
    estimate_ov.bind_value(estimate_cmd, "--checkpoint", "run.checkpoint",
                           "generic-variant checkpoint for realism mode");
    estimate_ov.bind_value(estimate_cmd, "--corpus", "run.corpus", "corpus for realism mode");
    estimate_ov.bind_value(estimate_cmd, "--pairs", "estimate.pairs", "simulated (S, Y) pairs");
    estimate_ov.bind_value(estimate_cmd, "--seq-len", "estimate.t", "synthetic sequence length");
    estimate_ov.bind_value(estimate_cmd, "--hidden", "estimate.h", "synthetic hidden width");
    estimate_ov.bind_value(estimate_cmd, "--n-head", "estimate.n_head", "synthetic head count");
    estimate_ov.bind_switch(estimate_cmd, "--tied-weights", "estimate.tied_weights",
                            "use W_k := W_q (residuals vanish)");
    estimate_ov.bind_switch(estimate_cmd, "--full-matrix", "estimate.full_matrix",
                            "pool the full score matrix, not just the causal region");

    CLI::App* eval_cmd = app.add_subcommand("eval", "frozen-backbone classifier fine-tune");
    add_shared(eval_cmd, eval_ov);
    eval_ov.bind_value(eval_cmd, "--checkpoint", "run.checkpoint", "backbone checkpoint");
    eval_ov.bind_value(eval_cmd, "--task", "run.task", "labeled task file (text<TAB>label)");
    eval_ov.bind_value(eval_cmd, "--steps", "eval.steps", "head training steps");
    eval_ov.bind_value(eval_cmd, "--lr", "eval.lr", "head learning rate");
    eval_ov.bind_value(eval_cmd, "--classes", "eval.classes", "number of classes");
    eval_ov.bind_value(eval_cmd, "--holdout", "eval.holdout_fraction", "held-out fraction");
    eval_ov.bind_switch(eval_cmd, "--shuffle-labels", "eval.shuffle_labels",
                        "destroy the text-label relation (chance-level control)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train_cmd->parsed()) return run_train(train_ov.merged());
        if (sample_cmd->parsed()) return run_sample(sample_ov.merged());
        if (params_cmd->parsed()) return run_params(params_ov.merged());
        if (estimate_cmd->parsed()) return run_estimate(estimate_ov.merged());
        if (eval_cmd->parsed()) return run_eval(eval_ov.merged());
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const DegenerateError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
    return 0;
}
