#include "attnlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "attnlab/data.hpp"
#include "attnlab/errors.hpp"

namespace attnlab {

void TrainConfig::validate() const {
    if (warmup_iters < 1) throw ConfigError("warmup_iters must be >= 1");
    if (warmup_iters >= decay_iters)
        throw ConfigError("warmup_iters (" + std::to_string(warmup_iters) +
                          ") must be smaller than decay_iters (" + std::to_string(decay_iters) +
                          ")");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (accum_steps < 1) throw ConfigError("accum_steps must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_iters < 0) throw ConfigError("max_iters must be >= 0");
    if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
    if (eval_iters < 1) throw ConfigError("eval_iters must be >= 1");
    if (!(lr_max > 0.0) || !(lr_min > 0.0) || lr_min > lr_max)
        throw ConfigError("learning rates must satisfy 0 < lr_min <= lr_max");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ConfigError("betas must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (!(val_fraction > 0.0) || !(val_fraction < 1.0))
        throw ConfigError("val_fraction must lie strictly between 0 and 1");
}

double lr_at(int step, const TrainConfig& cfg) {
    if (step < 0) throw UsageError("lr_at: negative step");
    if (step < cfg.warmup_iters)
        return cfg.lr_max * (step + 1) / static_cast<double>(cfg.warmup_iters);
    if (step >= cfg.decay_iters) return cfg.lr_min;
    const double progress = static_cast<double>(step - cfg.warmup_iters) /
                            static_cast<double>(cfg.decay_iters - cfg.warmup_iters);
    return cfg.lr_min +
           0.5 * (1.0 + std::cos(std::numbers::pi * progress)) * (cfg.lr_max - cfg.lr_min);
}

LossParts global_loss(const Tensor& logits, std::span<const int> targets,
                      const std::vector<LayerNoiseParams>& noise_layers, double alpha) {
    LossParts parts;
    parts.nll = cross_entropy_logits(logits, targets);
    if (alpha == 0.0 || noise_layers.empty()) {
        parts.total = parts.nll;
        return parts;
    }
    parts.kl = global_kl(noise_layers);
    parts.total = add(parts.nll, scalar_mul(parts.kl, alpha));
    return parts;
}

double clip_grad_norm(const std::vector<NamedParam>& params, double max_norm) {
    double sq = 0.0;
    for (const NamedParam& p : params) {
        if (!p.t.has_grad()) continue;
        for (const double g : p.t.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (const NamedParam& p : params) {
            if (!p.t.has_grad()) continue;
            for (double& g : p.t.grad()) g *= scale;
        }
    }
    return norm;
}

AdamW::AdamW(std::vector<NamedParam> params, double beta1, double beta2, double weight_decay,
             double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay),
      eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const NamedParam& p : params_) {
        m_.emplace_back(p.t.data().size(), 0.0);
        v_.emplace_back(p.t.data().size(), 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        NamedParam& p = params_[i];
        const std::vector<double>& g = p.t.grad();
        for (const double gv : g)
            if (std::isnan(gv))
                throw NumericError("NaN gradient in parameter '" + p.name + "'");
        std::vector<double>& th = p.t.data();
        std::vector<double>& m = m_[i];
        std::vector<double>& v = v_[i];
        const double wd = p.decay ? weight_decay_ : 0.0;
        for (size_t j = 0; j < th.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            th[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd * th[j]);
        }
    }
    zero_grads();
}

void AdamW::zero_grads() {
    for (const NamedParam& p : params_) p.t.zero_grad();
}

std::string metrics_csv_header() { return "step,lr,train_loss,nll,kl,val_loss,grad_norm,tokens_seen"; }

namespace {

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

std::string metrics_csv_row(const StepRow& row) {
    std::string s = std::to_string(row.step) + ",";
    if (row.has_train_fields) {
        s += fmt_g17(row.lr) + "," + fmt_g17(row.train_loss) + "," + fmt_g17(row.nll) + "," +
             fmt_g17(row.kl) + ",";
    } else {
        s += "0,,,,";
    }
    if (row.val_loss.has_value()) s += fmt_g17(*row.val_loss);
    s += ",";
    if (row.has_train_fields) s += fmt_g17(row.grad_norm);
    s += "," + std::to_string(row.tokens_seen);
    return s;
}

double evaluate_nll(const Model& model, const std::vector<int>& val_tokens, int batch_size,
                    int t_len, int eval_iters, uint64_t eval_seed) {
    // Batch offsets and noise draws come from separate streams so the
    // batches a variant sees do not depend on whether it consumes noise.
    Rng batch_rng(substream(eval_seed, "eval-data"));
    Rng noise_rng(substream(eval_seed, "eval-noise"));
    FreshNoise fresh(noise_rng);
    NoiseSource* noise = variant_is_noisy(model.cfg.variant) ? &fresh : nullptr;
    const double inv = 1.0 / (static_cast<double>(eval_iters) * batch_size);
    double total = 0.0;
    for (int it = 0; it < eval_iters; ++it) {
        const Batch batch = next_batch(val_tokens, batch_size, t_len, batch_rng);
        for (int i = 0; i < batch.b; ++i) {
            const std::span<const int> in(batch.inputs.data() + static_cast<size_t>(i) * t_len,
                                          static_cast<size_t>(t_len));
            const std::span<const int> tg(batch.targets.data() + static_cast<size_t>(i) * t_len,
                                          static_cast<size_t>(t_len));
            const Tensor logits = model.forward(in, noise);
            total += cross_entropy_logits(logits, tg).item() * inv;
        }
    }
    return total;
}

TrainResult train(Model& model, const std::vector<int>& train_tokens,
                  const std::vector<int>& val_tokens, const TrainConfig& cfg, const TrainIO& io) {
    cfg.validate();
    const bool noisy = variant_is_noisy(model.cfg.variant);
    const bool train_noise = noisy && !cfg.freeze_noise;
    const int t_len = model.cfg.block_size;

    AdamW adam(model.trainable_params(train_noise), cfg.beta1, cfg.beta2, cfg.weight_decay);
    Rng data_rng(substream(cfg.seed, "data"));
    Rng noise_rng(substream(cfg.seed, "noise"));
    const uint64_t eval_seed = substream(cfg.seed, "eval");

    std::ofstream metrics;
    if (!io.metrics_path.empty()) {
        metrics.open(io.metrics_path, std::ios::binary | std::ios::trunc);
        if (!metrics) throw DataError("cannot open metrics file: " + io.metrics_path);
        metrics << metrics_csv_header() << "\n";
    }
    const auto emit = [&](const StepRow& row) {
        if (metrics.is_open()) metrics << metrics_csv_row(row) << "\n";
    };

    TrainResult result;
    result.initial_val =
        evaluate_nll(model, val_tokens, cfg.batch_size, t_len, cfg.eval_iters, eval_seed);
    result.best_val = result.initial_val;
    result.best_step = 0;
    result.final_val = result.initial_val;
    StepRow row0;
    row0.step = 0;
    row0.has_train_fields = false;
    row0.val_loss = result.initial_val;
    result.rows.push_back(row0);
    emit(row0);
    if (!io.best_ckpt_path.empty()) save_checkpoint(model, io.best_ckpt_path);

    const double inv = 1.0 / (static_cast<double>(cfg.batch_size) * cfg.accum_steps);
    long long tokens_seen = 0;
    for (int s = 1; s <= cfg.max_iters; ++s) {
        try {
            const double lr = lr_at(s - 1, cfg);
            double nll_value = 0.0;
            for (int a = 0; a < cfg.accum_steps; ++a) {
                const Batch batch = next_batch(train_tokens, cfg.batch_size, t_len, data_rng);
                for (int i = 0; i < batch.b; ++i) {
                    const std::span<const int> in(
                        batch.inputs.data() + static_cast<size_t>(i) * t_len,
                        static_cast<size_t>(t_len));
                    const std::span<const int> tg(
                        batch.targets.data() + static_cast<size_t>(i) * t_len,
                        static_cast<size_t>(t_len));
                    Tape tape;
                    Tensor scaled;
                    {
                        Tape::Scope scope(tape);
                        FreshNoise fresh(noise_rng);
                        const Tensor logits = model.forward(in, noisy ? &fresh : nullptr);
                        const Tensor loss = cross_entropy_logits(logits, tg);
                        nll_value += loss.item() * inv;
                        scaled = scalar_mul(loss, inv);
                    }
                    tape.backward(scaled);
                }
            }
            double kl_value = 0.0;
            if (noisy) {
                if (cfg.alpha > 0.0 && !cfg.freeze_noise) {
                    Tape tape;
                    Tensor weighted;
                    Tensor kl;
                    {
                        Tape::Scope scope(tape);
                        kl = global_kl(model.noise_layers());
                        weighted = scalar_mul(kl, cfg.alpha);
                    }
                    tape.backward(weighted);
                    kl_value = kl.item();
                } else {
                    for (const LayerNoiseParams& lp : model.noise_layers())
                        kl_value += kl_unit_gaussian_value(lp);
                }
            }
            const double grad_norm = clip_grad_norm(adam.params(), cfg.grad_clip);
            adam.step(lr);
            tokens_seen += static_cast<long long>(cfg.batch_size) * cfg.accum_steps * t_len;

            StepRow row;
            row.step = s;
            row.lr = lr;
            row.nll = nll_value;
            row.kl = kl_value;
            // kl is logged as measured even when the term is skipped (it can
            // be +inf at sigma == 0); the objective only contained it when it
            // was actually applied, so don't fold 0 * inf into the loss.
            const bool kl_applied = noisy && cfg.alpha > 0.0 && !cfg.freeze_noise;
            row.train_loss = kl_applied ? nll_value + cfg.alpha * kl_value : nll_value;
            row.grad_norm = grad_norm;
            row.tokens_seen = tokens_seen;
            if (s % cfg.eval_interval == 0 || s == cfg.max_iters) {
                const double val = evaluate_nll(model, val_tokens, cfg.batch_size, t_len,
                                                cfg.eval_iters, eval_seed);
                row.val_loss = val;
                result.final_val = val;
                if (val < result.best_val) {
                    result.best_val = val;
                    result.best_step = s;
                    if (!io.best_ckpt_path.empty()) save_checkpoint(model, io.best_ckpt_path);
                }
            }
            result.rows.push_back(row);
            emit(row);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (step " + std::to_string(s) + ")");
        }
    }
    if (!io.last_ckpt_path.empty()) save_checkpoint(model, io.last_ckpt_path);
    if (metrics.is_open()) {
        metrics.flush();
        if (!metrics) throw DataError("metrics write failed: " + io.metrics_path);
    }
    return result;
}

FinetuneResult finetune_classifier(const Model& model,
                                   const std::vector<std::pair<std::vector<int>, int>>& examples,
                                   int n_classes, const FinetuneConfig& cfg) {
    if (n_classes < 2) throw UsageError("classifier needs at least 2 classes (got " +
                                        std::to_string(n_classes) + ")");
    const int n = static_cast<int>(examples.size());
    if (n < 2) throw DataError("classifier needs at least 2 labeled examples");
    if (!(cfg.holdout_fraction > 0.0) || !(cfg.holdout_fraction < 1.0))
        throw UsageError("holdout fraction must lie strictly between 0 and 1");

    const int h = model.cfg.n_embd;
    const int block = model.cfg.block_size;
    const bool noisy = variant_is_noisy(model.cfg.variant);
    Rng noise_rng(substream(cfg.seed, "finetune-noise"));
    FreshNoise fresh(noise_rng);

    // Features never change, so extract them once with no tape in scope.
    std::vector<double> feats(static_cast<size_t>(n) * h);
    std::vector<int> labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const std::vector<int>& toks = examples[static_cast<size_t>(i)].first;
        if (toks.empty()) throw DataError("empty example sequence");
        const int t = std::min<int>(static_cast<int>(toks.size()), block);
        const std::span<const int> window(toks.data() + toks.size() - static_cast<size_t>(t),
                                          static_cast<size_t>(t));
        const Tensor hid = model.forward_hidden(window, noisy ? &fresh : nullptr);
        const double* last = hid.ptr() + static_cast<size_t>(t - 1) * h;
        std::copy(last, last + h, feats.begin() + static_cast<size_t>(i) * h);
        labels[static_cast<size_t>(i)] = examples[static_cast<size_t>(i)].second;
    }
    if (cfg.shuffle_labels) {
        Rng shuffle_rng(substream(cfg.seed, "label-shuffle"));
        for (int i = n - 1; i > 0; --i) {
            const int j = static_cast<int>(shuffle_rng.uniform_int(static_cast<uint64_t>(i) + 1));
            std::swap(labels[static_cast<size_t>(i)], labels[static_cast<size_t>(j)]);
        }
    }

    Rng split_rng(substream(cfg.seed, "finetune-split"));
    std::vector<int> perm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(split_rng.uniform_int(static_cast<uint64_t>(i) + 1));
        std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }
    const int n_hold = static_cast<int>(std::llround(n * cfg.holdout_fraction));
    if (n_hold < 1 || n - n_hold < 1)
        throw DataError("holdout split leaves an empty partition (" + std::to_string(n) +
                        " examples, fraction " + std::to_string(cfg.holdout_fraction) + ")");
    const int n_train = n - n_hold;

    std::vector<double> train_feats(static_cast<size_t>(n_train) * h);
    std::vector<int> train_labels(static_cast<size_t>(n_train));
    for (int i = 0; i < n_train; ++i) {
        const int src = perm[static_cast<size_t>(n_hold + i)];
        std::copy_n(feats.begin() + static_cast<size_t>(src) * h, h,
                    train_feats.begin() + static_cast<size_t>(i) * h);
        train_labels[static_cast<size_t>(i)] = labels[static_cast<size_t>(src)];
    }
    const Tensor x_train =
        Tensor::from_data({n_train, h}, std::move(train_feats));
    const Tensor head_w = Tensor::param({n_classes, h}, "head.w");
    const Tensor head_b = Tensor::param({n_classes}, "head.b");
    AdamW adam({NamedParam{"head.w", head_w, false, false}, NamedParam{"head.b", head_b, false, false}},
               0.9, 0.95, 0.0);
    for (int s = 0; s < cfg.steps; ++s) {
        Tape tape;
        Tensor loss;
        {
            Tape::Scope scope(tape);
            const Tensor logits = add_row_broadcast(matmul_nt(x_train, head_w), head_b);
            loss = cross_entropy_logits(logits, train_labels);
        }
        tape.backward(loss);
        adam.step(cfg.lr);
    }

    FinetuneResult result;
    result.head_w = head_w;
    result.head_b = head_b;
    result.holdout_count = n_hold;
    int correct = 0;
    for (int i = 0; i < n_hold; ++i) {
        const int src = perm[static_cast<size_t>(i)];
        const double* f = feats.data() + static_cast<size_t>(src) * h;
        int best = 0;
        double best_score = 0.0;
        for (int c = 0; c < n_classes; ++c) {
            const double* w = head_w.ptr() + static_cast<size_t>(c) * h;
            double score = head_b.ptr()[c];
            for (int j = 0; j < h; ++j) score += w[j] * f[j];
            if (c == 0 || score > best_score) {
                best = c;
                best_score = score;
            }
        }
        if (best == labels[static_cast<size_t>(src)]) ++correct;
    }
    result.accuracy = static_cast<double>(correct) / n_hold;
    return result;
}

} // namespace attnlab
