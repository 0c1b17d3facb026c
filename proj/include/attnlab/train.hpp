#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "attnlab/model.hpp"
#include "attnlab/noise.hpp"
#include "attnlab/tensor.hpp"

namespace attnlab {

struct TrainConfig {
    double lr_max = 6e-4;
    double lr_min = 6e-5;
    int warmup_iters = 100;
    int decay_iters = 2000;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.1;
    double grad_clip = 1.0;
    int accum_steps = 1;
    int batch_size = 16;
    double alpha = 5e-6; // KL weight
    int max_iters = 2000;
    int eval_interval = 100;
    int eval_iters = 8;
    double val_fraction = 0.1;
    uint64_t seed = 1337;
    // Keep noise mu / log_var out of the optimizer and skip the KL update.
    bool freeze_noise = false;

    void validate() const; // ConfigError
};

// Linear warmup to lr_max over warmup_iters, cosine to lr_min at
// decay_iters, constant lr_min after.
double lr_at(int step, const TrainConfig& cfg);

struct LossParts {
    Tensor total;
    Tensor nll;
    Tensor kl; // undefined when alpha == 0 or there are no noise layers
};

// total = nll + alpha * sum of per-layer KL. With alpha == 0 total IS the
// nll tensor, exactly.
LossParts global_loss(const Tensor& logits, std::span<const int> targets,
                      const std::vector<LayerNoiseParams>& noise_layers, double alpha);

// Global L2 norm across every grad; scales grads down to max_norm when
// exceeded. Returns the pre-clip norm.
double clip_grad_norm(const std::vector<NamedParam>& params, double max_norm);

// Decoupled AdamW. decay applies only to params flagged for it. step()
// consumes and clears grads; a NaN grad aborts with the parameter's name.
class AdamW {
  public:
    AdamW(std::vector<NamedParam> params, double beta1, double beta2, double weight_decay,
          double eps = 1e-8);
    void step(double lr);
    void zero_grads();
    const std::vector<NamedParam>& params() const { return params_; }

  private:
    std::vector<NamedParam> params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, weight_decay_, eps_;
    long long t_ = 0;
};

struct StepRow {
    int step = 0;
    double lr = 0.0;
    double train_loss = 0.0; // nll + alpha * kl as seen this step
    double nll = 0.0;
    double kl = 0.0;
    double grad_norm = 0.0;
    long long tokens_seen = 0;
    std::optional<double> val_loss; // mean validation NLL, eval steps only
    bool has_train_fields = true;   // false only for the step-0 row
};

std::string metrics_csv_header();
std::string metrics_csv_row(const StepRow& row);

struct TrainIO {
    std::string metrics_path;   // CSV, written incrementally; empty -> skip
    std::string best_ckpt_path; // checkpoint at the best validation loss
    std::string last_ckpt_path; // checkpoint after the final step
};

struct TrainResult {
    std::vector<StepRow> rows;
    double initial_val = 0.0;
    double best_val = 0.0;
    int best_step = 0;
    double final_val = 0.0;
};

// Optimizer steps 1..max_iters; each runs accum_steps micro-batches of
// batch_size sequences, backpropagating per-sequence NLL scaled by
// 1/(batch*accum). The KL term enters once per optimizer step at full
// alpha. Validation (NLL only, fixed batches, fresh eval noise stream) runs
// at step 0, every eval_interval, and at the last step.
TrainResult train(Model& model, const std::vector<int>& train_tokens,
                  const std::vector<int>& val_tokens, const TrainConfig& cfg,
                  const TrainIO& io = {});

// Mean NLL over eval_iters fixed batches drawn with the given seed.
double evaluate_nll(const Model& model, const std::vector<int>& val_tokens, int batch_size,
                    int t_len, int eval_iters, uint64_t eval_seed);

struct FinetuneConfig {
    int steps = 300;
    double lr = 0.05;
    double holdout_fraction = 0.25;
    uint64_t seed = 7;
    bool shuffle_labels = false; // control: destroys the text-label relation
};

struct FinetuneResult {
    Tensor head_w; // [n_classes, H]
    Tensor head_b; // [n_classes]
    double accuracy = 0.0;
    int holdout_count = 0;
};

// Last-token pooling on a frozen backbone: features are the final-position
// hidden state after the last layer norm, extracted once per example; only
// the new linear head trains. Returns held-out accuracy.
FinetuneResult finetune_classifier(const Model& model,
                                   const std::vector<std::pair<std::vector<int>, int>>& examples,
                                   int n_classes, const FinetuneConfig& cfg);

} // namespace attnlab
