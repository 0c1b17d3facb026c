#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "attnlab/attention.hpp"
#include "attnlab/noise.hpp"
#include "attnlab/rng.hpp"
#include "attnlab/tensor.hpp"

namespace attnlab {

struct ModelConfig {
    int n_layer = 4;
    int n_head = 4;
    int n_embd = 128;
    int block_size = 128;
    int vocab_size = 0; // must be set (> 0) before building
    Variant variant = Variant::Base;
    bool tie_embeddings = true;

    void validate() const; // ConfigError on violation
    bool operator==(const ModelConfig&) const = default;
};

struct NamedParam {
    std::string name;
    Tensor t;
    bool decay = false;   // weight decay applies (2D projection weights only)
    bool is_noise = false;
};

struct Block {
    Tensor ln1_g, ln1_b;
    AttentionWeights attn;
    Tensor ln2_g, ln2_b;
    Tensor fc_w, fc_b;     // [H, 4H]
    Tensor proj_w, proj_b; // [4H, H]
    LayerNoiseParams noise; // undefined for Base / Symmetric
};

// Supplies per-layer noise draws during a forward pass.
class NoiseSource {
  public:
    virtual ~NoiseSource() = default;
    virtual NoiseDraw draw(const LayerNoiseParams& params, int layer, int n_head, int t_len) = 0;
};

// Fresh eps from the given stream on every call.
class FreshNoise : public NoiseSource {
  public:
    explicit FreshNoise(Rng& rng) : rng_(&rng) {}
    NoiseDraw draw(const LayerNoiseParams& params, int layer, int n_head, int t_len) override;

  private:
    Rng* rng_;
};

struct Model {
    ModelConfig cfg;
    Tensor wte;         // [V, H]
    Tensor wpe;         // [T, H]
    std::vector<Block> blocks;
    Tensor lnf_g, lnf_b;
    Tensor lm_w;        // [V, H], only when embeddings are untied
    std::vector<NamedParam> params; // every trainable tensor, fixed order, noise last
    std::string vocab_chars;        // id -> char listing carried into checkpoints; may be empty

    // Post-final-norm hidden states [T', H]. If ln1_out is non-null it
    // receives each block's normalized attention input (estimator hook).
    Tensor forward_hidden(std::span<const int> tokens, NoiseSource* noise,
                          std::vector<Tensor>* ln1_out = nullptr) const;
    // Logits [T', V]. Noisy variants require a noise source.
    Tensor forward(std::span<const int> tokens, NoiseSource* noise) const;

    std::vector<LayerNoiseParams> noise_layers() const;
    std::vector<NamedParam> trainable_params(bool include_noise = true) const;
};

// Eps drawn once at construction (one block_size^2 buffer per layer, or per
// layer per head for V2); every draw() reuses them, so values change only
// through mu / log_var.
class FrozenNoise : public NoiseSource {
  public:
    FrozenNoise(const ModelConfig& cfg, Rng& rng);
    NoiseDraw draw(const LayerNoiseParams& params, int layer, int n_head, int t_len) override;

  private:
    int eps_dim_;
    std::vector<std::vector<std::vector<double>>> eps_; // [layer][head|0][eps_dim^2]
};

// Weight init: normal std 0.02 (residual-feeding projections scaled by
// 1/sqrt(2L)), zero biases, unit norm gains; noise mu and log_var each
// 0.01 * N(0,1) so sigma starts near 1. Same seed => bit-identical weights.
Model build_model(const ModelConfig& cfg, uint64_t init_seed);

struct ParamReport {
    long long total_params = 0;
    long long qk_projection_params = 0; // W_q/W_k matrices and their biases
    long long noise_params = 0;         // 0 / 0 / 2L / 2NL
    double reduction_vs_base = 0.0;     // (base_total - total) / base_total
    long long activation_qk_bytes_per_layer = 0; // Q (+K for Base) activations at full context
};

ParamReport count_params(const ModelConfig& cfg);

// Autoregressive sampling. temperature 0 is greedy argmax; otherwise tokens
// are drawn from softmax(logits / temperature). The prompt is included in
// the returned sequence. Contexts longer than block_size keep the suffix.
std::vector<int> generate(const Model& model, const std::vector<int>& prompt, int max_new,
                          double temperature, Rng& sample_rng, NoiseSource* noise);

// Checkpoint container format (full byte layout in README):
// magic "ATNLABCK", u32 version, config block, vocab listing, named f64
// arrays. Round-trips are bit-exact.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);
// Like load_checkpoint but rejects files whose stored config differs from
// `expect` with CheckpointShapeError.
Model load_checkpoint_expect(const std::string& path, const ModelConfig& expect);

} // namespace attnlab
