#include "attnlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "attnlab/errors.hpp"

namespace attnlab {

void ModelConfig::validate() const {
    if (n_layer < 1 || n_head < 1 || n_embd < 1 || block_size < 1)
        throw ConfigError("model config: all dimensions must be >= 1");
    if (n_embd % n_head != 0)
        throw ConfigError("model config: hidden dim " + std::to_string(n_embd) +
                          " not divisible by " + std::to_string(n_head) + " heads");
    if (vocab_size < 1)
        throw ConfigError("model config: vocab size must be >= 1 (got " +
                          std::to_string(vocab_size) + ")");
}

namespace {

enum class Init { Normal02, Resid, Zero, One, Noise001 };
enum class Cat { Other, QK, Noise };

struct Slot {
    std::string name;
    std::vector<int> shape;
    Init init;
    bool decay;
    Cat cat;
};

// Single source of truth for what parameters exist: build_model,
// count_params and the checkpoint loader all walk the same list. Noise
// parameters come last so the init stream for backbone weights is identical
// across the weight-shared variants.
void walk_params(const ModelConfig& cfg, const std::function<void(const Slot&)>& f) {
    const int h = cfg.n_embd;
    f({"wte", {cfg.vocab_size, h}, Init::Normal02, false, Cat::Other});
    f({"wpe", {cfg.block_size, h}, Init::Normal02, false, Cat::Other});
    for (int i = 0; i < cfg.n_layer; ++i) {
        const std::string p = "h" + std::to_string(i) + ".";
        f({p + "ln1.g", {h}, Init::One, false, Cat::Other});
        f({p + "ln1.b", {h}, Init::Zero, false, Cat::Other});
        f({p + "attn.w_q", {h, h}, Init::Normal02, true, Cat::QK});
        f({p + "attn.b_q", {h}, Init::Zero, false, Cat::QK});
        if (variant_has_wk(cfg.variant)) {
            f({p + "attn.w_k", {h, h}, Init::Normal02, true, Cat::QK});
            f({p + "attn.b_k", {h}, Init::Zero, false, Cat::QK});
        }
        f({p + "attn.w_v", {h, h}, Init::Normal02, true, Cat::Other});
        f({p + "attn.b_v", {h}, Init::Zero, false, Cat::Other});
        f({p + "attn.w_o", {h, h}, Init::Resid, true, Cat::Other});
        f({p + "attn.b_o", {h}, Init::Zero, false, Cat::Other});
        f({p + "ln2.g", {h}, Init::One, false, Cat::Other});
        f({p + "ln2.b", {h}, Init::Zero, false, Cat::Other});
        f({p + "mlp.fc_w", {h, 4 * h}, Init::Normal02, true, Cat::Other});
        f({p + "mlp.fc_b", {4 * h}, Init::Zero, false, Cat::Other});
        f({p + "mlp.proj_w", {4 * h, h}, Init::Resid, true, Cat::Other});
        f({p + "mlp.proj_b", {h}, Init::Zero, false, Cat::Other});
    }
    f({"ln_f.g", {h}, Init::One, false, Cat::Other});
    f({"ln_f.b", {h}, Init::Zero, false, Cat::Other});
    if (!cfg.tie_embeddings)
        f({"lm_head.w", {cfg.vocab_size, h}, Init::Normal02, true, Cat::Other});
    if (variant_is_noisy(cfg.variant)) {
        const int e = cfg.variant == Variant::NoiseV2 ? cfg.n_head : 1;
        for (int i = 0; i < cfg.n_layer; ++i) {
            const std::string p = "h" + std::to_string(i) + ".";
            f({p + "noise.mu", {e}, Init::Noise001, false, Cat::Noise});
            f({p + "noise.log_var", {e}, Init::Noise001, false, Cat::Noise});
        }
    }
}

} // namespace

Model build_model(const ModelConfig& cfg, uint64_t init_seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(init_seed);
    const double resid_std = 0.02 / std::sqrt(2.0 * cfg.n_layer);
    std::map<std::string, Tensor> by_name;
    walk_params(cfg, [&](const Slot& s) {
        Tensor t = Tensor::param(s.shape, s.name);
        std::vector<double>& d = t.data();
        switch (s.init) {
            case Init::Normal02:
                for (double& v : d) v = 0.02 * rng.normal();
                break;
            case Init::Resid:
                for (double& v : d) v = resid_std * rng.normal();
                break;
            case Init::Zero: break;
            case Init::One: std::fill(d.begin(), d.end(), 1.0); break;
            case Init::Noise001:
                for (double& v : d) v = 0.01 * rng.normal();
                break;
        }
        m.params.push_back(NamedParam{s.name, t, s.decay, s.cat == Cat::Noise});
        by_name.emplace(s.name, t);
    });

    const auto get = [&](const std::string& n) { return by_name.at(n); };
    m.wte = get("wte");
    m.wpe = get("wpe");
    m.lnf_g = get("ln_f.g");
    m.lnf_b = get("ln_f.b");
    if (!cfg.tie_embeddings) m.lm_w = get("lm_head.w");
    m.blocks.resize(static_cast<size_t>(cfg.n_layer));
    for (int i = 0; i < cfg.n_layer; ++i) {
        const std::string p = "h" + std::to_string(i) + ".";
        Block& b = m.blocks[static_cast<size_t>(i)];
        b.ln1_g = get(p + "ln1.g");
        b.ln1_b = get(p + "ln1.b");
        b.attn.w_q = get(p + "attn.w_q");
        b.attn.b_q = get(p + "attn.b_q");
        if (variant_has_wk(cfg.variant)) {
            b.attn.w_k = get(p + "attn.w_k");
            b.attn.b_k = get(p + "attn.b_k");
        }
        b.attn.w_v = get(p + "attn.w_v");
        b.attn.b_v = get(p + "attn.b_v");
        b.attn.w_o = get(p + "attn.w_o");
        b.attn.b_o = get(p + "attn.b_o");
        b.ln2_g = get(p + "ln2.g");
        b.ln2_b = get(p + "ln2.b");
        b.fc_w = get(p + "mlp.fc_w");
        b.fc_b = get(p + "mlp.fc_b");
        b.proj_w = get(p + "mlp.proj_w");
        b.proj_b = get(p + "mlp.proj_b");
        if (variant_is_noisy(cfg.variant)) {
            b.noise.mu = get(p + "noise.mu");
            b.noise.log_var = get(p + "noise.log_var");
        }
    }
    return m;
}

ParamReport count_params(const ModelConfig& cfg) {
    cfg.validate();
    const auto total_of = [](const ModelConfig& c) {
        long long total = 0;
        walk_params(c, [&](const Slot& s) {
            long long n = 1;
            for (const int d : s.shape) n *= d;
            total += n;
        });
        return total;
    };
    ParamReport r;
    walk_params(cfg, [&](const Slot& s) {
        long long n = 1;
        for (const int d : s.shape) n *= d;
        r.total_params += n;
        if (s.cat == Cat::QK) r.qk_projection_params += n;
        if (s.cat == Cat::Noise) r.noise_params += n;
    });
    ModelConfig base_cfg = cfg;
    base_cfg.variant = Variant::Base;
    const long long base_total = total_of(base_cfg);
    r.reduction_vs_base =
        static_cast<double>(base_total - r.total_params) / static_cast<double>(base_total);
    const long long act = static_cast<long long>(cfg.block_size) * cfg.n_embd * 8;
    r.activation_qk_bytes_per_layer = variant_has_wk(cfg.variant) ? 2 * act : act;
    return r;
}

NoiseDraw FreshNoise::draw(const LayerNoiseParams& params, int /*layer*/, int n_head, int t_len) {
    return sample_noise(params, n_head, t_len, *rng_);
}

FrozenNoise::FrozenNoise(const ModelConfig& cfg, Rng& rng) : eps_dim_(cfg.block_size) {
    if (!variant_is_noisy(cfg.variant)) return;
    const int per_layer = cfg.variant == Variant::NoiseV2 ? cfg.n_head : 1;
    const size_t tt = static_cast<size_t>(eps_dim_) * eps_dim_;
    eps_.resize(static_cast<size_t>(cfg.n_layer));
    for (auto& layer : eps_) {
        layer.resize(static_cast<size_t>(per_layer));
        for (auto& buf : layer) {
            buf.resize(tt);
            for (double& v : buf) v = rng.normal();
        }
    }
}

NoiseDraw FrozenNoise::draw(const LayerNoiseParams& params, int layer, int n_head, int t_len) {
    if (layer < 0 || layer >= static_cast<int>(eps_.size()))
        throw UsageError("FrozenNoise: layer " + std::to_string(layer) + " out of range");
    return noise_from_eps(params, n_head, t_len, eps_[static_cast<size_t>(layer)], eps_dim_);
}

Tensor Model::forward_hidden(std::span<const int> tokens, NoiseSource* noise,
                             std::vector<Tensor>* ln1_out) const {
    if (tokens.empty()) throw UsageError("forward: empty token sequence");
    const int t = static_cast<int>(tokens.size());
    if (t > cfg.block_size)
        throw LengthError("forward: sequence of " + std::to_string(t) +
                          " exceeds context of " + std::to_string(cfg.block_size));
    if (variant_is_noisy(cfg.variant) && noise == nullptr)
        throw UsageError("forward: noisy variant requires a noise source");

    Tensor x = add(embedding(tokens, wte), slice_rows(wpe, 0, t));
    for (size_t i = 0; i < blocks.size(); ++i) {
        const Block& b = blocks[i];
        const Tensor xn = layer_norm(x, b.ln1_g, b.ln1_b);
        if (ln1_out != nullptr) ln1_out->push_back(xn);
        NoiseDraw nd;
        const NoiseDraw* ndp = nullptr;
        if (variant_is_noisy(cfg.variant)) {
            nd = noise->draw(b.noise, static_cast<int>(i), cfg.n_head, t);
            ndp = &nd;
        }
        x = add(x, mha_forward(xn, b.attn, cfg.variant, cfg.n_head, ndp));
        const Tensor mn = layer_norm(x, b.ln2_g, b.ln2_b);
        const Tensor hidden = gelu(add_row_broadcast(matmul(mn, b.fc_w), b.fc_b));
        x = add(x, add_row_broadcast(matmul(hidden, b.proj_w), b.proj_b));
    }
    return layer_norm(x, lnf_g, lnf_b);
}

Tensor Model::forward(std::span<const int> tokens, NoiseSource* noise) const {
    const Tensor h = forward_hidden(tokens, noise);
    return matmul_nt(h, cfg.tie_embeddings ? wte : lm_w);
}

std::vector<LayerNoiseParams> Model::noise_layers() const {
    std::vector<LayerNoiseParams> out;
    for (const Block& b : blocks)
        if (b.noise.defined()) out.push_back(b.noise);
    return out;
}

std::vector<NamedParam> Model::trainable_params(bool include_noise) const {
    std::vector<NamedParam> out;
    for (const NamedParam& p : params)
        if (include_noise || !p.is_noise) out.push_back(p);
    return out;
}

std::vector<int> generate(const Model& model, const std::vector<int>& prompt, int max_new,
                          double temperature, Rng& sample_rng, NoiseSource* noise) {
    if (prompt.empty()) throw UsageError("generate: empty prompt");
    if (temperature < 0.0) throw UsageError("generate: negative temperature");
    if (max_new < 0) throw UsageError("generate: negative max_new");
    const int v = model.cfg.vocab_size;
    std::vector<int> seq = prompt;
    std::vector<double> probs(static_cast<size_t>(v));
    for (int step = 0; step < max_new; ++step) {
        const int ctx = std::min<int>(static_cast<int>(seq.size()), model.cfg.block_size);
        const std::span<const int> window(seq.data() + seq.size() - static_cast<size_t>(ctx),
                                          static_cast<size_t>(ctx));
        const Tensor logits = model.forward(window, noise);
        const double* row = logits.ptr() + static_cast<size_t>(ctx - 1) * v;
        int pick = 0;
        if (temperature == 0.0) {
            for (int j = 1; j < v; ++j)
                if (row[j] > row[pick]) pick = j;
        } else {
            double mx = row[0];
            for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
            double s = 0.0;
            for (int j = 0; j < v; ++j) {
                probs[static_cast<size_t>(j)] = std::exp((row[j] - mx) / temperature);
                s += probs[static_cast<size_t>(j)];
            }
            const double u = sample_rng.uniform() * s;
            double acc = 0.0;
            pick = v - 1;
            for (int j = 0; j < v; ++j) {
                acc += probs[static_cast<size_t>(j)];
                if (u < acc) {
                    pick = j;
                    break;
                }
            }
        }
        seq.push_back(pick);
    }
    return seq;
}

} // namespace attnlab
