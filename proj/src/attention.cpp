#include "attnlab/attention.hpp"

#include <cmath>

#include "attnlab/errors.hpp"

namespace attnlab {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Base: return "base";
        case Variant::Symmetric: return "symmetric";
        case Variant::NoiseV1: return "noise-v1";
        case Variant::NoiseV2: return "noise-v2";
    }
    return "?";
}

Variant parse_variant(const std::string& name) {
    if (name == "base") return Variant::Base;
    if (name == "symmetric") return Variant::Symmetric;
    if (name == "noise-v1") return Variant::NoiseV1;
    if (name == "noise-v2") return Variant::NoiseV2;
    throw ConfigError("unknown variant '" + name +
                      "' (expected base|symmetric|noise-v1|noise-v2)");
}

namespace {

int head_dim(const Tensor& x, int n_head) {
    const int h = x.dim(1);
    if (n_head < 1 || h % n_head != 0)
        throw ConfigError("attention: hidden dim " + std::to_string(h) +
                          " not divisible by " + std::to_string(n_head) + " heads");
    return h / n_head;
}

} // namespace

std::vector<Tensor> project_scores(const Tensor& x, const AttentionWeights& w, Variant variant,
                                   int n_head) {
    const int dk = head_dim(x, n_head);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const Tensor q = add_row_broadcast(matmul(x, w.w_q), w.b_q);
    Tensor k;
    if (variant_has_wk(variant)) {
        if (!w.w_k.defined()) throw UsageError("project_scores: base variant without K weights");
        k = add_row_broadcast(matmul(x, w.w_k), w.b_k);
    } else if (w.w_k.defined()) {
        throw UsageError("project_scores: K weights present for a weight-shared variant");
    }
    std::vector<Tensor> scores;
    scores.reserve(static_cast<size_t>(n_head));
    for (int j = 0; j < n_head; ++j) {
        const Tensor qj = slice_cols(q, j * dk, (j + 1) * dk);
        if (variant_has_wk(variant)) {
            const Tensor kj = slice_cols(k, j * dk, (j + 1) * dk);
            scores.push_back(scaled_matmul_nt(qj, kj, scale));
        } else {
            scores.push_back(symmetric_scores(qj, scale));
        }
    }
    return scores;
}

std::vector<Tensor> inject_noise(const std::vector<Tensor>& scores, const NoiseDraw& noise) {
    if (noise.values.empty()) throw ShapeError("inject_noise: empty noise draw");
    if (!noise.shared && noise.values.size() != scores.size())
        throw ShapeError("inject_noise: " + std::to_string(noise.values.size()) +
                         " noise tensors for " + std::to_string(scores.size()) + " heads");
    std::vector<Tensor> out;
    out.reserve(scores.size());
    for (size_t j = 0; j < scores.size(); ++j)
        out.push_back(add(scores[j], noise.for_head(static_cast<int>(j))));
    return out;
}

std::vector<Tensor> causal_mask_heads(const std::vector<Tensor>& scores) {
    std::vector<Tensor> out;
    out.reserve(scores.size());
    for (const Tensor& s : scores) out.push_back(apply_causal_mask(s));
    return out;
}

Tensor mha_forward(const Tensor& x, const AttentionWeights& w, Variant variant, int n_head,
                   const NoiseDraw* noise) {
    if (variant_is_noisy(variant) && noise == nullptr)
        throw UsageError("mha_forward: noisy variant requires a noise draw");
    if (!variant_is_noisy(variant) && noise != nullptr)
        throw UsageError("mha_forward: noise draw supplied to a noise-free variant");
    const int dk = head_dim(x, n_head);

    std::vector<Tensor> scores = project_scores(x, w, variant, n_head);
    if (noise != nullptr) scores = inject_noise(scores, *noise);
    scores = causal_mask_heads(scores);

    const Tensor v = add_row_broadcast(matmul(x, w.w_v), w.b_v);
    std::vector<Tensor> head_out;
    head_out.reserve(scores.size());
    for (int j = 0; j < n_head; ++j) {
        const Tensor attn = softmax_rows(scores[static_cast<size_t>(j)]);
        const Tensor vj = slice_cols(v, j * dk, (j + 1) * dk);
        head_out.push_back(matmul(attn, vj));
    }
    return add_row_broadcast(matmul(concat_cols(head_out), w.w_o), w.b_o);
}

} // namespace attnlab
