#pragma once

#include <string>
#include <vector>

#include "attnlab/noise.hpp"
#include "attnlab/tensor.hpp"

namespace attnlab {

// The four score paths. Symmetric and both noisy variants share the Q
// projection for keys and therefore carry no K weights at all.
enum class Variant {
    Base,        // separate W_q, W_k
    Symmetric,   // K := Q
    NoiseV1,     // symmetric + one noise distribution per layer, draw shared by heads
    NoiseV2,     // symmetric + one noise distribution per head
};

inline bool variant_is_noisy(Variant v) {
    return v == Variant::NoiseV1 || v == Variant::NoiseV2;
}
inline bool variant_has_wk(Variant v) { return v == Variant::Base; }

const char* variant_name(Variant v);              // "base" | "symmetric" | "noise-v1" | "noise-v2"
Variant parse_variant(const std::string& name);   // ConfigError on anything else

// Packed projections: one HxH matrix per role, split into n_head column
// groups of width d_k = H / n_head. w_k/b_k are undefined tensors except for
// Base.
struct AttentionWeights {
    Tensor w_q, b_q;
    Tensor w_k, b_k;
    Tensor w_v, b_v;
    Tensor w_o, b_o;
};

// Pre-mask, pre-noise scores, one [T,T] tensor per head, already scaled by
// 1/sqrt(d_k). The symmetric path produces matrices with S == S^T bit-exact.
std::vector<Tensor> project_scores(const Tensor& x, const AttentionWeights& w, Variant variant,
                                   int n_head);

// Elementwise scores + noise. Applied after scaling, before the causal mask,
// so masking always wins over noise.
std::vector<Tensor> inject_noise(const std::vector<Tensor>& scores, const NoiseDraw& noise);

std::vector<Tensor> causal_mask_heads(const std::vector<Tensor>& scores);

// Full block: project -> (inject noise for noisy variants) -> mask -> softmax
// -> weighted V -> concat heads -> output projection. noise must be non-null
// exactly when the variant is noisy.
Tensor mha_forward(const Tensor& x, const AttentionWeights& w, Variant variant, int n_head,
                   const NoiseDraw* noise);

} // namespace attnlab
