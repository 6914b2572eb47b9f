#pragma once

#include "shapex/core.hpp"

#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace shapex {

// Patch encoder applied to every raw shapelet:
//
//   e_i   = W_embed s_i + b_embed + PE(i)         (one row per patch)
//   head  = softmax(Q K^T / sqrt(d_head)) V        (per head, over patches)
//   z_i   = W_o [head_1; ...; head_H]_i
//   y_i   = W_out z_i + b_out                      (back to patch space)
//   s_eff = s + concat(y_1, ..., y_np)
//
// Q/K/V/W_o carry no bias. With all weights zero the encoder is the identity.
struct EncoderWeights {
    std::size_t patch_len = 0;
    std::size_t d_model = 0;
    std::size_t num_heads = 0;

    Matrix embed_w;               // d_model x patch_len
    std::vector<double> embed_b;  // d_model
    std::vector<Matrix> wq;       // num_heads x (d_head x d_model)
    std::vector<Matrix> wk;
    std::vector<Matrix> wv;
    Matrix wo;                    // d_model x d_model
    Matrix out_w;                 // patch_len x d_model
    std::vector<double> out_b;    // patch_len

    std::size_t d_head() const noexcept { return num_heads ? d_model / num_heads : 0; }

    static EncoderWeights zeros(std::size_t patch_len, std::size_t d_model, std::size_t num_heads);
    // Scaled Gaussian init; out_w starts small so s_eff stays close to s.
    static EncoderWeights random(std::size_t patch_len, std::size_t d_model, std::size_t num_heads,
                                 std::mt19937_64& rng);

    void validate() const;

    bool operator==(const EncoderWeights&) const = default;
};

// Fixed sinusoidal positional encoding, one row per patch.
Matrix positional_encoding(std::size_t num_patches, std::size_t d_model);

// Intermediates for one shapelet, kept for the backward pass.
struct EncoderTape {
    Matrix patches;                 // np x P
    Matrix embedded;                // np x d
    std::vector<Matrix> q, k, v;    // per head: np x d_head
    std::vector<Matrix> attn;       // per head: np x np (softmax rows)
    Matrix concat;                  // np x d
    Matrix projected;               // np x d (after W_o)
};

// raw: N x L. Returns effective shapelets, N x L. Throws ConfigError when L is
// not a multiple of the patch length.
Matrix encode_shapelets(const Matrix& raw, const EncoderWeights& enc,
                        std::vector<EncoderTape>* tapes = nullptr);

// Accumulates dL/draw and dL/denc given dL/ds_eff.
void encode_shapelets_backward(const EncoderWeights& enc, const std::vector<EncoderTape>& tapes,
                               const Matrix& grad_eff, Matrix& grad_raw, EncoderWeights& grad_enc);

} // namespace shapex
