#pragma once

#include "steer/model.hpp"

#include <cstdint>

namespace steer::toy {

// Gaussian-initialized weights, norms at 1. Deterministic for a given seed.
Checkpoint random_checkpoint(const ModelConfig & config, uint64_t seed);

// Zero embeddings and projections: every position yields all-zero logits.
Checkpoint constant_logit_checkpoint(const ModelConfig & config);

// Hand-built model whose block 2 writes an answer-letter feature into the
// residual stream. After "...Answer:" it emits a single letter then EOS; the
// letter defaults to 'b' and moves to 'a' when the residual after block 2 is
// pushed along the a-minus-others letter direction. Earlier blocks are identity.
// Block 2 attention also averages the a-minus-b letter identity of the whole
// prefix into dimension 31, so a difference hidden earlier in the prompt only
// becomes visible at the last position from site 2 on.
//
// Residual layout (d_model = 32):
//   0..2   answer feature for a/b/c (read by the unembedding)
//   3      end-of-answer feature (drives EOS)
//   4      constant 1
//   5      "is a letter" gate
//   6..8   raw letter identity for a/b/c (from the embedding)
//   9..30  per-token noise
//   31     prefix letter balance (written by block 2 attention)
Checkpoint planted_letter_checkpoint(uint64_t seed = 7);

constexpr size_t k_planted_layer = 2;

} // namespace steer::toy
