#pragma once

// Forward pass with activation caching and the hand-written backward pass.
// Internal to the library; the public surface is model.hpp / training.hpp.

#include <array>
#include <span>
#include <vector>

#include "convrisk/microlm/types.hpp"
#include "convrisk/tokenizer.hpp"

namespace convrisk::microlm::detail {

struct LayerCache {
  Matrix x_in;
  Matrix xhat1, h1;
  Vector rstd1;
  Matrix q, k, v;
  Matrix zq, zk, zv, zo;  // x * A^T of each adapted projection
  std::vector<Matrix> probs;
  Matrix attn;  // concatenated head outputs, before the output projection
  Matrix x_mid;
  Matrix xhat2, h2;
  Vector rstd2;
  Matrix u, act;
};

struct ForwardCache {
  std::vector<TokenId> ids;
  std::vector<LayerCache> layers;
  Matrix xhat_final, h_final;  // final layer norm of the last position, 1 x D
  Vector rstd_final;
};

// Index of each (layer, projection) pair inside an adapter, or -1.
using AdapterIndex = std::vector<std::array<int, 4>>;
AdapterIndex index_adapter(const LoraAdapter* adapter, std::size_t n_layers);

void check_tokens(const MicroLMConfig& config, std::span<const TokenId> ids);

// Runs the network; fills `cache` and returns final-position logits.
// When `all_logits` is non-null it receives logits for every position.
Vector run_forward(const MicroLMWeights& w, const LoraAdapter* adapter, std::span<const TokenId> ids,
                   ForwardCache& cache, Matrix* all_logits = nullptr);

// Back-propagates d(loss)/d(final logits). Gradients are added into
// `base_grad` (may be null to skip base parameters) and `adapter_grad`
// (same layout as `adapter`, may be null).
void run_backward(const MicroLMWeights& w, const LoraAdapter* adapter, const ForwardCache& cache,
                  const Vector& dlogits, MicroLMWeights* base_grad, LoraAdapter* adapter_grad);

}  // namespace convrisk::microlm::detail
