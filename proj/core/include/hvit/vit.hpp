#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hvit/checkpoint.hpp"
#include "hvit/graph.hpp"

namespace hvit {

struct GridShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// One Vision Transformer stage. A fixed `grid` adds a learned positional
/// table over rows*cols tokens; without it the stage is permutation
/// equivariant and accepts variable-length sequences.
struct ViTConfig {
  std::size_t input_token_dim = 0;
  std::size_t embed_dim = 0;
  std::size_t depth = 1;
  std::size_t num_heads = 1;
  double mlp_ratio = 2.0;
  std::optional<GridShape> grid;

  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_hidden() const;
  void validate() const;
};

struct ViTWeights {
  ViTConfig cfg;
  ParamSet params;  // "proj_w", "cls", "pos", "<block>.<tensor>"
};

/// Deterministic seeded init: normal(std 0.02) for projections and learned
/// embeddings, zeros for biases, ones for norm gains. Stands in for
/// out-of-scope self-supervised pretraining.
ViTWeights init_weights(const ViTConfig& cfg, std::uint64_t seed);

/// Closed-form count of all tensors init_weights declares.
std::size_t param_count(const ViTConfig& cfg);

/// Leaf handles for one stage's parameters, registered on a graph.
struct VitNodes {
  std::map<std::string, Value> leaves;
};
VitNodes vit_leaves(Graph& g, const ParamSet& params, bool trainable);

/// Pre-norm block layout (norm -> attention -> residual, norm -> MLP ->
/// residual). cls is the CLS row of the final block output, [1, embed_dim].
/// attn is the final block's CLS->token attention, averaged over heads, with
/// the CLS self-weight dropped and the remaining mass renormalized to sum 1
/// over the L tokens. block_attn (only when want_attention) holds each
/// block's per-head row-stochastic attention, [num_heads, L+1, L+1].
struct VitGraphOutput {
  Value cls;
  Tensor attn;
  std::vector<Tensor> block_attn;
};
VitGraphOutput vit_forward_graph(Graph& g, const ViTConfig& cfg, const VitNodes& nodes, Value tokens,
                                 bool want_attention);

/// Inference entry point over raw tokens [L, input_token_dim].
struct ViTOutput {
  Tensor cls_embedding;  // [embed_dim]
  Tensor attn;           // [L]
};
ViTOutput vit_forward(const ViTConfig& cfg, const ParamSet& params, const Tensor& tokens);

/// Full attention tensors per block and head, [depth, num_heads, L+1, L+1];
/// every row is a softmax output. Debug/interpretability surface.
Tensor attention_raw(const ViTConfig& cfg, const ParamSet& params, const Tensor& tokens);

constexpr double kLayerNormEps = 1e-5;

}  // namespace hvit
