#include "hvit/vit.hpp"

#include <cmath>
#include <stdexcept>

#include "hvit/rng.hpp"

namespace hvit {

namespace {

constexpr double kInitStd = 0.02;

Tensor normal_tensor(std::vector<std::size_t> shape, Rng& rng, double std_dev) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = std_dev * rng.normal();
  return t;
}

std::string block_key(std::size_t block, const char* tensor) {
  return std::to_string(block) + "." + tensor;
}

}  // namespace

std::size_t ViTConfig::mlp_hidden() const {
  const double h = mlp_ratio * static_cast<double>(embed_dim);
  const auto hidden = static_cast<std::size_t>(std::llround(h));
  return hidden == 0 ? 1 : hidden;
}

void ViTConfig::validate() const {
  if (input_token_dim == 0 || embed_dim == 0 || depth == 0 || num_heads == 0) {
    throw std::invalid_argument("vit config dimensions must be positive");
  }
  if (embed_dim % num_heads != 0) {
    throw std::invalid_argument("embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                                std::to_string(num_heads));
  }
  if (mlp_ratio <= 0.0) throw std::invalid_argument("mlp_ratio must be positive");
  if (grid && (grid->rows == 0 || grid->cols == 0)) {
    throw std::invalid_argument("positional grid must have positive extent");
  }
}

ViTWeights init_weights(const ViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x76697477ull));  // independent of caller streams
  const std::size_t d = cfg.embed_dim;
  const std::size_t hidden = cfg.mlp_hidden();
  ViTWeights w{cfg, {}};
  w.params.emplace("proj_w", normal_tensor({cfg.input_token_dim, d}, rng, kInitStd));
  w.params.emplace("proj_b", Tensor::zeros({d}));
  w.params.emplace("cls", normal_tensor({1, d}, rng, kInitStd));
  if (cfg.grid) {
    w.params.emplace("pos", normal_tensor({cfg.grid->rows * cfg.grid->cols, d}, rng, kInitStd));
  }
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    w.params.emplace(block_key(b, "ln1_g"), Tensor::full({d}, 1.0));
    w.params.emplace(block_key(b, "ln1_b"), Tensor::zeros({d}));
    w.params.emplace(block_key(b, "q_w"), normal_tensor({d, d}, rng, kInitStd));
    w.params.emplace(block_key(b, "q_b"), Tensor::zeros({d}));
    w.params.emplace(block_key(b, "k_w"), normal_tensor({d, d}, rng, kInitStd));
    w.params.emplace(block_key(b, "k_b"), Tensor::zeros({d}));
    w.params.emplace(block_key(b, "v_w"), normal_tensor({d, d}, rng, kInitStd));
    w.params.emplace(block_key(b, "v_b"), Tensor::zeros({d}));
    w.params.emplace(block_key(b, "out_w"), normal_tensor({d, d}, rng, kInitStd));
    w.params.emplace(block_key(b, "out_b"), Tensor::zeros({d}));
    w.params.emplace(block_key(b, "ln2_g"), Tensor::full({d}, 1.0));
    w.params.emplace(block_key(b, "ln2_b"), Tensor::zeros({d}));
    w.params.emplace(block_key(b, "fc1_w"), normal_tensor({d, hidden}, rng, kInitStd));
    w.params.emplace(block_key(b, "fc1_b"), Tensor::zeros({hidden}));
    w.params.emplace(block_key(b, "fc2_w"), normal_tensor({hidden, d}, rng, kInitStd));
    w.params.emplace(block_key(b, "fc2_b"), Tensor::zeros({d}));
  }
  return w;
}

std::size_t param_count(const ViTConfig& cfg) {
  const std::size_t d = cfg.embed_dim;
  const std::size_t hidden = cfg.mlp_hidden();
  std::size_t n = cfg.input_token_dim * d + d;  // proj
  n += d;                                       // cls
  if (cfg.grid) n += cfg.grid->rows * cfg.grid->cols * d;
  const std::size_t per_block = 2 * d              // ln1
                                + 3 * (d * d + d)  // q, k, v
                                + d * d + d        // out
                                + 2 * d            // ln2
                                + d * hidden + hidden + hidden * d + d;
  return n + cfg.depth * per_block;
}

VitNodes vit_leaves(Graph& g, const ParamSet& params, bool trainable) {
  VitNodes nodes;
  for (const auto& [name, tensor] : params) {
    nodes.leaves.emplace(name, g.leaf(tensor, trainable));
  }
  return nodes;
}

VitGraphOutput vit_forward_graph(Graph& g, const ViTConfig& cfg, const VitNodes& nodes, Value tokens,
                                 bool want_attention) {
  const Tensor& tok = g.value(tokens);
  if (tok.rank() != 2 || tok.cols() != cfg.input_token_dim) {
    throw std::invalid_argument("vit expects tokens [L, " + std::to_string(cfg.input_token_dim) + "], got " +
                                tok.shape_str());
  }
  const std::size_t seq = tok.rows();
  if (cfg.grid && seq != cfg.grid->rows * cfg.grid->cols) {
    throw std::invalid_argument("sequence length " + std::to_string(seq) + " does not match positional grid " +
                                std::to_string(cfg.grid->rows) + "x" + std::to_string(cfg.grid->cols));
  }
  const auto p = [&](const std::string& name) { return nodes.leaves.at(name); };

  Value x = g.add_row_bias(g.matmul(tokens, p("proj_w")), p("proj_b"));
  if (cfg.grid) x = g.add(x, p("pos"));
  x = g.concat_rows(p("cls"), x);  // [L+1, d]

  const std::size_t heads = cfg.num_heads;
  const std::size_t hd = cfg.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  VitGraphOutput out;
  std::vector<Value> last_block_attn;
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const auto key = [&](const char* t) { return block_key(b, t); };
    Value h = g.layer_norm(x, p(key("ln1_g")), p(key("ln1_b")), kLayerNormEps);
    Value q = g.add_row_bias(g.matmul(h, p(key("q_w"))), p(key("q_b")));
    Value k = g.add_row_bias(g.matmul(h, p(key("k_w"))), p(key("k_b")));
    Value v = g.add_row_bias(g.matmul(h, p(key("v_w"))), p(key("v_b")));
    std::vector<Value> ctx;
    std::vector<Value> head_attn;
    ctx.reserve(heads);
    head_attn.reserve(heads);
    for (std::size_t hi = 0; hi < heads; ++hi) {
      const std::size_t c0 = hi * hd, c1 = (hi + 1) * hd;
      Value qs = g.slice_cols(q, c0, c1);
      Value ks = g.slice_cols(k, c0, c1);
      Value vs = g.slice_cols(v, c0, c1);
      Value scores = g.scale(g.matmul(qs, g.transpose(ks)), att_scale);
      Value aw = g.softmax_rows(scores);  // [L+1, L+1]
      head_attn.push_back(aw);
      ctx.push_back(g.matmul(aw, vs));
    }
    Value merged = heads == 1 ? ctx[0] : g.concat_cols(ctx);
    x = g.add(x, g.add_row_bias(g.matmul(merged, p(key("out_w"))), p(key("out_b"))));
    Value h2 = g.layer_norm(x, p(key("ln2_g")), p(key("ln2_b")), kLayerNormEps);
    Value m = g.gelu(g.add_row_bias(g.matmul(h2, p(key("fc1_w"))), p(key("fc1_b"))));
    x = g.add(x, g.add_row_bias(g.matmul(m, p(key("fc2_w"))), p(key("fc2_b"))));

    if (b + 1 == cfg.depth) last_block_attn = head_attn;
    if (want_attention) {
      Tensor block({heads, seq + 1, seq + 1});
      for (std::size_t hi = 0; hi < heads; ++hi) {
        const Tensor& aw = g.value(head_attn[hi]);
        std::copy(aw.data().begin(), aw.data().end(),
                  block.data().begin() + hi * (seq + 1) * (seq + 1));
      }
      out.block_attn.push_back(std::move(block));
    }
  }

  out.cls = g.slice_rows(x, 0, 1);

  // CLS row of the last block, mean over heads, CLS self-weight dropped and
  // the rest renormalized to 1.
  Tensor attn({seq});
  double total = 0.0;
  for (std::size_t j = 0; j < seq; ++j) {
    double v = 0.0;
    for (std::size_t hi = 0; hi < heads; ++hi) v += g.value(last_block_attn[hi]).at2(0, j + 1);
    v /= static_cast<double>(heads);
    attn[j] = v;
    total += v;
  }
  for (std::size_t j = 0; j < seq; ++j) attn[j] /= total;
  out.attn = std::move(attn);
  return out;
}

ViTOutput vit_forward(const ViTConfig& cfg, const ParamSet& params, const Tensor& tokens) {
  Graph g;
  const VitNodes nodes = vit_leaves(g, params, false);
  VitGraphOutput res = vit_forward_graph(g, cfg, nodes, g.leaf(tokens), false);
  const Tensor& cls_row = g.value(res.cls);
  return ViTOutput{Tensor({cfg.embed_dim}, cls_row.data()), std::move(res.attn)};
}

Tensor attention_raw(const ViTConfig& cfg, const ParamSet& params, const Tensor& tokens) {
  Graph g;
  const VitNodes nodes = vit_leaves(g, params, false);
  VitGraphOutput res = vit_forward_graph(g, cfg, nodes, g.leaf(tokens), true);
  const std::size_t full = tokens.rows() + 1;
  Tensor raw({cfg.depth, cfg.num_heads, full, full});
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    std::copy(res.block_attn[b].data().begin(), res.block_attn[b].data().end(),
              raw.data().begin() + b * cfg.num_heads * full * full);
  }
  return raw;
}

}  // namespace hvit
