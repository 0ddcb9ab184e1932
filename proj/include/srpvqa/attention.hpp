#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "srpvqa/nn.hpp"

namespace srpvqa {

struct AttentionParams {
  std::size_t heads = 1;
  Dense query;
  Dense key;
  Dense value;
  Dense output;

  static AttentionParams init(std::size_t width, std::size_t heads, Rng& rng) {
    if (heads == 0 || width % heads != 0) {
      throw DimensionError("attention: width " + std::to_string(width) + " not divisible by " +
                           std::to_string(heads) + " heads");
    }
    return AttentionParams{heads, Dense::init(width, width, rng), Dense::init(width, width, rng),
                           Dense::init(width, width, rng), Dense::init(width, width, rng)};
  }

  std::size_t width() const { return query.in(); }
  std::size_t head_width() const { return width() / heads; }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    query.visit(prefix + ".query", f);
    key.visit(prefix + ".key", f);
    value.visit(prefix + ".value", f);
    output.visit(prefix + ".output", f);
  }
};

/// Multi-head scaled dot-product attention: each head computes
/// softmax(Q_h K_h^T / sqrt(d_h)) V_h; heads are concatenated and projected.
inline Var multi_head_attention(Tape& tape, Var queries, Var keys, Var values, const AttentionParams& params) {
  const std::size_t d = params.width();
  if (queries.cols() != d || keys.cols() != d || values.cols() != d) {
    throw DimensionError("multi_head_attention: operand widths must equal " + std::to_string(d));
  }
  if (keys.rows() != values.rows()) throw DimensionError("multi_head_attention: key/value row counts differ");
  if (keys.rows() == 0) throw DimensionError("multi_head_attention: no keys");
  const Var q = dense_forward(tape, params.query, queries);
  const Var k = dense_forward(tape, params.key, keys);
  const Var v = dense_forward(tape, params.value, values);
  const std::size_t dh = params.head_width();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    const Var qh = ops::slice_cols(q, h * dh, dh);
    const Var kh = ops::slice_cols(k, h * dh, dh);
    const Var vh = ops::slice_cols(v, h * dh, dh);
    const Var scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt);
    heads.push_back(ops::matmul(ops::softmax(scores, 1), vh));
  }
  const Var joined = params.heads == 1 ? heads.front() : ops::concat_cols(heads);
  return dense_forward(tape, params.output, joined);
}

/// Self-attention followed by a feed-forward block, each wrapped in residual + layer norm.
struct EncoderLayerParams {
  AttentionParams self_attention;
  LayerNormParams norm1;
  LayerStack feed_forward;
  LayerNormParams norm2;

  static EncoderLayerParams init(std::size_t width, std::size_t heads, std::size_t ff_width, Rng& rng) {
    return EncoderLayerParams{AttentionParams::init(width, heads, rng), LayerNormParams::init(width),
                              LayerStack::init({width, ff_width, width}, rng), LayerNormParams::init(width)};
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    self_attention.visit(prefix + ".self_attention", f);
    norm1.visit(prefix + ".norm1", f);
    feed_forward.visit(prefix + ".feed_forward", f);
    norm2.visit(prefix + ".norm2", f);
  }
};

inline Var encoder_layer_forward(Tape& tape, const EncoderLayerParams& p, Var x) {
  Var h = layer_norm_forward(tape, p.norm1, ops::add(x, multi_head_attention(tape, x, x, x, p.self_attention)));
  return layer_norm_forward(tape, p.norm2, ops::add(h, mlp_forward(tape, p.feed_forward, h)));
}

/// Self-attention on y, then attention from y onto a guide sequence, then feed-forward.
struct GuidedLayerParams {
  AttentionParams self_attention;
  LayerNormParams norm1;
  AttentionParams guided_attention;
  LayerNormParams norm2;
  LayerStack feed_forward;
  LayerNormParams norm3;

  static GuidedLayerParams init(std::size_t width, std::size_t heads, std::size_t ff_width, Rng& rng) {
    return GuidedLayerParams{AttentionParams::init(width, heads, rng), LayerNormParams::init(width),
                             AttentionParams::init(width, heads, rng), LayerNormParams::init(width),
                             LayerStack::init({width, ff_width, width}, rng), LayerNormParams::init(width)};
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    self_attention.visit(prefix + ".self_attention", f);
    norm1.visit(prefix + ".norm1", f);
    guided_attention.visit(prefix + ".guided_attention", f);
    norm2.visit(prefix + ".norm2", f);
    feed_forward.visit(prefix + ".feed_forward", f);
    norm3.visit(prefix + ".norm3", f);
  }
};

inline Var guided_layer_forward(Tape& tape, const GuidedLayerParams& p, Var y, Var guide) {
  Var h = layer_norm_forward(tape, p.norm1, ops::add(y, multi_head_attention(tape, y, y, y, p.self_attention)));
  h = layer_norm_forward(tape, p.norm2,
                         ops::add(h, multi_head_attention(tape, h, guide, guide, p.guided_attention)));
  return layer_norm_forward(tape, p.norm3, ops::add(h, mlp_forward(tape, p.feed_forward, h)));
}

}  // namespace srpvqa
