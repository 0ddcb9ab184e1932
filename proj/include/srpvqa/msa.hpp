#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "srpvqa/attention.hpp"

namespace srpvqa {

enum class AttentionMode { Mutual, Self, Msa };

inline bool uses_mutual(AttentionMode m) { return m != AttentionMode::Self; }
inline bool uses_self(AttentionMode m) { return m != AttentionMode::Mutual; }

struct MsaDims {
  std::size_t x_width = 0;   // d_x, the guiding (question) feature width
  std::size_t y_width = 0;   // d_y
  std::size_t model_width = 32;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t mlp_hidden = 32;
};

/// Weights of one Mutual and Self Attention block.
///
/// The mutual half holds one 3-layer scoring MLP per direction. The self half
/// projects both inputs to the model width, encodes x with `layers` encoder
/// layers, runs y through `layers` x-guided layers and reduces every encoded
/// row to a scalar score. Either half may be absent for ablations.
struct MsaBlockParams {
  MsaDims dims;
  std::optional<LayerStack> mutual_y;   // scores rows of y from [y_i, mean(x)]
  std::optional<LayerStack> mutual_x;   // scores rows of x from [x_i, mean(y)]
  std::optional<Dense> project_x;
  std::optional<Dense> project_y;
  std::vector<EncoderLayerParams> encoder;
  std::vector<GuidedLayerParams> guided;
  std::optional<Dense> score_x;
  std::optional<Dense> score_y;

  static MsaBlockParams init(const MsaDims& dims, AttentionMode mode, Rng& rng) {
    if (dims.heads == 0 || dims.model_width % dims.heads != 0) {
      throw DimensionError("msa: model width " + std::to_string(dims.model_width) + " not divisible by " +
                           std::to_string(dims.heads) + " heads");
    }
    MsaBlockParams p;
    p.dims = dims;
    const std::size_t joint = dims.x_width + dims.y_width;
    if (uses_mutual(mode)) {
      p.mutual_y = LayerStack::init({joint, dims.mlp_hidden, dims.mlp_hidden, 1}, rng);
      p.mutual_x = LayerStack::init({joint, dims.mlp_hidden, dims.mlp_hidden, 1}, rng);
    }
    if (uses_self(mode)) {
      const std::size_t d = dims.model_width;
      p.project_x = Dense::init(dims.x_width, d, rng);
      p.project_y = Dense::init(dims.y_width, d, rng);
      for (std::size_t l = 0; l < dims.layers; ++l) p.encoder.push_back(EncoderLayerParams::init(d, dims.heads, 2 * d, rng));
      for (std::size_t l = 0; l < dims.layers; ++l) p.guided.push_back(GuidedLayerParams::init(d, dims.heads, 2 * d, rng));
      p.score_x = Dense::init(d, 1, rng);
      p.score_y = Dense::init(d, 1, rng);
    }
    return p;
  }

  bool has_mutual() const { return mutual_y.has_value(); }
  bool has_self() const { return project_x.has_value(); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    if (mutual_y) mutual_y->visit(prefix + ".mutual_y", f);
    if (mutual_x) mutual_x->visit(prefix + ".mutual_x", f);
    if (project_x) project_x->visit(prefix + ".project_x", f);
    if (project_y) project_y->visit(prefix + ".project_y", f);
    for (std::size_t l = 0; l < encoder.size(); ++l) encoder[l].visit(prefix + ".encoder." + std::to_string(l), f);
    for (std::size_t l = 0; l < guided.size(); ++l) guided[l].visit(prefix + ".guided." + std::to_string(l), f);
    if (score_x) score_x->visit(prefix + ".score_x", f);
    if (score_y) score_y->visit(prefix + ".score_y", f);
  }
};

struct MutualResult {
  Var x_pooled;   // 1 x d_x
  Var y_pooled;   // 1 x d_y
  Var x_scores;   // z_{x,y}, 1 x a
  Var y_scores;   // z_{y,x}, 1 x b
};

struct SelfResult {
  Var x_pooled;   // 1 x d_x
  Var y_pooled;   // 1 x d_y
  Var x_scores;   // Psi_x, 1 x a
  Var y_scores;   // Psi_{y,x}, 1 x b
};

namespace detail {

inline void require_rows(Var x, Var y, const char* op) {
  if (x.rows() == 0 || y.rows() == 0) throw DimensionError(std::string(op) + ": empty input");
}

// Scores (k x 1) -> distribution (1 x k).
inline Var row_distribution(Var scores) { return ops::softmax(ops::reshape(scores, Shape{1, scores.rows()}), 1); }

}  // namespace detail

/// Each row of y is scored by an MLP on [y_i, mean(x)], the scores are
/// softmax-normalized, and the pooled vector is the weighted sum of rows of y.
/// Symmetrically for x against mean(y).
inline MutualResult mutual_attention(Tape& tape, Var x, Var y, const MsaBlockParams& params) {
  detail::require_rows(x, y, "mutual_attention");
  if (!params.has_mutual()) throw std::logic_error("mutual_attention: block has no mutual weights");
  if (x.cols() != params.dims.x_width || y.cols() != params.dims.y_width) {
    throw DimensionError("mutual_attention: input widths do not match block");
  }
  const Var x_mean = ops::mean_rows(x);
  const Var y_mean = ops::mean_rows(y);
  const Var y_joint = ops::concat_cols({y, ops::repeat_rows(x_mean, y.rows())});
  const Var x_joint = ops::concat_cols({x, ops::repeat_rows(y_mean, x.rows())});
  const Var z_yx = detail::row_distribution(mlp_forward(tape, *params.mutual_y, y_joint));
  const Var z_xy = detail::row_distribution(mlp_forward(tape, *params.mutual_x, x_joint));
  return MutualResult{ops::matmul(z_xy, x), ops::matmul(z_yx, y), z_xy, z_yx};
}

/// x runs through the encoder stack; y runs through the guided stack whose
/// cross-attention reads the encoded x. Encoded rows are reduced to scalar
/// scores whose softmax weights the original input rows.
inline SelfResult guided_self_attention(Tape& tape, Var x, Var y, const MsaBlockParams& params) {
  detail::require_rows(x, y, "guided_self_attention");
  if (!params.has_self()) throw std::logic_error("guided_self_attention: block has no self-attention weights");
  if (x.cols() != params.dims.x_width || y.cols() != params.dims.y_width) {
    throw DimensionError("guided_self_attention: input widths do not match block");
  }
  Var xe = dense_forward(tape, *params.project_x, x);
  for (const EncoderLayerParams& layer : params.encoder) xe = encoder_layer_forward(tape, layer, xe);
  Var ye = dense_forward(tape, *params.project_y, y);
  for (const GuidedLayerParams& layer : params.guided) ye = guided_layer_forward(tape, layer, ye, xe);
  const Var psi_x = detail::row_distribution(dense_forward(tape, *params.score_x, xe));
  const Var psi_y = detail::row_distribution(dense_forward(tape, *params.score_y, ye));
  return SelfResult{ops::matmul(psi_x, x), ops::matmul(psi_y, y), psi_x, psi_y};
}

struct AttendedSet {
  std::optional<MutualResult> mutual;
  std::optional<SelfResult> self;
};

/// Runs whichever halves the block holds. x is the guiding (question) input.
inline AttendedSet msa_block(Tape& tape, Var x, Var y, const MsaBlockParams& params) {
  AttendedSet out;
  if (params.has_mutual()) out.mutual = mutual_attention(tape, x, y, params);
  if (params.has_self()) out.self = guided_self_attention(tape, x, y, params);
  return out;
}

// Slot order of the attended vectors consumed by the fusion head.
enum FusionSlot : std::size_t {
  kVisualMutual = 0,
  kQuestionMutualV,
  kVisualSelf,
  kQuestionSelfV,
  kRelationMutual,
  kQuestionMutualR,
  kRelationSelf,
  kQuestionSelfR,
  kFusionSlots
};

/// One bias-free projection per attended vector into a shared width, summed,
/// passed through an optional ReLU, then an affine map to answer logits.
struct FusionParams {
  std::array<std::optional<Projection>, kFusionSlots> projections;
  Dense classifier;
  bool relu = true;

  static FusionParams init(const std::array<std::size_t, kFusionSlots>& widths, std::size_t fused_width,
                           std::size_t answers, bool relu, Rng& rng) {
    FusionParams f;
    for (std::size_t s = 0; s < kFusionSlots; ++s)
      if (widths[s] > 0) f.projections[s] = Projection::init(widths[s], fused_width, rng);
    f.classifier = Dense::init(fused_width, answers, rng);
    f.relu = relu;
    return f;
  }

  std::size_t fused_width() const { return classifier.in(); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t s = 0; s < kFusionSlots; ++s)
      if (projections[s]) projections[s]->visit(prefix + ".projection." + std::to_string(s), f);
    classifier.visit(prefix + ".classifier", f);
  }
};

/// `attended` holds exactly kFusionSlots entries; an invalid Var marks an absent
/// (all-zero) branch, which contributes nothing to the sum.
inline Var fuse_and_classify(Tape& tape, const std::vector<Var>& attended, const FusionParams& fusion) {
  if (attended.size() != kFusionSlots) {
    throw DimensionError("fuse_and_classify: expected " + std::to_string(kFusionSlots) + " attended vectors, got " +
                         std::to_string(attended.size()));
  }
  std::optional<Var> total;
  for (std::size_t s = 0; s < kFusionSlots; ++s) {
    if (!attended[s].valid()) continue;
    if (!fusion.projections[s]) throw DimensionError("fuse_and_classify: no projection for slot " + std::to_string(s));
    const Projection& p = *fusion.projections[s];
    if (attended[s].rows() != 1 || attended[s].cols() != p.weight.rows()) {
      throw DimensionError("fuse_and_classify: slot " + std::to_string(s) + " has width " +
                           std::to_string(attended[s].cols()) + ", expected " + std::to_string(p.weight.rows()));
    }
    const Var term = projection_forward(tape, p, attended[s]);
    total = total ? ops::add(*total, term) : term;
  }
  if (!total) total = tape.constant(Tensor::zeros(1, fusion.fused_width()));
  Var hidden = fusion.relu ? ops::relu(*total) : *total;
  return dense_forward(tape, fusion.classifier, hidden);
}

}  // namespace srpvqa
