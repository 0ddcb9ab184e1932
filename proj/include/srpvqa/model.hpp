#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "srpvqa/msa.hpp"

namespace srpvqa {

enum class InputSet { RQ, VQ, VRQ };

inline bool uses_visual(InputSet s) { return s != InputSet::RQ; }
inline bool uses_relations(InputSet s) { return s != InputSet::VQ; }

inline std::string_view input_set_name(InputSet s) {
  switch (s) {
    case InputSet::RQ:
      return "r+q";
    case InputSet::VQ:
      return "v+q";
    case InputSet::VRQ:
      return "v+r+q";
  }
  return "v+r+q";
}

struct ModelDims {
  std::size_t q_width = 32;  // d_q
  std::size_t v_width = 20;  // d_v + 4
  std::size_t r_width = 40;  // d_r + 8, or 2 d_v + 8 for visual relation features
  std::size_t model_width = 32;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t mlp_hidden = 32;
  std::size_t fused_width = 32;
  std::size_t answers = 2;
};

struct VqaModelParams {
  ModelDims dims;
  AttentionMode mode = AttentionMode::Msa;
  InputSet inputs = InputSet::VRQ;
  std::optional<MsaBlockParams> v_block;  // guided by q, attends over v
  std::optional<MsaBlockParams> r_block;  // guided by q, attends over r
  FusionParams fusion;

  static VqaModelParams init(const ModelDims& dims, AttentionMode mode, InputSet inputs, bool fusion_relu,
                             std::uint64_t seed) {
    Rng rng(seed);
    VqaModelParams p;
    p.dims = dims;
    p.mode = mode;
    p.inputs = inputs;
    std::array<std::size_t, kFusionSlots> widths{};
    auto block_dims = [&](std::size_t y_width) {
      return MsaDims{dims.q_width, y_width, dims.model_width, dims.heads, dims.layers, dims.mlp_hidden};
    };
    // Each block gets its own stream so that the v block is identical with or without an r block.
    if (uses_visual(inputs)) {
      Rng block_rng(mix_seed(seed, 1));
      p.v_block = MsaBlockParams::init(block_dims(dims.v_width), mode, block_rng);
    }
    if (uses_relations(inputs)) {
      Rng block_rng(mix_seed(seed, 2));
      p.r_block = MsaBlockParams::init(block_dims(dims.r_width), mode, block_rng);
    }
    // Slot widths do not depend on which inputs are active, so fusion weights line up across ablations.
    widths[kVisualMutual] = widths[kVisualSelf] = dims.v_width;
    widths[kRelationMutual] = widths[kRelationSelf] = dims.r_width;
    widths[kQuestionMutualV] = widths[kQuestionSelfV] = widths[kQuestionMutualR] = widths[kQuestionSelfR] =
        dims.q_width;
    Rng fusion_rng(mix_seed(seed, 3));
    p.fusion = FusionParams::init(widths, dims.fused_width, dims.answers, fusion_relu, fusion_rng);
    // Drop projections for branches this configuration can never produce.
    for (std::size_t s = 0; s < kFusionSlots; ++s) {
      const bool visual_slot = s < kRelationMutual;
      const bool mutual_slot = s % 4 < 2;
      const bool present = (visual_slot ? uses_visual(inputs) : uses_relations(inputs)) &&
                           (mutual_slot ? uses_mutual(mode) : uses_self(mode));
      if (!present) p.fusion.projections[s].reset();
    }
    return p;
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    if (v_block) v_block->visit(prefix + "v_block", f);
    if (r_block) r_block->visit(prefix + "r_block", f);
    fusion.visit(prefix + "fusion", f);
  }
};

/// Question rows q (m x d_q), grounded visual rows v (l x (d_v+4)) and
/// relation rows r (n x d_r'). An empty v or r means the branch has no input
/// for this example and contributes nothing to the fused vector.
struct ModelInput {
  Tensor q;
  Tensor v;
  Tensor r;
};

struct ModelOutput {
  Var logits;
  std::optional<AttendedSet> visual;
  std::optional<AttendedSet> relation;
};

namespace detail {
inline bool has_rows(const Tensor& t) { return t.rank() == 2 && t.rows() > 0 && t.cols() > 0; }
}  // namespace detail

inline ModelOutput model_forward(Tape& tape, const VqaModelParams& params, const ModelInput& in) {
  if (!detail::has_rows(in.q)) throw DimensionError("model_forward: empty question");
  if (in.q.cols() != params.dims.q_width) {
    throw DimensionError("model_forward: question width " + std::to_string(in.q.cols()) + ", expected " +
                         std::to_string(params.dims.q_width));
  }
  const Var q = tape.constant(in.q);
  std::vector<Var> slots(kFusionSlots);
  ModelOutput out;
  auto run = [&](const std::optional<MsaBlockParams>& block, const Tensor& rows, std::size_t base,
                 std::optional<AttendedSet>& dest) {
    if (!block || !detail::has_rows(rows)) return;
    dest = msa_block(tape, q, tape.constant(rows), *block);
    if (dest->mutual) {
      slots[base] = dest->mutual->y_pooled;
      slots[base + 1] = dest->mutual->x_pooled;
    }
    if (dest->self) {
      slots[base + 2] = dest->self->y_pooled;
      slots[base + 3] = dest->self->x_pooled;
    }
  };
  run(params.v_block, in.v, kVisualMutual, out.visual);
  run(params.r_block, in.r, kRelationMutual, out.relation);
  out.logits = fuse_and_classify(tape, slots, params.fusion);
  return out;
}

inline std::size_t argmax(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("argmax: empty input");
  return static_cast<std::size_t>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}

inline Tensor predict_logits(const VqaModelParams& params, const ModelInput& in) {
  Tape tape(false);
  return model_forward(tape, params, in).logits.value();
}

inline std::size_t predict_answer(const VqaModelParams& params, const ModelInput& in) {
  return argmax(predict_logits(params, in).data());
}

}  // namespace srpvqa
