#include <gtest/gtest.h>

#include <set>

#include "srpvqa/model.hpp"

using namespace srpvqa;

namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.q_width = 6;
  d.v_width = 5;
  d.r_width = 7;
  d.model_width = 4;
  d.heads = 2;
  d.layers = 1;
  d.mlp_hidden = 4;
  d.fused_width = 5;
  d.answers = 3;
  return d;
}

ModelInput tiny_input(std::uint64_t seed) {
  Rng rng(seed);
  return ModelInput{random_normal(3, 6, 1.0, rng), random_normal(4, 5, 1.0, rng), random_normal(2, 7, 1.0, rng)};
}

}  // namespace

TEST(Model, LogitShape) {
  const auto p = VqaModelParams::init(tiny_dims(), AttentionMode::Msa, InputSet::VRQ, true, 1);
  EXPECT_EQ(predict_logits(p, tiny_input(2)).shape(), (Shape{1, 3}));
}

TEST(Model, GradCheckAllParameters) {
  auto p = VqaModelParams::init(tiny_dims(), AttentionMode::Msa, InputSet::VRQ, false, 3);
  const ModelInput in = tiny_input(4);
  const double err = grad_check(
      [&](Tape& t, const std::vector<Var>&) { return ops::cross_entropy(model_forward(t, p, in).logits, 1); },
      parameter_list(p));
  EXPECT_LT(err, 1e-4);
}

TEST(Model, ForwardIsBitIdentical) {
  const auto a = VqaModelParams::init(tiny_dims(), AttentionMode::Msa, InputSet::VRQ, true, 5);
  const auto b = VqaModelParams::init(tiny_dims(), AttentionMode::Msa, InputSet::VRQ, true, 5);
  EXPECT_EQ(predict_logits(a, tiny_input(6)), predict_logits(b, tiny_input(6)));
}

// With no relation rows the full model must behave exactly like a model built without the r branch.
TEST(Model, EmptyRelationsMatchVisualOnlyModel) {
  for (AttentionMode mode : {AttentionMode::Mutual, AttentionMode::Self, AttentionMode::Msa}) {
    const auto full = VqaModelParams::init(tiny_dims(), mode, InputSet::VRQ, true, 7);
    const auto vq = VqaModelParams::init(tiny_dims(), mode, InputSet::VQ, true, 7);
    ModelInput in = tiny_input(8);
    const Tensor vq_logits = predict_logits(vq, in);
    in.r = Tensor::zeros(0, 7);
    EXPECT_EQ(predict_logits(full, in), vq_logits);
  }
}

TEST(Model, InputSetControlsBlocks) {
  const auto rq = VqaModelParams::init(tiny_dims(), AttentionMode::Msa, InputSet::RQ, true, 1);
  EXPECT_FALSE(rq.v_block.has_value());
  EXPECT_TRUE(rq.r_block.has_value());
  // Visual rows are ignored by an r+q model.
  ModelInput in = tiny_input(9);
  const Tensor with_v = predict_logits(rq, in);
  in.v = Tensor::zeros(0, 5);
  EXPECT_EQ(predict_logits(rq, in), with_v);
}

TEST(Model, ParameterNamesAreUnique) {
  auto p = VqaModelParams::init(tiny_dims(), AttentionMode::Msa, InputSet::VRQ, true, 1);
  std::set<std::string> names;
  std::size_t count = 0;
  p.visit("", [&](const std::string& name, Tensor&) {
    names.insert(name);
    ++count;
  });
  EXPECT_EQ(names.size(), count);
  EXPECT_TRUE(names.count("fusion.classifier.weight"));
}

TEST(Model, WrongQuestionWidthThrows) {
  const auto p = VqaModelParams::init(tiny_dims(), AttentionMode::Msa, InputSet::VRQ, true, 1);
  ModelInput in = tiny_input(2);
  in.q = Tensor::zeros(2, 5);
  EXPECT_THROW(predict_logits(p, in), DimensionError);
  in.q = Tensor::zeros(0, 6);
  EXPECT_THROW(predict_logits(p, in), DimensionError);
}

TEST(Argmax, FirstMaximumWins) {
  const std::vector<double> xs = {1, 3, 3, 2};
  EXPECT_EQ(argmax(xs), 1u);
  EXPECT_THROW(argmax(std::vector<double>{}), std::invalid_argument);
}
