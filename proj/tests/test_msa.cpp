#include <gtest/gtest.h>

#include <numeric>

#include "srpvqa/msa.hpp"

using namespace srpvqa;

namespace {

Tensor randn(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  return random_normal(r, c, 1.0, rng);
}

MsaDims small_dims() { return MsaDims{6, 5, 8, 2, 2, 8}; }

MsaBlockParams block(AttentionMode mode, std::uint64_t seed = 1) {
  Rng rng(seed);
  return MsaBlockParams::init(small_dims(), mode, rng);
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  Tensor out = Tensor::zeros(t.rows(), t.cols());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out(i, j) = t(perm[i], j);
  return out;
}

double row_sum(const Tensor& t) { return std::accumulate(t.data().begin(), t.data().end(), 0.0); }

// Weighted sum of rows computed directly, as the pooling oracle.
Tensor weighted_rows(const Tensor& w, const Tensor& rows) {
  Tensor out = Tensor::zeros(1, rows.cols());
  for (std::size_t i = 0; i < rows.rows(); ++i)
    for (std::size_t j = 0; j < rows.cols(); ++j) out[j] += w[i] * rows(i, j);
  return out;
}

void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

}  // namespace

TEST(Mutual, SingleRowPoolsToThatRow) {
  const auto p = block(AttentionMode::Mutual);
  const Tensor x = randn(1, 6, 2), y = randn(1, 5, 3);
  Tape t(false);
  const auto r = mutual_attention(t, t.constant(x), t.constant(y), p);
  EXPECT_EQ(r.x_scores.value().item(), 1.0);
  expect_near(r.y_pooled.value(), y, 1e-15);
  expect_near(r.x_pooled.value(), x, 1e-15);
}

TEST(Mutual, ScoresAreDistributionsAndPoolingIsWeightedSum) {
  const auto p = block(AttentionMode::Mutual);
  const Tensor x = randn(4, 6, 2), y = randn(7, 5, 3);
  Tape t(false);
  const auto r = mutual_attention(t, t.constant(x), t.constant(y), p);
  EXPECT_EQ(r.x_scores.value().shape(), (Shape{1, 4}));
  EXPECT_EQ(r.y_scores.value().shape(), (Shape{1, 7}));
  EXPECT_NEAR(row_sum(r.x_scores.value()), 1.0, 1e-12);
  EXPECT_NEAR(row_sum(r.y_scores.value()), 1.0, 1e-12);
  expect_near(r.y_pooled.value(), weighted_rows(r.y_scores.value(), y), 1e-12);
  expect_near(r.x_pooled.value(), weighted_rows(r.x_scores.value(), x), 1e-12);
}

TEST(Mutual, IdenticalRowsGetEqualWeight) {
  const auto p = block(AttentionMode::Mutual);
  Tensor y = Tensor::zeros(3, 5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) y(i, j) = static_cast<double>(j);
  Tape t(false);
  const auto r = mutual_attention(t, t.constant(randn(2, 6, 1)), t.constant(y), p);
  for (double w : r.y_scores.value().data()) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
}

TEST(Mutual, EmptyInputThrows) {
  const auto p = block(AttentionMode::Mutual);
  Tape t(false);
  EXPECT_THROW(mutual_attention(t, t.constant(Tensor::zeros(0, 6)), t.constant(randn(2, 5, 1)), p), DimensionError);
}

TEST(Mutual, WidthMismatchThrows) {
  const auto p = block(AttentionMode::Mutual);
  Tape t(false);
  EXPECT_THROW(mutual_attention(t, t.constant(randn(2, 5, 1)), t.constant(randn(2, 5, 1)), p), DimensionError);
}

class Permutation : public ::testing::TestWithParam<AttentionMode> {};

// Permuting y permutes its scores and leaves both pooled vectors unchanged; likewise for x.
TEST_P(Permutation, PooledVectorsAreInvariant) {
  const auto p = block(GetParam(), 4);
  const Tensor x = randn(5, 6, 5), y = randn(6, 5, 6);
  const std::vector<std::size_t> py = {4, 2, 0, 5, 1, 3}, px = {3, 0, 4, 1, 2};
  Tape t(false);
  const AttendedSet base = msa_block(t, t.constant(x), t.constant(y), p);
  const AttendedSet ys = msa_block(t, t.constant(x), t.constant(permute_rows(y, py)), p);
  const AttendedSet xs = msa_block(t, t.constant(permute_rows(x, px)), t.constant(y), p);
  auto check = [&](Var xp0, Var yp0, Var ys0, Var xp1, Var yp1, Var ys1) {
    expect_near(xp1.value(), xp0.value(), 1e-10);
    expect_near(yp1.value(), yp0.value(), 1e-10);
    for (std::size_t i = 0; i < py.size(); ++i) EXPECT_NEAR(ys1.value()[i], ys0.value()[py[i]], 1e-10);
  };
  if (base.mutual) {
    check(base.mutual->x_pooled, base.mutual->y_pooled, base.mutual->y_scores, ys.mutual->x_pooled,
          ys.mutual->y_pooled, ys.mutual->y_scores);
    expect_near(xs.mutual->y_pooled.value(), base.mutual->y_pooled.value(), 1e-10);
    expect_near(xs.mutual->x_pooled.value(), base.mutual->x_pooled.value(), 1e-10);
  }
  if (base.self) {
    check(base.self->x_pooled, base.self->y_pooled, base.self->y_scores, ys.self->x_pooled, ys.self->y_pooled,
          ys.self->y_scores);
    expect_near(xs.self->y_pooled.value(), base.self->y_pooled.value(), 1e-10);
    expect_near(xs.self->x_pooled.value(), base.self->x_pooled.value(), 1e-10);
    for (std::size_t i = 0; i < px.size(); ++i)
      EXPECT_NEAR(xs.self->x_scores.value()[i], base.self->x_scores.value()[px[i]], 1e-10);
  }
}

// Pooled vectors are convex combinations, so they stay inside the per-column range of the rows.
TEST_P(Permutation, PooledVectorInsideRowEnvelope) {
  const auto p = block(GetParam(), 9);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = randn(1 + seed % 4, 6, 100 + seed), y = randn(1 + seed % 7, 5, 200 + seed);
    Tape t(false);
    const AttendedSet a = msa_block(t, t.constant(x), t.constant(y), p);
    auto inside = [](const Tensor& pooled, const Tensor& rows) {
      for (std::size_t j = 0; j < rows.cols(); ++j) {
        double lo = rows(0, j), hi = rows(0, j);
        for (std::size_t i = 1; i < rows.rows(); ++i) {
          lo = std::min(lo, rows(i, j));
          hi = std::max(hi, rows(i, j));
        }
        EXPECT_GE(pooled[j], lo - 1e-12);
        EXPECT_LE(pooled[j], hi + 1e-12);
      }
    };
    if (a.mutual) {
      inside(a.mutual->y_pooled.value(), y);
      inside(a.mutual->x_pooled.value(), x);
    }
    if (a.self) {
      inside(a.self->y_pooled.value(), y);
      inside(a.self->x_pooled.value(), x);
      EXPECT_NEAR(row_sum(a.self->x_scores.value()), 1.0, 1e-12);
      EXPECT_NEAR(row_sum(a.self->y_scores.value()), 1.0, 1e-12);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Modes, Permutation,
                         ::testing::Values(AttentionMode::Mutual, AttentionMode::Self, AttentionMode::Msa));

TEST(SelfAttention, GuideChangesYScores) {
  const auto p = block(AttentionMode::Self, 3);
  const Tensor y = randn(4, 5, 1);
  Tape t(false);
  const auto a = guided_self_attention(t, t.constant(randn(3, 6, 2)), t.constant(y), p);
  const auto b = guided_self_attention(t, t.constant(randn(3, 6, 7)), t.constant(y), p);
  double diff = 0.0;
  for (std::size_t i = 0; i < 4; ++i) diff += std::abs(a.y_scores.value()[i] - b.y_scores.value()[i]);
  EXPECT_GT(diff, 1e-6);
}

TEST(SelfAttention, SingleRowPoolsToThatRow) {
  const auto p = block(AttentionMode::Self);
  const Tensor y = randn(1, 5, 3);
  Tape t(false);
  const auto r = guided_self_attention(t, t.constant(randn(2, 6, 2)), t.constant(y), p);
  expect_near(r.y_pooled.value(), y, 1e-15);
}

TEST(Block, AblationModesHoldOnlyTheirHalf) {
  EXPECT_TRUE(block(AttentionMode::Mutual).has_mutual());
  EXPECT_FALSE(block(AttentionMode::Mutual).has_self());
  EXPECT_FALSE(block(AttentionMode::Self).has_mutual());
  EXPECT_TRUE(block(AttentionMode::Msa).has_self());
  Rng rng(1);
  EXPECT_THROW(MsaBlockParams::init(MsaDims{6, 5, 10, 4, 1, 8}, AttentionMode::Self, rng), DimensionError);
}

TEST(Block, GradCheck) {
  auto p = block(AttentionMode::Msa, 12);
  p.encoder.resize(1);
  p.guided.resize(1);
  Tensor x = randn(3, 6, 13), y = randn(4, 5, 14);
  std::vector<Tensor*> inputs{&x, &y};
  for (Tensor* t : parameter_list(p)) inputs.push_back(t);
  const double err = grad_check(
      [&](Tape& t, const std::vector<Var>& v) {
        const AttendedSet a = msa_block(t, v[0], v[1], p);
        Rng rng(15);
        Var total = t.constant(Tensor::scalar(0.0));
        for (Var pooled : {a.mutual->x_pooled, a.mutual->y_pooled, a.self->x_pooled, a.self->y_pooled}) {
          const Tensor w = random_normal(1, pooled.cols(), 1.0, rng);
          total = ops::add(total, ops::sum(ops::mul(pooled, t.constant(w))));
        }
        return total;
      },
      inputs);
  EXPECT_LT(err, 1e-4);
}

namespace {

std::array<std::size_t, kFusionSlots> slot_widths() { return {3, 2, 3, 2, 4, 2, 4, 2}; }

FusionParams fusion(bool relu, std::uint64_t seed = 1) {
  Rng rng(seed);
  FusionParams f = FusionParams::init(slot_widths(), 6, 5, relu, rng);
  f.classifier.bias = random_normal(1, 5, 1.0, rng);
  return f;
}

std::vector<Tensor> slot_inputs(std::uint64_t seed) {
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < kFusionSlots; ++s) out.push_back(randn(1, slot_widths()[s], seed + s));
  return out;
}

Tensor fuse(const FusionParams& f, const std::vector<std::optional<Tensor>>& in) {
  Tape t(false);
  std::vector<Var> vars(kFusionSlots);
  for (std::size_t s = 0; s < kFusionSlots; ++s)
    if (in[s]) vars[s] = t.constant(*in[s]);
  return fuse_and_classify(t, vars, f).value();
}

}  // namespace

TEST(Fusion, NoInputsGiveClassifierBias) {
  const FusionParams f = fusion(true);
  EXPECT_EQ(fuse(f, std::vector<std::optional<Tensor>>(kFusionSlots)), f.classifier.bias);
}

TEST(Fusion, ZeroInputsGiveClassifierBias) {
  const FusionParams f = fusion(false);
  std::vector<std::optional<Tensor>> in;
  for (std::size_t s = 0; s < kFusionSlots; ++s) in.emplace_back(Tensor::zeros(1, slot_widths()[s]));
  expect_near(fuse(f, in), f.classifier.bias, 1e-15);
}

TEST(Fusion, LinearWithoutReluDoublesAroundBias) {
  const FusionParams f = fusion(false);
  std::vector<std::optional<Tensor>> one, two;
  for (const Tensor& x : slot_inputs(30)) {
    one.emplace_back(x);
    Tensor d = x;
    for (double& v : d.data()) v *= 2.0;
    two.emplace_back(d);
  }
  const Tensor a = fuse(f, one), b = fuse(f, two);
  for (std::size_t k = 0; k < 5; ++k)
    EXPECT_NEAR(b[k] - f.classifier.bias[k], 2.0 * (a[k] - f.classifier.bias[k]), 1e-12);
}

TEST(Fusion, MatchesScalarOracle) {
  const FusionParams f = fusion(true, 4);
  const auto xs = slot_inputs(40);
  std::vector<double> hidden(6, 0.0);
  for (std::size_t s = 0; s < kFusionSlots; ++s) {
    const Tensor& w = f.projections[s]->weight;
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t i = 0; i < xs[s].size(); ++i) hidden[j] += xs[s][i] * w(i, j);
  }
  for (double& h : hidden) h = std::max(0.0, h);
  std::vector<std::optional<Tensor>> in(xs.begin(), xs.end());
  const Tensor got = fuse(f, in);
  for (std::size_t k = 0; k < 5; ++k) {
    double want = f.classifier.bias[k];
    for (std::size_t j = 0; j < 6; ++j) want += hidden[j] * f.classifier.weight(j, k);
    EXPECT_NEAR(got[k], want, 1e-12);
  }
}

// An absent branch is the same as an all-zero attended vector.
TEST(Fusion, AbsentSlotEqualsZeroVector) {
  const FusionParams f = fusion(true, 5);
  const auto xs = slot_inputs(50);
  std::vector<std::optional<Tensor>> absent(xs.begin(), xs.end()), zeroed(xs.begin(), xs.end());
  for (std::size_t s : {kRelationMutual, kQuestionMutualR, kRelationSelf, kQuestionSelfR}) {
    absent[s].reset();
    zeroed[s] = Tensor::zeros(1, slot_widths()[s]);
  }
  expect_near(fuse(f, absent), fuse(f, zeroed), 1e-12);
}

TEST(Fusion, WrongWidthOrCountThrows) {
  const FusionParams f = fusion(true);
  std::vector<std::optional<Tensor>> in(kFusionSlots);
  in[0] = Tensor::zeros(1, 7);
  EXPECT_THROW(fuse(f, in), DimensionError);
  Tape t(false);
  EXPECT_THROW(fuse_and_classify(t, std::vector<Var>(3), f), DimensionError);
}
