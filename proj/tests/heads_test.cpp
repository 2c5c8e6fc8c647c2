#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "support/gradient_check.hpp"
#include "tslm/heads.hpp"

namespace tslm {
namespace {

using testing::random_tensor;

EncoderOutput random_output(std::size_t T, std::size_t d, std::mt19937_64& rng) {
  return {Var(random_tensor({T, d}, rng))};
}

TEST(StatusHeadTest, ZeroWeightIsUniform) {
  std::mt19937_64 rng(1);
  const auto out = random_output(5, 4, rng);
  const auto s = status_head(out, Var(Tensor::zeros({4, 3})));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s.probs.value()[i], 1.0 / 3.0, 1e-15);
}

TEST(StatusHeadTest, AnalyticLogits) {
  // CLS row e0 picks out the first row of W, which holds the logits.
  const EncoderOutput out{Var(Tensor::matrix(2, 2, {1, 0, 0.3, 0.7}))};
  const Var w(Tensor::matrix(2, 3, {std::log(2.0), 0.0, 0.0, 5.0, -1.0, 2.0}));
  const auto s = status_head(out, w);
  EXPECT_NEAR(s.prob(Status::NonExistence), 0.5, 1e-12);
  EXPECT_NEAR(s.prob(Status::UnknownLocation), 0.25, 1e-12);
  EXPECT_NEAR(s.prob(Status::KnownLocation), 0.25, 1e-12);
  EXPECT_EQ(s.argmax(), Status::NonExistence);
}

TEST(StatusHeadTest, ShapeMismatchThrows) {
  std::mt19937_64 rng(2);
  const auto out = random_output(3, 4, rng);
  EXPECT_THROW(status_head(out, Var(Tensor::zeros({4, 2}))), DimensionError);
  EXPECT_THROW(status_head(out, Var(Tensor::zeros({3, 3}))), DimensionError);
}

TEST(StatusHeadTest, CrossEntropyGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto out = random_output(4, 5, rng);
    Var w(random_tensor({5, 3}, rng), true);
    const std::size_t gold = trial % 3;
    const auto r = testing::check_gradients({{"w", w}}, [&] { return cross_entropy(status_head(out, w).probs, gold); });
    EXPECT_LT(r.max_rel_error, testing::kMaxRelativeError) << r.worst;
  }
}

TEST(StatusHeadTest, ArgmaxInvariantToConstantLogitShift) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto out = random_output(3, 4, rng);
    const Tensor w = random_tensor({4, 3}, rng);
    Tensor shifted = w;
    // Shifting a whole row of W adds the same amount to every logit.
    const double c = 3.7;
    for (std::size_t k = 0; k < 3; ++k) shifted.at(0, k) += c;
    const auto a = status_head(out, Var(w)), b = status_head(out, Var(shifted));
    EXPECT_EQ(a.argmax(), b.argmax());
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a.probs.value()[k], b.probs.value()[k], 1e-12);
  }
}

TEST(SpanHeadTest, ZeroWeightIsUniform) {
  std::mt19937_64 rng(5);
  const auto out = random_output(7, 4, rng);
  const auto s = span_head(out, Var(Tensor::zeros({4, 1})), Var(random_tensor({4, 1}, rng)));
  for (double p : s.start.value().data()) EXPECT_NEAR(p, 1.0 / 7.0, 1e-15);
  double total = 0.0;
  for (double p : s.end.value().data()) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(SpanHeadTest, IdenticalRowsIdenticalProbabilities) {
  std::mt19937_64 rng(6);
  Tensor h = random_tensor({6, 4}, rng);
  for (std::size_t c = 0; c < 4; ++c) h.at(4, c) = h.at(1, c);
  const auto s = span_head({Var(h)}, Var(random_tensor({4, 1}, rng)), Var(random_tensor({4, 1}, rng)));
  EXPECT_EQ(s.start.value()[1], s.start.value()[4]);
  EXPECT_EQ(s.end.value()[1], s.end.value()[4]);
}

TEST(SpanHeadTest, MatchesLogitSoftmaxOracle) {
  std::mt19937_64 rng(7);
  const Tensor h = random_tensor({6, 5}, rng);
  const Tensor ws = random_tensor({5, 1}, rng), we = random_tensor({5, 1}, rng);
  const auto s = span_head({Var(h)}, Var(ws), Var(we));
  for (const auto& [w, probs] : {std::pair{ws, s.start.value()}, std::pair{we, s.end.value()}}) {
    std::vector<double> logits(6);
    double z = 0.0;
    for (std::size_t t = 0; t < 6; ++t) {
      for (std::size_t j = 0; j < 5; ++j) logits[t] += h.at(t, j) * w[j];
      z += std::exp(logits[t]);
    }
    for (std::size_t t = 0; t < 6; ++t) EXPECT_NEAR(probs[t], std::exp(logits[t]) / z, 1e-9);
  }
}

TEST(SpanHeadTest, ShapeMismatchThrows) {
  std::mt19937_64 rng(8);
  const auto out = random_output(3, 4, rng);
  EXPECT_THROW(span_head(out, Var(Tensor::zeros({3, 1})), Var(Tensor::zeros({4, 1}))), DimensionError);
}

StatusPrediction status_of_probs(std::vector<double> p) { return {Var(Tensor::matrix(1, 3, std::move(p)))}; }
SpanPrediction span_of_probs(std::vector<double> s, std::vector<double> e) {
  const std::size_t T = s.size();
  return {Var(Tensor::matrix(1, T, std::move(s))), Var(Tensor::matrix(1, T, std::move(e)))};
}

TEST(JointLossTest, PerfectPredictionIsZero) {
  const auto st = status_of_probs({0, 0, 1});
  const auto sp = span_of_probs({0, 1, 0}, {0, 0, 1});
  const auto l = joint_loss(st, sp, {Status::KnownLocation, TokenSpan{1, 2}});
  EXPECT_DOUBLE_EQ(l.loss.item(), 0.0);
  EXPECT_FALSE(l.span_skipped);
}

TEST(JointLossTest, UniformStatusNonExistenceIsLn3) {
  const auto st = status_of_probs({1.0 / 3, 1.0 / 3, 1.0 / 3});
  const auto sp = span_of_probs({0.9, 0.1}, {0.2, 0.8});
  EXPECT_NEAR(joint_loss(st, sp, {Status::NonExistence, std::nullopt}).loss.item(), std::log(3.0), 1e-12);
  // A stray span on a non-known gold is ignored.
  EXPECT_NEAR(joint_loss(st, sp, {Status::UnknownLocation, TokenSpan{0, 0}}).loss.item(), std::log(3.0), 1e-12);
}

TEST(JointLossTest, RandomCaseEqualsHandSum) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto st = status_of_probs(softmax_rows(random_tensor({3}, rng)).data());
    const auto sp = span_of_probs(softmax_rows(random_tensor({6}, rng)).data(), softmax_rows(random_tensor({6}, rng)).data());
    const std::size_t s = trial % 6, e = std::min<std::size_t>(5, s + trial % 3);
    const double expected =
        -std::log(st.probs.value()[2]) - std::log(sp.start.value()[s]) - std::log(sp.end.value()[e]);
    const auto l = joint_loss(st, sp, {Status::KnownLocation, TokenSpan{s, e}});
    EXPECT_NEAR(l.loss.item(), expected, 1e-9);
    EXPECT_GE(l.loss.item(), 0.0);
  }
}

TEST(JointLossTest, UnresolvedSpanIsSkippedAndFlagged) {
  const auto st = status_of_probs({0.2, 0.3, 0.5});
  const auto sp = span_of_probs({0.5, 0.5}, {0.5, 0.5});
  const auto l = joint_loss(st, sp, {Status::KnownLocation, std::nullopt});
  EXPECT_TRUE(l.span_skipped);
  EXPECT_NEAR(l.loss.item(), -std::log(0.5), 1e-12);
}

TEST(JointLossTest, SpanWeightsGetGradientOnlyForKnownGold) {
  std::mt19937_64 rng(10);
  const auto out = random_output(5, 4, rng);
  Var ws(random_tensor({4, 1}, rng), true), we(random_tensor({4, 1}, rng), true), w(random_tensor({4, 3}, rng), true);
  for (Status gold : {Status::NonExistence, Status::UnknownLocation, Status::KnownLocation}) {
    ws.zero_grad();
    we.zero_grad();
    const auto l = joint_loss(status_head(out, w), span_head(out, ws, we), {gold, TokenSpan{2, 3}});
    l.loss.backward();
    const bool known = gold == Status::KnownLocation;
    EXPECT_EQ(ws.has_grad(), known);
    EXPECT_EQ(we.has_grad(), known);
  }
}

}  // namespace
}  // namespace tslm
