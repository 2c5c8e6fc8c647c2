#include <filesystem>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "tslm/pipeline.hpp"

namespace tslm {
namespace {

EncoderConfig tiny() {
  EncoderConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.ff_width = 16;
  return c;
}

TEST(TrainTest, OneProcedureOneEpochIsOneStep) {
  const auto corpus = generate_synthetic(1, 1);
  Model m = make_model(tiny(), build_corpus_vocab(corpus), 3);
  TrainOptions o;
  o.epochs = 1;
  const auto log = train(m, corpus, o);
  ASSERT_EQ(log.size(), 1u);
  EXPECT_EQ(log[0].optimizer_steps, 1);
}

TEST(TrainTest, LoggedRateFollowsSchedule) {
  const auto corpus = generate_synthetic(2, 4);
  Model m = make_model(tiny(), build_corpus_vocab(corpus), 3);
  TrainOptions o;
  o.epochs = 6;
  o.sgd = SgdConfig{3e-4, 0.5, 10};
  const auto log = train(m, corpus, o);
  for (const auto& e : log) {
    // Last update of epoch k is optimizer step 4k - 1.
    EXPECT_DOUBLE_EQ(e.learning_rate, effective_learning_rate(o.sgd, e.optimizer_steps - 1));
    EXPECT_EQ(e.optimizer_steps, static_cast<std::int64_t>(4 * e.epoch));
  }
  EXPECT_DOUBLE_EQ(log[2].learning_rate, 1.5e-4);
  EXPECT_DOUBLE_EQ(log[5].learning_rate, 3e-4 * 0.25);
}

TEST(TrainTest, LossDecreases) {
  const auto corpus = generate_synthetic(5, 4);
  Model m = make_model(tiny(), build_corpus_vocab(corpus), 3);
  TrainOptions o;
  o.epochs = 40;
  o.sgd = SgdConfig{0.2, 0.5, 1000};
  const auto log = train(m, corpus, o);
  EXPECT_LT(log.back().mean_loss, log.front().mean_loss);
}

TEST(TrainTest, EarlyStopFromCallback) {
  const auto corpus = generate_synthetic(5, 2);
  Model m = make_model(tiny(), build_corpus_vocab(corpus), 3);
  TrainOptions o;
  o.epochs = 10;
  o.on_epoch = [](const EpochLog& e) { return e.epoch < 3; };
  EXPECT_EQ(train(m, corpus, o).size(), 3u);
}

TEST(TrainTest, FrozenTimestampTableStaysZero) {
  const auto corpus = generate_synthetic(5, 2);
  Model m = make_model(tiny(), build_corpus_vocab(corpus), 3);
  freeze_zero_timestamp(m.params);
  TrainOptions o;
  o.epochs = 3;
  o.sgd = SgdConfig{0.2, 0.5, 100};
  train(m, corpus, o);
  for (double v : m.params.at(param::kTimestampEmbedding).value().data()) EXPECT_EQ(v, 0.0);
}

TEST(TrainTest, TimestampTableLearnsWhenNotFrozen) {
  const auto corpus = generate_synthetic(5, 2);
  Model m = make_model(tiny(), build_corpus_vocab(corpus), 3);
  TrainOptions o;
  o.epochs = 2;
  o.sgd = SgdConfig{0.2, 0.5, 100};
  train(m, corpus, o);
  double mass = 0.0;
  for (double v : m.params.at(param::kTimestampEmbedding).value().data()) mass += std::abs(v);
  EXPECT_GT(mass, 0.0);
}

TEST(TrainTest, NonFiniteLossAborts) {
  const auto corpus = generate_synthetic(5, 1);
  Model m = make_model(tiny(), build_corpus_vocab(corpus), 3);
  m.params.at(param::kStatusWeight).mutable_value()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainOptions o;
  EXPECT_THROW(train(m, corpus, o), NumericError);
}

struct Trained {
  std::vector<Procedure> corpus;
  Model model;
};

Trained trained_model() {
  auto corpus = generate_synthetic(9, 3);
  Model m = make_model(tiny(), build_corpus_vocab(corpus), 4);
  TrainOptions o;
  o.epochs = 15;
  o.sgd = SgdConfig{0.2, 0.5, 1000};
  o.seed = 4;
  train(m, corpus, o);
  return {std::move(corpus), std::move(m)};
}

std::string tsv_of(const Model& m, const std::vector<Procedure>& corpus, const PredictOptions& opts = {}) {
  std::ostringstream os;
  for (const auto& p : corpus) write_predictions_tsv(os, predict_procedure(m, p, opts).rows);
  return os.str();
}

TEST(PredictTest, DeterministicAndCandidateOnly) {
  const auto t = trained_model();
  EXPECT_EQ(tsv_of(t.model, t.corpus), tsv_of(t.model, t.corpus));
  for (const auto& p : t.corpus) {
    std::set<std::string> candidate_text;
    for (const auto& s : p.candidate_spans) candidate_text.insert(p.span_text(s));
    const auto pred = predict_procedure(t.model, p);
    EXPECT_EQ(pred.rows.size(), p.entities.size() * p.step_count());
    for (const auto& timeline : pred.timelines) {
      EXPECT_TRUE(testing::satisfies_rules(timeline));
      for (const auto& s : timeline) {
        if (s.kind == ResolvedState::Kind::Known) {
          EXPECT_TRUE(candidate_text.count(s.text)) << s.text;
          EXPECT_EQ(p.span_text(s.span), s.text);
        }
      }
    }
  }
}

TEST(PredictTest, ConstraintsOffKeepsRawAndCountsViolations) {
  const auto t = trained_model();
  for (const auto& p : t.corpus) {
    const auto off = predict_procedure(t.model, p, {true, false});
    std::size_t violations = 0;
    for (std::size_t e = 0; e < off.raw.size(); ++e) {
      EXPECT_EQ(off.timelines[e], off.raw[e]);
      violations += count_rule_violations(off.raw[e]);
    }
    EXPECT_EQ(off.rule_violations, violations);
  }
}

TEST(PredictTest, NoNpFilterStillWithinParagraph) {
  const auto t = trained_model();
  for (const auto& p : t.corpus) {
    const auto text = join_tokens(p.paragraph_tokens());
    for (const auto& timeline : predict_procedure(t.model, p, {false, true}).timelines) {
      for (const auto& s : timeline) {
        if (s.kind == ResolvedState::Kind::Known) {
          EXPECT_NE(text.find(s.text), std::string::npos);
        }
      }
    }
  }
}

TEST(CheckpointTest, RoundTripPreservesPredictions) {
  const auto t = trained_model();
  const auto path = (std::filesystem::temp_directory_path() / "tslm_pipeline_ckpt.json").string();
  save_checkpoint(path, t.model);
  const Model back = load_checkpoint(path);
  EXPECT_EQ(back.config, t.model.config);
  EXPECT_EQ(back.vocab, t.model.vocab);
  for (const auto& [name, v] : t.model.params.items()) EXPECT_EQ(back.params.at(name).value(), v.value()) << name;
  EXPECT_EQ(tsv_of(back, t.corpus), tsv_of(t.model, t.corpus));
  std::filesystem::remove(path);
}

TEST(CheckpointTest, VocabSizeMismatchRejected) {
  const auto t = trained_model();
  auto j = checkpoint_to_json(t.model);
  j["encoder_config"]["vocab_size"] = t.model.vocab.size() + 1;
  EXPECT_THROW(checkpoint_from_json(j), DataError);
  j = checkpoint_to_json(t.model);
  j.erase("params");
  EXPECT_THROW(checkpoint_from_json(j), DataError);
}

TEST(FitTest, CountsEveryEntityStep) {
  const auto t = trained_model();
  const auto r = measure_fit(t.model, t.corpus);
  std::size_t cells = 0;
  for (const auto& p : t.corpus) cells += p.entities.size() * (p.step_count() + 1);
  EXPECT_EQ(r.status_total, cells);
  EXPECT_LE(r.status_correct, r.status_total);
  EXPECT_GT(r.span_total, 0u);
}

}  // namespace
}  // namespace tslm
