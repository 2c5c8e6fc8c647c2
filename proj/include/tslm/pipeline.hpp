#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tslm/data.hpp"
#include "tslm/encoder.hpp"
#include "tslm/heads.hpp"
#include "tslm/inference.hpp"
#include "tslm/input_builder.hpp"
#include "tslm/numcore.hpp"
#include "tslm/state_table.hpp"
#include "tslm/tokenizer.hpp"

namespace tslm {

/// Vocabulary over the question template, entity names and sentences.
inline Vocab build_corpus_vocab(const std::vector<Procedure>& corpus) {
  Vocab v;
  for (const char* t : {"where", "is", "?"}) v.add(t);
  for (const auto& p : corpus) {
    for (const auto& e : p.entities) {
      for (const auto& t : tokenize(primary_alias(e))) v.add(t);
    }
    for (const auto& s : p.sentences) {
      for (const auto& t : s) v.add(t);
    }
  }
  return v;
}

struct Model {
  EncoderConfig config;
  Vocab vocab;
  ParamStore params;
};

inline Model make_model(EncoderConfig config, Vocab vocab, std::uint64_t seed) {
  config.vocab_size = vocab.size();
  config.validate();
  ParamStore ps = init_parameters(config, seed);
  return {config, std::move(vocab), std::move(ps)};
}

// ---------------------------------------------------------------------------
// Checkpoints: {"encoder_config": {...}, "vocab": {...}, "params": {...}}

inline nlohmann::json checkpoint_to_json(const Model& m) {
  return {{"encoder_config", m.config}, {"vocab", m.vocab.to_json()}, {"params", params_to_json(m.params)}};
}

inline Model checkpoint_from_json(const nlohmann::json& j) {
  for (const char* key : {"encoder_config", "vocab", "params"}) {
    if (!j.contains(key)) throw DataError(std::string("checkpoint: missing '") + key + "'");
  }
  EncoderConfig cfg;
  try {
    cfg = j.at("encoder_config").get<EncoderConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad encoder_config: ") + e.what());
  }
  Vocab vocab = Vocab::from_json(j.at("vocab"));
  if (cfg.vocab_size != vocab.size()) {
    throw DataError("checkpoint: vocab has " + std::to_string(vocab.size()) + " tokens but encoder expects " +
                    std::to_string(cfg.vocab_size));
  }
  cfg.validate();
  ParamStore ps = init_parameters(cfg, 0);
  params_from_json(ps, j.at("params"));
  return {cfg, std::move(vocab), std::move(ps)};
}

inline void save_checkpoint(const std::string& path, const Model& m) { write_json_file(path, checkpoint_to_json(m)); }
inline Model load_checkpoint(const std::string& path) { return checkpoint_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Per-entity query preparation

/// Everything needed to score one entity of one procedure at every step.
struct EntityQuery {
  std::size_t entity = 0;
  QueryLayout layout;
  CandidateSpans candidates;    // layout positions
  std::vector<GoldStep> gold;   // steps 0..n
};

inline GoldStep gold_step(const QueryLayout& layout, const std::vector<std::string>& paragraph,
                          const std::string& cell) {
  GoldStep g{status_of(cell), std::nullopt};
  if (g.status == Status::KnownLocation) {
    if (auto span = find_token_sequence(paragraph, tokenize(cell))) g.span = layout.to_layout(*span);
  }
  return g;
}

inline std::vector<EntityQuery> prepare_queries(const Procedure& p, const Model& m) {
  std::vector<EntityQuery> out;
  const auto paragraph = p.paragraph_tokens();
  for (std::size_t e = 0; e < p.entities.size(); ++e) {
    EntityQuery q;
    q.entity = e;
    q.layout = build_query(p.entities[e], p, m.vocab, m.config.max_length);
    q.candidates = layout_candidates(q.layout, p.candidate_spans);
    for (const auto& cell : p.grid.at(e)) q.gold.push_back(gold_step(q.layout, paragraph, cell));
    out.push_back(std::move(q));
  }
  return out;
}

struct StepPrediction {
  StatusPrediction status;
  SpanPrediction span;
};

inline StepPrediction forward(const Model& m, const TimestampedInput& input, const ForwardContext& ctx = {}) {
  const EncoderOutput out = encode(embed(input, m.params), m.params, m.config, ctx);
  return {status_head(out, m.params), span_head(out, m.params)};
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;  // rate used by the last update of the epoch
  std::int64_t optimizer_steps = 0;
  std::size_t skipped_spans = 0;
};

struct TrainOptions {
  std::size_t epochs = 1;
  SgdConfig sgd;
  std::uint64_t seed = 0;
  // Returns false to stop early.
  std::function<bool(const EpochLog&)> on_epoch;
};

/// Loss averaged over every (entity, step) of one procedure.
inline Var procedure_loss(const Model& m, const std::vector<EntityQuery>& queries, const ForwardContext& ctx,
                          std::size_t* skipped_spans = nullptr) {
  std::vector<Var> terms;
  for (const auto& q : queries) {
    for (std::size_t step = 0; step < q.gold.size(); ++step) {
      const auto pred = forward(m, timestamp(q.layout, step), ctx);
      auto jl = joint_loss(pred.status, pred.span, q.gold[step]);
      if (jl.span_skipped && skipped_spans) ++*skipped_spans;
      terms.push_back(std::move(jl.loss));
    }
  }
  if (terms.empty()) return Var(Tensor::scalar(0.0));
  return scale(add_scalars(terms), 1.0 / static_cast<double>(terms.size()));
}

/// Trains with one SGD update per procedure, visiting procedures in corpus order.
/// Returns the per-epoch log.
inline std::vector<EpochLog> train(Model& m, const std::vector<Procedure>& corpus, const TrainOptions& opts) {
  opts.sgd.validate();
  std::mt19937_64 rng(opts.seed);
  ForwardContext ctx{true, &rng, nullptr};
  std::vector<std::vector<EntityQuery>> prepared;
  prepared.reserve(corpus.size());
  for (const auto& p : corpus) prepared.push_back(prepare_queries(p, m));

  SgdOptimizer opt(opts.sgd);
  std::vector<EpochLog> log;
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    double total = 0.0;
    for (std::size_t i = 0; i < prepared.size(); ++i) {
      if (prepared[i].empty()) continue;
      const Var loss = procedure_loss(m, prepared[i], ctx, &entry.skipped_spans);
      if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite loss on procedure '" + corpus[i].id + "' in epoch " + std::to_string(epoch));
      }
      total += loss.item();
      loss.backward();
      entry.learning_rate = opt.current_learning_rate();
      opt.step(m.params);
    }
    entry.mean_loss = prepared.empty() ? 0.0 : total / static_cast<double>(prepared.size());
    entry.optimizer_steps = opt.step_count();
    log.push_back(entry);
    if (opts.on_epoch && !opts.on_epoch(entry)) break;
  }
  return log;
}

// ---------------------------------------------------------------------------
// Prediction

struct PredictOptions {
  bool np_filter = true;
  bool constraints = true;
};

struct ProcedurePrediction {
  std::vector<EntityTimeline> raw;       // before repair
  std::vector<EntityTimeline> timelines; // after repair (== raw when constraints off)
  std::size_t rule_violations = 0;       // counted on raw timelines
  std::size_t flagged_steps = 0;         // known status with no candidate
  std::vector<StateChangeRow> rows;
};

inline ProcedurePrediction predict_procedure(const Model& m, const Procedure& p, const PredictOptions& opts = {}) {
  ProcedurePrediction out;
  for (const auto& q : prepare_queries(p, m)) {
    const CandidateSpans candidates = opts.np_filter ? q.candidates : all_paragraph_spans(q.layout);
    EntityTimeline states;
    for (std::size_t step = 0; step <= p.step_count(); ++step) {
      const auto pred = forward(m, timestamp(q.layout, step));
      auto decoded = decode_step(pred.status, pred.span, candidates, q.layout);
      if (decoded.flagged) ++out.flagged_steps;
      states.push_back(std::move(decoded.state));
    }
    out.rule_violations += count_rule_violations(states);
    out.timelines.push_back(opts.constraints ? repair_timeline(states) : states);
    out.raw.push_back(std::move(states));
  }
  out.rows = build_table(p.id, p.entities, out.timelines, p.step_count());
  return out;
}

// ---------------------------------------------------------------------------
// Training-set diagnostics

struct FitReport {
  std::size_t status_total = 0, status_correct = 0;
  std::size_t span_total = 0, span_correct = 0;
  // Status accuracy restricted to entities whose gold status varies across steps.
  std::size_t changing_total = 0, changing_correct = 0;

  double status_accuracy() const { return status_total ? double(status_correct) / double(status_total) : 1.0; }
  double span_exact_match() const { return span_total ? double(span_correct) / double(span_total) : 1.0; }
  double changing_status_accuracy() const {
    return changing_total ? double(changing_correct) / double(changing_total) : 1.0;
  }
};

/// Per-step status accuracy and candidate-restricted span exact match
/// (over gold known-location steps whose location aligns to the paragraph).
inline FitReport measure_fit(const Model& m, const std::vector<Procedure>& corpus) {
  FitReport r;
  for (const auto& p : corpus) {
    for (const auto& q : prepare_queries(p, m)) {
      bool changing = false;
      for (const auto& g : q.gold) changing = changing || g.status != q.gold.front().status;
      for (std::size_t step = 0; step < q.gold.size(); ++step) {
        const auto pred = forward(m, timestamp(q.layout, step));
        const bool ok = pred.status.argmax() == q.gold[step].status;
        ++r.status_total;
        r.status_correct += ok;
        if (changing) {
          ++r.changing_total;
          r.changing_correct += ok;
        }
        if (q.gold[step].status == Status::KnownLocation && q.gold[step].span && !q.candidates.empty()) {
          ++r.span_total;
          const TokenSpan chosen = q.candidates[best_candidate(pred.span, q.candidates)];
          const TokenSpan gold = *q.gold[step].span;
          r.span_correct += std::equal(q.layout.tokens.begin() + chosen.start, q.layout.tokens.begin() + chosen.end + 1,
                                       q.layout.tokens.begin() + gold.start, q.layout.tokens.begin() + gold.end + 1);
        }
      }
    }
  }
  return r;
}

}  // namespace tslm
