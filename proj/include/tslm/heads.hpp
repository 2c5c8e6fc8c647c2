#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "tslm/encoder.hpp"
#include "tslm/types.hpp"

namespace tslm {

/// Distribution over {non-existence, unknown-location, known-location}.
struct StatusPrediction {
  Var probs;  // 1 x 3

  double prob(Status s) const { return probs.value()[static_cast<std::size_t>(s)]; }

  Status argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < kStatusCount; ++i) {
      if (probs.value()[i] > probs.value()[best]) best = i;
    }
    return static_cast<Status>(best);
  }
};

/// Start and end distributions over every token of the layout.
struct SpanPrediction {
  Var start;  // 1 x T
  Var end;    // 1 x T

  std::size_t length() const { return start.cols(); }
};

/// softmax(W^T h_cls) with W of shape d_model x 3.
inline StatusPrediction status_head(const EncoderOutput& out, const Var& weight) {
  if (weight.rows() != out.hidden.cols() || weight.cols() != kStatusCount) {
    throw DimensionError("status_head: weight " + shape_string(weight.shape()) + " incompatible with d_model " +
                         std::to_string(out.hidden.cols()));
  }
  return {softmax(matmul(out.cls(), weight), 1)};
}

/// Token-wise softmax of H w_start and H w_end.
inline SpanPrediction span_head(const EncoderOutput& out, const Var& start_weight, const Var& end_weight) {
  const std::size_t d = out.hidden.cols();
  for (const Var* w : {&start_weight, &end_weight}) {
    if (w->value().size() != d || w->cols() != 1) {
      throw DimensionError("span_head: weight " + shape_string(w->shape()) + " must be d_model x 1 with d_model " +
                           std::to_string(d));
    }
  }
  return {softmax(transpose(matmul(out.hidden, start_weight)), 1),
          softmax(transpose(matmul(out.hidden, end_weight)), 1)};
}

inline StatusPrediction status_head(const EncoderOutput& out, const ParamStore& ps) {
  return status_head(out, ps.at(param::kStatusWeight));
}

inline SpanPrediction span_head(const EncoderOutput& out, const ParamStore& ps) {
  return span_head(out, ps.at(param::kStartWeight), ps.at(param::kEndWeight));
}

/// Gold label of one (entity, step) query; span is in layout positions.
struct GoldStep {
  Status status = Status::NonExistence;
  std::optional<TokenSpan> span;
};

struct JointLoss {
  Var loss;
  // Gold said known-location but no span could be aligned; span terms skipped.
  bool span_skipped = false;
};

/// CE(status) + [gold is known-location] * (CE(start) + CE(end)).
inline JointLoss joint_loss(const StatusPrediction& status, const SpanPrediction& span, const GoldStep& gold) {
  std::vector<Var> terms{cross_entropy(status.probs, static_cast<std::size_t>(gold.status))};
  bool skipped = false;
  if (gold.status == Status::KnownLocation) {
    if (gold.span && gold.span->start <= gold.span->end && gold.span->end < span.length()) {
      terms.push_back(cross_entropy(span.start, gold.span->start));
      terms.push_back(cross_entropy(span.end, gold.span->end));
    } else {
      skipped = true;
    }
  }
  return {terms.size() == 1 ? terms.front() : add_scalars(terms), skipped};
}

}  // namespace tslm
