#pragma once

#include <algorithm>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "tslm/heads.hpp"
#include "tslm/input_builder.hpp"
#include "tslm/types.hpp"

namespace tslm {

/// Resolved per-step state of one entity.
struct ResolvedState {
  enum class Kind { Destroyed, Unknown, Known };

  Kind kind = Kind::Unknown;
  std::string text;   // location text when Known
  TokenSpan span{};   // paragraph span when Known

  static ResolvedState destroyed() { return {Kind::Destroyed, {}, {}}; }
  static ResolvedState unknown() { return {Kind::Unknown, {}, {}}; }
  static ResolvedState known(std::string text, TokenSpan span = {}) { return {Kind::Known, std::move(text), span}; }

  /// Parses a grid cell ("-", "?" or text).
  static ResolvedState from_location(const std::string& location) {
    if (location == kNonExistent) return destroyed();
    if (location == kUnknownLocation) return unknown();
    return known(location);
  }

  bool exists() const { return kind != Kind::Destroyed; }

  std::string location() const {
    switch (kind) {
      case Kind::Destroyed: return std::string(kNonExistent);
      case Kind::Unknown: return std::string(kUnknownLocation);
      case Kind::Known: return text;
    }
    return {};
  }

  friend bool operator==(const ResolvedState&, const ResolvedState&) = default;
};

/// Per-step states of one entity over steps 0..n.
using EntityTimeline = std::vector<ResolvedState>;

/// Candidate noun-phrase spans in layout positions, sorted and de-duplicated.
using CandidateSpans = std::vector<TokenSpan>;

/// Maps paragraph-global candidate spans onto a layout.
inline CandidateSpans layout_candidates(const QueryLayout& layout, const std::vector<TokenSpan>& paragraph_spans) {
  std::set<TokenSpan> unique;
  for (const auto& s : paragraph_spans) {
    if (s.start > s.end) throw DataError("candidate span with start > end");
    unique.insert(layout.to_layout(s));
  }
  return {unique.begin(), unique.end()};
}

/// Every span of consecutive paragraph tokens within one sentence (no filtering).
inline CandidateSpans all_paragraph_spans(const QueryLayout& layout) {
  CandidateSpans out;
  const auto& pos = layout.paragraph_positions;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    for (std::size_t j = i; j < pos.size(); ++j) {
      if (pos[j] - pos[i] != j - i) break;  // crosses a [SEP]
      out.push_back({pos[i], pos[j]});
    }
  }
  return out;
}

struct DecodeResult {
  ResolvedState state;
  // Known-location status with no candidate to pick from.
  bool flagged = false;
};

/// Index into `candidates` maximising start[s] * end[e]; earliest start, then
/// shortest span, wins ties.
inline std::size_t best_candidate(const SpanPrediction& span, const CandidateSpans& candidates) {
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return candidates[a] < candidates[b]; });
  std::size_t best = order.front();
  double best_score = -1.0;
  for (std::size_t i : order) {
    const auto& c = candidates[i];
    if (c.end >= span.length()) throw DimensionError("candidate span beyond the encoded sequence");
    const double score = span.start.value()[c.start] * span.end.value()[c.end];
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

/// Resolves the state of one (entity, step) query.
inline DecodeResult decode_step(const StatusPrediction& status, const SpanPrediction& span,
                                const CandidateSpans& candidates, const QueryLayout& layout) {
  switch (status.argmax()) {
    case Status::NonExistence: return {ResolvedState::destroyed(), false};
    case Status::UnknownLocation: return {ResolvedState::unknown(), false};
    case Status::KnownLocation: break;
  }
  if (candidates.empty()) return {ResolvedState::unknown(), true};
  const TokenSpan chosen = candidates[best_candidate(span, candidates)];
  std::string text;
  for (std::size_t t = chosen.start; t <= chosen.end; ++t) {
    if (t > chosen.start) text += ' ';
    text += layout.tokens.at(t);
  }
  // Report the span in paragraph coordinates.
  const auto& pos = layout.paragraph_positions;
  const auto first = std::lower_bound(pos.begin(), pos.end(), chosen.start);
  const auto last = std::lower_bound(pos.begin(), pos.end(), chosen.end);
  TokenSpan paragraph{static_cast<std::size_t>(first - pos.begin()), static_cast<std::size_t>(last - pos.begin())};
  return {ResolvedState::known(std::move(text), paragraph), false};
}

/// Enforces the consistency rules by scanning forward: a second creation, a
/// second destruction, or a creation after a completed destruction is
/// replaced by the previous step's state.
inline EntityTimeline repair_timeline(const EntityTimeline& states) {
  EntityTimeline out;
  out.reserve(states.size());
  bool created = false, destroyed = false;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (i == 0) {
      out.push_back(states[0]);
      continue;
    }
    const ResolvedState& prev = out.back();
    const ResolvedState& cur = states[i];
    if (!prev.exists() && cur.exists()) {
      if (created || destroyed) {
        out.push_back(prev);
        continue;
      }
      created = true;
    } else if (prev.exists() && !cur.exists()) {
      if (destroyed) {
        out.push_back(prev);
        continue;
      }
      destroyed = true;
    }
    out.push_back(cur);
  }
  return out;
}

/// Number of transitions repair_timeline would overwrite.
inline std::size_t count_rule_violations(const EntityTimeline& states) {
  std::size_t violations = 0;
  bool created = false, destroyed = false;
  bool prev_exists = states.empty() ? false : states.front().exists();
  for (std::size_t i = 1; i < states.size(); ++i) {
    const bool cur = states[i].exists();
    if (!prev_exists && cur) {
      if (created || destroyed) {
        ++violations;
        continue;
      }
      created = true;
    } else if (prev_exists && !cur) {
      if (destroyed) {
        ++violations;
        continue;
      }
      destroyed = true;
    }
    prev_exists = cur;
  }
  return violations;
}

}  // namespace tslm
