#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tslm/error.hpp"
#include "tslm/tokenizer.hpp"
#include "tslm/types.hpp"

namespace tslm {

inline constexpr std::size_t kTimestampQuestion = 0;
inline constexpr std::size_t kTimestampPast = 1;
inline constexpr std::size_t kTimestampCurrent = 2;
inline constexpr std::size_t kTimestampFuture = 3;
inline constexpr std::size_t kTimestampVocab = 4;

/// "[CLS] where is <entity> ? [SEP] s1 [SEP] ... sn [SEP]" laid out as ids.
struct QueryLayout {
  std::vector<std::string> tokens;
  std::vector<std::size_t> token_ids;
  // 0 for the question region (including its [SEP]), j for sentence j and the [SEP] after it.
  std::vector<std::size_t> sentence_index;
  std::vector<std::size_t> position_ids;
  std::size_t sentence_count = 0;
  // paragraph_positions[j] is the layout position of paragraph token j.
  std::vector<std::size_t> paragraph_positions;

  std::size_t length() const { return token_ids.size(); }

  std::size_t question_length() const {
    std::size_t n = 0;
    while (n < sentence_index.size() && sentence_index[n] == 0) ++n;
    return n;
  }

  /// Maps a paragraph span onto layout positions.
  TokenSpan to_layout(TokenSpan paragraph_span) const {
    if (paragraph_span.end >= paragraph_positions.size()) {
      throw DimensionError("paragraph span end " + std::to_string(paragraph_span.end) + " beyond paragraph");
    }
    return {paragraph_positions[paragraph_span.start], paragraph_positions[paragraph_span.end]};
  }
};

/// A layout plus per-token timestamp ids for one step.
struct TimestampedInput {
  QueryLayout layout;
  std::vector<std::size_t> timestamp_ids;
  std::size_t step = 0;
};

/// Builds the entity question over the tokenised sentences.
/// A non-zero max_length rejects layouts longer than it.
inline QueryLayout build_query(const std::string& entity, std::span<const std::vector<std::string>> sentences,
                               const Vocab& vocab, std::size_t max_length = 0) {
  if (sentences.empty()) throw DataError("build_query: procedure has no sentences");
  const auto entity_tokens = tokenize(primary_alias(entity));
  if (entity_tokens.empty()) throw DataError("build_query: empty entity name");

  QueryLayout q;
  auto push = [&](const std::string& tok, std::size_t sentence) {
    q.tokens.push_back(tok);
    q.token_ids.push_back(vocab.id(tok));
    q.sentence_index.push_back(sentence);
    q.position_ids.push_back(q.position_ids.size());
  };
  push(std::string(kClsToken), 0);
  push("where", 0);
  push("is", 0);
  for (const auto& t : entity_tokens) push(t, 0);
  push("?", 0);
  push(std::string(kSepToken), 0);
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    for (const auto& t : sentences[s]) {
      q.paragraph_positions.push_back(q.tokens.size());
      push(t, s + 1);
    }
    push(std::string(kSepToken), s + 1);
  }
  q.sentence_count = sentences.size();
  if (max_length != 0 && q.length() > max_length) {
    throw DataError("build_query: input of " + std::to_string(q.length()) + " tokens exceeds max length " +
                    std::to_string(max_length));
  }
  return q;
}

inline QueryLayout build_query(const std::string& entity, const Procedure& procedure, const Vocab& vocab,
                               std::size_t max_length = 0) {
  return build_query(entity, std::span<const std::vector<std::string>>(procedure.sentences), vocab, max_length);
}

/// Timestamp id of a token in sentence `sentence` (0 = question) when `step` is current.
inline std::size_t timestamp_id(std::size_t sentence, std::size_t step) {
  if (sentence == 0) return kTimestampQuestion;
  if (step == 0 || sentence == step) return kTimestampCurrent;
  return sentence < step ? kTimestampPast : kTimestampFuture;
}

/// Tags every token as question/past/current/future relative to `step`.
/// Step 0 (the state before the process) treats the whole paragraph as current.
inline TimestampedInput timestamp(const QueryLayout& layout, std::size_t step) {
  if (step > layout.sentence_count) {
    throw DimensionError("timestamp: step " + std::to_string(step) + " outside 0.." +
                         std::to_string(layout.sentence_count));
  }
  TimestampedInput in{layout, {}, step};
  in.timestamp_ids.reserve(layout.length());
  for (std::size_t s : layout.sentence_index) in.timestamp_ids.push_back(timestamp_id(s, step));
  return in;
}

}  // namespace tslm
