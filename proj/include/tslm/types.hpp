#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "tslm/error.hpp"
#include "tslm/tokenizer.hpp"

namespace tslm {

inline constexpr std::string_view kNonExistent = "-";
inline constexpr std::string_view kUnknownLocation = "?";

/// Status classes in the fixed order used by the status head.
enum class Status : std::size_t { NonExistence = 0, UnknownLocation = 1, KnownLocation = 2 };

inline constexpr std::size_t kStatusCount = 3;

inline Status status_of(std::string_view location) {
  if (location == kNonExistent) return Status::NonExistence;
  if (location == kUnknownLocation) return Status::UnknownLocation;
  return Status::KnownLocation;
}

inline bool exists(std::string_view location) { return location != kNonExistent; }

/// Inclusive [start, end] token range.
struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
  friend auto operator<=>(const TokenSpan&, const TokenSpan&) = default;
};

/// One procedural paragraph with its gold location grid.
///
/// grid[e][k] is the location of entities[e] at state k (0 = before the
/// process), one of "-", "?" or lowercase location text.
struct Procedure {
  std::string id;
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> entities;
  std::vector<std::vector<std::string>> grid;
  // Paragraph-global, 0-based, inclusive token indices.
  std::vector<TokenSpan> candidate_spans;

  std::size_t step_count() const { return sentences.size(); }

  std::vector<std::string> paragraph_tokens() const {
    std::vector<std::string> out;
    for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
    return out;
  }

  std::size_t entity_index(std::string_view entity) const {
    for (std::size_t i = 0; i < entities.size(); ++i) {
      if (entities[i] == entity) return i;
    }
    throw DataError("procedure '" + id + "' has no entity '" + std::string(entity) + "'");
  }

  /// Text of a paragraph span, tokens joined by single spaces.
  std::string span_text(TokenSpan span) const {
    const auto tokens = paragraph_tokens();
    if (span.end >= tokens.size() || span.start > span.end) {
      throw DimensionError("span [" + std::to_string(span.start) + "," + std::to_string(span.end) +
                           "] outside paragraph of " + std::to_string(tokens.size()) + " tokens");
    }
    return join_tokens(std::span<const std::string>(tokens).subspan(span.start, span.end - span.start + 1));
  }

  friend bool operator==(const Procedure&, const Procedure&) = default;
};

/// An entity is an input when it has a known or unknown location at state 0.
inline bool is_input(const Procedure& p, std::size_t entity) { return exists(p.grid.at(entity).at(0)); }

/// First alias of "water; liquid" style names.
inline std::string primary_alias(std::string_view entity) {
  const auto cut = entity.find(';');
  std::string_view head = entity.substr(0, cut);
  while (!head.empty() && head.back() == ' ') head.remove_suffix(1);
  while (!head.empty() && head.front() == ' ') head.remove_prefix(1);
  return std::string(head);
}

}  // namespace tslm
