#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "tslm/error.hpp"

namespace tslm {

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kClsId = 2;
inline constexpr std::size_t kSepId = 3;
inline constexpr std::size_t kReservedCount = 4;

inline bool is_detachable_punct(char c) { return c == '.' || c == ',' || c == '?' || c == '!' || c == ';'; }

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

/// Lowercases, splits on whitespace and peels trailing .,?!; off each word.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      std::string_view word = text.substr(i, j - i);
      std::size_t stem = word.size();
      while (stem > 0 && is_detachable_punct(word[stem - 1])) --stem;
      if (stem > 0) out.push_back(to_lower(word.substr(0, stem)));
      for (std::size_t k = stem; k < word.size(); ++k) out.emplace_back(1, word[k]);
    }
    i = j;
  }
  return out;
}

inline std::string join_tokens(std::span<const std::string> tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

/// Word-level vocabulary with four reserved ids.
class Vocab {
 public:
  Vocab() {
    for (std::string_view t : {kPadToken, kUnkToken, kClsToken, kSepToken}) insert(std::string(t));
  }

  /// Returns the id of `token`, assigning the next free id if new.
  std::size_t add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    return insert(token);
  }

  std::size_t id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
  }

  bool contains(const std::string& token) const { return ids_.count(token) != 0; }

  const std::string& token(std::size_t id) const {
    if (id >= tokens_.size()) throw DimensionError("vocab id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

  std::size_t size() const { return tokens_.size(); }

  std::vector<std::size_t> encode(std::span<const std::string> tokens) const {
    std::vector<std::size_t> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  std::vector<std::string> decode(std::span<const std::size_t> ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (std::size_t i : ids) out.push_back(token(i));
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
    return j;
  }

  static Vocab from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw DataError("vocab: expected a JSON object token -> id");
    std::vector<std::string> by_id(j.size());
    std::vector<bool> filled(j.size(), false);
    for (const auto& [tok, idv] : j.items()) {
      if (!idv.is_number_unsigned()) throw DataError("vocab: id of '" + tok + "' is not a non-negative integer");
      const auto id = idv.get<std::size_t>();
      if (id >= by_id.size() || filled[id]) {
        throw DataError("vocab: ids must be a permutation of 0..n-1 (bad id for '" + tok + "')");
      }
      by_id[id] = tok;
      filled[id] = true;
    }
    const std::string_view reserved[] = {kPadToken, kUnkToken, kClsToken, kSepToken};
    for (std::size_t i = 0; i < kReservedCount; ++i) {
      if (by_id.size() <= i || by_id[i] != reserved[i]) {
        throw DataError("vocab: reserved token " + std::string(reserved[i]) + " must have id " + std::to_string(i));
      }
    }
    Vocab v;
    for (std::size_t i = kReservedCount; i < by_id.size(); ++i) v.insert(by_id[i]);
    return v;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::size_t insert(const std::string& token) {
    const std::size_t id = tokens_.size();
    ids_.emplace(token, id);
    tokens_.push_back(token);
    return id;
  }

  std::unordered_map<std::string, std::size_t> ids_;
  std::vector<std::string> tokens_;
};

/// Vocabulary with ids in first-seen order after the reserved block.
inline Vocab build_vocab(std::span<const std::string> corpus) {
  Vocab v;
  for (const auto& t : corpus) v.add(t);
  return v;
}

}  // namespace tslm
