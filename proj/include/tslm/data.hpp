#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tslm/error.hpp"
#include "tslm/numcore/optim.hpp"
#include "tslm/tokenizer.hpp"
#include "tslm/types.hpp"

namespace tslm {

/// Canonical form of a grid cell: "-" / "?" literal, text re-tokenised and lowercased.
inline std::string normalize_location(const std::string& raw) {
  std::string trimmed = raw;
  while (!trimmed.empty() && std::isspace(static_cast<unsigned char>(trimmed.back()))) trimmed.pop_back();
  std::size_t lead = 0;
  while (lead < trimmed.size() && std::isspace(static_cast<unsigned char>(trimmed[lead]))) ++lead;
  trimmed.erase(0, lead);
  if (trimmed == kNonExistent || trimmed == kUnknownLocation) return trimmed;
  return join_tokens(tokenize(trimmed));
}

/// First occurrence of `needle` as a contiguous token run.
inline std::optional<TokenSpan> find_token_sequence(const std::vector<std::string>& haystack,
                                                     const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return std::nullopt;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + static_cast<std::ptrdiff_t>(i))) {
      return TokenSpan{i, i + needle.size() - 1};
    }
  }
  return std::nullopt;
}

inline std::vector<TokenSpan> find_all_token_sequences(const std::vector<std::string>& haystack,
                                                       const std::vector<std::string>& needle) {
  std::vector<TokenSpan> out;
  if (needle.empty() || needle.size() > haystack.size()) return out;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + static_cast<std::ptrdiff_t>(i))) {
      out.push_back({i, i + needle.size() - 1});
    }
  }
  return out;
}

/// Noun-phrase candidates: every occurrence of a gold text location or an
/// entity name, plus the word after each determiner. Spans never cross a
/// sentence boundary.
inline std::vector<TokenSpan> derive_candidate_spans(const Procedure& p) {
  const auto tokens = p.paragraph_tokens();
  std::vector<std::size_t> sentence_of;
  for (std::size_t s = 0; s < p.sentences.size(); ++s) sentence_of.insert(sentence_of.end(), p.sentences[s].size(), s);

  std::set<TokenSpan> spans;
  auto add_all = [&](const std::string& phrase) {
    for (const auto& sp : find_all_token_sequences(tokens, tokenize(phrase))) {
      if (sentence_of[sp.start] == sentence_of[sp.end]) spans.insert(sp);
    }
  };
  for (const auto& row : p.grid) {
    for (const auto& cell : row) {
      if (status_of(cell) == Status::KnownLocation) add_all(cell);
    }
  }
  for (const auto& e : p.entities) add_all(primary_alias(e));
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if ((t == "the" || t == "a" || t == "an") && sentence_of[i] == sentence_of[i + 1] &&
        !is_detachable_punct(tokens[i + 1].front())) {
      spans.insert({i + 1, i + 1});
    }
  }
  return {spans.begin(), spans.end()};
}

/// Gold text locations that do not occur verbatim in the paragraph.
struct DataQualityReport {
  // (process id, entity, state index, location)
  std::vector<std::tuple<std::string, std::string, std::size_t, std::string>> unaligned_locations;
  std::size_t known_cells = 0;
};

inline DataQualityReport check_span_alignment(const std::vector<Procedure>& corpus) {
  DataQualityReport r;
  for (const auto& p : corpus) {
    const auto tokens = p.paragraph_tokens();
    for (std::size_t e = 0; e < p.entities.size(); ++e) {
      for (std::size_t k = 0; k < p.grid[e].size(); ++k) {
        const auto& cell = p.grid[e][k];
        if (status_of(cell) != Status::KnownLocation) continue;
        ++r.known_cells;
        if (!find_token_sequence(tokens, tokenize(cell))) r.unaligned_locations.emplace_back(p.id, p.entities[e], k, cell);
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Canonical JSON

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, const std::string& path) {
  if (!obj.contains(key)) throw DataError(path + ": missing required key '" + key + "'");
  return obj.at(key);
}

inline std::string require_string(const nlohmann::json& j, const std::string& path) {
  if (!j.is_string()) throw DataError(path + ": expected a string");
  return j.get<std::string>();
}

inline const nlohmann::json& require_array(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array()) throw DataError(path + ": expected an array");
  return j;
}

inline std::vector<std::vector<std::string>> parse_sentences(const nlohmann::json& j, const std::string& path) {
  std::vector<std::vector<std::string>> out;
  const auto& arr = require_array(j, path);
  if (arr.empty()) throw DataError(path + ": procedure needs at least one sentence");
  for (std::size_t s = 0; s < arr.size(); ++s) {
    const std::string sp = path + "[" + std::to_string(s) + "]";
    std::vector<std::string> sentence;
    for (std::size_t t = 0; t < require_array(arr[s], sp).size(); ++t) {
      sentence.push_back(to_lower(require_string(arr[s][t], sp + "[" + std::to_string(t) + "]")));
    }
    out.push_back(std::move(sentence));
  }
  return out;
}

inline std::vector<TokenSpan> parse_spans(const nlohmann::json& j, const std::string& path, std::size_t paragraph_len) {
  std::vector<TokenSpan> out;
  const auto& arr = require_array(j, path);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string sp = path + "[" + std::to_string(i) + "]";
    if (!arr[i].is_array() || arr[i].size() != 2 || !arr[i][0].is_number_unsigned() ||
        !arr[i][1].is_number_unsigned()) {
      throw DataError(sp + ": expected [start, end] with non-negative integers");
    }
    const TokenSpan span{arr[i][0].get<std::size_t>(), arr[i][1].get<std::size_t>()};
    if (span.start > span.end || span.end >= paragraph_len) {
      throw DataError(sp + ": span outside paragraph of " + std::to_string(paragraph_len) + " tokens");
    }
    out.push_back(span);
  }
  return out;
}

}  // namespace detail

inline Procedure procedure_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw DataError(path + ": expected an object");
  for (const auto& [key, v] : j.items()) {
    if (key != "id" && key != "sentences" && key != "entities" && key != "grid" && key != "candidate_spans") {
      throw DataError(path + ": unknown key '" + key + "'");
    }
  }
  Procedure p;
  p.id = detail::require_string(detail::require(j, "id", path), path + ".id");
  p.sentences = detail::parse_sentences(detail::require(j, "sentences", path), path + ".sentences");

  const auto& ents = detail::require_array(detail::require(j, "entities", path), path + ".entities");
  for (std::size_t e = 0; e < ents.size(); ++e) {
    p.entities.push_back(detail::require_string(ents[e], path + ".entities[" + std::to_string(e) + "]"));
  }
  const auto& grid = detail::require(j, "grid", path);
  if (!grid.is_object()) throw DataError(path + ".grid: expected an object entity -> states");
  for (const auto& [key, v] : grid.items()) {
    if (std::find(p.entities.begin(), p.entities.end(), key) == p.entities.end()) {
      throw DataError(path + ".grid." + key + ": entity not listed in entities");
    }
  }
  const std::size_t columns = p.sentences.size() + 1;
  for (const auto& e : p.entities) {
    const std::string gp = path + ".grid." + e;
    if (!grid.contains(e)) throw DataError(gp + ": missing grid row");
    const auto& row = detail::require_array(grid.at(e), gp);
    if (row.size() != columns) {
      throw DataError(gp + ": expected " + std::to_string(columns) + " states (state 0.." +
                      std::to_string(columns - 1) + "), got " + std::to_string(row.size()));
    }
    std::vector<std::string> cells;
    for (std::size_t k = 0; k < row.size(); ++k) {
      cells.push_back(normalize_location(detail::require_string(row[k], gp + "[" + std::to_string(k) + "]")));
      if (cells.back().empty()) throw DataError(gp + "[" + std::to_string(k) + "]: empty location");
    }
    p.grid.push_back(std::move(cells));
  }
  std::size_t paragraph_len = 0;
  for (const auto& s : p.sentences) paragraph_len += s.size();
  p.candidate_spans =
      detail::parse_spans(detail::require(j, "candidate_spans", path), path + ".candidate_spans", paragraph_len);
  return p;
}

inline nlohmann::json procedure_to_json(const Procedure& p) {
  nlohmann::json grid = nlohmann::json::object();
  for (std::size_t e = 0; e < p.entities.size(); ++e) grid[p.entities[e]] = p.grid[e];
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : p.candidate_spans) spans.push_back({s.start, s.end});
  return {{"id", p.id}, {"sentences", p.sentences}, {"entities", p.entities}, {"grid", grid}, {"candidate_spans", spans}};
}

inline std::vector<Procedure> corpus_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw DataError("$: expected a top-level array of procedures");
  std::vector<Procedure> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(procedure_from_json(j[i], "$[" + std::to_string(i) + "]"));
    if (!ids.insert(out.back().id).second) {
      throw DataError("$[" + std::to_string(i) + "].id: duplicate process id '" + out.back().id + "'");
    }
  }
  return out;
}

inline nlohmann::json corpus_to_json(const std::vector<Procedure>& corpus) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : corpus) j.push_back(procedure_to_json(p));
  return j;
}

/// Reads a Propara-style corpus in the canonical JSON schema.
inline std::vector<Procedure> load_propara(const std::string& path) { return corpus_from_json(read_json_file(path)); }

inline void save_corpus(const std::string& path, const std::vector<Procedure>& corpus) {
  write_json_file(path, corpus_to_json(corpus));
}

// ---------------------------------------------------------------------------
// NPN-style location annotations
//
// [{"id", "sentences", "ingredients": [..], "locations": {ingredient: {"<step>": loc}},
//   "candidate_spans"}]. Unannotated steps inherit the previous location;
// state 0 defaults to "?".

inline std::vector<Procedure> npn_from_json(const nlohmann::json& j, std::vector<std::string>* warnings = nullptr) {
  if (!j.is_array()) throw DataError("$: expected a top-level array of recipes");
  std::vector<Procedure> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string path = "$[" + std::to_string(i) + "]";
    const auto& r = j[i];
    if (!r.is_object()) throw DataError(path + ": expected an object");
    for (const auto& [key, v] : r.items()) {
      if (key != "id" && key != "sentences" && key != "ingredients" && key != "locations" && key != "candidate_spans") {
        throw DataError(path + ": unknown key '" + key + "'");
      }
    }
    Procedure p;
    p.id = detail::require_string(detail::require(r, "id", path), path + ".id");
    p.sentences = detail::parse_sentences(detail::require(r, "sentences", path), path + ".sentences");
    const std::size_t n = p.sentences.size();
    const auto& ingredients = detail::require_array(detail::require(r, "ingredients", path), path + ".ingredients");
    const auto& locations = detail::require(r, "locations", path);
    if (!locations.is_object()) throw DataError(path + ".locations: expected an object");
    for (std::size_t k = 0; k < ingredients.size(); ++k) {
      const std::string name = detail::require_string(ingredients[k], path + ".ingredients[" + std::to_string(k) + "]");
      const std::string lp = path + ".locations." + name;
      if (!locations.contains(name) || locations.at(name).empty()) {
        if (warnings) warnings->push_back(p.id + ": ingredient '" + name + "' has no location annotations; excluded");
        continue;
      }
      const auto& ann = locations.at(name);
      if (!ann.is_object()) throw DataError(lp + ": expected an object step -> location");
      std::vector<std::optional<std::string>> marks(n + 1);
      for (const auto& [step_key, loc] : ann.items()) {
        std::size_t step = 0, used = 0;
        try {
          step = std::stoul(step_key, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != step_key.size() || step > n) {
          throw DataError(lp + "." + step_key + ": step must be an integer in 0.." + std::to_string(n));
        }
        marks[step] = normalize_location(detail::require_string(loc, lp + "." + step_key));
      }
      std::vector<std::string> row(n + 1);
      row[0] = marks[0].value_or(std::string(kUnknownLocation));
      for (std::size_t s = 1; s <= n; ++s) row[s] = marks[s].value_or(row[s - 1]);
      p.entities.push_back(name);
      p.grid.push_back(std::move(row));
    }
    std::size_t paragraph_len = 0;
    for (const auto& s : p.sentences) paragraph_len += s.size();
    if (r.contains("candidate_spans")) {
      p.candidate_spans = detail::parse_spans(r.at("candidate_spans"), path + ".candidate_spans", paragraph_len);
    } else {
      p.candidate_spans = derive_candidate_spans(p);
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<Procedure> load_npn(const std::string& path, std::vector<std::string>* warnings = nullptr) {
  return npn_from_json(read_json_file(path), warnings);
}

// ---------------------------------------------------------------------------
// Grid TSV converter
//
//   <process id> \t sentence \t <entity 1> \t ... \t <entity m>
//   state0       \t          \t <loc> ...
//   state1       \t <text>   \t <loc> ...
//
// Blocks are separated by blank lines. Candidate spans are derived.

inline std::vector<Procedure> convert_grid_tsv(std::istream& is, const std::string& source = "<stream>") {
  std::vector<Procedure> out;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> block;
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cells.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    return cells;
  };
  auto flush = [&]() {
    if (block.empty()) return;
    const auto& [hline, header] = block.front();
    const std::string where = source + ":" + std::to_string(hline);
    if (header.size() < 3 || header[1] != "sentence") {
      throw DataError(where + ": header must be '<id>\\tsentence\\t<entities...>'");
    }
    Procedure p;
    p.id = header[0];
    p.entities.assign(header.begin() + 2, header.end());
    p.grid.assign(p.entities.size(), {});
    for (std::size_t r = 1; r < block.size(); ++r) {
      const auto& [lineno, cells] = block[r];
      const std::string rw = source + ":" + std::to_string(lineno);
      const std::string expected = "state" + std::to_string(r - 1);
      if (cells.empty() || cells[0] != expected) throw DataError(rw + ": expected first cell '" + expected + "'");
      if (cells.size() != header.size()) {
        throw DataError(rw + ": expected " + std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
      }
      if (r == 1 && !cells[1].empty()) throw DataError(rw + ": state0 has no sentence");
      if (r > 1) {
        auto toks = tokenize(cells[1]);
        if (toks.empty()) throw DataError(rw + ": empty sentence");
        p.sentences.push_back(std::move(toks));
      }
      for (std::size_t e = 0; e < p.entities.size(); ++e) {
        auto cell = normalize_location(cells[e + 2]);
        if (cell.empty()) throw DataError(rw + ": empty location for '" + p.entities[e] + "'");
        p.grid[e].push_back(std::move(cell));
      }
    }
    if (block.size() < 3) throw DataError(where + ": process needs state0 and at least one sentence row");
    p.candidate_spans = derive_candidate_spans(p);
    out.push_back(std::move(p));
    block.clear();
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    block.emplace_back(lineno, split(line));
  }
  flush();
  return out;
}

inline std::vector<Procedure> convert_grid_tsv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return convert_grid_tsv(is, path);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct GrammarConfig {
  std::size_t min_steps = 3;
  std::size_t max_steps = 5;
  std::size_t min_entities = 2;
  std::size_t max_entities = 3;
  std::vector<std::string> entity_pool{"water", "sugar", "oxygen", "salt",  "sand", "clay", "iron",
                                       "steam", "ice",   "seed",   "acid",  "wax",  "dust", "resin"};
  std::vector<std::string> location_pool{"leaf", "root",  "soil", "cloud", "river", "pot",        "oven",
                                         "bowl", "field", "cave", "kiln",  "jar",   "tree trunk", "glass tube"};

  void validate() const {
    if (min_steps == 0 || min_steps > max_steps) throw ConfigError("grammar: need 0 < min_steps <= max_steps");
    if (min_entities == 0 || min_entities > max_entities) {
      throw ConfigError("grammar: need 0 < min_entities <= max_entities");
    }
    if (entity_pool.size() < max_entities + max_steps) throw ConfigError("grammar: entity pool too small");
    if (location_pool.size() < 2) throw ConfigError("grammar: need at least two locations");
  }
};

inline void to_json(nlohmann::json& j, const GrammarConfig& g) {
  j = {{"min_steps", g.min_steps},       {"max_steps", g.max_steps},     {"min_entities", g.min_entities},
       {"max_entities", g.max_entities}, {"entity_pool", g.entity_pool}, {"location_pool", g.location_pool}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, GrammarConfig& g) {
  if (j.contains("min_steps")) j.at("min_steps").get_to(g.min_steps);
  if (j.contains("max_steps")) j.at("max_steps").get_to(g.max_steps);
  if (j.contains("min_entities")) j.at("min_entities").get_to(g.min_entities);
  if (j.contains("max_entities")) j.at("max_entities").get_to(g.max_entities);
  if (j.contains("entity_pool")) j.at("entity_pool").get_to(g.entity_pool);
  if (j.contains("location_pool")) j.at("location_pool").get_to(g.location_pool);
}

/// Template-generated procedures with exactly derivable grids.
///
/// Templates: "the X is in the L", "the X moves to the L", "the X is destroyed",
/// "the X and the Y combine into Z at the L". An input's state-0 location is
/// known only when its first mention is the "is in" sentence, otherwise "?".
inline std::vector<Procedure> generate_synthetic(std::uint64_t seed, std::size_t n_procedures,
                                                 const GrammarConfig& grammar = {}) {
  grammar.validate();
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };

  std::vector<Procedure> out;
  for (std::size_t pi = 0; pi < n_procedures; ++pi) {
    Procedure p;
    p.id = "synth-" + std::to_string(seed) + "-" + std::to_string(pi);
    const std::size_t n = pick(grammar.min_steps, grammar.max_steps);
    const std::size_t k = pick(grammar.min_entities, grammar.max_entities);

    std::vector<std::string> pool = grammar.entity_pool;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::size_t next_new = k;

    struct Track {
      std::vector<std::string> states;  // 0..current
      bool mentioned = false;
      bool alive = true;
      std::string hidden_origin;
    };
    std::vector<Track> tracks;
    for (std::size_t e = 0; e < k; ++e) {
      p.entities.push_back(pool[e]);
      Track t;
      t.states.push_back(std::string(kUnknownLocation));
      t.hidden_origin = grammar.location_pool[pick(0, grammar.location_pool.size() - 1)];
      tracks.push_back(std::move(t));
    }
    auto random_location_except = [&](const std::string& avoid) {
      for (;;) {
        const auto& l = grammar.location_pool[pick(0, grammar.location_pool.size() - 1)];
        if (l != avoid) return l;
      }
    };

    for (std::size_t step = 1; step <= n; ++step) {
      std::vector<std::size_t> alive;
      for (std::size_t e = 0; e < tracks.size(); ++e) {
        if (tracks[e].alive) alive.push_back(e);
        tracks[e].states.push_back(tracks[e].states.back());
      }
      std::vector<std::size_t> unmentioned;
      for (std::size_t e : alive) {
        if (!tracks[e].mentioned) unmentioned.push_back(e);
      }
      // 0 locate, 1 move, 2 destroy, 3 combine
      std::vector<int> options;
      if (!unmentioned.empty()) options.insert(options.end(), {0, 0});
      if (!alive.empty()) options.insert(options.end(), {1, 1, 1, 2});
      if (alive.size() >= 2 && next_new < pool.size()) options.insert(options.end(), {3, 3});
      if (options.empty()) {
        // Everything is gone: bring in a new entity at a location.
        options.push_back(4);
      }
      const int choice = options[pick(0, options.size() - 1)];
      std::string sentence;
      if (choice == 0) {
        const std::size_t e = unmentioned[pick(0, unmentioned.size() - 1)];
        auto& t = tracks[e];
        for (auto& s : t.states) s = t.hidden_origin;
        t.mentioned = true;
        sentence = "the " + p.entities[e] + " is in the " + t.hidden_origin + " .";
      } else if (choice == 1) {
        const std::size_t e = alive[pick(0, alive.size() - 1)];
        auto& t = tracks[e];
        const std::string dest = random_location_except(t.states[step - 1]);
        t.states[step] = dest;
        t.mentioned = true;
        sentence = "the " + p.entities[e] + " moves to the " + dest + " .";
      } else if (choice == 2) {
        const std::size_t e = alive[pick(0, alive.size() - 1)];
        auto& t = tracks[e];
        t.states[step] = std::string(kNonExistent);
        t.alive = false;
        t.mentioned = true;
        sentence = "the " + p.entities[e] + " is destroyed .";
      } else {
        std::size_t x = 0, y = 0;
        if (choice == 3) {
          x = alive[pick(0, alive.size() - 1)];
          do {
            y = alive[pick(0, alive.size() - 1)];
          } while (y == x);
        }
        const std::string place = grammar.location_pool[pick(0, grammar.location_pool.size() - 1)];
        const std::string z = pool[next_new++];
        Track t;
        t.states.assign(step, std::string(kNonExistent));
        t.states.push_back(place);
        t.mentioned = true;
        p.entities.push_back(z);
        tracks.push_back(std::move(t));
        if (choice == 3) {
          for (std::size_t e : {x, y}) {
            tracks[e].states[step] = std::string(kNonExistent);
            tracks[e].alive = false;
            tracks[e].mentioned = true;
          }
          sentence = "the " + p.entities[x] + " and the " + p.entities[y] + " combine into " + z + " at the " + place + " .";
        } else {
          sentence = "the " + z + " forms in the " + place + " .";
        }
      }
      p.sentences.push_back(tokenize(sentence));
    }
    for (auto& t : tracks) p.grid.push_back(std::move(t.states));
    p.candidate_spans = derive_candidate_spans(p);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace tslm
