#pragma once

#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tslm/error.hpp"
#include "tslm/inference.hpp"
#include "tslm/tokenizer.hpp"
#include "tslm/types.hpp"

namespace tslm {

enum class Action { None, Create, Move, Destroy };

inline std::string_view action_name(Action a) {
  switch (a) {
    case Action::None: return "None";
    case Action::Create: return "Create";
    case Action::Move: return "Move";
    case Action::Destroy: return "Destroy";
  }
  return "None";
}

inline Action parse_action(std::string_view s) {
  if (s == "None") return Action::None;
  if (s == "Create") return Action::Create;
  if (s == "Move") return Action::Move;
  if (s == "Destroy") return Action::Destroy;
  throw DataError("unknown action '" + std::string(s) + "'");
}

/// One row of the document-level table.
struct StateChangeRow {
  std::string process_id;
  std::size_t step = 0;
  std::string entity;
  Action action = Action::None;
  std::string before;
  std::string after;

  friend bool operator==(const StateChangeRow&, const StateChangeRow&) = default;
};

/// Create when something appears, Destroy when it vanishes, None when
/// unchanged, Move for any other change (including "?" <-> text).
inline Action derive_action(std::string_view before, std::string_view after) {
  const bool was = exists(before), is = exists(after);
  if (!was && is) return Action::Create;
  if (was && !is) return Action::Destroy;
  if (before == after) return Action::None;
  return Action::Move;
}

/// Rows for one entity from its per-state locations (states 0..n).
inline std::vector<StateChangeRow> build_entity_rows(const std::string& process_id, const std::string& entity,
                                                     const std::vector<std::string>& locations) {
  if (locations.empty()) {
    throw DataError("build_table: entity '" + entity + "' in '" + process_id + "' has no state 0");
  }
  std::vector<StateChangeRow> rows;
  rows.reserve(locations.size() - 1);
  for (std::size_t i = 1; i < locations.size(); ++i) {
    const std::string& before = rows.empty() ? locations[0] : rows.back().after;
    rows.push_back({process_id, i, entity, derive_action(before, locations[i]), before, locations[i]});
  }
  return rows;
}

inline std::vector<std::string> timeline_locations(const EntityTimeline& timeline) {
  std::vector<std::string> out;
  out.reserve(timeline.size());
  for (const auto& s : timeline) out.push_back(to_lower(s.location()));
  return out;
}

/// Entity-major table: one row per (entity, step 1..n).
inline std::vector<StateChangeRow> build_table(const std::string& process_id,
                                               const std::vector<std::string>& entities,
                                               const std::vector<EntityTimeline>& timelines,
                                               std::size_t step_count) {
  if (entities.size() != timelines.size()) throw DataError("build_table: entity and timeline counts differ");
  std::vector<StateChangeRow> rows;
  for (std::size_t e = 0; e < entities.size(); ++e) {
    if (timelines[e].size() != step_count + 1) {
      throw DataError("build_table: timeline of '" + entities[e] + "' must cover states 0.." +
                      std::to_string(step_count) + " (has " + std::to_string(timelines[e].size()) + ")");
    }
    auto er = build_entity_rows(process_id, entities[e], timeline_locations(timelines[e]));
    rows.insert(rows.end(), er.begin(), er.end());
  }
  return rows;
}

/// Table of a procedure's gold grid.
inline std::vector<StateChangeRow> gold_table(const Procedure& p) {
  std::vector<StateChangeRow> rows;
  for (std::size_t e = 0; e < p.entities.size(); ++e) {
    if (p.grid[e].size() != p.step_count() + 1) {
      throw DataError("gold_table: grid of '" + p.entities[e] + "' has wrong column count");
    }
    auto er = build_entity_rows(p.id, p.entities[e], p.grid[e]);
    rows.insert(rows.end(), er.begin(), er.end());
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Predictions TSV: process_id, step, entity, action, before, after. No header.

inline std::string format_tsv_row(const StateChangeRow& r) {
  std::string line = r.process_id;
  line += '\t';
  line += std::to_string(r.step);
  line += '\t';
  line += r.entity;
  line += '\t';
  line += action_name(r.action);
  line += '\t';
  line += to_lower(r.before);
  line += '\t';
  line += to_lower(r.after);
  return line;
}

inline void write_predictions_tsv(std::ostream& os, const std::vector<StateChangeRow>& rows) {
  for (const auto& r : rows) os << format_tsv_row(r) << '\n';
}

inline void write_predictions_tsv(const std::string& path, const std::vector<StateChangeRow>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_predictions_tsv(os, rows);
}

inline std::vector<StateChangeRow> read_predictions_tsv(std::istream& is, const std::string& source = "<stream>") {
  std::vector<StateChangeRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cells.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const std::string where = source + ":" + std::to_string(lineno);
    if (cells.size() != 6) throw DataError(where + ": expected 6 tab-separated fields, got " + std::to_string(cells.size()));
    StateChangeRow r;
    r.process_id = cells[0];
    try {
      std::size_t used = 0;
      r.step = std::stoul(cells[1], &used);
      if (used != cells[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError(where + ": step '" + cells[1] + "' is not an integer");
    }
    r.entity = cells[2];
    try {
      r.action = parse_action(cells[3]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    r.before = cells[4];
    r.after = cells[5];
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<StateChangeRow> read_predictions_tsv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return read_predictions_tsv(is, path);
}

}  // namespace tslm
