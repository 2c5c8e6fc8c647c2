#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tslm/state_table.hpp"

namespace tslm {

enum class EventKind { Create, Destroy, Move };

inline std::string_view event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::Create: return "create";
    case EventKind::Destroy: return "destroy";
    case EventKind::Move: return "move";
  }
  return "";
}

struct EventRecord {
  std::string process_id;
  std::string entity;
  EventKind kind = EventKind::Move;
  std::size_t step = 0;
  std::string from;
  std::string to;

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

// ---------------------------------------------------------------------------
// Table structure

/// Rows of one process grouped per entity, each sorted by step.
using EntityRows = std::map<std::string, std::vector<StateChangeRow>>;

inline std::map<std::string, EntityRows> group_rows(const std::vector<StateChangeRow>& rows) {
  std::map<std::string, EntityRows> out;
  for (const auto& r : rows) out[r.process_id][r.entity].push_back(r);
  for (auto& [pid, entities] : out) {
    for (auto& [entity, er] : entities) {
      std::sort(er.begin(), er.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
    }
  }
  return out;
}

/// Checks steps 1..n are contiguous, before(i) == after(i-1) and the
/// action agrees with the locations.
inline void validate_chain(const std::vector<StateChangeRow>& sorted_rows) {
  for (std::size_t i = 0; i < sorted_rows.size(); ++i) {
    const auto& r = sorted_rows[i];
    const std::string where = "process '" + r.process_id + "', entity '" + r.entity + "', step " +
                              std::to_string(r.step);
    if (r.step != i + 1) throw DataError(where + ": steps must run 1..n without gaps");
    if (i > 0 && to_lower(r.before) != to_lower(sorted_rows[i - 1].after)) {
      throw DataError(where + ": before location '" + r.before + "' does not chain from previous after '" +
                      sorted_rows[i - 1].after + "'");
    }
    if (derive_action(r.before, r.after) != r.action) {
      throw DataError(where + ": action " + std::string(action_name(r.action)) + " inconsistent with " + r.before +
                      " -> " + r.after);
    }
  }
}

/// Locations at states 0..n reconstructed from a chained entity table.
inline std::vector<std::string> states_from_rows(const std::vector<StateChangeRow>& sorted_rows) {
  std::vector<std::string> out;
  if (sorted_rows.empty()) return out;
  out.push_back(to_lower(sorted_rows.front().before));
  for (const auto& r : sorted_rows) out.push_back(to_lower(r.after));
  return out;
}

/// One event per non-None row, in row order.
inline std::vector<EventRecord> extract_events(const std::vector<StateChangeRow>& table) {
  for (const auto& [pid, entities] : group_rows(table)) {
    for (const auto& [entity, er] : entities) validate_chain(er);
  }
  std::vector<EventRecord> events;
  for (const auto& r : table) {
    const std::string before = to_lower(r.before), after = to_lower(r.after);
    switch (r.action) {
      case Action::None: break;
      case Action::Create: events.push_back({r.process_id, r.entity, EventKind::Create, r.step, before, after}); break;
      case Action::Destroy: events.push_back({r.process_id, r.entity, EventKind::Destroy, r.step, before, after}); break;
      case Action::Move: events.push_back({r.process_id, r.entity, EventKind::Move, r.step, before, after}); break;
    }
  }
  return events;
}

// ---------------------------------------------------------------------------
// Sentence level

struct SentenceScores {
  double cat1 = 1.0, cat2 = 1.0, cat3 = 1.0;
  double macro = 1.0, micro = 1.0;
  std::size_t cat1_total = 0, cat1_correct = 0;
  std::size_t cat2_total = 0, cat2_correct = 0;
  std::size_t cat3_total = 0, cat3_correct = 0;
};

/// (process, entity, kind)
using EventKey = std::tuple<std::string, std::string, EventKind>;

namespace detail {

inline std::string event_location(const EventRecord& e) {
  switch (e.kind) {
    case EventKind::Create: return to_lower(e.to);
    case EventKind::Destroy: return to_lower(e.from);
    case EventKind::Move: return to_lower(e.from) + "\x1f" + to_lower(e.to);
  }
  return {};
}

struct Occurrence {
  std::set<std::size_t> steps;
  std::set<std::pair<std::size_t, std::string>> located;
};

inline std::map<EventKey, Occurrence> index_events(const std::vector<EventRecord>& events) {
  std::map<EventKey, Occurrence> out;
  for (const auto& e : events) {
    auto& o = out[{e.process_id, e.entity, e.kind}];
    o.steps.insert(e.step);
    o.located.emplace(e.step, event_location(e));
  }
  return out;
}

inline double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

/// Cat1: does the kind occur for the entity. Cat2/Cat3: among keys where
/// both sides say it occurs, do the step sets / (step, location) sets match.
///
/// Keys range over `universe` when given, else over keys seen on either side.
inline SentenceScores sentence_level(const std::vector<EventRecord>& pred, const std::vector<EventRecord>& gold,
                                     const std::optional<std::set<EventKey>>& universe = std::nullopt) {
  const auto p = detail::index_events(pred);
  const auto g = detail::index_events(gold);
  std::set<EventKey> keys;
  if (universe) {
    keys = *universe;
  } else {
    for (const auto& [k, v] : p) keys.insert(k);
    for (const auto& [k, v] : g) keys.insert(k);
  }
  SentenceScores s;
  for (const auto& k : keys) {
    const auto pi = p.find(k), gi = g.find(k);
    const bool po = pi != p.end(), go = gi != g.end();
    ++s.cat1_total;
    if (po == go) ++s.cat1_correct;
    if (po && go) {
      ++s.cat2_total;
      ++s.cat3_total;
      if (pi->second.steps == gi->second.steps) ++s.cat2_correct;
      if (pi->second.located == gi->second.located) ++s.cat3_correct;
    }
  }
  s.cat1 = detail::ratio(s.cat1_correct, s.cat1_total);
  s.cat2 = detail::ratio(s.cat2_correct, s.cat2_total);
  s.cat3 = detail::ratio(s.cat3_correct, s.cat3_total);
  s.macro = (s.cat1 + s.cat2 + s.cat3) / 3.0;
  s.micro = detail::ratio(s.cat1_correct + s.cat2_correct + s.cat3_correct,
                          s.cat1_total + s.cat2_total + s.cat3_total);
  return s;
}

/// Every (process, entity, kind) for the given entity lists.
inline std::set<EventKey> event_universe(const std::map<std::string, std::vector<std::string>>& entities_by_process) {
  std::set<EventKey> out;
  for (const auto& [pid, entities] : entities_by_process) {
    for (const auto& e : entities) {
      for (EventKind k : {EventKind::Create, EventKind::Destroy, EventKind::Move}) out.emplace(pid, e, k);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Document level

struct PrfScore {
  double precision = 1.0;
  double recall = 1.0;
  double f1 = 1.0;
};

inline double harmonic_mean(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

struct DocumentScores {
  PrfScore inputs, outputs, conversions, moves;
  PrfScore overall;
  std::size_t process_count = 0;
};

/// The four answer sets of one process.
struct DocumentAnswers {
  std::set<std::string> inputs;
  std::set<std::string> outputs;
  // (step, destroyed entity, created entity, location)
  std::set<std::tuple<std::size_t, std::string, std::string, std::string>> conversions;
  // (entity, step, before, after)
  std::set<std::tuple<std::string, std::size_t, std::string, std::string>> moves;
};

inline DocumentAnswers document_answers(const EntityRows& process) {
  DocumentAnswers a;
  std::vector<const StateChangeRow*> creates, destroys;
  for (const auto& [entity, rows] : process) {
    validate_chain(rows);
    const auto states = states_from_rows(rows);
    if (states.empty()) continue;
    const bool at_start = exists(states.front()), at_end = exists(states.back());
    if (at_start && !at_end) a.inputs.insert(entity);
    if (!at_start && at_end) a.outputs.insert(entity);
    for (const auto& r : rows) {
      if (r.action == Action::Create) creates.push_back(&r);
      if (r.action == Action::Destroy) destroys.push_back(&r);
      if (r.action == Action::Move) a.moves.emplace(entity, r.step, to_lower(r.before), to_lower(r.after));
    }
  }
  for (const auto* d : destroys) {
    for (const auto* c : creates) {
      if (d->step == c->step && to_lower(d->before) == to_lower(c->after)) {
        a.conversions.emplace(d->step, d->entity, c->entity, to_lower(c->after));
      }
    }
  }
  return a;
}

namespace detail {

template <typename Set>
std::pair<double, double> set_precision_recall(const Set& pred, const Set& gold) {
  std::size_t hit = 0;
  for (const auto& x : pred) hit += gold.count(x);
  return {ratio(hit, pred.size()), ratio(hit, gold.size())};
}

inline void check_aligned(const std::set<std::string>& pred_ids, const std::set<std::string>& gold_ids) {
  std::vector<std::string> unmatched;
  for (const auto& id : pred_ids)
    if (!gold_ids.count(id)) unmatched.push_back("pred-only:" + id);
  for (const auto& id : gold_ids)
    if (!pred_ids.count(id)) unmatched.push_back("gold-only:" + id);
  if (!unmatched.empty()) {
    std::string msg = "process ids do not align:";
    for (const auto& u : unmatched) msg += " " + u;
    throw DataError(msg);
  }
}

}  // namespace detail

/// Per-process set precision/recall for each criterion, averaged over
/// processes; overall P and R average the four criteria.
inline DocumentScores document_level(const std::vector<StateChangeRow>& pred, const std::vector<StateChangeRow>& gold) {
  const auto pg = group_rows(pred);
  const auto gg = group_rows(gold);
  std::set<std::string> pids, gids;
  for (const auto& [k, v] : pg) pids.insert(k);
  for (const auto& [k, v] : gg) gids.insert(k);
  detail::check_aligned(pids, gids);

  DocumentScores s;
  s.process_count = gids.size();
  std::array<double, 4> p_sum{}, r_sum{};
  for (const auto& pid : gids) {
    const auto pa = document_answers(pg.at(pid));
    const auto ga = document_answers(gg.at(pid));
    const std::array<std::pair<double, double>, 4> pr{
        detail::set_precision_recall(pa.inputs, ga.inputs), detail::set_precision_recall(pa.outputs, ga.outputs),
        detail::set_precision_recall(pa.conversions, ga.conversions),
        detail::set_precision_recall(pa.moves, ga.moves)};
    for (std::size_t c = 0; c < 4; ++c) {
      p_sum[c] += pr[c].first;
      r_sum[c] += pr[c].second;
    }
  }
  const double n = gids.empty() ? 1.0 : static_cast<double>(gids.size());
  PrfScore* criteria[4] = {&s.inputs, &s.outputs, &s.conversions, &s.moves};
  double overall_p = 0.0, overall_r = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    criteria[c]->precision = gids.empty() ? 1.0 : p_sum[c] / n;
    criteria[c]->recall = gids.empty() ? 1.0 : r_sum[c] / n;
    criteria[c]->f1 = harmonic_mean(criteria[c]->precision, criteria[c]->recall);
    overall_p += criteria[c]->precision;
    overall_r += criteria[c]->recall;
  }
  s.overall.precision = overall_p / 4.0;
  s.overall.recall = overall_r / 4.0;
  s.overall.f1 = harmonic_mean(s.overall.precision, s.overall.recall);
  return s;
}

// ---------------------------------------------------------------------------
// Location-change accuracy

/// (process, entity) -> locations at states 0..n
using TimelineMap = std::map<std::pair<std::string, std::string>, std::vector<std::string>>;

struct LocationChangeScore {
  double accuracy = 1.0;
  std::size_t change_steps = 0;
  std::size_t correct = 0;
  // Set when no gold step changes location; accuracy is then reported as 1.
  bool no_changes = false;
};

inline TimelineMap timelines_from_rows(const std::vector<StateChangeRow>& rows) {
  TimelineMap out;
  for (const auto& [pid, entities] : group_rows(rows)) {
    for (const auto& [entity, er] : entities) {
      validate_chain(er);
      out[{pid, entity}] = states_from_rows(er);
    }
  }
  return out;
}

/// Accuracy of predicted locations at steps where the gold location changes.
inline LocationChangeScore location_change_accuracy(const TimelineMap& pred, const TimelineMap& gold) {
  LocationChangeScore s;
  for (const auto& [key, g] : gold) {
    const auto it = pred.find(key);
    if (it == pred.end()) {
      throw DataError("location accuracy: no prediction for process '" + key.first + "', entity '" + key.second + "'");
    }
    const auto& p = it->second;
    if (p.size() != g.size()) {
      throw DataError("location accuracy: step counts differ for process '" + key.first + "', entity '" +
                      key.second + "'");
    }
    for (std::size_t i = 1; i < g.size(); ++i) {
      if (to_lower(g[i]) == to_lower(g[i - 1])) continue;
      ++s.change_steps;
      if (to_lower(p[i]) == to_lower(g[i])) ++s.correct;
    }
  }
  s.no_changes = s.change_steps == 0;
  s.accuracy = detail::ratio(s.correct, s.change_steps);
  return s;
}

// ---------------------------------------------------------------------------
// Report

struct MetricsReport {
  std::optional<SentenceScores> sentence;
  std::optional<DocumentScores> document;
  std::optional<LocationChangeScore> location;
};

inline nlohmann::json to_json(const PrfScore& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j = nlohmann::json::object();
  if (r.sentence) {
    const auto& s = *r.sentence;
    j["sentence"] = {{"cat1", s.cat1},       {"cat2", s.cat2},   {"cat3", s.cat3},
                     {"macro_avg", s.macro}, {"micro_avg", s.micro},
                     {"counts", {{"cat1", {s.cat1_correct, s.cat1_total}},
                                 {"cat2", {s.cat2_correct, s.cat2_total}},
                                 {"cat3", {s.cat3_correct, s.cat3_total}}}}};
  }
  if (r.document) {
    const auto& d = *r.document;
    j["document"] = {{"inputs", to_json(d.inputs)},
                     {"outputs", to_json(d.outputs)},
                     {"conversions", to_json(d.conversions)},
                     {"moves", to_json(d.moves)},
                     {"overall", to_json(d.overall)},
                     {"processes", d.process_count}};
  }
  if (r.location) {
    const auto& l = *r.location;
    j["location_change"] = {{"accuracy", l.accuracy},
                            {"change_steps", l.change_steps},
                            {"correct", l.correct},
                            {"no_change_steps", l.no_changes}};
  }
  return j;
}

}  // namespace tslm
