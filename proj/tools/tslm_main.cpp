// tslm: train, predict and evaluate timestamped entity-state tracking models.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tslm/data.hpp"
#include "tslm/evaluation.hpp"
#include "tslm/pipeline.hpp"
#include "tslm/run_config.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::vector<tslm::Procedure> load_corpus(const std::string& path, const std::string& format) {
  if (format == "npn") {
    std::vector<std::string> warnings;
    auto corpus = tslm::load_npn(path, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    return corpus;
  }
  return tslm::load_propara(path);
}

void report_data_quality(const std::vector<tslm::Procedure>& corpus) {
  const auto q = tslm::check_span_alignment(corpus);
  if (q.unaligned_locations.empty()) return;
  std::cerr << "data quality: " << q.unaligned_locations.size() << " of " << q.known_cells
            << " known locations do not occur in their paragraph (span loss skipped)\n";
  for (const auto& [pid, entity, state, loc] : q.unaligned_locations) {
    std::cerr << "  " << pid << " / " << entity << " @ state " << state << ": '" << loc << "'\n";
  }
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw tslm::DataError("cannot open '" + path + "' for writing");
  os << text;
}

double status_accuracy(const tslm::Model& m, const std::vector<tslm::Procedure>& corpus) {
  return tslm::measure_fit(m, corpus).status_accuracy();
}

int run_train(const tslm::RunConfig& cfg) {
  const auto train_set = load_corpus(cfg.train_data, cfg.data_format);
  std::optional<std::vector<tslm::Procedure>> dev_set;
  if (!cfg.dev_data.empty()) dev_set = load_corpus(cfg.dev_data, cfg.data_format);
  report_data_quality(train_set);

  std::vector<tslm::Procedure> vocab_corpus = train_set;
  tslm::Model model = tslm::make_model(cfg.encoder, tslm::build_corpus_vocab(vocab_corpus), cfg.seed);
  if (cfg.zero_timestamp) tslm::freeze_zero_timestamp(model.params);

  std::ofstream log_file;
  if (!cfg.train_log.empty()) {
    log_file.open(cfg.train_log, std::ios::binary);
    if (!log_file) throw tslm::DataError("cannot open '" + cfg.train_log + "' for writing");
  }
  const std::string tmp = cfg.checkpoint + ".tmp";
  tslm::TrainOptions opts;
  opts.epochs = cfg.epochs;
  opts.sgd = cfg.sgd;
  opts.seed = cfg.seed;
  opts.on_epoch = [&](const tslm::EpochLog& e) {
    nlohmann::json line = {{"epoch", e.epoch},
                           {"mean_loss", e.mean_loss},
                           {"learning_rate", e.learning_rate},
                           {"optimizer_steps", e.optimizer_steps},
                           {"skipped_spans", e.skipped_spans}};
    if (dev_set) line["dev_status_accuracy"] = status_accuracy(model, *dev_set);
    std::cerr << line.dump() << '\n';
    if (log_file) log_file << line.dump() << '\n' << std::flush;
    tslm::save_checkpoint(tmp, model);
    std::filesystem::rename(tmp, cfg.checkpoint);
    return true;
  };
  tslm::train(model, train_set, opts);
  return 0;
}

int run_predict(const tslm::RunConfig& cfg, const std::string& vocab_path) {
  const tslm::Model model = tslm::load_checkpoint(cfg.checkpoint);
  if (!vocab_path.empty()) {
    const tslm::Vocab expected = tslm::Vocab::from_json(tslm::read_json_file(vocab_path));
    if (!(expected == model.vocab)) {
      throw tslm::DataError("vocab '" + vocab_path + "' does not match the checkpoint vocabulary");
    }
  }
  const auto corpus = load_corpus(cfg.test_data, cfg.data_format);
  tslm::PredictOptions opts{!cfg.no_np_filter, !cfg.no_constraints};
  std::vector<tslm::StateChangeRow> rows;
  std::size_t violations = 0, flagged = 0;
  for (const auto& p : corpus) {
    auto pred = tslm::predict_procedure(model, p, opts);
    violations += pred.rule_violations;
    flagged += pred.flagged_steps;
    rows.insert(rows.end(), pred.rows.begin(), pred.rows.end());
  }
  tslm::write_predictions_tsv(cfg.predictions, rows);
  if (cfg.no_constraints) {
    std::cerr << "consistency rules disabled: " << violations << " rule violations left in predictions\n";
  } else {
    std::cerr << "consistency rules repaired " << violations << " transitions\n";
  }
  if (flagged) std::cerr << "warning: " << flagged << " known-location steps had no candidate span\n";
  return 0;
}

std::string format_table(const tslm::MetricsReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "| Cat1 | Cat2 | Cat3 | Macro-Avg | Micro-Avg | P | R | F1 |";
  if (r.location) os << " Loc-Acc |";
  os << "\n|---|---|---|---|---|---|---|---|" << (r.location ? "---|" : "") << "\n|";
  auto cell = [&](std::optional<double> v) {
    if (v) os << ' ' << 100.0 * *v << " |";
    else os << " - |";
  };
  const auto& s = r.sentence;
  const auto& d = r.document;
  cell(s ? std::optional(s->cat1) : std::nullopt);
  cell(s ? std::optional(s->cat2) : std::nullopt);
  cell(s ? std::optional(s->cat3) : std::nullopt);
  cell(s ? std::optional(s->macro) : std::nullopt);
  cell(s ? std::optional(s->micro) : std::nullopt);
  cell(d ? std::optional(d->overall.precision) : std::nullopt);
  cell(d ? std::optional(d->overall.recall) : std::nullopt);
  cell(d ? std::optional(d->overall.f1) : std::nullopt);
  if (r.location) cell(r.location->accuracy);
  os << '\n';
  return os.str();
}

int run_evaluate(const std::string& pred_path, const std::string& gold_path, const std::string& gold_format,
                 const std::string& mode, const std::string& out_path) {
  const auto pred_rows = tslm::read_predictions_tsv(pred_path);
  const auto gold = load_corpus(gold_path, gold_format);
  std::vector<tslm::StateChangeRow> gold_rows;
  std::map<std::string, std::vector<std::string>> entities;
  for (const auto& p : gold) {
    auto rows = tslm::gold_table(p);
    gold_rows.insert(gold_rows.end(), rows.begin(), rows.end());
    entities[p.id] = p.entities;
  }
  {
    std::set<std::string> pred_ids, gold_ids;
    for (const auto& r : pred_rows) pred_ids.insert(r.process_id);
    for (const auto& p : gold) gold_ids.insert(p.id);
    tslm::detail::check_aligned(pred_ids, gold_ids);
  }
  tslm::MetricsReport report;
  if (mode == "sentence" || mode == "all") {
    report.sentence = tslm::sentence_level(tslm::extract_events(pred_rows), tslm::extract_events(gold_rows),
                                           tslm::event_universe(entities));
  }
  if (mode == "document" || mode == "all") report.document = tslm::document_level(pred_rows, gold_rows);
  if (mode == "npn" || mode == "all") {
    report.location =
        tslm::location_change_accuracy(tslm::timelines_from_rows(pred_rows), tslm::timelines_from_rows(gold_rows));
    if (report.location->no_changes) std::cerr << "warning: gold has no location-change steps; accuracy set to 1\n";
  }
  std::cerr << format_table(report);
  write_output(out_path, tslm::to_json(report).dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Timestamped entity-state tracking: train, predict, evaluate"};
  app.require_subcommand(1);
  app.fallthrough();  // --config may follow the subcommand

  std::string config_path;
  app.add_option("--config", config_path, "Run configuration JSON");

  // train
  auto* train = app.add_subcommand("train", "Train a model on a corpus");
  std::string train_data, dev_data, checkpoint, train_log;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  bool zero_ts = false;
  train->add_option("--train", train_data, "Training corpus (canonical JSON)");
  train->add_option("--dev", dev_data, "Dev corpus for status accuracy");
  train->add_option("--checkpoint", checkpoint, "Checkpoint output path");
  train->add_option("--log", train_log, "Per-epoch JSON-lines log");
  train->add_option("--epochs", epochs, "Epoch count");
  train->add_option("--seed", seed, "Random seed");
  train->add_flag("--zero-timestamp", zero_ts, "Zero and freeze the timestamp embedding");

  // predict
  auto* predict = app.add_subcommand("predict", "Write a predictions TSV");
  std::string test_data, predictions, vocab_path;
  bool no_constraints = false, no_np_filter = false;
  predict->add_option("--data", test_data, "Corpus to predict");
  predict->add_option("--checkpoint", checkpoint, "Trained checkpoint");
  predict->add_option("--out", predictions, "Predictions TSV path");
  predict->add_option("--vocab", vocab_path, "Vocab JSON that must match the checkpoint");
  predict->add_flag("--no-constraints", no_constraints, "Skip consistency repair");
  predict->add_flag("--no-np-filter", no_np_filter, "Score every paragraph span");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against gold grids");
  std::string pred_path, gold_path, mode = "all", metrics_out, gold_format = "propara";
  evaluate->add_option("--pred", pred_path, "Predictions TSV")->required();
  evaluate->add_option("--gold", gold_path, "Gold corpus JSON")->required();
  evaluate->add_option("--gold-format", gold_format, "propara | npn")
      ->check(CLI::IsMember({"propara", "npn"}));
  evaluate->add_option("--mode", mode, "sentence | document | npn | all")
      ->check(CLI::IsMember({"sentence", "document", "npn", "all"}));
  evaluate->add_option("--out", metrics_out, "Metrics JSON path (default stdout)");

  // generate-data
  auto* generate = app.add_subcommand("generate-data", "Write a synthetic corpus");
  std::size_t count = 10;
  std::string gen_out;
  generate->add_option("--count", count, "Number of procedures");
  generate->add_option("--seed", seed, "Generator seed");
  generate->add_option("--out", gen_out, "Output corpus JSON")->required();

  // convert
  auto* convert = app.add_subcommand("convert", "Convert a grid TSV to canonical JSON");
  std::string tsv_in, json_out;
  convert->add_option("--in", tsv_in, "Grid TSV")->required();
  convert->add_option("--out", json_out, "Output corpus JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    tslm::RunConfig cfg = config_path.empty() ? tslm::RunConfig{} : tslm::load_run_config(config_path);
    auto set = [](std::string& dst, const std::string& src) {
      if (!src.empty()) dst = src;
    };
    if (epochs) cfg.epochs = *epochs;
    if (seed) cfg.seed = *seed;

    if (*train) {
      cfg.command = "train";
      set(cfg.train_data, train_data);
      set(cfg.dev_data, dev_data);
      set(cfg.checkpoint, checkpoint);
      set(cfg.train_log, train_log);
      cfg.zero_timestamp = cfg.zero_timestamp || zero_ts;
      cfg.validate();
      return run_train(cfg);
    }
    if (*predict) {
      cfg.command = "predict";
      set(cfg.test_data, test_data);
      set(cfg.checkpoint, checkpoint);
      set(cfg.predictions, predictions);
      cfg.no_constraints = cfg.no_constraints || no_constraints;
      cfg.no_np_filter = cfg.no_np_filter || no_np_filter;
      cfg.validate();
      return run_predict(cfg, vocab_path);
    }
    if (*evaluate) {
      cfg.command = "evaluate";
      cfg.validate();
      if (gold_format == "propara" && cfg.data_format == "npn") gold_format = "npn";
      return run_evaluate(pred_path, gold_path, gold_format, mode, metrics_out.empty() ? cfg.metrics : metrics_out);
    }
    if (*generate) {
      cfg.command = "generate-data";
      cfg.validate();
      if (generate->count("--count")) cfg.synthetic_count = count;
      tslm::save_corpus(gen_out, tslm::generate_synthetic(cfg.seed, cfg.synthetic_count, cfg.grammar));
      return 0;
    }
    if (*convert) {
      cfg.command = "convert";
      cfg.validate();
      tslm::save_corpus(json_out, tslm::convert_grid_tsv(tsv_in));
      return 0;
    }
  } catch (const tslm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const tslm::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const tslm::Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
