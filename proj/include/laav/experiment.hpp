#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "laav/analysis.hpp"
#include "laav/config.hpp"
#include "laav/corpus.hpp"
#include "laav/mock_backend.hpp"
#include "laav/tiny/backend.hpp"
#include "laav/training.hpp"
#include "laav/verbalizers.hpp"

namespace laav {

namespace fs = std::filesystem;

// -------------------------------------------------------------------------
// Inputs

inline std::unique_ptr<MaskedLm> load_backend(const RunConfig& cfg) {
  if (!fs::exists(cfg.backend_path)) throw ConfigError("backend file not found: " + cfg.backend_path.string());
  if (cfg.backend_kind == "mock") return std::make_unique<MockMaskedLm>(MockMaskedLm::load(cfg.backend_path));
  return std::make_unique<tiny::TinyMaskedLm>(tiny::TinyMaskedLm::load(cfg.backend_path));
}

/// Train pool and (optional) test examples.
struct ExperimentData {
  Dataset train;
  std::vector<Example> test;
};

inline ExperimentData load_data(const RunConfig& cfg, bool need_test = true) {
  ExperimentData d;
  d.train = load_dataset(cfg.train_path, cfg.format, cfg.labels, cfg.label_map, "train");
  if (need_test) {
    if (cfg.test_path.empty()) throw ConfigError("config key 'data.test' is required for this command");
    d.test = load_dataset(cfg.test_path, cfg.format, cfg.labels, cfg.label_map, "test").partition("test");
  }
  return d;
}

/// Method requirements that can be checked before any sampling or training.
inline void check_applicability(const RunConfig& cfg, const MaskedLm& backend) {
  const auto caps = backend.capabilities();
  if (cfg.method == "pet") {
    for (std::size_t c = 0; c < cfg.labels.size(); ++c) {
      try {
        (void)backend.tokenize_label(cfg.labels.label_word(c));
      } catch (const BackendError& e) {
        throw ApplicabilityError("pet: label word '" + cfg.labels.label_word(c) + "': " + e.what());
      }
    }
    (void)build_pet(cfg.labels, backend);
  }
  if (cfg.method == "npprompt" && !caps.has_embeddings) {
    throw CapabilityError("npprompt: backend '" + backend.name() + "' exposes no input embeddings");
  }
  if (cfg.method == "traditional_ft" && !caps.has_cls_head) {
    throw CapabilityError("traditional_ft: backend '" + backend.name() + "' has no classification head");
  }
}

inline RunConfig with_method(RunConfig cfg, const std::string& method) {
  if (std::find(known_methods().begin(), known_methods().end(), method) == known_methods().end()) {
    throw ConfigError("unknown method '" + method + "'");
  }
  cfg.method = method;
  cfg.resolved.set("method", method);
  return cfg;
}

inline RunConfig with_conj(RunConfig cfg, const std::string& conj) {
  if (conj.empty()) throw ConfigError("conj must be non-empty");
  cfg.conj = conj;
  cfg.resolved.set("conj", conj);
  return cfg;
}

inline ScoringOptions scoring_options(const RunConfig& cfg) { return {cfg.train.batch_size, cfg.train.max_chars}; }

inline Verbalizer build_for_method(const RunConfig& cfg, const std::vector<Example>& train, const MaskedLm& backend) {
  const auto opt = scoring_options(cfg);
  const auto k = cfg.train.k;
  if (cfg.method == "pet") return build_pet(cfg.labels, backend);
  if (cfg.method == "amulap") return build_amulap(train, cfg.labels, cfg.base(), backend, k, opt);
  if (cfg.method == "laav") return build_laav(train, cfg.labels, cfg.label_aware(), backend, k, cfg.conj, opt);
  if (cfg.method == "petal") return build_petal(train, cfg.labels, cfg.base(), backend, opt);
  if (cfg.method == "npprompt") return build_npprompt(cfg.labels, backend, k);
  throw ApplicabilityError("method '" + cfg.method + "' does not use a verbalizer");
}

/// Verbalizer JSON plus a provenance block. Contains no timestamps, so a
/// deterministic backend yields byte-identical files.
inline nlohmann::ordered_json verbalizer_document(const RunConfig& cfg, const Verbalizer& v, int shots,
                                                  std::uint64_t seed, const std::string& backend_name) {
  nlohmann::ordered_json prov;
  prov["method"] = cfg.method;
  prov["template"] = cfg.method == "laav" ? cfg.template_label_aware : cfg.template_base;
  prov["base_template"] = cfg.template_base;
  prov["seed"] = seed;
  prov["shots"] = shots;
  prov["k"] = v.k;
  if (v.conj) prov["conj"] = *v.conj;
  prov["backend"] = backend_name;
  prov["run_id"] = cfg.run_id();
  nlohmann::ordered_json doc;
  doc["provenance"] = prov;
  doc["verbalizer"] = to_json(v);
  return doc;
}

inline Verbalizer read_verbalizer_file(const fs::path& path, const LabelSet& labels, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open verbalizer file " + path.string());
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return verbalizer_from_json(j.contains("verbalizer") ? j["verbalizer"] : j, labels, vocab);
}

// -------------------------------------------------------------------------
// Files

namespace detail {

inline void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
    if (!out) throw Error("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

inline nlohmann::ordered_json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return nlohmann::ordered_json::parse(in);
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string error_kind(const std::exception& e) {
  return dynamic_cast<const UserError*>(&e) ? "config" : "internal";
}

}  // namespace detail

/// Writes the resolved config snapshot once. An existing snapshot must match.
inline fs::path write_config_snapshot(const RunConfig& cfg) {
  const auto path = cfg.run_dir() / "config.txt";
  const auto content = cfg.resolved.dump();
  if (fs::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    const std::string existing((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (existing != content) throw ConfigError("config snapshot " + path.string() + " was modified; refusing to reuse it");
    return path;
  }
  detail::write_text(path, content);
  return path;
}

// -------------------------------------------------------------------------
// Cells

struct CellPaths {
  fs::path dir, split, verbalizer, checkpoint, history, training, eval, status;
};

inline std::string cell_name(const std::string& method, int shots, std::uint64_t seed) {
  return method + "_" + std::to_string(shots) + "shot_seed" + std::to_string(seed);
}

inline CellPaths cell_paths(const RunConfig& cfg, int shots, std::uint64_t seed) {
  CellPaths p;
  p.dir = cfg.run_dir() / "cells" / cell_name(cfg.method, shots, seed);
  p.split = p.dir / "split.json";
  p.verbalizer = p.dir / "verbalizer.json";
  p.checkpoint = p.dir / "checkpoint.bin";
  p.history = p.dir / "history.jsonl";
  p.training = p.dir / "training.json";
  p.eval = p.dir / "eval.json";
  p.status = p.dir / "status.json";
  return p;
}

struct TrainOutcome {
  CellPaths paths;
  FineTuneResult result;
  std::optional<Verbalizer> verbalizer;
};

/// Samples the split, builds the verbalizer (unless one is given), fine-tunes
/// and persists split, verbalizer, best checkpoint and history.
inline TrainOutcome cmd_train(const RunConfig& cfg, int shots, std::uint64_t seed,
                              const std::optional<fs::path>& verbalizer_file = std::nullopt) {
  write_config_snapshot(cfg);
  auto backend = load_backend(cfg);
  check_applicability(cfg, *backend);
  const auto data = load_data(cfg, false);
  const auto split = sample_few_shot(data.train, shots, seed);
  auto tc = cfg.train;
  tc.seed = seed;

  TrainOutcome out;
  out.paths = cell_paths(cfg, shots, seed);
  fs::create_directories(out.paths.dir);
  detail::write_text(out.paths.split, to_json(split).dump(2) + "\n");
  if (cfg.method == "traditional_ft") {
    out.result = traditional_ft(split, *backend, cfg.labels, tc);
  } else {
    out.verbalizer = verbalizer_file ? read_verbalizer_file(*verbalizer_file, cfg.labels, backend->vocabulary())
                                     : build_for_method(cfg, split.train, *backend);
    detail::write_text(out.paths.verbalizer,
                       verbalizer_document(cfg, *out.verbalizer, shots, seed, backend->name()).dump(2) + "\n");
    out.result = fine_tune(split, *out.verbalizer, cfg.base(), *backend, cfg.labels, tc);
  }
  out.result.checkpoint.save(out.paths.checkpoint);
  detail::write_text(out.paths.history, history_jsonl(out.result.history));
  nlohmann::ordered_json t;
  t["best_epoch"] = out.result.best_epoch;
  t["best_val_macro_f1"] = out.result.best_val_macro_f1;
  t["epochs_recorded"] = out.result.history.size();
  detail::write_text(out.paths.training, t.dump(2) + "\n");
  return out;
}

/// Evaluates a trained cell (or explicit checkpoint / verbalizer files) on the
/// test set and writes eval.json.
inline EvalReport cmd_evaluate(const RunConfig& cfg, int shots, std::uint64_t seed,
                               const std::optional<fs::path>& checkpoint_file = std::nullopt,
                               const std::optional<fs::path>& verbalizer_file = std::nullopt,
                               const std::optional<fs::path>& output = std::nullopt) {
  const auto paths = cell_paths(cfg, shots, seed);
  auto backend = load_backend(cfg);
  const auto data = load_data(cfg, true);
  const auto ckpt = checkpoint_file.value_or(paths.checkpoint);
  if (!fs::exists(ckpt)) throw ConfigError("no checkpoint at " + ckpt.string() + "; run train first");
  backend->restore(Checkpoint::load(ckpt));

  EvalReport r;
  if (cfg.method == "traditional_ft") {
    r = evaluate_classifier(data.test, *backend, cfg.labels, cfg.train.max_chars, cfg.train.batch_size);
  } else {
    const auto vpath = verbalizer_file.value_or(paths.verbalizer);
    const auto v = read_verbalizer_file(vpath, cfg.labels, backend->vocabulary());
    r = evaluate(data.test, v, cfg.base(), *backend, cfg.labels, scoring_options(cfg));
  }
  r.method = cfg.method;
  r.shots = shots;
  r.seed = seed;
  detail::write_text(output.value_or(paths.eval), to_json(r).dump(2) + "\n");
  return r;
}

/// Builds a verbalizer from a sampled split without training.
inline fs::path cmd_build_verbalizer(const RunConfig& cfg, int shots, std::uint64_t seed,
                                     const std::optional<fs::path>& output = std::nullopt) {
  auto backend = load_backend(cfg);
  check_applicability(cfg, *backend);
  if (cfg.method == "traditional_ft") throw ApplicabilityError("traditional_ft does not use a verbalizer");
  std::vector<Example> train;
  if (cfg.method != "pet" && cfg.method != "npprompt") {
    train = sample_few_shot(load_data(cfg, false).train, shots, seed).train;
  }
  const auto v = build_for_method(cfg, train, *backend);
  const auto path = output.value_or(cfg.run_dir() / "verbalizers" / (cell_name(cfg.method, shots, seed) + ".json"));
  if (!output) write_config_snapshot(cfg);
  detail::write_text(path, verbalizer_document(cfg, v, shots, seed, backend->name()).dump(2) + "\n");
  return path;
}

// -------------------------------------------------------------------------
// Experiment grid

struct CellRecord {
  int shots = 0;
  std::uint64_t seed = 0;
  std::string status;  // running | completed | failed
  std::string error;
  std::string error_kind;
  std::string started;
  std::string finished;
  std::optional<double> macro_f1;
  std::vector<std::string> artifacts;
};

inline nlohmann::ordered_json to_json(const CellRecord& c) {
  nlohmann::ordered_json j;
  j["shots"] = c.shots;
  j["seed"] = c.seed;
  j["status"] = c.status;
  if (!c.error.empty()) {
    j["error"] = c.error;
    j["error_kind"] = c.error_kind;
  }
  j["started"] = c.started;
  j["finished"] = c.finished;
  if (c.macro_f1) j["macro_f1"] = *c.macro_f1;
  j["artifacts"] = c.artifacts;
  return j;
}

inline CellRecord cell_record_from_json(const nlohmann::json& j) {
  CellRecord c;
  c.shots = j.at("shots").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.status = j.at("status").get<std::string>();
  c.error = j.value("error", "");
  c.error_kind = j.value("error_kind", "");
  c.started = j.value("started", "");
  c.finished = j.value("finished", "");
  if (j.contains("macro_f1")) c.macro_f1 = j["macro_f1"].get<double>();
  if (j.contains("artifacts")) c.artifacts = j["artifacts"].get<std::vector<std::string>>();
  return c;
}

/// Status of one cell as found on disk. A cell left "running" by a killed
/// process is reported as failed.
inline CellRecord read_cell_status(const RunConfig& cfg, int shots, std::uint64_t seed) {
  const auto p = cell_paths(cfg, shots, seed);
  CellRecord c;
  c.shots = shots;
  c.seed = seed;
  c.status = "pending";
  if (fs::exists(p.status)) c = cell_record_from_json(detail::read_json(p.status));
  if (c.status == "running") {
    c.status = "failed";
    c.error = "interrupted";
    c.error_kind = "internal";
  }
  if (c.status == "completed" && !fs::exists(p.eval)) {
    c.status = "failed";
    c.error = "eval.json missing";
    c.error_kind = "internal";
  }
  return c;
}

/// Runs one (shots, seed) cell and records its status. Safe to call from
/// separate processes for different cells.
inline CellRecord run_cell(const RunConfig& cfg, int shots, std::uint64_t seed) {
  const auto p = cell_paths(cfg, shots, seed);
  CellRecord c;
  c.shots = shots;
  c.seed = seed;
  c.status = "running";
  c.started = detail::utc_now();
  detail::write_text(p.status, to_json(c).dump(2) + "\n");
  try {
    if (fs::exists(p.eval)) fs::remove(p.eval);
    cmd_train(cfg, shots, seed);
    c.macro_f1 = cmd_evaluate(cfg, shots, seed).macro_f1;
    c.status = "completed";
    for (const auto& f : {p.split, p.verbalizer, p.checkpoint, p.history, p.training, p.eval}) {
      if (fs::exists(f)) c.artifacts.push_back(f.string());
    }
  } catch (const std::exception& e) {
    c.status = "failed";
    c.error = e.what();
    c.error_kind = detail::error_kind(e);
  }
  c.finished = detail::utc_now();
  detail::write_text(p.status, to_json(c).dump(2) + "\n");
  return c;
}

struct RunRecord {
  std::string run_id;
  fs::path run_dir;
  fs::path config_snapshot;
  std::string method;
  std::string created;
  std::string updated;
  std::vector<CellRecord> cells;
  std::vector<std::string> report_artifacts;

  [[nodiscard]] std::size_t failed() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const CellRecord& c) {
      return c.status != "completed";
    }));
  }
};

inline nlohmann::ordered_json to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["run_id"] = r.run_id;
  j["method"] = r.method;
  j["config_snapshot"] = r.config_snapshot.string();
  j["created"] = r.created;
  j["updated"] = r.updated;
  auto cells = nlohmann::ordered_json::array();
  for (const auto& c : r.cells) cells.push_back(to_json(c));
  j["cells"] = cells;
  j["reports"] = r.report_artifacts;
  return j;
}

struct ReportOutcome {
  std::optional<AggregateReport> aggregate;
  std::vector<std::string> artifacts;
  std::vector<std::string> warnings;
};

/// Aggregates every completed cell of the given methods into one report set
/// written under the first method's run directory.
inline ReportOutcome cmd_report(const RunConfig& cfg, const std::vector<std::string>& methods) {
  ReportOutcome out;
  std::vector<EvalReport> evals;
  for (const auto& m : methods) {
    const auto mc = with_method(cfg, m);
    for (int shots : cfg.shots) {
      for (auto seed : cfg.seeds) {
        const auto c = read_cell_status(mc, shots, seed);
        if (c.status != "completed") {
          out.warnings.push_back("cell " + cell_name(m, shots, seed) + " is " + c.status +
                                 (c.error.empty() ? "" : " (" + c.error + ")") + "; excluded from aggregation");
          continue;
        }
        evals.push_back(eval_report_from_json(detail::read_json(cell_paths(mc, shots, seed).eval)));
      }
    }
  }
  if (evals.empty()) {
    out.warnings.push_back("no completed cells to aggregate");
    return out;
  }
  auto agg = aggregate_runs(evals);
  const auto dir = cfg.run_dir();
  const auto id = cfg.run_id();
  const auto table = render_table(agg);
  detail::write_text(dir / "aggregate.json", to_json(agg).dump(2) + "\n");
  detail::write_text(dir / "aggregate.csv", to_csv(agg));
  detail::write_text(dir / "table.txt", table);
  std::vector<std::string> labels;
  std::vector<double> values;
  for (const auto& row : agg.rows) {
    labels.push_back(row.method + " " + std::to_string(row.shots) + "-shot");
    values.push_back(row.mean);
  }
  const auto svg = dir / "plots" / (id + "_aggregate.svg");
  fs::create_directories(svg.parent_path());
  write_bar_chart_svg(svg, "Mean test macro-F1", labels, values);
  out.artifacts = {(dir / "aggregate.json").string(), (dir / "aggregate.csv").string(), (dir / "table.txt").string(),
                   svg.string()};
  out.aggregate = std::move(agg);
  return out;
}

/// Runs every (shots, seed) cell of the grid, skipping cells already
/// completed, then aggregates the completed ones.
inline RunRecord cmd_run_experiment(const RunConfig& cfg, std::ostream& log = std::cerr) {
  {
    // Fail fast on config and applicability problems before touching cells.
    auto backend = load_backend(cfg);
    check_applicability(cfg, *backend);
    (void)load_data(cfg, true);
  }
  RunRecord rec;
  rec.run_id = cfg.run_id();
  rec.run_dir = cfg.run_dir();
  rec.method = cfg.method;
  rec.config_snapshot = write_config_snapshot(cfg);
  const auto record_path = rec.run_dir / "run.json";
  rec.created = fs::exists(record_path) ? detail::read_json(record_path).value("created", detail::utc_now())
                                        : detail::utc_now();
  for (int shots : cfg.shots) {
    for (auto seed : cfg.seeds) {
      auto c = read_cell_status(cfg, shots, seed);
      if (c.status == "completed") {
        log << "cell " << cell_name(cfg.method, shots, seed) << ": completed earlier, skipped\n";
      } else {
        log << "cell " << cell_name(cfg.method, shots, seed) << ": running\n";
        c = run_cell(cfg, shots, seed);
        if (c.status == "completed") {
          log << "cell " << cell_name(cfg.method, shots, seed) << ": macro-F1 " << *c.macro_f1 << "\n";
        } else {
          log << "warning: cell " << cell_name(cfg.method, shots, seed) << " failed: " << c.error << "\n";
        }
      }
      rec.cells.push_back(std::move(c));
      rec.updated = detail::utc_now();
      detail::write_text(record_path, to_json(rec).dump(2) + "\n");
    }
  }
  const auto report = cmd_report(cfg, {cfg.method});
  for (const auto& w : report.warnings) log << "warning: " << w << "\n";
  rec.report_artifacts = report.artifacts;
  rec.updated = detail::utc_now();
  detail::write_text(record_path, to_json(rec).dump(2) + "\n");
  return rec;
}

// -------------------------------------------------------------------------
// Analyses

struct ShortlistResult {
  std::string conj;
  double macro_f1 = 0.0;
};

struct ConjunctionOutcome {
  ConjunctionReport report;
  std::vector<ShortlistResult> shortlist;
  fs::path json;
  fs::path plot;
};

/// Ranks mask-slot tokens between label word and verbalizer tokens on the
/// sampled training split. With `evaluate_shortlist`, each shortlisted
/// conjunction (config list plus the top hit) is used end-to-end: LAAV
/// construction, fine-tuning and test evaluation.
inline ConjunctionOutcome cmd_search_conjunction(const RunConfig& cfg, int shots, std::uint64_t seed,
                                                 bool evaluate_shortlist = false) {
  write_config_snapshot(cfg);
  ConjunctionOutcome out;
  const auto data = load_data(cfg, evaluate_shortlist);
  const auto split = sample_few_shot(data.train, shots, seed);
  {
    auto backend = load_backend(cfg);
    out.report = search_conjunction(split.train, cfg.labels, cfg.base(), cfg.conj_search(), *backend, cfg.train.k,
                                    scoring_options(cfg));
  }
  if (evaluate_shortlist) {
    std::vector<std::string> words = cfg.shortlist.empty() ? std::vector<std::string>{"and", "of"} : cfg.shortlist;
    if (!out.report.ranked.empty() &&
        std::find(words.begin(), words.end(), out.report.ranked.front().token) == words.end()) {
      words.push_back(out.report.ranked.front().token);
    }
    auto tc = cfg.train;
    tc.seed = seed;
    for (const auto& w : words) {
      auto backend = load_backend(cfg);
      const auto v = build_laav(split.train, cfg.labels, cfg.label_aware(), *backend, cfg.train.k, w, scoring_options(cfg));
      (void)fine_tune(split, v, cfg.base(), *backend, cfg.labels, tc);
      out.shortlist.push_back({w, evaluate(data.test, v, cfg.base(), *backend, cfg.labels, scoring_options(cfg)).macro_f1});
    }
  }
  auto j = to_json(out.report);
  j["shots"] = shots;
  j["seed"] = seed;
  if (!out.shortlist.empty()) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& s : out.shortlist) arr.push_back({{"conj", s.conj}, {"macro_f1", s.macro_f1}});
    j["shortlist"] = arr;
  }
  const auto dir = cfg.run_dir();
  out.json = dir / "analysis" / ("conjunction_" + std::to_string(shots) + "shot_seed" + std::to_string(seed) + ".json");
  detail::write_text(out.json, j.dump(2) + "\n");
  std::vector<std::string> labels;
  std::vector<double> values;
  for (std::size_t i = 0; i < std::min<std::size_t>(10, out.report.ranked.size()); ++i) {
    labels.push_back(out.report.ranked[i].token);
    values.push_back(out.report.ranked[i].score);
  }
  out.plot = dir / "plots" / (cfg.run_id() + "_conjunction.svg");
  fs::create_directories(out.plot.parent_path());
  write_bar_chart_svg(out.plot, "Conjunction search: mean mask probability", labels, values);
  return out;
}

struct InterpretOutcome {
  std::vector<LogitsDiffReport> reports;
  std::vector<fs::path> files;
  fs::path plot;
};

/// Logits-difference analysis of each method's fine-tuned cell. Cells that
/// were not trained yet are trained first (same layout as run-experiment).
inline InterpretOutcome cmd_interpret(const RunConfig& cfg, int shots, std::uint64_t seed,
                                      const std::vector<std::string>& methods) {
  InterpretOutcome out;
  const auto data = load_data(cfg, true);
  for (const auto& m : methods) {
    if (m == "traditional_ft") throw ApplicabilityError("interpret: traditional_ft has no verbalizer");
    const auto mc = with_method(cfg, m);
    const auto p = cell_paths(mc, shots, seed);
    if (!fs::exists(p.checkpoint) || !fs::exists(p.verbalizer)) cmd_train(mc, shots, seed);
    auto backend = load_backend(mc);
    backend->restore(Checkpoint::load(p.checkpoint));
    const auto v = read_verbalizer_file(p.verbalizer, mc.labels, backend->vocabulary());
    auto r = logits_difference(data.test, v, mc.base(), *backend, mc.labels, scoring_options(mc), mc.analysis_sample,
                               rng::derive_seed(seed, "interpret/sample"));
    r.method = m;
    const auto stem = cfg.run_dir() / "analysis" / ("logits_diff_" + cell_name(m, shots, seed));
    auto j = to_json(r);
    j["shots"] = shots;
    j["seed"] = seed;
    detail::write_text(fs::path(stem.string() + ".json"), j.dump(2) + "\n");
    detail::write_text(fs::path(stem.string() + ".csv"), to_csv(r));
    out.files.emplace_back(stem.string() + ".json");
    out.files.emplace_back(stem.string() + ".csv");
    out.reports.push_back(std::move(r));
  }
  write_config_snapshot(cfg);
  std::vector<std::string> labels;
  std::vector<double> values;
  for (const auto& r : out.reports) {
    labels.push_back(r.method);
    values.push_back(r.average_difference);
  }
  out.plot = cfg.run_dir() / "plots" / (cfg.run_id() + "_logits_difference.svg");
  fs::create_directories(out.plot.parent_path());
  write_bar_chart_svg(out.plot, "Average logits difference", labels, values);
  return out;
}

}  // namespace laav
