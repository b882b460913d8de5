#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "laav/laav.hpp"

namespace fs = std::filesystem;
using namespace laav;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<int> shots;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool cell = true) {
  cmd->add_option("-c,--config", c.config, "Run config (key = value file)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config value: key=value (repeatable)");
  if (cell) {
    cmd->add_option("--shots", c.shots, "Shots per class (default: first of config 'shots')");
    cmd->add_option("--seed", c.seed, "Seed (default: first of config 'seeds')");
  }
}

RunConfig load(const Common& c) { return load_run_config(c.config, c.overrides); }
int shots_of(const Common& c, const RunConfig& cfg) { return c.shots.value_or(cfg.shots.front()); }
std::uint64_t seed_of(const Common& c, const RunConfig& cfg) { return c.seed.value_or(cfg.seeds.front()); }

std::vector<std::string> split_list(const std::string& s, const std::string& fallback) {
  std::vector<std::string> out;
  std::stringstream ss(s.empty() ? fallback : s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = text::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<Example>& xs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& e : xs) out << nlohmann::json{{"text", e.text}, {"label", e.label}}.dump() << "\n";
}

struct PretrainArgs {
  std::string out = "tiny";
  std::uint64_t seed = 1;
  std::size_t sentences = 6000;
  std::size_t epochs = 12;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 100;
};

/// Pretrains the small encoder on the synthetic corpus and writes the
/// checkpoint, matching train/test data and a ready-to-run config.
void pretrain_tiny(const PretrainArgs& a) {
  const fs::path dir = a.out;
  fs::create_directories(dir);
  tiny::synthetic::RecipeConfig rc;
  rc.seed = a.seed;
  rc.sentences = a.sentences;
  rc.pretrain.epochs = a.epochs;
  std::vector<double> history;
  std::cerr << "pretraining tiny encoder (" << a.sentences << " sentences, " << a.epochs << " epochs)\n";
  const auto lm = tiny::synthetic::pretrained_sentiment_lm(rc, &history);
  for (std::size_t e = 0; e < history.size(); ++e) std::cerr << "  epoch " << e + 1 << " mlm loss " << history[e] << "\n";
  lm.save(dir / "tiny.ckpt");
  write_jsonl(dir / "train.jsonl", tiny::synthetic::examples(a.train_per_class, rng::derive_seed(a.seed, "train")));
  write_jsonl(dir / "test.jsonl", tiny::synthetic::examples(a.test_per_class, rng::derive_seed(a.seed, "test")));
  std::ofstream cfg(dir / "run.cfg");
  cfg << "# Generated by `laav pretrain-tiny`.\n"
      << "data.train = train.jsonl\n"
      << "data.test = test.jsonl\n"
      << "label_words.positive = " << tiny::synthetic::kPositiveWord << "\n"
      << "label_words.negative = " << tiny::synthetic::kNegativeWord << "\n"
      << "template.base = \"{TEXT} it was {MASK} .\"\n"
      << "method = laav\n"
      << "k = 8\n"
      << "shots = 4\n"
      << "seeds = 13,21\n"
      << "train.learning_rate = 1e-4\n"
      << "train.max_epochs = 20\n"
      << "train.patience = 5\n"
      << "backend = tiny:tiny.ckpt\n"
      << "output_dir = runs\n";
  std::cout << (dir / "tiny.ckpt").string() << "\n" << (dir / "run.cfg").string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot prompt-based classification with label-aware verbalizers"};
  app.require_subcommand(1);

  Common bv_c, tr_c, ev_c, rx_c, sc_c, in_c, rp_c;
  std::optional<std::string> bv_out, tr_verbalizer, ev_checkpoint, ev_verbalizer, ev_out, rx_cell;
  std::string rx_methods, in_methods, rp_methods;
  bool sc_shortlist = false;
  PretrainArgs pt;

  auto* bv = app.add_subcommand("build-verbalizer", "Sample a split and build the configured verbalizer");
  add_common(bv, bv_c);
  bv->add_option("-o,--out", bv_out, "Output path");

  auto* tr = app.add_subcommand("train", "Sample, build, fine-tune and store a cell");
  add_common(tr, tr_c);
  tr->add_option("--verbalizer", tr_verbalizer, "Use this verbalizer file instead of building one");

  auto* ev = app.add_subcommand("evaluate", "Evaluate a trained cell on the test set");
  add_common(ev, ev_c);
  ev->add_option("--checkpoint", ev_checkpoint, "Checkpoint file (default: the cell's)");
  ev->add_option("--verbalizer", ev_verbalizer, "Verbalizer file (default: the cell's)");
  ev->add_option("-o,--out", ev_out, "Report path (default: the cell's eval.json)");

  auto* rx = app.add_subcommand("run-experiment", "Run every (shots, seed) cell, then aggregate");
  add_common(rx, rx_c, false);
  rx->add_option("--methods", rx_methods, "Comma-separated methods (default: config method)");
  rx->add_option("--cell", rx_cell, "Run a single cell SHOTS:SEED only (for parallel workers)");

  auto* sc = app.add_subcommand("search-conjunction", "Rank conjunction candidates");
  add_common(sc, sc_c);
  sc->add_flag("--evaluate-shortlist", sc_shortlist, "Fine-tune and evaluate LAAV with each shortlisted conjunction");

  auto* in = app.add_subcommand("interpret", "Logits-difference analysis of fine-tuned verbalizers");
  add_common(in, in_c);
  in->add_option("--methods", in_methods, "Comma-separated methods (default: config method)");

  auto* rp = app.add_subcommand("report", "Aggregate completed cells into tables and plots");
  add_common(rp, rp_c, false);
  rp->add_option("--methods", rp_methods, "Comma-separated methods (default: config method)");

  auto* pr = app.add_subcommand("pretrain-tiny", "Pretrain the small in-process encoder and write demo data");
  pr->add_option("-o,--out", pt.out, "Output directory");
  pr->add_option("--seed", pt.seed, "Recipe seed");
  pr->add_option("--sentences", pt.sentences, "Pretraining sentences");
  pr->add_option("--epochs", pt.epochs, "Pretraining epochs");
  pr->add_option("--train-per-class", pt.train_per_class, "Training pool examples per class");
  pr->add_option("--test-per-class", pt.test_per_class, "Test examples per class");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (const char* dev = std::getenv("LAAV_DEVICE"); dev && *dev && std::string(dev) != "cpu") {
      throw ConfigError(std::string("LAAV_DEVICE=") + dev + ": only the cpu device is available");
    }
    if (*bv) {
      const auto cfg = load(bv_c);
      std::cout << cmd_build_verbalizer(cfg, shots_of(bv_c, cfg), seed_of(bv_c, cfg),
                                        bv_out ? std::optional<fs::path>(*bv_out) : std::nullopt)
                       .string()
                << "\n";
    } else if (*tr) {
      const auto cfg = load(tr_c);
      const auto out = cmd_train(cfg, shots_of(tr_c, cfg), seed_of(tr_c, cfg),
                                 tr_verbalizer ? std::optional<fs::path>(*tr_verbalizer) : std::nullopt);
      std::cerr << "best epoch " << out.result.best_epoch << ", validation macro-F1 " << out.result.best_val_macro_f1
                << "\n";
      std::cout << out.paths.dir.string() << "\n";
    } else if (*ev) {
      const auto cfg = load(ev_c);
      auto opt = [](const std::optional<std::string>& s) { return s ? std::optional<fs::path>(*s) : std::nullopt; };
      const auto r = cmd_evaluate(cfg, shots_of(ev_c, cfg), seed_of(ev_c, cfg), opt(ev_checkpoint), opt(ev_verbalizer),
                                  opt(ev_out));
      std::cout << to_json(r).dump(2) << "\n";
    } else if (*rx) {
      const auto cfg = load(rx_c);
      const auto methods = split_list(rx_methods, cfg.method);
      if (rx_cell) {
        const auto colon = rx_cell->find(':');
        if (colon == std::string::npos) throw ConfigError("--cell expects SHOTS:SEED");
        const int shots = detail::parse_number<int>("--cell", rx_cell->substr(0, colon));
        const auto seed = detail::parse_number<std::uint64_t>("--cell", rx_cell->substr(colon + 1));
        int worst = 0;
        for (const auto& m : methods) {
          const auto mc = with_method(cfg, m);
          write_config_snapshot(mc);
          const auto c = run_cell(mc, shots, seed);
          std::cout << cell_name(m, shots, seed) << " " << c.status << (c.error.empty() ? "" : ": " + c.error) << "\n";
          if (c.status != "completed") worst = std::max(worst, c.error_kind == "config" ? 2 : 1);
        }
        return worst;
      }
      bool any_failed = false, all_user = true;
      for (const auto& m : methods) {
        const auto rec = cmd_run_experiment(with_method(cfg, m));
        std::cout << rec.run_dir.string() << "/run.json\n";
        for (const auto& c : rec.cells) {
          if (c.status == "completed") continue;
          any_failed = true;
          all_user = all_user && c.error_kind == "config";
        }
      }
      const auto rep = cmd_report(with_method(cfg, methods.front()), methods);
      if (rep.aggregate) std::cout << render_table(*rep.aggregate);
      if (any_failed) return all_user ? 2 : 1;
    } else if (*sc) {
      const auto cfg = load(sc_c);
      const auto out = cmd_search_conjunction(cfg, shots_of(sc_c, cfg), seed_of(sc_c, cfg), sc_shortlist);
      for (std::size_t i = 0; i < std::min<std::size_t>(10, out.report.ranked.size()); ++i) {
        std::cerr << i + 1 << ". " << out.report.ranked[i].token << " " << out.report.ranked[i].score << "\n";
      }
      for (const auto& s : out.shortlist) std::cerr << "shortlist " << s.conj << ": macro-F1 " << s.macro_f1 << "\n";
      std::cout << out.json.string() << "\n" << out.plot.string() << "\n";
    } else if (*in) {
      const auto cfg = load(in_c);
      const auto out = cmd_interpret(cfg, shots_of(in_c, cfg), seed_of(in_c, cfg), split_list(in_methods, cfg.method));
      for (const auto& r : out.reports) std::cerr << r.method << ": average logits difference " << r.average_difference << "\n";
      for (const auto& f : out.files) std::cout << f.string() << "\n";
      std::cout << out.plot.string() << "\n";
    } else if (*rp) {
      const auto cfg = load(rp_c);
      const auto out = cmd_report(cfg, split_list(rp_methods, cfg.method));
      for (const auto& w : out.warnings) std::cerr << "warning: " << w << "\n";
      if (!out.aggregate) throw AggregationError("nothing to report");
      std::cout << render_table(*out.aggregate);
    } else if (*pr) {
      pretrain_tiny(pt);
    }
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
