#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "laav/backend.hpp"
#include "laav/corpus.hpp"
#include "laav/error.hpp"
#include "laav/templating.hpp"
#include "laav/training.hpp"
#include "laav/verbalizers.hpp"

namespace laav {

// -------------------------------------------------------------------------
// Conjunction search

struct ConjunctionCandidate {
  TokenId id = 0;
  std::string token;
  double score = 0.0;
};

struct ConjunctionReport {
  /// All non-special tokens, by mean probability at the connective slot.
  std::vector<ConjunctionCandidate> ranked;
  /// Same statistic restricted to each class's prompts (top entries only).
  std::vector<std::vector<ConjunctionCandidate>> per_class;
  std::vector<std::string> classes;
  Verbalizer initial_verbalizer;
  std::size_t prompt_count = 0;
  std::string aggregation = "uniform mean over all (example, verbalizer token) prompts";
};

namespace detail {

inline std::vector<ConjunctionCandidate> rank_tokens(const Eigen::VectorXd& score, const MaskedLm& backend,
                                                     std::size_t limit) {
  std::vector<TokenId> ids;
  for (Eigen::Index v = 0; v < score.size(); ++v) {
    if (!backend.vocabulary().is_special(static_cast<TokenId>(v))) ids.push_back(static_cast<TokenId>(v));
  }
  std::stable_sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) {
    return score(a) != score(b) ? score(a) > score(b) : a < b;
  });
  if (ids.size() > limit) ids.resize(limit);
  std::vector<ConjunctionCandidate> out;
  for (auto id : ids) out.push_back({id, backend.token_surface(id), score(id)});
  return out;
}

}  // namespace detail

/// Builds an AMuLaP verbalizer, then renders [x] ... [y] [MASK] [v] for every
/// class y, every training example x of y and every v in VS(y). A candidate's
/// score is its mask probability averaged over all those prompts.
inline ConjunctionReport search_conjunction(const std::vector<Example>& train, const LabelSet& labels,
                                            const Template& base, const Template& conj_search,
                                            const MaskedLm& backend, std::size_t k = kDefaultTopK,
                                            const ScoringOptions& opt = {}, std::size_t per_class_top = 10) {
  if (conj_search.family() != TemplateFamily::kConjSearch) {
    throw TemplateError("search_conjunction: template needs {LABEL} {MASK} {TOKEN} slots");
  }
  ConjunctionReport report;
  report.classes = labels.classes();
  report.initial_verbalizer = build_amulap(train, labels, base, backend, k, opt);

  std::vector<PromptText> prompts;
  std::vector<std::size_t> prompt_class, prompt_example;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (labels.require_index(train[i].label) != c) continue;
      for (const auto& v : report.initial_verbalizer.tokens[c]) {
        prompts.push_back(conjunction_search_render(conj_search, train[i].text, labels.label_word(c), v.token, opt.max_chars));
        prompt_class.push_back(c);
        prompt_example.push_back(i);
      }
    }
  }
  if (prompts.empty()) throw AnalysisError("search_conjunction: no prompts (empty verbalizer)");
  const auto dist = detail::distributions_for(backend, prompts, prompt_example, opt.batch_size);

  Eigen::VectorXd total = Eigen::VectorXd::Zero(dist.cols());
  Eigen::MatrixXd per_class = Eigen::MatrixXd::Zero(dist.cols(), static_cast<Eigen::Index>(labels.size()));
  std::vector<std::size_t> class_count(labels.size(), 0);
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    total += dist.row(static_cast<Eigen::Index>(p)).transpose();
    per_class.col(static_cast<Eigen::Index>(prompt_class[p])) += dist.row(static_cast<Eigen::Index>(p)).transpose();
    ++class_count[prompt_class[p]];
  }
  total /= static_cast<double>(prompts.size());
  report.prompt_count = prompts.size();
  report.ranked = detail::rank_tokens(total, backend, total.size());
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (class_count[c] == 0) {
      report.per_class.emplace_back();
      continue;
    }
    Eigen::VectorXd col = per_class.col(static_cast<Eigen::Index>(c)) / static_cast<double>(class_count[c]);
    report.per_class.push_back(detail::rank_tokens(col, backend, per_class_top));
  }
  return report;
}

inline nlohmann::ordered_json to_json(const ConjunctionReport& r, std::size_t top = 50) {
  auto cands = [](const std::vector<ConjunctionCandidate>& v, std::size_t n) {
    auto arr = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < std::min(n, v.size()); ++i) {
      arr.push_back({{"token", v[i].token}, {"token_id", v[i].id}, {"score", v[i].score}});
    }
    return arr;
  };
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < r.classes.size(); ++c) per_class[r.classes[c]] = cands(r.per_class[c], top);
  return {{"aggregation", r.aggregation},
          {"prompt_count", r.prompt_count},
          {"ranked", cands(r.ranked, top)},
          {"per_class", per_class},
          {"initial_verbalizer", to_json(r.initial_verbalizer)}};
}

// -------------------------------------------------------------------------
// Logits difference

struct TokenLogitStats {
  TokenId id = 0;
  std::string token;
  double in_class_mean = 0.0;
  double out_class_mean = 0.0;
  double difference = 0.0;
};

struct LogitsDiffReport {
  std::string method;
  std::vector<std::string> classes;
  /// Per class, sorted by difference descending (ties: lower token id).
  std::vector<std::vector<TokenLogitStats>> per_class;
  /// Mean difference over every token of every class.
  double average_difference = 0.0;
  std::size_t examples = 0;
};

/// For each class y and token v in VS(y): mean raw logit of v over test
/// examples of y minus its mean over all other test examples, computed with
/// the base template on the current (fine-tuned) backend state.
///
/// `sample_limit`, when set, evaluates a seeded subset of at most that many
/// examples (original order kept).
inline LogitsDiffReport logits_difference(const std::vector<Example>& test, const Verbalizer& v, const Template& base,
                                          const MaskedLm& backend, const LabelSet& labels,
                                          const ScoringOptions& opt = {},
                                          std::optional<std::size_t> sample_limit = std::nullopt,
                                          std::uint64_t sample_seed = 0) {
  validate(v, labels, backend.vocabulary());
  std::vector<Example> examples = test;
  if (sample_limit && examples.size() > *sample_limit) {
    std::vector<std::size_t> idx(examples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng::Engine eng(rng::derive_seed(sample_seed, "logits_difference/sample"));
    rng::shuffle(std::span<std::size_t>(idx), eng);
    idx.resize(*sample_limit);
    std::sort(idx.begin(), idx.end());
    std::vector<Example> picked;
    for (auto i : idx) picked.push_back(examples[i]);
    examples = std::move(picked);
  }
  const auto gold = gold_indices(examples, labels);
  std::vector<std::size_t> count(labels.size(), 0);
  for (auto g : gold) ++count[g];
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (count[c] == 0) throw AnalysisError("logits_difference: class '" + labels.class_name(c) + "' absent from the test set");
  }
  if (labels.size() < 2) throw AnalysisError("logits_difference: needs at least two classes");

  const auto prompts = render_all(examples, base, opt.max_chars);
  RowMatrix logits(static_cast<Eigen::Index>(prompts.size()), static_cast<Eigen::Index>(backend.vocabulary().size()));
  const auto bs = std::max<std::size_t>(opt.batch_size, 1);
  for (std::size_t s = 0; s < prompts.size(); s += bs) {
    const auto n = std::min(bs, prompts.size() - s);
    logits.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(n)) =
        backend.mask_logits(std::span<const PromptText>(prompts.data() + s, n));
  }

  LogitsDiffReport r;
  r.method = v.method;
  r.classes = labels.classes();
  r.examples = examples.size();
  double sum = 0.0;
  std::size_t n_tokens = 0;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    auto& list = r.per_class.emplace_back();
    for (const auto& t : v.tokens[c]) {
      double in = 0.0, out = 0.0;
      for (std::size_t i = 0; i < examples.size(); ++i) {
        (gold[i] == c ? in : out) += logits(static_cast<Eigen::Index>(i), t.id);
      }
      TokenLogitStats s{t.id, t.token, in / static_cast<double>(count[c]),
                        out / static_cast<double>(examples.size() - count[c]), 0.0};
      s.difference = s.in_class_mean - s.out_class_mean;
      sum += s.difference;
      ++n_tokens;
      list.push_back(std::move(s));
    }
    std::stable_sort(list.begin(), list.end(), [](const TokenLogitStats& a, const TokenLogitStats& b) {
      return a.difference != b.difference ? a.difference > b.difference : a.id < b.id;
    });
  }
  r.average_difference = n_tokens ? sum / static_cast<double>(n_tokens) : 0.0;
  return r;
}

inline nlohmann::ordered_json to_json(const LogitsDiffReport& r) {
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& s : r.per_class[c]) {
      arr.push_back({{"token", s.token},
                     {"token_id", s.id},
                     {"in_class_mean", s.in_class_mean},
                     {"out_class_mean", s.out_class_mean},
                     {"difference", s.difference}});
    }
    per_class[r.classes[c]] = arr;
  }
  return {{"method", r.method},
          {"examples", r.examples},
          {"average_difference", r.average_difference},
          {"per_class", per_class}};
}

inline std::string to_csv(const LogitsDiffReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "class,token,token_id,in_class_mean,out_class_mean,difference\n";
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    for (const auto& s : r.per_class[c]) {
      os << csv_field(r.classes[c]) << ',' << csv_field(s.token) << ',' << s.id << ',' << s.in_class_mean << ','
         << s.out_class_mean << ',' << s.difference << '\n';
    }
  }
  return os.str();
}

// -------------------------------------------------------------------------
// Aggregation

struct AggregateRow {
  std::string method;
  int shots = 0;
  std::size_t seeds = 0;
  double mean = 0.0;
  std::optional<double> stddev;  // sample std, needs >= 2 seeds
};

struct AggregateReport {
  std::vector<std::string> classes;
  std::vector<AggregateRow> rows;  // sorted by (method, shots)
};

/// Groups reports by (method, shots); mean and sample standard deviation of
/// macro-F1 per group. Values are summed in (seed, value) order so the result
/// does not depend on input order.
inline AggregateReport aggregate_runs(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw AggregationError("aggregate_runs: no reports");
  AggregateReport out;
  out.classes = reports.front().classes;
  std::map<std::pair<std::string, int>, std::vector<std::pair<std::uint64_t, double>>> groups;
  for (const auto& r : reports) {
    if (r.classes != out.classes) throw AggregationError("aggregate_runs: reports use different label sets");
    groups[{r.method, r.shots}].emplace_back(r.seed, r.macro_f1);
  }
  for (auto& [key, values] : groups) {
    std::sort(values.begin(), values.end());
    AggregateRow row{key.first, key.second, values.size(), 0.0, std::nullopt};
    double sum = 0.0;
    for (const auto& [seed, v] : values) sum += v;
    row.mean = sum / static_cast<double>(values.size());
    if (values.size() >= 2) {
      double ss = 0.0;
      for (const auto& [seed, v] : values) ss += (v - row.mean) * (v - row.mean);
      row.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    out.rows.push_back(row);
  }
  return out;
}

/// "81.1 (1.2)": percentage points with one decimal; std omitted when absent.
inline std::string format_cell(double mean, std::optional<double> stddev) {
  char buf[64];
  if (stddev) {
    std::snprintf(buf, sizeof buf, "%.1f (%.1f)", 100.0 * mean, 100.0 * *stddev);
  } else {
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * mean);
  }
  return buf;
}

/// Plain-text table: one row per shot count, one column per method.
inline std::string render_table(const AggregateReport& r) {
  std::vector<std::string> methods;
  std::vector<int> shots;
  for (const auto& row : r.rows) {
    if (std::find(methods.begin(), methods.end(), row.method) == methods.end()) methods.push_back(row.method);
    if (std::find(shots.begin(), shots.end(), row.shots) == shots.end()) shots.push_back(row.shots);
  }
  std::sort(shots.begin(), shots.end());
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"Sample Size"});
  for (const auto& m : methods) cells.back().push_back(m);
  for (int s : shots) {
    std::vector<std::string> line{std::to_string(s)};
    for (const auto& m : methods) {
      std::string cell = "-";
      for (const auto& row : r.rows) {
        if (row.method == m && row.shots == s) cell = format_cell(row.mean, row.stddev);
      }
      line.push_back(cell);
    }
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::string out;
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      out += line[i];
      if (i + 1 < line.size()) out += std::string(width[i] - line[i].size() + 2, ' ');
    }
    out += '\n';
  }
  return out;
}

inline std::string to_csv(const AggregateReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "method,shots,seeds,mean_macro_f1,std_macro_f1\n";
  for (const auto& row : r.rows) {
    os << csv_field(row.method) << ',' << row.shots << ',' << row.seeds << ',' << row.mean << ',';
    if (row.stddev) os << *row.stddev;
    os << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json to_json(const AggregateReport& r) {
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"method", row.method},
                    {"shots", row.shots},
                    {"seeds", row.seeds},
                    {"mean_macro_f1", row.mean},
                    {"std_macro_f1", row.stddev ? nlohmann::ordered_json(*row.stddev) : nlohmann::ordered_json(nullptr)},
                    {"cell", format_cell(row.mean, row.stddev)}});
  }
  return {{"classes", r.classes}, {"rows", rows}};
}

// -------------------------------------------------------------------------
// Plots

/// Static SVG bar chart.
inline void write_bar_chart_svg(const std::filesystem::path& path, const std::string& title,
                                const std::vector<std::string>& labels, const std::vector<double>& values) {
  const double width = 120.0 * static_cast<double>(std::max<std::size_t>(labels.size(), 1)) + 80.0;
  const double height = 320.0, top = 40.0, bottom = 260.0;
  double lo = 0.0, hi = 0.0;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  auto y_of = [&](double v) { return bottom - (v - lo) / (hi - lo) * (bottom - top); };
  std::ofstream out(path);
  if (!out) throw AnalysisError("cannot write plot " + path.string());
  auto esc = [](const std::string& s) {
    std::string r;
    for (char c : s) {
      if (c == '<') r += "&lt;";
      else if (c == '>') r += "&gt;";
      else if (c == '&') r += "&amp;";
      else r += c;
    }
    return r;
  };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << esc(title) << "</text>\n";
  out << "<line x1=\"40\" y1=\"" << y_of(0.0) << "\" x2=\"" << width - 20 << "\" y2=\"" << y_of(0.0)
      << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double x = 60.0 + 120.0 * static_cast<double>(i);
    const double y0 = y_of(0.0), y1 = y_of(values[i]);
    out << "<rect x=\"" << x << "\" y=\"" << std::min(y0, y1) << "\" width=\"80\" height=\"" << std::abs(y1 - y0)
        << "\" fill=\"#4878a8\"/>\n";
    out << "<text x=\"" << x << "\" y=\"" << bottom + 20 << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << esc(labels[i]) << "</text>\n";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", values[i]);
    out << "<text x=\"" << x << "\" y=\"" << std::min(y0, y1) - 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << buf << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace laav
