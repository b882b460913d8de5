#pragma once

// Randomized invariant checks shared by the property tests and the
// acceptance binary. Each check runs `cases` generated inputs and reports
// the first counterexample it finds.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "laav/analysis.hpp"
#include "laav/corpus.hpp"
#include "laav/mock_backend.hpp"
#include "laav/templating.hpp"
#include "laav/training.hpp"
#include "laav/verbalizers.hpp"
#include "support/mock_world.hpp"

namespace laav::testing {

struct PropertyResult {
  std::string name;
  std::size_t cases = 0;
  std::size_t failures = 0;
  std::string first_failure;

  [[nodiscard]] bool ok() const { return failures == 0 && cases > 0; }
};

/// Runs `body(eng, case_index)` `cases` times. The body returns an empty
/// string on success or a description of the violation.
inline PropertyResult run_property(const std::string& name, std::size_t cases, std::uint64_t seed,
                                   const std::function<std::string(rng::Engine&, std::size_t)>& body) {
  PropertyResult r{name};
  for (std::size_t i = 0; i < cases; ++i) {
    rng::Engine eng(rng::derive_seed(seed, name + "/" + std::to_string(i)));
    std::string err;
    try {
      err = body(eng, i);
    } catch (const std::exception& e) {
      err = std::string("exception: ") + e.what();
    }
    ++r.cases;
    if (!err.empty()) {
      if (r.failures++ == 0) r.first_failure = "case " + std::to_string(i) + ": " + err;
    }
  }
  return r;
}

inline std::size_t random_k(rng::Engine& eng) {
  static const std::size_t ks[] = {1, 2, 3, 32};
  return ks[rng::uniform_below(eng, 4)];
}

inline RowMatrix random_embeddings(rng::Engine& eng, std::size_t n_vocab) {
  const auto d = static_cast<Eigen::Index>(2 + rng::uniform_below(eng, 4));
  RowMatrix e(static_cast<Eigen::Index>(n_vocab), d);
  for (Eigen::Index r = 0; r < e.rows(); ++r) {
    for (Eigen::Index c = 0; c < d; ++c) e(r, c) = rng::normal(eng);
  }
  return e;
}

/// Every builder on a random world; the label words are added to the
/// vocabulary so NPPrompt can anchor on them.
struct BuiltVerbalizers {
  MockWorld world;
  std::size_t k = 1;
  std::vector<Verbalizer> all;
};

inline BuiltVerbalizers build_all(rng::Engine& eng) {
  BuiltVerbalizers b;
  b.world = random_world(eng);
  auto& w = b.world;
  for (std::size_t c = 0; c < w.labels.size(); ++c) {
    w.vocab.push_back(w.labels.label_word(c));
    w.special.push_back(false);
    for (auto* rows : {&w.base_rows, &w.aware_rows}) {
      for (auto& row : *rows) row.push_back(0.0);
    }
  }
  auto lm = make_mock(w);
  lm.set_embeddings(random_embeddings(eng, w.vocab.size()));
  b.k = random_k(eng);
  const auto base = parse_template(kBaseSpec);
  const auto aware = parse_template(kLabelAwareSpec);
  b.all.push_back(build_amulap(w.train, w.labels, base, lm, b.k));
  b.all.push_back(build_laav(w.train, w.labels, aware, lm, b.k, w.conj));
  b.all.push_back(build_petal(w.train, w.labels, base, lm));
  b.all.push_back(build_npprompt(w.labels, lm, b.k));
  return b;
}

inline PropertyResult prop_disjointness(std::size_t cases, std::uint64_t seed) {
  return run_property("disjointness", cases, seed, [](rng::Engine& eng, std::size_t) -> std::string {
    const auto b = build_all(eng);
    for (const auto& v : b.all) {
      std::set<TokenId> seen;
      for (const auto& list : v.tokens) {
        for (const auto& t : list) {
          if (!seen.insert(t.id).second) return v.method + ": token " + std::to_string(t.id) + " in two classes";
        }
      }
    }
    return {};
  });
}

inline PropertyResult prop_at_most_k(std::size_t cases, std::uint64_t seed) {
  return run_property("at_most_k_per_class", cases, seed, [](rng::Engine& eng, std::size_t) -> std::string {
    const auto b = build_all(eng);
    for (const auto& v : b.all) {
      const std::size_t limit = v.method == "petal" ? 1 : b.k;
      for (const auto& list : v.tokens) {
        if (list.size() > limit) return v.method + ": " + std::to_string(list.size()) + " tokens > k";
      }
    }
    return {};
  });
}

/// Kept tokens sit in a class whose score is maximal; any earlier class with
/// the same score would have won the tie.
inline PropertyResult prop_assignment_soundness(std::size_t cases, std::uint64_t seed) {
  return run_property("assignment_soundness", cases, seed, [](rng::Engine& eng, std::size_t) -> std::string {
    const auto w = random_world(eng);
    const auto lm = make_mock(w);
    const auto k = random_k(eng);
    const auto amulap = build_amulap(w.train, w.labels, parse_template(kBaseSpec), lm, k);
    const auto laav = build_laav(w.train, w.labels, parse_template(kLabelAwareSpec), lm, k, w.conj);
    for (const auto* pair : {&amulap, &laav}) {
      const auto& rows = pair == &amulap ? w.base_rows : w.aware_rows;
      for (std::size_t c = 0; c < pair->tokens.size(); ++c) {
        for (const auto& t : pair->tokens[c]) {
          const auto v = static_cast<std::size_t>(t.id);
          if (w.special[v]) return pair->method + ": special token kept";
          const double own = ref_sum(w, rows, v, c);
          for (std::size_t o = 0; o < w.labels.size(); ++o) {
            const double other = ref_sum(w, rows, v, o);
            if (other > own || (o < c && other == own)) {
              return pair->method + ": token " + std::to_string(v) + " kept by class " + std::to_string(c) +
                     " but class " + std::to_string(o) + " scores " + std::to_string(other);
            }
          }
        }
      }
    }
    return {};
  });
}

inline PropertyResult prop_monotonicity(std::size_t cases, std::uint64_t seed) {
  return run_property("monotonic_under_appended_example", cases, seed, [](rng::Engine& eng, std::size_t) -> std::string {
    auto w = random_world(eng);
    const auto base = parse_template(kBaseSpec);
    const auto aware = parse_template(kLabelAwareSpec);
    const auto before_lm = make_mock(w);
    const auto sb = score_matrix(w.train, w.labels, before_lm, base).scores;
    const auto ab = score_matrix(w.train, w.labels, before_lm, aware, w.conj).scores;
    const auto c = rng::uniform_below(eng, w.labels.size());
    w.train.push_back({"appended example", w.labels.class_name(c)});
    w.gold.push_back(c);
    w.base_rows.push_back(random_row(eng, w.vocab.size(), false));
    w.aware_rows.push_back(random_row(eng, w.vocab.size(), true));
    const auto after_lm = make_mock(w);
    const auto sa = score_matrix(w.train, w.labels, after_lm, base).scores;
    const auto aa = score_matrix(w.train, w.labels, after_lm, aware, w.conj).scores;
    for (Eigen::Index v = 0; v < sb.rows(); ++v) {
      for (Eigen::Index y = 0; y < sb.cols(); ++y) {
        const bool same_class = static_cast<std::size_t>(y) == c;
        for (const auto& [b, a] : {std::pair{sb(v, y), sa(v, y)}, std::pair{ab(v, y), aa(v, y)}}) {
          if (same_class && a < b) return "score of token " + std::to_string(v) + " decreased";
          if (!same_class && a != b) return "score of another class changed";
        }
      }
    }
    return {};
  });
}

inline std::string random_text(rng::Engine& eng) {
  static const std::vector<std::string> atoms{"a", "b", " ", "{", "}", "MASK", "TEXT", "\xC3\xA9", "\xE2\x82\xAC",
                                              ".", "{MASK", "MASK}", "{LABEL}", "\n"};
  std::string s;
  const auto n = rng::uniform_below(eng, 12);
  for (std::size_t i = 0; i < n; ++i) s += atoms[rng::uniform_below(eng, atoms.size())];
  return s;
}

inline PropertyResult prop_single_mask(std::size_t cases, std::uint64_t seed) {
  return run_property("exactly_one_mask", cases, seed, [](rng::Engine& eng, std::size_t) -> std::string {
    // Random slot order; only parseable templates are rendered. Regenerate
    // until one parses so every case renders something.
    std::vector<std::string> slots{"{TEXT}", "{MASK}"};
    const auto extra = rng::uniform_below(eng, 3);
    if (extra >= 1) slots.push_back("{LABEL}");
    if (extra >= 2) slots.push_back("{CONJ}");
    std::optional<Template> t;
    std::string spec;
    for (int attempt = 0; attempt < 50 && !t; ++attempt) {
      rng::shuffle(std::span<std::string>(slots), eng);
      spec.clear();
      for (const auto& s : slots) spec += random_text(eng) + s;
      spec += random_text(eng);
      try {
        t = parse_template(spec);
      } catch (const TemplateError&) {
      }
    }
    if (!t) return {};
    const auto text = random_text(eng) + random_text(eng);
    const auto max_chars = 1 + rng::uniform_below(eng, 20);
    const std::optional<std::string> label =
        t->has(SlotKind::kLabel) ? std::optional<std::string>(random_text(eng) + "w") : std::nullopt;
    const std::optional<std::string> conj =
        t->has(SlotKind::kConj) ? std::optional<std::string>("c" + random_text(eng)) : std::nullopt;
    // Independent splice: scan the spec left to right, replacing slot names.
    const std::vector<std::pair<std::string, std::string>> values{
        {"{TEXT}", text::utf8_prefix(text, max_chars)}, {"{MASK}", std::string(kMaskMarker)},
        {"{LABEL}", label.value_or("")}, {"{CONJ}", conj.value_or("")}};
    std::string naive;
    for (std::size_t pos = 0; pos < spec.size();) {
      bool hit = false;
      for (const auto& [slot, value] : values) {
        if (spec.compare(pos, slot.size(), slot) == 0) {
          naive += value;
          pos += slot.size();
          hit = true;
          break;
        }
      }
      if (!hit) naive += spec[pos++];
    }
    const bool marker_in_input = text::count_occurrences(text, kMaskMarker) > 0 ||
                                 (label && text::count_occurrences(*label, kMaskMarker) > 0) ||
                                 (conj && text::count_occurrences(*conj, kMaskMarker) > 0);
    try {
      const auto p = render(*t, text, label, conj, max_chars);
      if (p.rendered != naive) return "rendered '" + p.rendered + "' differs from splice '" + naive + "'";
      if (text::count_occurrences(p.rendered, kMaskMarker) != 1) return "rendered '" + p.rendered + "' has != 1 mask";
      if (p.rendered.compare(p.mask_offset, kMaskMarker.size(), kMaskMarker) != 0) return "mask_offset is wrong";
    } catch (const RenderError& e) {
      if (!marker_in_input && text::count_occurrences(naive, kMaskMarker) == 1) {
        return std::string("unexpected RenderError: ") + e.what();
      }
    }
    return {};
  });
}

inline std::vector<double> random_probability_row(rng::Engine& eng, std::size_t n) {
  auto row = random_row(eng, n, rng::uniform_below(eng, 2) == 0);
  // Exact zeros exercise the floor.
  if (rng::uniform_below(eng, 3) == 0) row[rng::uniform_below(eng, n)] = 0.0;
  return row;
}

inline Verbalizer random_verbalizer(rng::Engine& eng, std::size_t n_vocab, std::size_t n_classes) {
  Verbalizer v;
  v.method = "random";
  v.k = 1 + rng::uniform_below(eng, 4);
  std::vector<TokenId> ids(n_vocab);
  for (std::size_t i = 0; i < n_vocab; ++i) ids[i] = static_cast<TokenId>(i);
  rng::shuffle(std::span<TokenId>(ids), eng);
  std::size_t next = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    v.classes.push_back("c" + std::to_string(c));
    auto& list = v.tokens.emplace_back();
    const auto n = 1 + rng::uniform_below(eng, v.k);
    for (std::size_t j = 0; j < n && next < n_vocab; ++j) list.push_back({ids[next++], "t", 0.0});
    // Equal scores: validate() expects ascending ids.
    std::sort(list.begin(), list.end(), [](const auto& x, const auto& y) { return x.id < y.id; });
  }
  return v;
}

inline PropertyResult prop_scores_nonpositive(std::size_t cases, std::uint64_t seed) {
  return run_property("class_scores_nonpositive", cases, seed, [](rng::Engine& eng, std::size_t) -> std::string {
    const auto n_classes = 2 + rng::uniform_below(eng, 4);
    const auto n_vocab = 4 * n_classes + rng::uniform_below(eng, 10);
    const auto row = random_probability_row(eng, n_vocab);
    const auto v = random_verbalizer(eng, n_vocab, n_classes);
    for (double s : class_scores(row, v)) {
      if (!(s <= 0.0) || !std::isfinite(s)) return "L = " + std::to_string(s);
    }
    return {};
  });
}

inline PropertyResult prop_loss_nonnegative(std::size_t cases, std::uint64_t seed) {
  return run_property("training_loss_nonnegative", cases, seed, [](rng::Engine& eng, std::size_t i) -> std::string {
    const auto n_classes = 2 + rng::uniform_below(eng, 4);
    const auto n_vocab = 4 * n_classes + rng::uniform_below(eng, 10);
    const auto n = 1 + rng::uniform_below(eng, 6);
    const auto v = random_verbalizer(eng, n_vocab, n_classes);
    RowMatrix rows(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n_vocab));
    std::vector<std::size_t> gold(n);
    const bool perfect = i % 5 == 0;
    for (std::size_t r = 0; r < n; ++r) {
      gold[r] = rng::uniform_below(eng, n_classes);
      auto row = random_probability_row(eng, n_vocab);
      if (perfect) {
        // All mass on the gold class's single token: loss must be exactly 0.
        std::fill(row.begin(), row.end(), 0.0);
        row[static_cast<std::size_t>(v.tokens[gold[r]].front().id)] = 1.0;
      }
      for (std::size_t c = 0; c < n_vocab; ++c) rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
    }
    auto vv = v;
    if (perfect) {
      for (auto& list : vv.tokens) list.resize(1);
    }
    const double loss = training_loss(rows, gold, vv);
    if (!(loss >= 0.0)) return "loss = " + std::to_string(loss);
    if (perfect && loss != 0.0) return "one-hot gold rows give loss " + std::to_string(loss);
    if (!perfect && loss == 0.0) {
      for (std::size_t r = 0; r < n; ++r) {
        for (const auto& t : vv.tokens[gold[r]]) {
          if (rows(static_cast<Eigen::Index>(r), t.id) != 1.0) return "zero loss without certainty";
        }
      }
    }
    return {};
  });
}

inline PropertyResult prop_argmax_tiebreak(std::size_t cases, std::uint64_t seed) {
  return run_property("argmax_tie_break", cases, seed, [](rng::Engine& eng, std::size_t) -> std::string {
    const auto n = 1 + rng::uniform_below(eng, 8);
    std::vector<double> xs(n);
    for (auto& x : xs) x = -static_cast<double>(rng::uniform_below(eng, 3));  // heavy ties
    std::size_t first = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (xs[i] > xs[first]) first = i;
    }
    if (argmax(xs) != first) return "argmax picked " + std::to_string(argmax(xs)) + ", first max is " + std::to_string(first);
    // predict agrees on a row built so that class scores tie.
    const auto classes = 2 + rng::uniform_below(eng, 3);
    Verbalizer v;
    v.k = 1;
    for (std::size_t c = 0; c < classes; ++c) {
      v.classes.push_back("c" + std::to_string(c));
      v.tokens.push_back({{static_cast<TokenId>(c), "t", 0.0}});
    }
    std::vector<double> row(classes);
    for (auto& p : row) p = 1.0 + static_cast<double>(rng::uniform_below(eng, 2));
    double sum = 0.0;
    for (double p : row) sum += p;
    for (auto& p : row) p /= sum;
    std::size_t expect = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[expect]) expect = c;
    }
    if (predict(row, v) != expect) return "predict broke a tie towards a higher index";
    return {};
  });
}

inline PropertyResult prop_logits_translation(std::size_t cases, std::uint64_t seed) {
  return run_property("logits_difference_translation_invariance", cases, seed,
                      [](rng::Engine& eng, std::size_t) -> std::string {
    const auto n_vocab = 4 + rng::uniform_below(eng, 8);
    std::vector<std::string> vocab;
    for (std::size_t i = 0; i < n_vocab; ++i) vocab.push_back("t" + std::to_string(i));
    MockMaskedLm a(vocab), b(vocab);
    const LabelSet labels({{"c0", "t0"}, {"c1", "t1"}});
    const auto base = parse_template(kBaseSpec);
    const double global = 100.0 * (rng::uniform01(eng) - 0.5);
    std::vector<double> per_token(n_vocab);
    for (auto& x : per_token) x = 10.0 * (rng::uniform01(eng) - 0.5);
    std::vector<Example> test;
    const auto n = 2 + rng::uniform_below(eng, 8);
    for (std::size_t i = 0; i < n; ++i) {
      const auto text = "x" + std::to_string(i);
      test.push_back({text, i % 2 == 0 ? "c0" : "c1"});
      std::vector<double> la(n_vocab), lb(n_vocab);
      for (std::size_t v = 0; v < n_vocab; ++v) {
        la[v] = 5.0 * rng::normal(eng);
        lb[v] = la[v] + global + per_token[v];
      }
      a.set_logits(render(base, text).rendered, la);
      b.set_logits(render(base, text).rendered, lb);
    }
    const auto v = random_verbalizer(eng, n_vocab, 2);
    const auto ra = logits_difference(test, v, base, a, labels);
    const auto rb = logits_difference(test, v, base, b, labels);
    auto close = [](double x, double y) { return std::abs(x - y) <= 1e-9 * std::max(1.0, std::abs(x)); };
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t j = 0; j < ra.per_class[c].size(); ++j) {
        if (ra.per_class[c][j].id != rb.per_class[c][j].id ||
            !close(ra.per_class[c][j].difference, rb.per_class[c][j].difference)) {
          return "difference changed under a logit shift";
        }
      }
    }
    if (!close(ra.average_difference, rb.average_difference)) return "average changed under a logit shift";
    return {};
  });
}

inline PropertyResult prop_sampling_determinism(std::size_t cases, std::uint64_t seed) {
  return run_property("seed_deterministic_sampling", cases, seed, [](rng::Engine& eng, std::size_t) -> std::string {
    const auto n_classes = 2 + rng::uniform_below(eng, 4);
    const auto shots = static_cast<int>(1 + rng::uniform_below(eng, 6));
    std::vector<std::pair<std::string, std::string>> pairs;
    for (std::size_t c = 0; c < n_classes; ++c) pairs.emplace_back("c" + std::to_string(c), "w" + std::to_string(c));
    const LabelSet labels(pairs);
    std::vector<Example> pool;
    for (std::size_t c = 0; c < n_classes; ++c) {
      const auto count = 2 * static_cast<std::size_t>(shots) + rng::uniform_below(eng, 10);
      for (std::size_t i = 0; i < count; ++i) pool.push_back({"doc " + std::to_string(pool.size()), labels.class_name(c)});
    }
    rng::shuffle(std::span<Example>(pool), eng);
    const auto s = eng();
    const auto a = sample_few_shot(pool, labels, shots, s);
    const auto b = sample_few_shot(pool, labels, shots, s);
    if (a.train_indices != b.train_indices || a.validation_indices != b.validation_indices) return "same seed, different split";
    std::set<std::size_t> used(a.train_indices.begin(), a.train_indices.end());
    for (auto i : a.validation_indices) {
      if (!used.insert(i).second) return "train and validation overlap";
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
      const auto count = std::count_if(a.train.begin(), a.train.end(),
                                       [&](const Example& e) { return e.label == labels.class_name(c); });
      if (count != shots) return "class " + std::to_string(c) + " has " + std::to_string(count) + " train examples";
    }
    return {};
  });
}

inline std::vector<PropertyResult> run_all_properties(std::size_t cases, std::uint64_t seed) {
  return {prop_disjointness(cases, seed),        prop_assignment_soundness(cases, seed),
          prop_at_most_k(cases, seed),           prop_monotonicity(cases, seed),
          prop_single_mask(cases, seed),         prop_scores_nonpositive(cases, seed),
          prop_loss_nonnegative(cases, seed),    prop_argmax_tiebreak(cases, seed),
          prop_logits_translation(cases, seed),  prop_sampling_determinism(cases, seed)};
}

}  // namespace laav::testing
