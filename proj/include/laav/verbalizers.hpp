#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "laav/backend.hpp"
#include "laav/corpus.hpp"
#include "laav/error.hpp"
#include "laav/templating.hpp"

namespace laav {

inline constexpr std::size_t kDefaultTopK = 32;
inline constexpr std::size_t kDefaultBatchSize = 8;
inline constexpr double kProbabilityFloor = 1e-12;
inline const std::string kDefaultConjunction = "and";

class DisjointnessError : public UserError {
  using UserError::UserError;
};

/// s(v, y) for every vocabulary token v (rows) and class y (columns).
struct ScoreMatrix {
  Eigen::MatrixXd scores;
  /// "base" (unmodified template), "label_aware:<conj>", "petal_loglik" or
  /// "cosine".
  std::string provenance;
};

struct VerbalizerToken {
  TokenId id = 0;
  std::string token;
  double score = 0.0;

  friend bool operator==(const VerbalizerToken&, const VerbalizerToken&) = default;
};

/// Per-class ranked, pairwise disjoint token lists.
struct Verbalizer {
  std::string method;
  std::size_t k = 1;
  std::optional<std::string> conj;
  std::vector<std::string> classes;
  std::vector<std::vector<VerbalizerToken>> tokens;
  /// Set for label-aware construction: training and inference must use the
  /// plain base template.
  bool base_template_only = false;

  [[nodiscard]] std::size_t total_tokens() const {
    std::size_t n = 0;
    for (const auto& t : tokens) n += t.size();
    return n;
  }

  friend bool operator==(const Verbalizer&, const Verbalizer&) = default;
};

/// Knobs shared by the score-based builders.
struct ScoringOptions {
  std::size_t batch_size = kDefaultBatchSize;
  std::size_t max_chars = kDefaultMaxChars;
};

namespace detail {

/// Distribution rows for `prompts`, batched. A LengthError is re-raised with
/// the index of the example whose prompt overflowed.
inline RowMatrix distributions_for(const MaskedLm& backend, const std::vector<PromptText>& prompts,
                                   const std::vector<std::size_t>& example_index, std::size_t batch_size) {
  RowMatrix out(static_cast<Eigen::Index>(prompts.size()), static_cast<Eigen::Index>(backend.vocabulary().size()));
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t start = 0; start < prompts.size(); start += batch_size) {
    const auto n = std::min(batch_size, prompts.size() - start);
    const std::span<const PromptText> batch(prompts.data() + start, n);
    try {
      out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) = backend.mask_distribution(batch);
    } catch (const LengthError& e) {
      for (std::size_t i = 0; i < n; ++i) {
        try {
          (void)backend.mask_distribution(batch.subspan(i, 1));
        } catch (const LengthError&) {
          throw LengthError("example " + std::to_string(example_index[start + i]) + ": " + e.what());
        }
      }
      throw;
    }
  }
  return out;
}

inline void require_nonempty(const std::vector<Example>& train) {
  if (train.empty()) throw ConfigError("verbalizer construction needs a non-empty training split");
}

}  // namespace detail

/// Label-aware variant of a base template: "{LABEL} {CONJ} " inserted right
/// before the mask ("[x] It was [MASK]." -> "[x] It was [y] [conj] [MASK].").
inline Template label_aware_from_base(const Template& base) {
  if (base.family() != TemplateFamily::kBase) throw TemplateError("label_aware_from_base: not a base template");
  std::string spec;
  for (const auto& s : base.segments()) {
    switch (s.kind) {
      case SlotKind::kLiteral: spec += s.literal; break;
      case SlotKind::kText: spec += "{TEXT}"; break;
      case SlotKind::kMask: spec += "{LABEL} {CONJ} {MASK}"; break;
      default: break;
    }
  }
  return parse_template(spec);
}

/// Eq. 1 when `tmpl` is a base template, Eq. 4 when it is label-aware: column
/// y sums, over training examples of class y, the mask distribution of the
/// prompt rendered for that example (with y's own label word and `conj` for
/// label-aware templates).
inline ScoreMatrix score_matrix(const std::vector<Example>& train, const LabelSet& labels, const MaskedLm& backend,
                                const Template& tmpl, const std::optional<std::string>& conj = std::nullopt,
                                const ScoringOptions& opt = {}) {
  detail::require_nonempty(train);
  const bool label_aware = tmpl.family() == TemplateFamily::kLabelAware;
  if (tmpl.family() == TemplateFamily::kConjSearch) throw TemplateError("score_matrix: conjunction-search template");
  if (label_aware && tmpl.has(SlotKind::kConj) && (!conj || conj->empty())) {
    throw ConfigError("label-aware scoring needs a non-empty conjunction");
  }
  std::vector<PromptText> prompts;
  std::vector<std::size_t> cls, index;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto c = labels.require_index(train[i].label);
    std::optional<std::string> word, cj;
    if (label_aware) {
      word = labels.label_word(c);
      if (tmpl.has(SlotKind::kConj)) cj = conj;
    }
    prompts.push_back(render(tmpl, train[i].text, word, cj, opt.max_chars));
    cls.push_back(c);
    index.push_back(i);
  }
  const auto dist = detail::distributions_for(backend, prompts, index, opt.batch_size);
  ScoreMatrix m;
  m.scores = Eigen::MatrixXd::Zero(dist.cols(), static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    m.scores.col(static_cast<Eigen::Index>(cls[i])) += dist.row(static_cast<Eigen::Index>(i)).transpose();
  }
  m.provenance = label_aware ? "label_aware:" + conj.value_or("") : "base";
  return m;
}

/// Assigns every non-special token to argmax_y s(v, y) (ties: lower class
/// index), then keeps each class's top-k tokens by s(v, y) descending (ties:
/// lower token id). Classes may keep fewer than k tokens.
inline Verbalizer assign_and_topk(const Eigen::MatrixXd& scores, std::size_t k, const LabelSet& labels,
                                  const MaskedLm& backend) {
  if (k == 0) throw ConfigError("k must be at least 1");
  const auto& vocab = backend.vocabulary();
  if (static_cast<std::size_t>(scores.rows()) != vocab.size() ||
      static_cast<std::size_t>(scores.cols()) != labels.size()) {
    throw VerbalizerError("score matrix shape does not match vocabulary x classes");
  }
  std::vector<std::vector<TokenId>> members(labels.size());
  for (Eigen::Index v = 0; v < scores.rows(); ++v) {
    if (vocab.is_special(static_cast<TokenId>(v))) continue;
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c) {
      if (scores(v, c) > scores(v, best)) best = c;
    }
    members[static_cast<std::size_t>(best)].push_back(static_cast<TokenId>(v));
  }
  Verbalizer out;
  out.k = k;
  out.classes = labels.classes();
  out.tokens.resize(labels.size());
  for (std::size_t c = 0; c < labels.size(); ++c) {
    auto& ids = members[c];
    const auto col = static_cast<Eigen::Index>(c);
    std::stable_sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) {
      const double sa = scores(a, col), sb = scores(b, col);
      return sa != sb ? sa > sb : a < b;
    });
    const auto keep = std::min(k, ids.size());
    for (std::size_t i = 0; i < keep; ++i) {
      out.tokens[c].push_back({ids[i], backend.token_surface(ids[i]), scores(ids[i], col)});
    }
  }
  return out;
}

inline Verbalizer assign_and_topk(const ScoreMatrix& m, std::size_t k, const LabelSet& labels, const MaskedLm& backend) {
  return assign_and_topk(m.scores, k, labels, backend);
}

inline Verbalizer build_amulap(const std::vector<Example>& train, const LabelSet& labels, const Template& base,
                               const MaskedLm& backend, std::size_t k = kDefaultTopK, const ScoringOptions& opt = {}) {
  if (base.family() != TemplateFamily::kBase) throw TemplateError("amulap: expects a base template");
  auto v = assign_and_topk(score_matrix(train, labels, backend, base, std::nullopt, opt), k, labels, backend);
  v.method = "amulap";
  return v;
}

/// Scores tokens with the label-aware template, then assigns and truncates
/// like AMuLaP. The result is marked base-template-only.
inline Verbalizer build_laav(const std::vector<Example>& train, const LabelSet& labels, const Template& label_aware,
                             const MaskedLm& backend, std::size_t k = kDefaultTopK,
                             const std::string& conj = kDefaultConjunction, const ScoringOptions& opt = {}) {
  if (label_aware.family() != TemplateFamily::kLabelAware || !label_aware.has(SlotKind::kLabel)) {
    throw TemplateError("laav: expects a template with a {LABEL} slot and no {TOKEN} slot");
  }
  if (conj.empty()) throw ConfigError("laav: conjunction must be non-empty");
  auto v = assign_and_topk(score_matrix(train, labels, backend, label_aware, conj, opt), k, labels, backend);
  v.method = "laav";
  v.conj = conj;
  v.base_template_only = true;
  return v;
}

/// One token per class: the label word itself, which must be a single token.
inline Verbalizer build_pet(const LabelSet& labels, const MaskedLm& backend) {
  Verbalizer out;
  out.method = "pet";
  out.k = 1;
  out.classes = labels.classes();
  std::set<TokenId> used;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    const auto& word = labels.label_word(c);
    const auto ids = backend.tokenize_label(word);
    if (ids.size() != 1) {
      throw ApplicabilityError("pet: label word '" + word + "' is " + std::to_string(ids.size()) +
                               " tokens; PET needs a single token");
    }
    if (!used.insert(ids.front()).second) {
      throw DisjointnessError("pet: label word '" + word + "' maps to a token already used by another class");
    }
    out.tokens.push_back({{ids.front(), backend.token_surface(ids.front()), 1.0}});
  }
  return out;
}

/// Log-likelihood matrix for PETAL: sum over a class's training examples of
/// log max(p, 1e-12).
inline ScoreMatrix petal_loglik_matrix(const std::vector<Example>& train, const LabelSet& labels,
                                       const Template& base, const MaskedLm& backend, const ScoringOptions& opt = {}) {
  detail::require_nonempty(train);
  std::vector<PromptText> prompts;
  std::vector<std::size_t> cls, index;
  for (std::size_t i = 0; i < train.size(); ++i) {
    cls.push_back(labels.require_index(train[i].label));
    prompts.push_back(render(base, train[i].text, std::nullopt, std::nullopt, opt.max_chars));
    index.push_back(i);
  }
  const auto dist = detail::distributions_for(backend, prompts, index, opt.batch_size);
  ScoreMatrix m;
  m.provenance = "petal_loglik";
  m.scores = Eigen::MatrixXd::Zero(dist.cols(), static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    for (Eigen::Index v = 0; v < dist.cols(); ++v) {
      m.scores(v, static_cast<Eigen::Index>(cls[i])) += std::log(std::max(dist(static_cast<Eigen::Index>(i), v), kProbabilityFloor));
    }
  }
  return m;
}

/// Single most likely token per class under the base template, after
/// disjoint argmax assignment of the log-likelihood scores.
inline Verbalizer build_petal(const std::vector<Example>& train, const LabelSet& labels, const Template& base,
                              const MaskedLm& backend, const ScoringOptions& opt = {}) {
  if (base.family() != TemplateFamily::kBase) throw TemplateError("petal: expects a base template");
  auto v = assign_and_topk(petal_loglik_matrix(train, labels, base, backend, opt), 1, labels, backend);
  v.method = "petal";
  return v;
}

/// Cosine similarity of every token embedding to each class anchor (mean of
/// the label word's token embeddings).
inline ScoreMatrix cosine_matrix(const LabelSet& labels, const MaskedLm& backend) {
  if (!backend.capabilities().has_embeddings) {
    throw CapabilityError("npprompt: backend '" + backend.name() + "' exposes no embeddings");
  }
  const auto emb = backend.embeddings();
  Eigen::VectorXd norms = emb.rowwise().norm();
  ScoreMatrix m;
  m.provenance = "cosine";
  m.scores = Eigen::MatrixXd::Zero(emb.rows(), static_cast<Eigen::Index>(labels.size()));
  for (std::size_t c = 0; c < labels.size(); ++c) {
    const auto ids = backend.tokenize_label(labels.label_word(c));
    if (ids.empty()) throw ApplicabilityError("npprompt: label word '" + labels.label_word(c) + "' has no tokens");
    Eigen::RowVectorXd anchor = Eigen::RowVectorXd::Zero(emb.cols());
    for (auto id : ids) anchor += emb.row(id);
    anchor /= static_cast<double>(ids.size());
    const double an = anchor.norm();
    for (Eigen::Index v = 0; v < emb.rows(); ++v) {
      const double denom = norms(v) * an;
      m.scores(v, static_cast<Eigen::Index>(c)) = denom > 0.0 ? emb.row(v).dot(anchor) / denom : 0.0;
    }
  }
  return m;
}

inline Verbalizer build_npprompt(const LabelSet& labels, const MaskedLm& backend, std::size_t k = kDefaultTopK) {
  auto v = assign_and_topk(cosine_matrix(labels, backend), k, labels, backend);
  v.method = "npprompt";
  return v;
}

/// Checks the structural invariants against a backend vocabulary: class
/// list, ids in range, at most k per class, score-descending order with
/// lower-id tie-break, pairwise disjoint classes.
inline void validate(const Verbalizer& v, const LabelSet& labels, const Vocabulary& vocab) {
  if (v.classes != labels.classes()) throw VerbalizerError("verbalizer classes differ from the label set");
  if (v.tokens.size() != v.classes.size()) throw VerbalizerError("verbalizer: one token list per class expected");
  if (v.k == 0) throw VerbalizerError("verbalizer: k must be positive");
  std::set<TokenId> seen;
  for (std::size_t c = 0; c < v.tokens.size(); ++c) {
    const auto& list = v.tokens[c];
    if (list.size() > v.k) throw VerbalizerError("verbalizer: class '" + v.classes[c] + "' has more than k tokens");
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (!vocab.contains(list[i].id)) {
        throw VerbalizerError("verbalizer: token id " + std::to_string(list[i].id) + " outside the vocabulary");
      }
      if (!seen.insert(list[i].id).second) {
        throw DisjointnessError("verbalizer: token '" + list[i].token + "' is assigned to more than one class");
      }
      if (i > 0) {
        const auto& a = list[i - 1];
        const auto& b = list[i];
        if (a.score < b.score || (a.score == b.score && a.id > b.id)) {
          throw VerbalizerError("verbalizer: class '" + v.classes[c] + "' is not sorted by score");
        }
      }
    }
  }
}

inline nlohmann::ordered_json to_json(const Verbalizer& v) {
  nlohmann::ordered_json j;
  j["method"] = v.method;
  j["k"] = v.k;
  if (v.conj) j["conj"] = *v.conj;
  j["base_template_only"] = v.base_template_only;
  nlohmann::ordered_json classes = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < v.classes.size(); ++c) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& t : v.tokens[c]) arr.push_back({{"token", t.token}, {"token_id", t.id}, {"score", t.score}});
    classes[v.classes[c]] = arr;
  }
  j["classes"] = classes;
  return j;
}

/// Parses a serialized verbalizer and re-validates it against `labels` and
/// the backend vocabulary.
inline Verbalizer verbalizer_from_json(const nlohmann::ordered_json& j, const LabelSet& labels, const Vocabulary& vocab) {
  Verbalizer v;
  try {
    v.method = j.at("method").get<std::string>();
    v.k = j.at("k").get<std::size_t>();
    if (j.contains("conj")) v.conj = j.at("conj").get<std::string>();
    v.base_template_only = j.value("base_template_only", v.method == "laav");
    for (const auto& [cls, arr] : j.at("classes").items()) {
      v.classes.push_back(cls);
      auto& list = v.tokens.emplace_back();
      for (const auto& t : arr) {
        list.push_back({t.at("token_id").get<TokenId>(), t.at("token").get<std::string>(), t.at("score").get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("verbalizer JSON: ") + e.what());
  }
  validate(v, labels, vocab);
  for (std::size_t c = 0; c < v.tokens.size(); ++c) {
    for (const auto& t : v.tokens[c]) {
      if (vocab.token(t.id) != t.token && vocab.id_of(t.token) != t.id) {
        // Surface forms may differ from raw vocabulary entries (e.g. "##"
        // pieces); ids are authoritative, so only flag clear mismatches.
        const auto& raw = vocab.token(t.id);
        if (raw.size() < t.token.size() || raw.compare(raw.size() - t.token.size(), t.token.size(), t.token) != 0) {
          throw VerbalizerError("verbalizer: token '" + t.token + "' does not match vocabulary id " +
                                std::to_string(t.id));
        }
      }
    }
  }
  return v;
}

}  // namespace laav
