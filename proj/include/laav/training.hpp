#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "laav/backend.hpp"
#include "laav/corpus.hpp"
#include "laav/error.hpp"
#include "laav/random.hpp"
#include "laav/templating.hpp"
#include "laav/verbalizers.hpp"

namespace laav {

struct TrainConfig {
  double learning_rate = 1e-5;
  int max_epochs = 100;
  int patience = 10;
  std::size_t batch_size = kDefaultBatchSize;
  std::uint64_t seed = 13;
  std::size_t max_chars = kDefaultMaxChars;
  std::size_t k = kDefaultTopK;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    if (max_epochs <= 0) throw ConfigError("train.max_epochs must be positive");
    if (patience <= 0) throw ConfigError("train.patience must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (max_chars == 0) throw ConfigError("train.max_chars must be positive");
    if (k == 0) throw ConfigError("k must be positive");
  }

  [[nodiscard]] OptimizerSettings optimizer() const {
    return {learning_rate, adam_beta1, adam_beta2, adam_epsilon, weight_decay};
  }
};

// -------------------------------------------------------------------------
// Classification math

/// L(y|x) for every class: mean of log max(p_v, 1e-12) over the class's
/// verbalizer tokens. The divisor is the actual list length.
inline std::vector<double> class_scores(std::span<const double> row, const Verbalizer& v) {
  std::vector<double> out(v.tokens.size());
  for (std::size_t c = 0; c < v.tokens.size(); ++c) {
    const auto& list = v.tokens[c];
    if (list.empty()) throw VerbalizerError("verbalizer: class '" + v.classes[c] + "' has no tokens");
    double s = 0.0;
    for (const auto& t : list) {
      if (t.id < 0 || static_cast<std::size_t>(t.id) >= row.size()) throw VerbalizerError("verbalizer: token id out of range");
      s += std::log(std::max(row[static_cast<std::size_t>(t.id)], kProbabilityFloor));
    }
    out[c] = s / static_cast<double>(list.size());
  }
  return out;
}

/// First index of the maximum.
inline std::size_t argmax(std::span<const double> xs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i] > xs[best]) best = i;
  }
  return best;
}

inline std::size_t predict(std::span<const double> row, const Verbalizer& v) { return argmax(class_scores(row, v)); }

inline std::span<const double> row_span(const RowMatrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

/// -sum over the batch of L(gold | x).
inline double training_loss(const RowMatrix& rows, std::span<const std::size_t> gold, const Verbalizer& v) {
  if (static_cast<std::size_t>(rows.rows()) != gold.size()) throw TrainingError("training_loss: rows and labels differ in length");
  double loss = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= v.tokens.size()) throw LabelError("training_loss: gold class index " + std::to_string(gold[i]) + " unknown");
    loss -= class_scores(row_span(rows, static_cast<Eigen::Index>(i)), v)[gold[i]];
  }
  return loss;
}

// -------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  std::string method;
  int shots = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> classes;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  /// confusion[gold][predicted]
  std::vector<std::vector<std::size_t>> confusion;
};

/// Per-class F1 = 2TP / (2TP + FP + FN); an undefined F1 (no predicted and no
/// actual positives) counts as 0. Macro-F1 is the unweighted mean.
inline EvalReport make_report(std::span<const std::size_t> gold, std::span<const std::size_t> predicted,
                              const std::vector<std::string>& classes) {
  if (gold.size() != predicted.size()) throw TrainingError("make_report: length mismatch");
  const auto n = classes.size();
  EvalReport r;
  r.classes = classes;
  r.confusion.assign(n, std::vector<std::size_t>(n, 0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= n || predicted[i] >= n) throw LabelError("make_report: class index out of range");
    ++r.confusion[gold[i]][predicted[i]];
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t tp = r.confusion[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < n; ++o) {
      if (o == c) continue;
      fp += r.confusion[o][c];
      fn += r.confusion[c][o];
    }
    const auto denom = 2 * tp + fp + fn;
    const double f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class_f1.push_back(f1);
    sum += f1;
  }
  r.macro_f1 = n ? sum / static_cast<double>(n) : 0.0;
  return r;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < r.classes.size(); ++c) per_class[r.classes[c]] = r.per_class_f1[c];
  return {{"method", r.method}, {"shots", r.shots}, {"seed", r.seed},   {"classes", r.classes},
          {"macro_f1", r.macro_f1}, {"per_class_f1", per_class}, {"confusion", r.confusion}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.method = j.at("method").get<std::string>();
    r.shots = j.at("shots").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.classes = j.at("classes").get<std::vector<std::string>>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    for (const auto& c : r.classes) r.per_class_f1.push_back(j.at("per_class_f1").at(c).get<double>());
    r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval report JSON: ") + e.what());
  }
}

inline std::vector<std::size_t> gold_indices(const std::vector<Example>& examples, const LabelSet& labels) {
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(labels.require_index(e.label));
  return out;
}

inline std::vector<PromptText> render_all(const std::vector<Example>& examples, const Template& base, std::size_t max_chars) {
  if (base.family() != TemplateFamily::kBase) {
    throw TemplateError("training and inference prompts must use the base template (no label or conjunction slots)");
  }
  std::vector<PromptText> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(render(base, e.text, std::nullopt, std::nullopt, max_chars));
  return out;
}

/// Verbalizer predictions for `examples` under the base template.
inline std::vector<std::size_t> predict_all(const std::vector<Example>& examples, const Verbalizer& v,
                                            const Template& base, const MaskedLm& backend,
                                            const ScoringOptions& opt = {}) {
  const auto prompts = render_all(examples, base, opt.max_chars);
  std::vector<std::size_t> idx(prompts.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto dist = detail::distributions_for(backend, prompts, idx, opt.batch_size);
  std::vector<std::size_t> out;
  out.reserve(prompts.size());
  for (Eigen::Index i = 0; i < dist.rows(); ++i) out.push_back(predict(row_span(dist, i), v));
  return out;
}

inline EvalReport evaluate(const std::vector<Example>& test, const Verbalizer& v, const Template& base,
                           const MaskedLm& backend, const LabelSet& labels, const ScoringOptions& opt = {}) {
  validate(v, labels, backend.vocabulary());
  auto r = make_report(gold_indices(test, labels), predict_all(test, v, base, backend, opt), labels.classes());
  r.method = v.method;
  return r;
}

/// Restores `checkpoint` into `backend`, then evaluates.
inline EvalReport evaluate(const Checkpoint& checkpoint, const std::vector<Example>& test, const Verbalizer& v,
                           const Template& base, MaskedLm& backend, const LabelSet& labels,
                           const ScoringOptions& opt = {}) {
  backend.restore(checkpoint);
  return evaluate(test, v, base, backend, labels, opt);
}

inline std::vector<std::size_t> classifier_predict_all(const std::vector<Example>& examples, const MaskedLm& backend,
                                                       std::size_t max_chars, std::size_t batch_size) {
  std::vector<std::size_t> out;
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    std::vector<std::string> texts;
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) {
      texts.push_back(text::utf8_prefix(examples[i].text, max_chars));
    }
    const auto logits = backend.classifier_logits(texts);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) out.push_back(argmax(row_span(logits, r)));
  }
  return out;
}

inline EvalReport evaluate_classifier(const std::vector<Example>& test, const MaskedLm& backend,
                                      const LabelSet& labels, std::size_t max_chars = kDefaultMaxChars,
                                      std::size_t batch_size = kDefaultBatchSize) {
  auto r = make_report(gold_indices(test, labels), classifier_predict_all(test, backend, max_chars, batch_size),
                       labels.classes());
  r.method = "traditional_ft";
  return r;
}

// -------------------------------------------------------------------------
// Fine-tuning

/// Patience-based early stopping on a score where higher is better. Only a
/// strict improvement resets the counter.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Returns true when `score` is a new best.
  bool observe(int epoch, double score) {
    if (!best_ || score > *best_) {
      best_ = score;
      best_epoch_ = epoch;
      since_best_ = 0;
      return true;
    }
    ++since_best_;
    return false;
  }

  [[nodiscard]] bool should_stop() const { return since_best_ >= patience_; }
  [[nodiscard]] int best_epoch() const { return best_epoch_; }
  [[nodiscard]] double best_score() const { return best_.value_or(-std::numeric_limits<double>::infinity()); }

 private:
  int patience_;
  std::optional<double> best_;
  int best_epoch_ = 0;
  int since_best_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  /// Mean training loss per example; absent for epoch 0 (before training).
  std::optional<double> train_loss;
  double val_macro_f1 = 0.0;
};

struct FineTuneResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_macro_f1 = 0.0;
};

inline std::string history_jsonl(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& h : history) {
    nlohmann::ordered_json j;
    j["epoch"] = h.epoch;
    j["train_loss"] = h.train_loss ? nlohmann::ordered_json(*h.train_loss) : nlohmann::ordered_json(nullptr);
    j["val_macro_f1"] = h.val_macro_f1;
    out += j.dump() + "\n";
  }
  return out;
}

namespace detail {

/// Shared epoch loop: seeded shuffle, batched steps, validation, early
/// stopping with best-checkpoint retention. Leaves `backend` holding the best
/// checkpoint.
inline FineTuneResult run_training_loop(std::size_t train_size, MaskedLm& backend, const TrainConfig& cfg,
                                        const std::function<double(std::span<const std::size_t>)>& step,
                                        const std::function<double()>& validate_f1) {
  FineTuneResult result;
  result.history.push_back({0, std::nullopt, validate_f1()});
  EarlyStopping stopper(cfg.patience);
  rng::Engine eng(rng::derive_seed(cfg.seed, "fine_tune/shuffle"));
  std::vector<std::size_t> order(train_size);
  for (std::size_t i = 0; i < train_size; ++i) order[i] = i;
  std::optional<Checkpoint> best;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng::shuffle(std::span<std::size_t>(order), eng);
    double loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto n = std::min(cfg.batch_size, order.size() - start);
      const double l = step(std::span<const std::size_t>(order.data() + start, n));
      if (!std::isfinite(l)) {
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                            std::to_string(start) + " (lr " + std::to_string(cfg.learning_rate) + ")");
      }
      loss += l;
    }
    const double f1 = validate_f1();
    result.history.push_back({epoch, loss / static_cast<double>(std::max<std::size_t>(train_size, 1)), f1});
    if (stopper.observe(epoch, f1)) best = backend.snapshot();
    if (stopper.should_stop()) break;
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_macro_f1 = stopper.best_score();
  result.checkpoint = std::move(*best);
  backend.restore(result.checkpoint);
  return result;
}

}  // namespace detail

/// Fine-tunes `backend` on the verbalizer loss with the base template.
inline FineTuneResult fine_tune(const FewShotSplit& split, const Verbalizer& v, const Template& base,
                                MaskedLm& backend, const LabelSet& labels, const TrainConfig& cfg) {
  cfg.validate();
  if (!backend.capabilities().trainable) throw CapabilityError("fine_tune: backend '" + backend.name() + "' is not trainable");
  validate(v, labels, backend.vocabulary());
  if (split.train.empty() || split.validation.empty()) throw ConfigError("fine_tune: empty train or validation split");
  for (const auto& list : v.tokens) {
    if (list.empty()) throw VerbalizerError("fine_tune: verbalizer has a class without tokens");
  }
  // Label-aware verbalizers were scored with [y] [conj]; training never sees
  // them. render_all rejects any template with label or conjunction slots.
  const auto prompts = render_all(split.train, base, cfg.max_chars);
  const auto gold = gold_indices(split.train, labels);
  const ScoringOptions opt{cfg.batch_size, cfg.max_chars};

  backend.configure_optimizer(cfg.optimizer(), cfg.seed);
  auto step = [&](std::span<const std::size_t> batch) {
    std::vector<PromptText> p;
    VerbalizerLoss loss;
    for (auto i : batch) {
      p.push_back(prompts[i]);
      std::vector<TokenId> ids;
      for (const auto& t : v.tokens[gold[i]]) ids.push_back(t.id);
      loss.targets.push_back(std::move(ids));
    }
    return backend.train_step(p, loss);
  };
  auto val = [&] { return evaluate(split.validation, v, base, backend, labels, opt).macro_f1; };
  return detail::run_training_loop(split.train.size(), backend, cfg, step, val);
}

/// Baseline: linear head over [CLS], standard cross-entropy, plain
/// (truncated) input text.
inline FineTuneResult traditional_ft(const FewShotSplit& split, MaskedLm& backend, const LabelSet& labels,
                                     const TrainConfig& cfg) {
  cfg.validate();
  if (!backend.capabilities().has_cls_head) {
    throw CapabilityError("traditional_ft: backend '" + backend.name() + "' has no classification head");
  }
  if (split.train.empty() || split.validation.empty()) throw ConfigError("traditional_ft: empty train or validation split");
  std::vector<std::string> texts;
  for (const auto& e : split.train) texts.push_back(text::utf8_prefix(e.text, cfg.max_chars));
  const auto gold = gold_indices(split.train, labels);

  backend.configure_optimizer(cfg.optimizer(), cfg.seed);
  backend.init_classifier_head(labels.size(), rng::derive_seed(cfg.seed, "classifier_head"));
  auto step = [&](std::span<const std::size_t> batch) {
    std::vector<std::string> t;
    ClassifierLoss loss;
    for (auto i : batch) {
      t.push_back(texts[i]);
      loss.labels.push_back(gold[i]);
    }
    return backend.train_classifier_step(t, loss);
  };
  auto val = [&] {
    return evaluate_classifier(split.validation, backend, labels, cfg.max_chars, cfg.batch_size).macro_f1;
  };
  return detail::run_training_loop(split.train.size(), backend, cfg, step, val);
}

}  // namespace laav
