#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "laav/backend.hpp"

namespace laav {

/// Table-driven masked LM for oracle tests.
///
/// Every prompt the pipeline renders must have an entry, keyed by the exact
/// rendered string (mask marker included). An entry holds a probability row,
/// a logit row, or both. Missing pieces are derived: probabilities are the
/// softmax of logits, and logits are log-probabilities (zeros floored at
/// 1e-300). Training is a no-op that reports the loss.
///
/// JSON form:
///   {"vocab": [...], "special_tokens": [...],
///    "probabilities": {"<prompt>": [...]}, "logits": {"<prompt>": [...]},
///    "embeddings": [[...], ...], "max_prompt_chars": N}
class MockMaskedLm final : public MaskedLm {
 public:
  MockMaskedLm(std::vector<std::string> vocab, const std::vector<std::string>& special_tokens = {})
      : vocab_(std::move(vocab), special_tokens) {}

  static MockMaskedLm from_json(const nlohmann::json& j) {
    if (!j.contains("vocab")) throw BackendError("mock table: missing \"vocab\"");
    MockMaskedLm m(j.at("vocab").get<std::vector<std::string>>(),
                   j.value("special_tokens", std::vector<std::string>{}));
    if (j.contains("probabilities")) {
      for (const auto& [prompt, row] : j.at("probabilities").items()) {
        m.set_probabilities(prompt, row.get<std::vector<double>>());
      }
    }
    if (j.contains("logits")) {
      for (const auto& [prompt, row] : j.at("logits").items()) m.set_logits(prompt, row.get<std::vector<double>>());
    }
    if (j.contains("embeddings")) {
      const auto rows = j.at("embeddings").get<std::vector<std::vector<double>>>();
      if (rows.empty()) throw BackendError("mock table: empty embeddings");
      RowMatrix e(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows.front().size()) throw BackendError("mock table: ragged embeddings");
        for (std::size_t c = 0; c < rows[r].size(); ++c) e(r, c) = rows[r][c];
      }
      m.set_embeddings(e);
    }
    if (j.contains("max_prompt_chars")) m.max_prompt_chars_ = j.at("max_prompt_chars").get<std::size_t>();
    return m;
  }

  static MockMaskedLm load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw BackendError("cannot open mock table " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw BackendError("mock table " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j;
    j["vocab"] = vocab_.tokens();
    j["special_tokens"] = vocab_.special_tokens();
    auto probs = nlohmann::json::object();
    auto logits = nlohmann::json::object();
    for (const auto& [prompt, e] : table_) {
      if (e.probabilities) probs[prompt] = *e.probabilities;
      if (e.logits) logits[prompt] = *e.logits;
    }
    j["probabilities"] = probs;
    j["logits"] = logits;
    if (embeddings_) {
      auto rows = nlohmann::json::array();
      for (Eigen::Index r = 0; r < embeddings_->rows(); ++r) {
        rows.push_back(std::vector<double>(embeddings_->row(r).data(), embeddings_->row(r).data() + embeddings_->cols()));
      }
      j["embeddings"] = rows;
    }
    if (max_prompt_chars_) j["max_prompt_chars"] = *max_prompt_chars_;
    return j;
  }

  void set_probabilities(const std::string& prompt, std::vector<double> row) {
    check_row(prompt, row);
    for (double p : row) {
      if (!(p >= 0.0)) throw BackendError("mock table: negative probability for '" + prompt + "'");
    }
    table_[prompt].probabilities = std::move(row);
  }

  void set_logits(const std::string& prompt, std::vector<double> row) {
    check_row(prompt, row);
    table_[prompt].logits = std::move(row);
  }

  void set_embeddings(RowMatrix e) {
    if (static_cast<std::size_t>(e.rows()) != vocab_.size()) {
      throw BackendError("mock table: embedding rows differ from vocabulary size");
    }
    embeddings_ = std::move(e);
  }

  void set_max_prompt_chars(std::size_t n) { max_prompt_chars_ = n; }

  [[nodiscard]] std::string name() const override { return "mock"; }
  [[nodiscard]] const Vocabulary& vocabulary() const override { return vocab_; }
  [[nodiscard]] Capabilities capabilities() const override {
    return {.has_embeddings = embeddings_.has_value(), .has_cls_head = false, .trainable = true};
  }

  [[nodiscard]] RowMatrix mask_logits(std::span<const PromptText> prompts) const override {
    RowMatrix out(static_cast<Eigen::Index>(prompts.size()), static_cast<Eigen::Index>(vocab_.size()));
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto& e = entry(prompts[i]);
      for (std::size_t v = 0; v < vocab_.size(); ++v) {
        out(i, v) = e.logits ? (*e.logits)[v] : std::log(std::max((*e.probabilities)[v], 1e-300));
      }
    }
    return out;
  }

  [[nodiscard]] RowMatrix mask_distribution(std::span<const PromptText> prompts) const override {
    RowMatrix out(static_cast<Eigen::Index>(prompts.size()), static_cast<Eigen::Index>(vocab_.size()));
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto& e = entry(prompts[i]);
      if (e.probabilities) {
        for (std::size_t v = 0; v < vocab_.size(); ++v) out(i, v) = (*e.probabilities)[v];
      } else {
        RowMatrix l(1, out.cols());
        for (std::size_t v = 0; v < vocab_.size(); ++v) l(0, v) = (*e.logits)[v];
        out.row(i) = softmax_rows(l).row(0);
      }
    }
    return out;
  }

  /// Whole-word lookup first, then greedy longest-match with "##" pieces.
  [[nodiscard]] std::vector<TokenId> tokenize_label(const std::string& word) const override {
    if (word.empty()) throw BackendError("tokenize_label: empty word");
    if (auto id = vocab_.id_of(word)) return {*id};
    std::vector<TokenId> out;
    std::size_t start = 0;
    while (start < word.size()) {
      std::optional<TokenId> hit;
      std::size_t end = word.size();
      for (; end > start; --end) {
        auto piece = word.substr(start, end - start);
        if (start > 0) piece = "##" + piece;
        if ((hit = vocab_.id_of(piece))) break;
      }
      if (!hit) throw BackendError("tokenize_label: '" + word + "' cannot be tokenized by the mock vocabulary");
      out.push_back(*hit);
      start = end;
    }
    return out;
  }

  [[nodiscard]] RowMatrix embeddings() const override {
    if (!embeddings_) return MaskedLm::embeddings();
    return *embeddings_;
  }

  double train_step(std::span<const PromptText> prompts, const VerbalizerLoss& loss) override {
    validate_targets(loss, prompts.size());
    const auto dist = mask_distribution(prompts);
    double total = 0.0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      double s = 0.0;
      for (auto id : loss.targets[i]) s += std::log(std::max(dist(i, id), 1e-12));
      total -= s / static_cast<double>(loss.targets[i].size());
    }
    return total;
  }

  [[nodiscard]] Checkpoint snapshot() const override { return {name(), std::string(kMagic) + to_json().dump()}; }

  void restore(const Checkpoint& c) override {
    if (c.backend != name() || c.bytes.rfind(kMagic, 0) != 0) throw RestoreError("mock: not a mock checkpoint");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(c.bytes.substr(kMagic.size()));
    } catch (const nlohmann::json::exception& e) {
      throw RestoreError(std::string("mock: corrupted checkpoint (") + e.what() + ")");
    }
    *this = from_json(j);
  }

 private:
  static constexpr std::string_view kMagic = "LAAV-MOCK-1\n";

  struct Entry {
    std::optional<std::vector<double>> probabilities;
    std::optional<std::vector<double>> logits;
  };

  void check_row(const std::string& prompt, const std::vector<double>& row) const {
    if (row.size() != vocab_.size()) {
      throw BackendError("mock table: row for '" + prompt + "' has " + std::to_string(row.size()) +
                         " entries, vocabulary has " + std::to_string(vocab_.size()));
    }
    for (double x : row) {
      if (!std::isfinite(x)) throw BackendError("mock table: non-finite value for '" + prompt + "'");
    }
  }

  const Entry& entry(const PromptText& p) const {
    if (text::count_occurrences(p.rendered, kMaskMarker) != 1) {
      throw BackendError("mock: prompt must contain exactly one mask marker: '" + p.rendered + "'");
    }
    if (max_prompt_chars_ && text::utf8_length(p.rendered) > *max_prompt_chars_) {
      throw LengthError("mock: prompt longer than " + std::to_string(*max_prompt_chars_) + " characters");
    }
    auto it = table_.find(p.rendered);
    if (it == table_.end()) throw BackendError("mock: no table entry for prompt '" + p.rendered + "'");
    return it->second;
  }

  Vocabulary vocab_;
  std::map<std::string, Entry> table_;
  std::optional<RowMatrix> embeddings_;
  std::optional<std::size_t> max_prompt_chars_;
};

}  // namespace laav
