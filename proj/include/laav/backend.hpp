#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "laav/error.hpp"
#include "laav/templating.hpp"

namespace laav {

using TokenId = std::int32_t;

/// One row per prompt, one column per vocabulary entry.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Token-id <-> surface-string table. Immutable once built.
class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> tokens, const std::vector<std::string>& special = {})
      : tokens_(std::move(tokens)), special_(tokens_.size(), false) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
        throw BackendError("vocabulary: duplicate token '" + tokens_[i] + "'");
      }
    }
    for (const auto& s : special) {
      auto id = id_of(s);
      if (!id) throw BackendError("vocabulary: special token '" + s + "' not in vocabulary");
      special_[static_cast<std::size_t>(*id)] = true;
    }
  }

  [[nodiscard]] std::size_t size() const { return tokens_.size(); }
  [[nodiscard]] bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }
  [[nodiscard]] const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }
  [[nodiscard]] bool is_special(TokenId id) const { return special_.at(static_cast<std::size_t>(id)); }

  [[nodiscard]] std::optional<TokenId> id_of(const std::string& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] std::vector<std::string> special_tokens() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (special_[i]) out.push_back(tokens_[i]);
    }
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<bool> special_;
  std::map<std::string, TokenId> index_;
};

struct Capabilities {
  bool has_embeddings = false;
  bool has_cls_head = false;
  bool trainable = false;
};

/// Per prompt, the verbalizer tokens of its gold class. The loss of a prompt
/// is minus the mean log-probability of those tokens at the mask.
struct VerbalizerLoss {
  std::vector<std::vector<TokenId>> targets;
};

struct ClassifierLoss {
  std::vector<std::size_t> labels;
};

struct OptimizerSettings {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

/// Opaque backend state. The bytes are owned by the backend that produced
/// them; the toolkit only stores and moves them around.
struct Checkpoint {
  std::string backend;
  std::string bytes;

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw BackendError("cannot write checkpoint " + path.string());
    out << backend << '\n';
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RestoreError("cannot open checkpoint " + path.string());
    Checkpoint c;
    if (!std::getline(in, c.backend)) throw RestoreError("checkpoint " + path.string() + " is empty");
    c.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return c;
  }
};

inline RowMatrix softmax_rows(const RowMatrix& logits) {
  RowMatrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

/// Masked language model contract.
///
/// Inference methods are const and must be safe to call concurrently.
/// Mutating methods (train_*, restore, configure_optimizer) require exclusive
/// access to the handle.
class MaskedLm {
 public:
  virtual ~MaskedLm() = default;

  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual const Vocabulary& vocabulary() const = 0;
  [[nodiscard]] virtual Capabilities capabilities() const = 0;

  /// Raw scores at the mask position, one row per prompt in input order.
  [[nodiscard]] virtual RowMatrix mask_logits(std::span<const PromptText> prompts) const = 0;

  /// p_M([MASK] = v | prompt); rows sum to one.
  [[nodiscard]] virtual RowMatrix mask_distribution(std::span<const PromptText> prompts) const {
    return softmax_rows(mask_logits(prompts));
  }

  /// Tokenization of `word` as it would appear in a mask slot. Multi-token
  /// results are valid; callers decide whether they are acceptable.
  [[nodiscard]] virtual std::vector<TokenId> tokenize_label(const std::string& word) const = 0;

  /// Human-readable form of a vocabulary entry (e.g. subword markers removed).
  [[nodiscard]] virtual std::string token_surface(TokenId id) const { return vocabulary().token(id); }

  /// Copy of the input embedding matrix, |V| x d.
  [[nodiscard]] virtual RowMatrix embeddings() const {
    throw CapabilityError(name() + ": backend exposes no embeddings");
  }

  /// Resets optimizer state and seeds any training-time randomness.
  virtual void configure_optimizer(const OptimizerSettings& /*settings*/, std::uint64_t /*seed*/) {
    require_trainable();
  }

  /// One optimizer step on the verbalizer loss. Returns the pre-step loss,
  /// summed over the batch.
  virtual double train_step(std::span<const PromptText> prompts, const VerbalizerLoss& loss) = 0;

  /// Attaches a fresh linear head over the [CLS] representation.
  virtual void init_classifier_head(std::size_t /*num_classes*/, std::uint64_t /*seed*/) {
    throw CapabilityError(name() + ": backend has no classification head");
  }
  [[nodiscard]] virtual RowMatrix classifier_logits(std::span<const std::string> /*texts*/) const {
    throw CapabilityError(name() + ": backend has no classification head");
  }
  virtual double train_classifier_step(std::span<const std::string> /*texts*/, const ClassifierLoss& /*loss*/) {
    throw CapabilityError(name() + ": backend has no classification head");
  }

  [[nodiscard]] virtual Checkpoint snapshot() const = 0;
  virtual void restore(const Checkpoint& checkpoint) = 0;

 protected:
  void require_trainable() const {
    if (!capabilities().trainable) throw CapabilityError(name() + ": backend is not trainable");
  }

  void validate_targets(const VerbalizerLoss& loss, std::size_t prompts) const {
    if (loss.targets.size() != prompts) throw BackendError("loss spec: target count differs from prompt count");
    for (const auto& set : loss.targets) {
      if (set.empty()) throw BackendError("loss spec: empty target token set");
      for (auto id : set) {
        if (!vocabulary().contains(id)) {
          throw BackendError("loss spec: token id " + std::to_string(id) + " outside the vocabulary");
        }
      }
    }
  }
};

}  // namespace laav
