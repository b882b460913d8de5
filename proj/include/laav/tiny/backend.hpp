#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "laav/backend.hpp"
#include "laav/random.hpp"
#include "laav/tiny/encoder.hpp"
#include "laav/tiny/tokenizer.hpp"

namespace laav::tiny {

/// In-process masked LM: WordPiece tokenizer plus the compact encoder.
///
/// Everything runs single-threaded in float32 with no dropout, so inference
/// and training are bitwise reproducible for a given seed on one machine.
class TinyMaskedLm final : public MaskedLm {
 public:
  using Model = Encoder<float>;

  TinyMaskedLm(WordPieceTokenizer tokenizer, EncoderConfig cfg, std::uint64_t seed)
      : tokenizer_(std::move(tokenizer)) {
    cfg.vocab_size = tokenizer_.vocabulary().size();
    model_ = Model(cfg, seed);
  }

  static TinyMaskedLm from_checkpoint(const Checkpoint& c) {
    TinyMaskedLm m;
    m.restore(c);
    return m;
  }

  static TinyMaskedLm load(const std::filesystem::path& path) { return from_checkpoint(Checkpoint::load(path)); }

  [[nodiscard]] std::string name() const override { return "tiny"; }
  [[nodiscard]] const Vocabulary& vocabulary() const override { return tokenizer_.vocabulary(); }
  [[nodiscard]] Capabilities capabilities() const override {
    return {.has_embeddings = true, .has_cls_head = true, .trainable = true};
  }

  [[nodiscard]] const WordPieceTokenizer& tokenizer() const { return tokenizer_; }
  [[nodiscard]] Model& model() { return model_; }
  [[nodiscard]] const Model& model() const { return model_; }

  [[nodiscard]] RowMatrix mask_logits(std::span<const PromptText> prompts) const override {
    RowMatrix out(static_cast<Eigen::Index>(prompts.size()), static_cast<Eigen::Index>(vocabulary().size()));
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto enc = tokenizer_.encode_prompt(prompts[i]);
      out.row(static_cast<Eigen::Index>(i)) = model_.mask_logits(enc.ids, enc.mask_position).cast<double>();
    }
    return out;
  }

  [[nodiscard]] std::vector<TokenId> tokenize_label(const std::string& word) const override {
    if (word.empty()) throw BackendError("tokenize_label: empty word");
    return tokenizer_.encode_words(word);
  }

  [[nodiscard]] std::string token_surface(TokenId id) const override { return tokenizer_.surface(id); }

  [[nodiscard]] RowMatrix embeddings() const override { return model_.params()[Model::kTokEmb].cast<double>(); }

  void configure_optimizer(const OptimizerSettings& settings, std::uint64_t /*seed*/) override {
    adam_ = Adam<float>(settings);
  }

  double train_step(std::span<const PromptText> prompts, const VerbalizerLoss& loss) override {
    validate_targets(loss, prompts.size());
    auto grads = model_.zero_grads();
    double total = 0.0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto enc = tokenizer_.encode_prompt(prompts[i]);
      const Model::MaskTarget target{enc.mask_position, loss.targets[i]};
      total += model_.mask_loss(enc.ids, std::span(&target, 1), grads);
    }
    adam_.step(model_.params(), grads);
    return total;
  }

  void init_classifier_head(std::size_t num_classes, std::uint64_t seed) override {
    if (num_classes < 2) throw BackendError("classifier head needs at least two classes");
    model_.init_classifier(num_classes, seed);
    adam_ = Adam<float>(adam_.settings());
  }

  [[nodiscard]] RowMatrix classifier_logits(std::span<const std::string> texts) const override {
    RowMatrix out(static_cast<Eigen::Index>(texts.size()), static_cast<Eigen::Index>(model_.num_classes()));
    for (std::size_t i = 0; i < texts.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = model_.classifier_logits(tokenizer_.encode_text(texts[i])).cast<double>();
    }
    return out;
  }

  double train_classifier_step(std::span<const std::string> texts, const ClassifierLoss& loss) override {
    if (loss.labels.size() != texts.size()) throw BackendError("loss spec: label count differs from text count");
    for (auto y : loss.labels) {
      if (y >= model_.num_classes()) throw BackendError("loss spec: class index out of range");
    }
    auto grads = model_.zero_grads();
    double total = 0.0;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      total += model_.classifier_loss(tokenizer_.encode_text(texts[i]), loss.labels[i], grads);
    }
    adam_.step(model_.params(), grads);
    return total;
  }

  /// Binary layout: magic, encoder config, vocabulary, parameter matrices,
  /// then an FNV-1a checksum over everything before it. Optimizer moments
  /// are not stored.
  [[nodiscard]] Checkpoint snapshot() const override {
    std::string b(kMagic);
    const auto& cfg = model_.config();
    for (auto v : {cfg.vocab_size, cfg.d_model, cfg.heads, cfg.layers, cfg.ffn, cfg.max_positions}) put_u64(b, v);
    const auto& tokens = vocabulary().tokens();
    put_u64(b, tokens.size());
    for (const auto& t : tokens) {
      put_u64(b, t.size());
      b += t;
    }
    const auto& params = model_.params();
    put_u64(b, params.size());
    for (const auto& p : params) {
      put_u64(b, static_cast<std::uint64_t>(p.rows()));
      put_u64(b, static_cast<std::uint64_t>(p.cols()));
      b.append(reinterpret_cast<const char*>(p.data()), static_cast<std::size_t>(p.size()) * sizeof(float));
    }
    put_u64(b, rng::fnv1a(b));
    return {name(), std::move(b)};
  }

  void restore(const Checkpoint& c) override {
    if (c.backend != name()) throw RestoreError("tiny: checkpoint belongs to backend '" + c.backend + "'");
    const std::string& b = c.bytes;
    if (b.size() < kMagic.size() + 8 || b.compare(0, kMagic.size(), kMagic) != 0) {
      throw RestoreError("tiny: not a tiny-encoder checkpoint");
    }
    std::uint64_t stored = 0;
    std::memcpy(&stored, b.data() + b.size() - 8, 8);
    if (stored != rng::fnv1a(std::string_view(b).substr(0, b.size() - 8))) {
      throw RestoreError("tiny: checkpoint checksum mismatch (truncated or corrupted)");
    }
    Reader r{b, kMagic.size(), b.size() - 8};
    EncoderConfig cfg;
    cfg.vocab_size = r.u64();
    cfg.d_model = r.u64();
    cfg.heads = r.u64();
    cfg.layers = r.u64();
    cfg.ffn = r.u64();
    cfg.max_positions = r.u64();
    std::vector<std::string> tokens(r.u64());
    for (auto& t : tokens) t = r.str(r.u64());
    const auto count = r.u64();
    Model::Params params;
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto rows = static_cast<Eigen::Index>(r.u64());
      const auto cols = static_cast<Eigen::Index>(r.u64());
      Model::Mat m(rows, cols);
      r.bytes(reinterpret_cast<char*>(m.data()), static_cast<std::size_t>(rows * cols) * sizeof(float));
      params.push_back(std::move(m));
    }
    if (r.pos != r.end) throw RestoreError("tiny: trailing bytes in checkpoint");

    TinyMaskedLm m;
    try {
      m.tokenizer_ = WordPieceTokenizer(std::move(tokens));
      m.model_ = Model(cfg, 0);
    } catch (const Error& e) {
      throw RestoreError(std::string("tiny: invalid checkpoint contents: ") + e.what());
    }
    const auto base = m.model_.params().size();
    if (params.size() != base && params.size() != base + Model::kClsCount) {
      throw RestoreError("tiny: parameter count mismatch");
    }
    for (std::size_t i = 0; i < base; ++i) {
      if (params[i].rows() != m.model_.params()[i].rows() || params[i].cols() != m.model_.params()[i].cols()) {
        throw RestoreError("tiny: parameter shape mismatch");
      }
    }
    m.model_.params() = std::move(params);
    m.adam_ = Adam<float>(adam_.settings());
    *this = std::move(m);
  }

  void save(const std::filesystem::path& path) const { snapshot().save(path); }

 private:
  TinyMaskedLm() = default;

  static constexpr std::string_view kMagic = "LAAV-TINY-1\n";

  static void put_u64(std::string& b, std::uint64_t v) { b.append(reinterpret_cast<const char*>(&v), 8); }

  struct Reader {
    const std::string& b;
    std::size_t pos;
    std::size_t end;

    void bytes(char* dst, std::size_t n) {
      if (end - pos < n) throw RestoreError("tiny: checkpoint truncated");
      std::memcpy(dst, b.data() + pos, n);
      pos += n;
    }
    std::uint64_t u64() {
      std::uint64_t v = 0;
      bytes(reinterpret_cast<char*>(&v), 8);
      return v;
    }
    std::string str(std::uint64_t n) {
      if (end - pos < n) throw RestoreError("tiny: checkpoint truncated");
      std::string s = b.substr(pos, n);
      pos += n;
      return s;
    }
  };

  WordPieceTokenizer tokenizer_;
  Model model_;
  Adam<float> adam_;
};

/// Masked-LM pretraining settings.
struct PretrainConfig {
  std::size_t epochs = 4;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double mask_probability = 0.15;
  std::uint64_t seed = 1;
};

/// BERT-style MLM pretraining: each non-special position is selected with
/// `mask_probability` (at least one per sentence); selected positions become
/// [MASK] 80% of the time, a random token 10%, unchanged 10%. Returns the mean
/// loss per selected position for each epoch.
inline std::vector<double> pretrain(TinyMaskedLm& lm, const std::vector<std::string>& corpus,
                                    const PretrainConfig& cfg) {
  using Model = TinyMaskedLm::Model;
  auto& model = lm.model();
  Adam<float> adam(OptimizerSettings{.learning_rate = cfg.learning_rate, .weight_decay = 0.01});
  rng::Engine eng(rng::derive_seed(cfg.seed, "pretrain"));
  const auto& tok = lm.tokenizer();
  const auto vocab = static_cast<std::uint64_t>(lm.vocabulary().size());
  std::vector<std::vector<TokenId>> encoded;
  for (const auto& line : corpus) {
    auto ids = tok.encode_text(line);
    if (ids.size() > 2 && ids.size() <= model.config().max_positions) encoded.push_back(std::move(ids));
  }
  std::vector<std::size_t> order(encoded.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng::shuffle(std::span<std::size_t>(order), eng);
    double epoch_loss = 0.0;
    std::size_t epoch_targets = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      auto grads = model.zero_grads();
      const auto end = std::min(order.size(), start + cfg.batch_size);
      const float weight = 1.0f / static_cast<float>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        auto ids = encoded[order[b]];
        std::vector<Model::MaskTarget> targets;
        for (std::size_t p = 1; p + 1 < ids.size(); ++p) {
          if (rng::uniform01(eng) < cfg.mask_probability) targets.push_back({p, {ids[p]}});
        }
        if (targets.empty()) {
          const auto p = 1 + static_cast<std::size_t>(rng::uniform_below(eng, ids.size() - 2));
          targets.push_back({p, {ids[p]}});
        }
        for (const auto& t : targets) {
          const double u = rng::uniform01(eng);
          if (u < 0.8) {
            ids[t.position] = WordPieceTokenizer::mask_id();
          } else if (u < 0.9) {
            ids[t.position] = static_cast<TokenId>(5 + rng::uniform_below(eng, vocab - 5));
          }
        }
        epoch_loss += model.mask_loss(ids, targets, grads, weight / static_cast<float>(targets.size()));
        epoch_targets += targets.size();
      }
      adam.step(model.params(), grads);
    }
    history.push_back(epoch_targets ? epoch_loss / static_cast<double>(epoch_targets) : 0.0);
  }
  return history;
}

}  // namespace laav::tiny
