#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "laav/corpus.hpp"
#include "laav/random.hpp"
#include "laav/tiny/backend.hpp"

namespace laav::tiny {

/// Template-generated English sentiment reviews for end-to-end runs of the
/// in-process encoder. Positive and negative reviews differ only in their
/// opinion words, so the two classes are separable by vocabulary.
namespace synthetic {

inline constexpr std::array<std::string_view, 16> kPositive{
    "great",   "excellent", "wonderful", "fantastic", "amazing", "superb",    "lovely",   "delightful",
    "brilliant", "enjoyable", "pleasant", "perfect",   "charming", "outstanding", "terrific", "fun"};
inline constexpr std::array<std::string_view, 16> kNegative{
    "awful", "terrible", "horrible", "dreadful", "poor",     "boring",    "dull",  "disappointing",
    "mediocre", "lousy", "weak",     "painful",  "annoying", "forgettable", "messy", "bland"};
inline constexpr std::array<std::string_view, 14> kNouns{"movie", "film",  "food",  "service", "book",
                                                         "hotel", "phone", "show",  "story",   "meal",
                                                         "room",  "album", "game",  "trip"};
inline constexpr std::array<std::string_view, 8> kOpeners{"honestly", "overall", "to be fair", "in short",
                                                          "for me",   "sadly",   "happily",    "well"};
inline constexpr std::array<std::string_view, 6> kVerbs{"was", "felt", "seemed", "looked", "turned out", "proved"};

inline constexpr std::string_view kPositiveWord = "good";
inline constexpr std::string_view kNegativeWord = "bad";

inline LabelSet labels() {
  return LabelSet({{"positive", std::string(kPositiveWord)}, {"negative", std::string(kNegativeWord)}});
}

template <std::size_t N>
std::string_view pick(rng::Engine& eng, const std::array<std::string_view, N>& xs) {
  return xs[rng::uniform_below(eng, N)];
}

/// One review without a trailing period.
inline std::string review(rng::Engine& eng, bool positive) {
  auto adj = [&] { return std::string(positive ? pick(eng, kPositive) : pick(eng, kNegative)); };
  const std::string noun(pick(eng, kNouns));
  switch (rng::uniform_below(eng, 5)) {
    case 0: return "the " + noun + " " + std::string(pick(eng, kVerbs)) + " " + adj();
    case 1: return std::string(pick(eng, kOpeners)) + " , a " + adj() + " " + noun;
    case 2: return "i found the " + noun + " " + adj() + " and " + adj();
    case 3: return "what a " + adj() + " " + noun + " , really " + adj();
    default: return std::string(pick(eng, kOpeners)) + " the " + noun + " " + std::string(pick(eng, kVerbs)) + " " + adj();
  }
}

/// Balanced examples: `per_class` of each class, interleaved.
inline std::vector<Example> examples(std::size_t per_class, std::uint64_t seed) {
  rng::Engine eng(rng::derive_seed(seed, "synthetic/examples"));
  std::vector<Example> out;
  for (std::size_t i = 0; i < per_class; ++i) {
    out.push_back({review(eng, true), "positive"});
    out.push_back({review(eng, false), "negative"});
  }
  return out;
}

/// Pretraining sentences: plain reviews, reviews followed by "it was <opinion
/// word> ." and by "it was <label word> and <opinion word> .".
inline std::vector<std::string> pretraining_corpus(std::size_t sentences, std::uint64_t seed) {
  rng::Engine eng(rng::derive_seed(seed, "synthetic/pretrain"));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < sentences; ++i) {
    const bool positive = rng::uniform_below(eng, 2) == 0;
    const auto& opinions = positive ? kPositive : kNegative;
    const std::string word(positive ? kPositiveWord : kNegativeWord);
    auto text = review(eng, positive);
    switch (rng::uniform_below(eng, 4)) {
      case 0: out.push_back(text + " ."); break;
      case 1: out.push_back(text + " it was " + std::string(pick(eng, opinions)) + " ."); break;
      case 2: out.push_back(text + " it was " + word + " ."); break;
      default: out.push_back(text + " it was " + word + " and " + std::string(pick(eng, opinions)) + " ."); break;
    }
  }
  return out;
}

struct RecipeConfig {
  std::size_t sentences = 6000;
  PretrainConfig pretrain{.epochs = 12, .batch_size = 16, .learning_rate = 1e-3, .mask_probability = 0.3, .seed = 1};
  EncoderConfig encoder{.d_model = 64, .heads = 4, .layers = 2, .ffn = 128, .max_positions = 64};
  std::uint64_t seed = 1;
};

/// Tokenizer, model and masked-LM pretraining on the synthetic corpus. The
/// polarity of the slot after "it was" is picked up abruptly after several
/// epochs; at the default settings this happens around epoch 8.
inline TinyMaskedLm pretrained_sentiment_lm(const RecipeConfig& cfg = {}, std::vector<double>* history = nullptr) {
  const auto corpus = pretraining_corpus(cfg.sentences, cfg.seed);
  TinyMaskedLm lm(WordPieceTokenizer::train(corpus), cfg.encoder, rng::derive_seed(cfg.seed, "synthetic/init"));
  auto pc = cfg.pretrain;
  pc.seed = rng::derive_seed(cfg.seed, "synthetic/mlm");
  auto h = pretrain(lm, corpus, pc);
  if (history) *history = std::move(h);
  return lm;
}

}  // namespace synthetic
}  // namespace laav::tiny
