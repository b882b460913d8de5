#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "laav/backend.hpp"
#include "laav/text.hpp"

namespace laav::tiny {

inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kUnk = "[UNK]";
inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kMask = "[MASK]";

/// Lower-cased, punctuation-splitting WordPiece tokenizer (greedy
/// longest-match-first, "##" continuation pieces), as used by uncased BERT.
class WordPieceTokenizer {
 public:
  WordPieceTokenizer() = default;

  /// `tokens` must start with the five special tokens in the order
  /// [PAD] [UNK] [CLS] [SEP] [MASK].
  explicit WordPieceTokenizer(std::vector<std::string> tokens)
      : vocab_(std::move(tokens), {std::string(kPad), std::string(kUnk), std::string(kCls), std::string(kSep),
                                   std::string(kMask)}) {
    for (std::size_t i = 0; i < specials().size(); ++i) {
      if (vocab_.token(static_cast<TokenId>(i)) != specials()[i]) {
        throw BackendError("tokenizer: special tokens must occupy ids 0-4");
      }
    }
  }

  static const std::vector<std::string>& specials() {
    static const std::vector<std::string> s{std::string(kPad), std::string(kUnk), std::string(kCls),
                                            std::string(kSep), std::string(kMask)};
    return s;
  }

  static constexpr TokenId pad_id() { return 0; }
  static constexpr TokenId unk_id() { return 1; }
  static constexpr TokenId cls_id() { return 2; }
  static constexpr TokenId sep_id() { return 3; }
  static constexpr TokenId mask_id() { return 4; }

  /// Builds a vocabulary from a corpus: every word seen at least `min_count`
  /// times, plus every single character as a word-initial and a "##" piece,
  /// so any word over the seen alphabet tokenizes without [UNK].
  static WordPieceTokenizer train(const std::vector<std::string>& corpus, std::size_t min_count = 1) {
    std::map<std::string, std::size_t> words;
    for (const auto& line : corpus) {
      for (auto& w : basic_split(line)) ++words[w];
    }
    std::vector<std::string> chars;
    std::vector<std::string> kept;
    for (const auto& [w, n] : words) {
      if (n >= min_count) kept.push_back(w);
      for (std::size_t i = 0; i < w.size();) {
        const auto len = text::utf8_sequence_length(static_cast<unsigned char>(w[i]));
        chars.push_back(w.substr(i, len));
        i += len;
      }
    }
    std::sort(chars.begin(), chars.end());
    chars.erase(std::unique(chars.begin(), chars.end()), chars.end());

    std::vector<std::string> tokens = specials();
    std::map<std::string, bool> seen;
    for (const auto& t : tokens) seen[t] = true;
    auto add = [&](const std::string& t) {
      if (!seen[t]) {
        seen[t] = true;
        tokens.push_back(t);
      }
    };
    for (const auto& w : kept) add(w);
    for (const auto& c : chars) add(c);
    for (const auto& c : chars) add("##" + c);
    return WordPieceTokenizer(std::move(tokens));
  }

  [[nodiscard]] const Vocabulary& vocabulary() const { return vocab_; }

  /// Whitespace split, ASCII lower-casing, ASCII punctuation as separate words.
  static std::vector<std::string> basic_split(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    };
    for (char ch : s) {
      const auto c = static_cast<unsigned char>(ch);
      if (text::is_space(ch)) {
        flush();
      } else if (c < 0x80 && std::ispunct(c)) {
        flush();
        out.emplace_back(1, ch);
      } else {
        cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
      }
    }
    flush();
    return out;
  }

  [[nodiscard]] std::vector<TokenId> wordpiece(const std::string& word) const {
    if (auto id = vocab_.id_of(word)) return {*id};
    std::vector<TokenId> out;
    std::size_t start = 0;
    while (start < word.size()) {
      std::optional<TokenId> hit;
      std::size_t end = word.size();
      for (; end > start; --end) {
        // Only cut on code-point boundaries.
        if (end < word.size() && (static_cast<unsigned char>(word[end]) & 0xC0) == 0x80) continue;
        auto piece = word.substr(start, end - start);
        if (start > 0) piece = "##" + piece;
        if ((hit = vocab_.id_of(piece))) break;
      }
      if (!hit) return {unk_id()};
      out.push_back(*hit);
      start = end;
    }
    return out;
  }

  [[nodiscard]] std::vector<TokenId> encode_words(std::string_view s) const {
    std::vector<TokenId> out;
    for (const auto& w : basic_split(s)) {
      auto ids = wordpiece(w);
      out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
  }

  /// [CLS] text [SEP]
  [[nodiscard]] std::vector<TokenId> encode_text(std::string_view s) const {
    std::vector<TokenId> out{cls_id()};
    auto body = encode_words(s);
    out.insert(out.end(), body.begin(), body.end());
    out.push_back(sep_id());
    return out;
  }

  struct EncodedPrompt {
    std::vector<TokenId> ids;
    std::size_t mask_position = 0;
  };

  /// [CLS] left [MASK] right [SEP], splitting the rendered prompt at the
  /// mask marker so the marker can never be broken into pieces.
  [[nodiscard]] EncodedPrompt encode_prompt(const PromptText& p) const {
    if (text::count_occurrences(p.rendered, kMaskMarker) != 1) {
      throw BackendError("prompt must contain exactly one mask marker: '" + p.rendered + "'");
    }
    const auto at = p.rendered.find(kMaskMarker);
    EncodedPrompt e;
    e.ids.push_back(cls_id());
    auto left = encode_words(std::string_view(p.rendered).substr(0, at));
    e.ids.insert(e.ids.end(), left.begin(), left.end());
    e.mask_position = e.ids.size();
    e.ids.push_back(mask_id());
    auto right = encode_words(std::string_view(p.rendered).substr(at + kMaskMarker.size()));
    e.ids.insert(e.ids.end(), right.begin(), right.end());
    e.ids.push_back(sep_id());
    return e;
  }

  /// Surface form: "##" continuation marker removed.
  [[nodiscard]] std::string surface(TokenId id) const {
    const auto& t = vocab_.token(id);
    return t.rfind("##", 0) == 0 && t.size() > 2 ? t.substr(2) : t;
  }

 private:
  Vocabulary vocab_;
};

}  // namespace laav::tiny
