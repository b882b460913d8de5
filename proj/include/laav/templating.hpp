#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "laav/error.hpp"
#include "laav/text.hpp"

namespace laav {

/// Placeholder left in rendered prompts at the mask slot. Backends replace it
/// with their native mask token.
inline constexpr std::string_view kMaskMarker = "{MASK}";

inline constexpr std::size_t kDefaultMaxChars = 500;

enum class SlotKind { kLiteral, kText, kLabel, kConj, kMask, kToken };

struct Segment {
  SlotKind kind = SlotKind::kLiteral;
  std::string literal;  // only for kLiteral

  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Which prompt family a template belongs to, derived from its slots.
enum class TemplateFamily {
  kBase,         // [x] ... [MASK]
  kLabelAware,   // [x] ... [y_i] [conj] [MASK]
  kConjSearch,   // [x] ... [y_i] [MASK] [v]
};

class Template {
 public:
  Template() = default;

  [[nodiscard]] const std::vector<Segment>& segments() const { return segments_; }
  [[nodiscard]] const std::string& source() const { return source_; }

  [[nodiscard]] bool has(SlotKind k) const {
    for (const auto& s : segments_) {
      if (s.kind == k) return true;
    }
    return false;
  }

  [[nodiscard]] TemplateFamily family() const {
    if (has(SlotKind::kToken)) return TemplateFamily::kConjSearch;
    if (has(SlotKind::kLabel) || has(SlotKind::kConj)) return TemplateFamily::kLabelAware;
    return TemplateFamily::kBase;
  }

  friend bool operator==(const Template& a, const Template& b) { return a.segments_ == b.segments_; }

 private:
  friend Template parse_template(std::string_view spec);
  std::vector<Segment> segments_;
  std::string source_;
};

struct PromptText {
  std::string rendered;
  /// Byte offset of kMaskMarker inside `rendered`.
  std::size_t mask_offset = 0;

  friend bool operator==(const PromptText&, const PromptText&) = default;
};

namespace detail {

inline std::optional<SlotKind> slot_from_name(std::string_view name) {
  if (name == "TEXT") return SlotKind::kText;
  if (name == "LABEL") return SlotKind::kLabel;
  if (name == "CONJ") return SlotKind::kConj;
  if (name == "MASK") return SlotKind::kMask;
  if (name == "TOKEN") return SlotKind::kToken;
  return std::nullopt;
}

inline bool is_placeholder_name(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!((c >= 'A' && c <= 'Z') || c == '_')) return false;
  }
  return true;
}

}  // namespace detail

/// Parses a template string using the placeholders {TEXT}, {LABEL}, {CONJ},
/// {MASK} and {TOKEN}. Anything else is literal text, kept byte for byte.
///
/// Slot rules: exactly one {TEXT} and one {MASK}; at most one of each other
/// slot; {CONJ} needs {LABEL}; {TOKEN} needs {LABEL} before {MASK} before
/// {TOKEN} and excludes {CONJ}.
inline Template parse_template(std::string_view spec) {
  Template t;
  t.source_ = std::string(spec);
  std::string literal;
  auto flush = [&] {
    if (!literal.empty()) t.segments_.push_back({SlotKind::kLiteral, std::move(literal)});
    literal.clear();
  };
  for (std::size_t i = 0; i < spec.size();) {
    if (spec[i] == '{') {
      auto close = spec.find('}', i);
      if (close != std::string_view::npos) {
        auto name = spec.substr(i + 1, close - i - 1);
        if (detail::is_placeholder_name(name)) {
          auto kind = detail::slot_from_name(name);
          if (!kind) throw TemplateError("template: unknown placeholder {" + std::string(name) + "}");
          flush();
          t.segments_.push_back({*kind, {}});
          i = close + 1;
          continue;
        }
      }
    }
    literal.push_back(spec[i++]);
  }
  flush();

  auto count = [&](SlotKind k) {
    std::size_t n = 0;
    for (const auto& s : t.segments_) n += s.kind == k;
    return n;
  };
  auto position = [&](SlotKind k) {
    for (std::size_t i = 0; i < t.segments_.size(); ++i) {
      if (t.segments_[i].kind == k) return i;
    }
    return t.segments_.size();
  };
  const auto where = "template '" + t.source_ + "': ";
  if (count(SlotKind::kMask) != 1) throw TemplateError(where + "needs exactly one {MASK}");
  if (count(SlotKind::kText) != 1) throw TemplateError(where + "needs exactly one {TEXT}");
  if (count(SlotKind::kLabel) > 1) throw TemplateError(where + "at most one {LABEL}");
  if (count(SlotKind::kConj) > 1) throw TemplateError(where + "at most one {CONJ}");
  if (count(SlotKind::kToken) > 1) throw TemplateError(where + "at most one {TOKEN}");
  if (count(SlotKind::kConj) == 1 && count(SlotKind::kLabel) == 0) {
    throw TemplateError(where + "{CONJ} requires {LABEL}");
  }
  if (count(SlotKind::kToken) == 1) {
    if (count(SlotKind::kConj) != 0) throw TemplateError(where + "{TOKEN} and {CONJ} cannot be combined");
    if (count(SlotKind::kLabel) == 0) throw TemplateError(where + "{TOKEN} requires {LABEL}");
    if (!(position(SlotKind::kLabel) < position(SlotKind::kMask) &&
          position(SlotKind::kMask) < position(SlotKind::kToken))) {
      throw TemplateError(where + "{MASK} must sit between {LABEL} and {TOKEN}");
    }
  }
  return t;
}

namespace detail {

inline PromptText render_segments(const Template& tmpl, std::string_view text,
                                  const std::optional<std::string>& label_word,
                                  const std::optional<std::string>& conj,
                                  const std::optional<std::string>& token, std::size_t max_chars) {
  if (text::count_occurrences(text, kMaskMarker) != 0) {
    throw RenderError("render: input text contains the reserved mask marker");
  }
  auto require = [&](SlotKind k, const std::optional<std::string>& v, const char* name) {
    if (tmpl.has(k) && !v) throw RenderError(std::string("render: template needs a value for {") + name + "}");
    if (!tmpl.has(k) && v) throw RenderError(std::string("render: template has no {") + name + "} slot");
    if (v && v->empty()) throw RenderError(std::string("render: empty value for {") + name + "}");
    if (v && text::count_occurrences(*v, kMaskMarker) != 0) {
      throw RenderError(std::string("render: value for {") + name + "} contains the mask marker");
    }
  };
  require(SlotKind::kLabel, label_word, "LABEL");
  require(SlotKind::kConj, conj, "CONJ");
  require(SlotKind::kToken, token, "TOKEN");

  PromptText out;
  for (const auto& seg : tmpl.segments()) {
    switch (seg.kind) {
      case SlotKind::kLiteral: out.rendered += seg.literal; break;
      case SlotKind::kText: out.rendered += text::utf8_prefix(text, max_chars); break;
      case SlotKind::kLabel: out.rendered += *label_word; break;
      case SlotKind::kConj: out.rendered += *conj; break;
      case SlotKind::kToken: out.rendered += *token; break;
      case SlotKind::kMask:
        out.mask_offset = out.rendered.size();
        out.rendered += kMaskMarker;
        break;
    }
  }
  if (text::count_occurrences(out.rendered, kMaskMarker) != 1) {
    throw RenderError("render: rendered prompt does not contain exactly one mask marker");
  }
  return out;
}

}  // namespace detail

/// Renders T(x) or T_{y}(x). The input text is cut to its first `max_chars`
/// code points before substitution.
inline PromptText render(const Template& tmpl, std::string_view text,
                         const std::optional<std::string>& label_word = std::nullopt,
                         const std::optional<std::string>& conj = std::nullopt,
                         std::size_t max_chars = kDefaultMaxChars) {
  if (tmpl.family() == TemplateFamily::kConjSearch) {
    throw RenderError("render: conjunction-search templates go through conjunction_search_render");
  }
  return detail::render_segments(tmpl, text, label_word, conj, std::nullopt, max_chars);
}

/// Renders T^S_{y}(x) = [x] ... [y] [MASK] [v]: the mask occupies the
/// connective position between the label word and a verbalizer token.
inline PromptText conjunction_search_render(const Template& tmpl, std::string_view text,
                                            const std::string& label_word,
                                            const std::string& verbalizer_token,
                                            std::size_t max_chars = kDefaultMaxChars) {
  if (tmpl.family() != TemplateFamily::kConjSearch) {
    throw RenderError("conjunction_search_render: template lacks a {TOKEN} slot");
  }
  if (verbalizer_token.empty()) throw RenderError("conjunction_search_render: empty verbalizer token");
  return detail::render_segments(tmpl, text, label_word, std::nullopt, verbalizer_token, max_chars);
}

}  // namespace laav
