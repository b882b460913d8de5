#include <gtest/gtest.h>

#include "laav/templating.hpp"

using namespace laav;

TEST(ParseTemplate, Families) {
  EXPECT_EQ(parse_template("{TEXT} It was {MASK}.").family(), TemplateFamily::kBase);
  EXPECT_EQ(parse_template("{TEXT} It was {LABEL} {CONJ} {MASK}.").family(), TemplateFamily::kLabelAware);
  EXPECT_EQ(parse_template("{TEXT} It was {LABEL} {MASK} {TOKEN}").family(), TemplateFamily::kConjSearch);
}

TEST(ParseTemplate, SlotRules) {
  EXPECT_THROW((void)parse_template("{TEXT} It was {MASK} {MASK}."), TemplateError);
  EXPECT_THROW((void)parse_template("{TEXT} It was."), TemplateError);
  EXPECT_THROW((void)parse_template("It was {MASK}."), TemplateError);
  EXPECT_THROW((void)parse_template("{TEXT} {CONJ} {MASK}"), TemplateError);
  EXPECT_THROW((void)parse_template("{TEXT} {LABEL} {LABEL} {MASK}"), TemplateError);
  EXPECT_THROW((void)parse_template("{TEXT} {TOKEN} {LABEL} {MASK}"), TemplateError);
  EXPECT_THROW((void)parse_template("{TEXT} {FOO} {MASK}"), TemplateError);
  // Lower-case braces are literal text.
  EXPECT_NO_THROW((void)parse_template("{TEXT} {not a slot} {MASK}"));
}

TEST(Render, BaseAndLabelAware) {
  const auto base = parse_template("{TEXT} It was {MASK}.");
  const auto p = render(base, "Great movie!");
  EXPECT_EQ(p.rendered, "Great movie! It was {MASK}.");
  EXPECT_EQ(p.mask_offset, std::string("Great movie! It was ").size());

  const auto aware = parse_template("{TEXT} It was {LABEL} {CONJ} {MASK}.");
  EXPECT_EQ(render(aware, "Feather is", std::string("light"), std::string("and")).rendered,
            "Feather is It was light and {MASK}.");
  EXPECT_THROW((void)render(aware, "x", std::string("light")), RenderError);
  EXPECT_THROW((void)render(base, "x", std::string("light")), RenderError);
  EXPECT_THROW((void)render(aware, "x", std::string(""), std::string("and")), RenderError);
  EXPECT_THROW((void)render(base, "a {MASK} b"), RenderError);
}

TEST(Render, TruncatesCodePoints) {
  const auto base = parse_template("{TEXT}|{MASK}");
  std::string text;
  for (int i = 0; i < 600; ++i) text += (i % 3 == 0) ? "\xC3\xA9" : "a";  // mix of é and a
  const auto p = render(base, text, std::nullopt, std::nullopt, 500);
  const auto bar = p.rendered.find('|');
  EXPECT_EQ(text::utf8_length(p.rendered.substr(0, bar)), 500u);
}

TEST(ConjunctionSearchRender, MaskBetweenLabelAndToken) {
  const auto t = parse_template("{TEXT} It was {LABEL} {MASK} {TOKEN}");
  EXPECT_EQ(conjunction_search_render(t, "x", "positive", "great").rendered, "x It was positive {MASK} great");
  EXPECT_THROW((void)conjunction_search_render(t, "x", "positive", ""), RenderError);
  EXPECT_THROW((void)render(t, "x", std::string("positive")), RenderError);
  EXPECT_THROW((void)conjunction_search_render(parse_template("{TEXT} {MASK}"), "x", "p", "v"), RenderError);
}
