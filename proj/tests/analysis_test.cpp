#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "laav/analysis.hpp"
#include "laav/mock_backend.hpp"
#include "support/mock_world.hpp"

using namespace laav;
using namespace laav::testing;

namespace {

Verbalizer manual(std::vector<std::vector<TokenId>> ids, const MaskedLm& lm) {
  Verbalizer v;
  v.method = "manual";
  v.k = 8;
  v.classes = {"pos", "neg"};
  for (const auto& list : ids) {
    auto& out = v.tokens.emplace_back();
    for (auto id : list) out.push_back({id, lm.token_surface(id), 0.0});
  }
  return v;
}

struct LogitWorld {
  MockMaskedLm lm{{"[CLS]", "good", "bad", "flat"}, {"[CLS]"}};
  LabelSet labels{{{"pos", "good"}, {"neg", "bad"}}};
  Template base = parse_template(kBaseSpec);
  std::vector<Example> test;

  LogitWorld() {
    // good: [2, 2, 0, 0] across (pos, pos, neg, neg); flat constant.
    const std::vector<std::vector<double>> rows{{0, 2, 0, 5}, {0, 2, 1, 5}, {0, 0, 3, 5}, {0, 0, 1, 5}};
    const std::vector<std::string> gold{"pos", "pos", "neg", "neg"};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto text = "x" + std::to_string(i);
      lm.set_logits(render(base, text).rendered, rows[i]);
      test.push_back({text, gold[i]});
    }
  }
};

}  // namespace

TEST(LogitsDifference, SimpleCase) {
  LogitWorld w;
  const auto r = logits_difference(w.test, manual({{1, 3}, {2}}, w.lm), w.base, w.lm, w.labels);
  ASSERT_EQ(r.per_class[0].size(), 2u);
  EXPECT_EQ(r.per_class[0][0].token, "good");
  EXPECT_EQ(r.per_class[0][0].difference, 2.0);
  EXPECT_EQ(r.per_class[0][1].difference, 0.0);
  EXPECT_DOUBLE_EQ(r.per_class[1][0].difference, 2.0 - 0.5);
  EXPECT_NEAR(r.average_difference, (2.0 + 0.0 + 1.5) / 3.0, 1e-12);
  const auto j = to_json(r);
  EXPECT_EQ(j["per_class"]["pos"][0]["token"], "good");
  EXPECT_NE(to_csv(r).find("pos,good,1,2,0,2"), std::string::npos) << to_csv(r);
}

TEST(LogitsDifference, AbsentClassRaises) {
  LogitWorld w;
  std::vector<Example> only_pos(w.test.begin(), w.test.begin() + 2);
  EXPECT_THROW((void)logits_difference(only_pos, manual({{1}, {2}}, w.lm), w.base, w.lm, w.labels), AnalysisError);
}

TEST(LogitsDifference, SampleLimitKeepsSubset) {
  LogitWorld w;
  const auto r = logits_difference(w.test, manual({{1}, {2}}, w.lm), w.base, w.lm, w.labels, {}, 4, 7);
  EXPECT_EQ(r.examples, 4u);
  EXPECT_THROW((void)logits_difference(w.test, manual({{1}, {2}}, w.lm), w.base, w.lm, w.labels, {}, 1, 7),
               AnalysisError);
}

TEST(ConjunctionSearch, RanksOneHotConnectiveFirst) {
  MockMaskedLm lm({"[CLS]", "great", "bad", "and", "but"}, {"[CLS]"});
  const LabelSet labels({{"pos", "great"}, {"neg", "bad"}});
  const auto base = parse_template(kBaseSpec);
  const auto search = parse_template(kConjSearchSpec);
  const std::vector<Example> train{{"a", "pos"}, {"b", "neg"}};
  lm.set_probabilities(render(base, "a").rendered, {0, 0.7, 0.1, 0.1, 0.1});
  lm.set_probabilities(render(base, "b").rendered, {0, 0.1, 0.7, 0.1, 0.1});
  // k = 1: VS(pos) = {great}, VS(neg) = {bad}.
  lm.set_probabilities(conjunction_search_render(search, "a", "great", "great").rendered, {0, 0, 0, 1, 0});
  lm.set_probabilities(conjunction_search_render(search, "b", "bad", "bad").rendered, {0, 0, 0, 1, 0});
  const auto r = search_conjunction(train, labels, base, search, lm, 1);
  ASSERT_EQ(r.ranked.size(), 4u);
  EXPECT_EQ(r.ranked[0].token, "and");
  EXPECT_EQ(r.ranked[0].score, 1.0);
  EXPECT_EQ(r.ranked[1].token, "great");  // zero ties broken by id
  EXPECT_EQ(r.prompt_count, 2u);
  EXPECT_EQ(r.per_class[1][0].token, "and");
  EXPECT_THROW((void)search_conjunction(train, labels, base, base, lm, 1), TemplateError);
}

TEST(Aggregate, MeanStdAndTable) {
  auto rep = [](const std::string& m, int shots, std::uint64_t seed, double f1) {
    EvalReport r;
    r.method = m;
    r.shots = shots;
    r.seed = seed;
    r.classes = {"a", "b"};
    r.macro_f1 = f1;
    return r;
  };
  std::vector<EvalReport> reports{rep("laav", 4, 13, 0.80), rep("laav", 4, 21, 0.90), rep("laav", 8, 13, 0.5)};
  const auto agg = aggregate_runs(reports);
  ASSERT_EQ(agg.rows.size(), 2u);
  EXPECT_NEAR(agg.rows[0].mean, 0.85, 1e-12);
  EXPECT_NEAR(*agg.rows[0].stddev, std::sqrt(0.005), 1e-12);
  EXPECT_FALSE(agg.rows[1].stddev.has_value());
  const auto table = render_table(agg);
  EXPECT_NE(table.find("85.0 (7.1)"), std::string::npos) << table;
  EXPECT_NE(table.find("50.0"), std::string::npos);
  EXPECT_NE(to_csv(agg).find("laav,8,1,0.5,\n"), std::string::npos) << to_csv(agg);

  std::reverse(reports.begin(), reports.end());
  const auto again = aggregate_runs(reports);
  EXPECT_EQ(again.rows[0].mean, agg.rows[0].mean);

  auto mixed = reports;
  mixed[0].classes = {"x", "y"};
  EXPECT_THROW((void)aggregate_runs(mixed), AggregationError);
  EXPECT_THROW((void)aggregate_runs({}), AggregationError);
}

TEST(Plot, WritesSvg) {
  const auto path = std::filesystem::temp_directory_path() / "laav_plot_test.svg";
  write_bar_chart_svg(path, "avg <diff>", {"amulap", "laav"}, {0.5, 1.25});
  std::ifstream in(path);
  const std::string body((std::istreambuf_iterator<char>(in)), {});
  EXPECT_NE(body.find("<svg"), std::string::npos);
  EXPECT_NE(body.find("&lt;diff&gt;"), std::string::npos);
  std::filesystem::remove(path);
}
