#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "laav/corpus.hpp"

using namespace laav;

namespace {

std::vector<Example> pool(std::size_t classes, std::size_t per_class) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < classes; ++c) out.push_back({"doc " + std::to_string(c) + "/" + std::to_string(i), "c" + std::to_string(c)});
  }
  return out;
}

LabelSet labels(std::size_t classes) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t c = 0; c < classes; ++c) pairs.emplace_back("c" + std::to_string(c), "w" + std::to_string(c));
  return LabelSet(pairs);
}

}  // namespace

TEST(LabelSet, OrderAndValidation) {
  const LabelSet ls({{"world", "world"}, {"sports", "sports"}});
  EXPECT_EQ(ls.require_index("sports"), 1u);
  EXPECT_THROW((void)ls.require_index("tech"), LabelError);
  EXPECT_THROW(LabelSet(std::vector<std::pair<std::string, std::string>>{{"a", "x"}, {"a", "y"}}), LabelError);
  EXPECT_THROW(LabelSet(std::vector<std::pair<std::string, std::string>>{{"a", "  "}}), LabelError);
}

TEST(Sampling, FourClassesFourShots) {
  const auto split = sample_few_shot(pool(4, 10), labels(4), 4, 13);
  EXPECT_EQ(split.train.size(), 16u);
  EXPECT_EQ(split.validation.size(), 16u);
  std::set<std::size_t> train(split.train_indices.begin(), split.train_indices.end());
  for (auto i : split.validation_indices) EXPECT_EQ(train.count(i), 0u);
}

TEST(Sampling, DeterministicAndClassIsolated) {
  const auto a = sample_few_shot(pool(3, 9), labels(3), 2, 42);
  const auto b = sample_few_shot(pool(3, 9), labels(3), 2, 42);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  // Dropping class c2 leaves the draws of c0 and c1 unchanged.
  auto p = pool(3, 9);
  std::erase_if(p, [](const Example& e) { return e.label == "c2"; });
  const auto c = sample_few_shot(p, LabelSet({{"c0", "w0"}, {"c1", "w1"}}), 2, 42);
  for (std::size_t i = 0; i < c.train.size(); ++i) EXPECT_EQ(c.train[i], a.train[i]);
}

TEST(Sampling, InsufficientClassNamed) {
  auto p = pool(2, 8);
  int dropped = 0;
  std::erase_if(p, [&](const Example& e) { return e.label == "c1" && dropped++ < 3; });
  try {
    (void)sample_few_shot(p, labels(2), 4, 1);
    FAIL();
  } catch (const SamplingError& e) {
    EXPECT_NE(std::string(e.what()).find("'c1' has 5"), std::string::npos) << e.what();
  }
  EXPECT_THROW((void)sample_few_shot(pool(2, 8), labels(2), 0, 1), SamplingError);
}

TEST(Loading, JsonlAndCsv) {
  std::istringstream jsonl("{\"text\": \"good\", \"label\": \"1\"}\n\n{\"text\": \"bad\", \"label\": 0}\n");
  const auto recs = read_jsonl_records(jsonl);
  ASSERT_EQ(recs.size(), 2u);
  const auto ds = make_dataset(recs, LabelSet({{"neg", "bad"}, {"pos", "good"}}), {{"0", "neg"}, {"1", "pos"}});
  EXPECT_EQ(ds.examples[1], (Example{"bad", "neg"}));
  EXPECT_EQ(ds.partition("train").size(), 2u);

  std::istringstream csv("text,label\r\n\"hello, \"\"world\"\"\",pos\r\n\"multi\nline\",neg\r\n");
  const auto rows = read_csv_records(csv);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(*rows[0].text, "hello, \"world\"");
  EXPECT_EQ(*rows[1].text, "multi\nline");
  EXPECT_EQ(csv_field("a,\"b\""), "\"a,\"\"b\"\"\"");
}

TEST(Loading, Errors) {
  std::istringstream missing("{\"text\": \"x\"}\n");
  const auto recs = read_jsonl_records(missing);
  EXPECT_THROW((void)make_dataset(recs, labels(2)), FormatError);
  std::istringstream unknown("{\"text\": \"x\", \"label\": \"zz\"}\n");
  EXPECT_THROW((void)make_dataset(read_jsonl_records(unknown), labels(2)), LabelError);
  std::istringstream broken("{\"text\": \n");
  EXPECT_THROW((void)read_jsonl_records(broken), FormatError);

  const auto path = std::filesystem::temp_directory_path() / "laav_empty.jsonl";
  std::ofstream(path).close();
  EXPECT_THROW((void)load_dataset(path, DataFormat::kJsonl, labels(2)), EmptyDatasetError);
  std::filesystem::remove(path);
  EXPECT_THROW((void)parse_data_format("xml"), ConfigError);
}
