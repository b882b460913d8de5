#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "laav/error.hpp"
#include "laav/random.hpp"
#include "laav/text.hpp"

namespace laav {

struct Example {
  std::string text;
  std::string label;

  friend bool operator==(const Example&, const Example&) = default;
};

/// Ordered class list with one surface label word per class.
///
/// The order is the order in which classes were supplied (the order of the
/// `label_words.*` keys in a run configuration). Every tie-break in the
/// toolkit that involves classes prefers the lower index in this order.
class LabelSet {
 public:
  LabelSet() = default;

  explicit LabelSet(std::vector<std::pair<std::string, std::string>> class_words) {
    for (auto& [cls, word] : class_words) {
      if (cls.empty()) throw LabelError("label set: empty class identifier");
      if (index_.count(cls)) throw LabelError("label set: duplicate class '" + cls + "'");
      const auto normalized = text::normalize_whitespace(word);
      if (normalized.empty()) throw LabelError("label set: class '" + cls + "' has an empty label word");
      index_.emplace(cls, classes_.size());
      classes_.push_back(cls);
      words_.push_back(normalized);
    }
  }

  [[nodiscard]] std::size_t size() const { return classes_.size(); }
  [[nodiscard]] bool empty() const { return classes_.empty(); }
  [[nodiscard]] const std::vector<std::string>& classes() const { return classes_; }
  [[nodiscard]] const std::string& class_name(std::size_t i) const { return classes_.at(i); }
  [[nodiscard]] const std::string& label_word(std::size_t i) const { return words_.at(i); }

  [[nodiscard]] std::optional<std::size_t> index_of(const std::string& cls) const {
    auto it = index_.find(cls);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] std::size_t require_index(const std::string& cls) const {
    if (auto i = index_of(cls)) return *i;
    throw LabelError("unknown label '" + cls + "'");
  }

  [[nodiscard]] std::vector<std::pair<std::string, std::string>> pairs() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < size(); ++i) out.emplace_back(classes_[i], words_[i]);
    return out;
  }

  friend bool operator==(const LabelSet& a, const LabelSet& b) {
    return a.classes_ == b.classes_ && a.words_ == b.words_;
  }

 private:
  std::vector<std::string> classes_;
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> index_;
};

/// Examples plus named, disjoint partitions of their indices.
struct Dataset {
  LabelSet label_set;
  std::vector<Example> examples;
  std::map<std::string, std::vector<std::size_t>> partitions;

  [[nodiscard]] std::vector<Example> partition(const std::string& name) const {
    auto it = partitions.find(name);
    if (it == partitions.end()) throw ConfigError("dataset has no partition '" + name + "'");
    std::vector<Example> out;
    out.reserve(it->second.size());
    for (auto i : it->second) out.push_back(examples[i]);
    return out;
  }

  /// Appends `other`'s examples as partition `name`. Label sets must match.
  void add_partition(const std::string& name, const Dataset& other) {
    if (partitions.count(name)) throw ConfigError("duplicate partition '" + name + "'");
    if (!examples.empty() && !(label_set == other.label_set)) {
      throw LabelError("partition '" + name + "' uses a different label set");
    }
    if (examples.empty()) label_set = other.label_set;
    auto& idx = partitions[name];
    for (const auto& ex : other.examples) {
      idx.push_back(examples.size());
      examples.push_back(ex);
    }
  }
};

struct FewShotSplit {
  std::vector<Example> train;
  std::vector<Example> validation;
  /// Indices into the sampled pool, parallel to `train` / `validation`.
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> validation_indices;
  int shots_per_class = 0;
  std::uint64_t seed = 0;
};

enum class DataFormat { kJsonl, kCsv };

inline DataFormat parse_data_format(const std::string& s) {
  if (s == "jsonl") return DataFormat::kJsonl;
  if (s == "csv") return DataFormat::kCsv;
  throw ConfigError("unknown dataset format '" + s + "' (expected jsonl or csv)");
}

struct RawRecord {
  std::optional<std::string> text;
  std::optional<std::string> label;
};

namespace detail {

inline std::string json_scalar_to_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return v.dump();
}

/// RFC-4180 reader: quoted fields, doubled quotes, CRLF or LF line ends,
/// embedded newlines inside quotes.
inline std::vector<std::vector<std::string>> read_csv_rows(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false, any = false;
  char c;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get(c);
      end_row();
    } else if (c == '\n') {
      end_row();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted) throw FormatError("csv: unterminated quoted field");
  if (any && (!field.empty() || !row.empty())) end_row();
  return rows;
}

}  // namespace detail

/// Quotes a CSV field when it contains a comma, quote or line break.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::vector<RawRecord> read_jsonl_records(std::istream& in) {
  std::vector<RawRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("record " + std::to_string(out.size()) + ": invalid JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw FormatError("record " + std::to_string(out.size()) + ": not a JSON object");
    RawRecord r;
    if (obj.contains("text") && !obj["text"].is_null()) r.text = detail::json_scalar_to_string(obj["text"]);
    if (obj.contains("label") && !obj["label"].is_null()) r.label = detail::json_scalar_to_string(obj["label"]);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<RawRecord> read_csv_records(std::istream& in) {
  auto rows = detail::read_csv_rows(in);
  if (rows.empty()) return {};
  const auto& header = rows.front();
  std::optional<std::size_t> text_col, label_col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    auto name = text::trim(header[i]);
    if (i == 0 && name.rfind("\xEF\xBB\xBF", 0) == 0) name = name.substr(3);
    if (name == "text") text_col = i;
    if (name == "label") label_col = i;
  }
  if (!text_col || !label_col) throw FormatError("csv: header must contain columns text,label");
  std::vector<RawRecord> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    RawRecord rec;
    if (*text_col < rows[r].size()) rec.text = rows[r][*text_col];
    if (*label_col < rows[r].size()) rec.label = rows[r][*label_col];
    out.push_back(std::move(rec));
  }
  return out;
}

/// Builds a dataset from raw records.
///
/// `label_map` optionally rewrites raw labels to class identifiers before
/// validation (e.g. star ratings "1".."5" to textual classes). Records keep
/// their original order; duplicates are kept.
inline Dataset make_dataset(const std::vector<RawRecord>& records, const LabelSet& label_set,
                            const std::map<std::string, std::string>& label_map = {},
                            const std::string& partition = "train") {
  if (records.empty()) throw EmptyDatasetError("dataset is empty");
  Dataset ds;
  ds.label_set = label_set;
  auto& idx = ds.partitions[partition];
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto where = "record " + std::to_string(i);
    if (!r.text) throw FormatError(where + ": missing field \"text\"");
    if (!r.label) throw FormatError(where + ": missing field \"label\"");
    auto text = text::normalize_whitespace(*r.text);
    if (text.empty()) throw FormatError(where + ": empty text");
    auto label = text::trim(*r.label);
    if (auto m = label_map.find(label); m != label_map.end()) label = m->second;
    if (!label_set.index_of(label)) throw LabelError(where + ": unknown label '" + label + "'");
    idx.push_back(ds.examples.size());
    ds.examples.push_back({std::move(text), std::move(label)});
  }
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, DataFormat format,
                            const LabelSet& label_set,
                            const std::map<std::string, std::string>& label_map = {},
                            const std::string& partition = "train") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open dataset file " + path.string());
  auto records = format == DataFormat::kJsonl ? read_jsonl_records(in) : read_csv_records(in);
  if (records.empty()) throw EmptyDatasetError("dataset file " + path.string() + " is empty");
  return make_dataset(records, label_set, label_map, partition);
}

/// Seeded per-class sampling of `shots_per_class` train and validation
/// examples from `pool`.
///
/// Each class draws from its own mt19937_64 stream seeded by
/// derive_seed(seed, "fewshot/" + class), shuffles that class's pool indices
/// with Fisher-Yates and takes the first n for train and the next n for
/// validation. Adding or removing a class leaves other classes' draws intact.
/// Outputs are grouped by class in label-set order.
inline FewShotSplit sample_few_shot(const std::vector<Example>& pool, const LabelSet& label_set,
                                    int shots_per_class, std::uint64_t seed) {
  if (shots_per_class <= 0) throw SamplingError("shots_per_class must be positive");
  const auto n = static_cast<std::size_t>(shots_per_class);
  std::vector<std::vector<std::size_t>> by_class(label_set.size());
  for (std::size_t i = 0; i < pool.size(); ++i) by_class[label_set.require_index(pool[i].label)].push_back(i);

  FewShotSplit split;
  split.shots_per_class = shots_per_class;
  split.seed = seed;
  for (std::size_t c = 0; c < label_set.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2 * n) {
      throw SamplingError("class '" + label_set.class_name(c) + "' has " + std::to_string(idx.size()) +
                          " examples; " + std::to_string(2 * n) + " needed for " + std::to_string(n) +
                          "-shot train and validation");
    }
    rng::Engine eng(rng::derive_seed(seed, "fewshot/" + label_set.class_name(c)));
    rng::shuffle(std::span<std::size_t>(idx), eng);
    for (std::size_t j = 0; j < n; ++j) {
      split.train_indices.push_back(idx[j]);
      split.validation_indices.push_back(idx[n + j]);
    }
  }
  for (auto i : split.train_indices) split.train.push_back(pool[i]);
  for (auto i : split.validation_indices) split.validation.push_back(pool[i]);
  return split;
}

inline FewShotSplit sample_few_shot(const Dataset& dataset, int shots_per_class, std::uint64_t seed,
                                    const std::string& pool = "train") {
  return sample_few_shot(dataset.partition(pool), dataset.label_set, shots_per_class, seed);
}

inline nlohmann::json to_json(const FewShotSplit& s) {
  auto examples = [](const std::vector<Example>& v) {
    auto arr = nlohmann::json::array();
    for (const auto& e : v) arr.push_back({{"text", e.text}, {"label", e.label}});
    return arr;
  };
  return {{"shots_per_class", s.shots_per_class},
          {"seed", s.seed},
          {"train_indices", s.train_indices},
          {"validation_indices", s.validation_indices},
          {"train", examples(s.train)},
          {"validation", examples(s.validation)}};
}

}  // namespace laav
