#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "laav/corpus.hpp"
#include "laav/error.hpp"
#include "laav/random.hpp"
#include "laav/templating.hpp"
#include "laav/text.hpp"
#include "laav/training.hpp"

namespace laav {

/// Ordered `key = value` document. Lines starting with '#' are comments.
/// Values are trimmed; wrap a value in double quotes to keep surrounding
/// spaces (\" and \\ escape inside quotes).
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& origin = "config") {
    KeyValueConfig c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto t = text::trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      const auto where = origin + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
      const auto key = text::trim(t.substr(0, eq));
      if (key.empty()) throw ConfigError(where + ": empty key");
      if (c.contains(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
      c.set(key, unquote(text::trim(t.substr(eq + 1)), where));
    }
    return c;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    return parse(in, path.string());
  }

  /// Applies "key=value" overrides (command-line --set).
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    const auto key = text::trim(assignment.substr(0, eq));
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    set(key, unquote(text::trim(assignment.substr(eq + 1)), "override"));
  }

  void set(const std::string& key, std::string value) {
    for (auto& [k, v] : entries_) {
      if (k == key) {
        v = std::move(value);
        return;
      }
    }
    entries_.emplace_back(key, std::move(value));
  }

  [[nodiscard]] bool contains(const std::string& key) const { return get(key).has_value(); }

  [[nodiscard]] std::optional<std::string> get(const std::string& key) const {
    for (const auto& [k, v] : entries_) {
      if (k == key) return v;
    }
    return std::nullopt;
  }

  /// Entries whose key starts with `prefix`, prefix stripped, in file order.
  [[nodiscard]] std::vector<std::pair<std::string, std::string>> with_prefix(const std::string& prefix) const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, v] : entries_) {
      if (k.size() > prefix.size() && k.compare(0, prefix.size(), prefix) == 0) out.emplace_back(k.substr(prefix.size()), v);
    }
    return out;
  }

  [[nodiscard]] const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  [[nodiscard]] std::string dump() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + quote(v) + "\n";
    return out;
  }

  static std::string quote(const std::string& v) {
    const bool plain = !v.empty() && !text::is_space(v.front()) && !text::is_space(v.back()) && v.front() != '"' &&
                       v.find('\n') == std::string::npos;
    if (plain) return v;
    std::string out = "\"";
    for (char c : v) {
      if (c == '"' || c == '\\') out += '\\';
      if (c == '\n') {
        out += "\\n";
        continue;
      }
      out += c;
    }
    return out + '"';
  }

 private:
  static std::string unquote(const std::string& v, const std::string& where) {
    if (v.size() < 2 || v.front() != '"') return v;
    if (v.back() != '"') throw ConfigError(where + ": unterminated quoted value");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        ++i;
        out += v[i] == 'n' ? '\n' : v[i];
      } else {
        out += v[i];
      }
    }
    return out;
  }

  std::vector<std::pair<std::string, std::string>> entries_;
};

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{"pet", "amulap", "laav", "petal", "npprompt", "traditional_ft"};
  return m;
}

/// Fully resolved run configuration.
struct RunConfig {
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  DataFormat format = DataFormat::kJsonl;
  LabelSet labels;
  std::map<std::string, std::string> label_map;
  std::string template_base = "{TEXT} It was {MASK}.";
  std::string template_label_aware;
  std::string template_conj_search;
  std::string method = "laav";
  std::string conj = "and";
  std::vector<int> shots{4, 8, 16, 32};
  std::vector<std::uint64_t> seeds{13, 21, 42, 87, 100};
  TrainConfig train;
  std::string backend_kind;  // "mock" or "tiny"
  std::filesystem::path backend_path;
  std::filesystem::path output_dir = "runs";
  std::optional<std::size_t> analysis_sample;
  std::vector<std::string> shortlist;
  KeyValueConfig resolved;

  [[nodiscard]] Template base() const { return parse_template(template_base); }
  [[nodiscard]] Template label_aware() const { return parse_template(template_label_aware); }
  [[nodiscard]] Template conj_search() const { return parse_template(template_conj_search); }

  /// Content hash of the resolved configuration.
  [[nodiscard]] std::string run_id() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng::fnv1a(resolved.dump())));
    return buf;
  }

  [[nodiscard]] std::filesystem::path run_dir() const { return output_dir / run_id(); }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': '" + v + "' is not a valid number");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  return d;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = text::trim(item);
    if (item.empty()) continue;
    out.push_back(parse_number<T>(key, item));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "' is an empty list");
  return out;
}

inline std::vector<std::string> parse_words(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = text::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Replaces the mask slot of a base template with `replacement`.
inline std::string rewrite_mask(const Template& base, const std::string& replacement) {
  std::string spec;
  for (const auto& s : base.segments()) {
    switch (s.kind) {
      case SlotKind::kLiteral: spec += s.literal; break;
      case SlotKind::kText: spec += "{TEXT}"; break;
      case SlotKind::kMask: spec += replacement; break;
      default: throw TemplateError("template.base must not contain {LABEL}, {CONJ} or {TOKEN}");
    }
  }
  return spec;
}

inline std::filesystem::path resolve_path(const std::filesystem::path& p, const std::filesystem::path& base_dir) {
  if (p.empty() || p.is_absolute()) return p;
  return base_dir / p;
}

}  // namespace detail

/// Validates a key-value document and fills in defaults.
///
/// Relative data paths resolve against `config_dir`; relative backend paths
/// resolve against $LAAV_CACHE_DIR when set, else `config_dir`. $LAAV_DEVICE
/// may only name "cpu".
inline RunConfig resolve_config(const KeyValueConfig& kv, const std::filesystem::path& config_dir = ".") {
  static const std::set<std::string> scalar_keys{
      "data.train",        "data.test",         "data.format",        "template.base",      "template.label_aware",
      "template.conj_search", "method",         "conj",               "k",                  "shots",
      "seeds",             "backend",           "output_dir",         "analysis.sample",    "analysis.shortlist",
      "train.learning_rate", "train.max_epochs", "train.patience",    "train.batch_size",   "train.max_chars",
      "train.adam_beta1",  "train.adam_beta2",  "train.adam_epsilon", "train.weight_decay", "train.seed"};
  for (const auto& [k, v] : kv.entries()) {
    if (scalar_keys.count(k) || k.rfind("label_words.", 0) == 0 || k.rfind("label_map.", 0) == 0) continue;
    throw ConfigError("unknown config key '" + k + "'");
  }
  auto req = [&](const std::string& key) {
    auto v = kv.get(key);
    if (!v || v->empty()) throw ConfigError("config key '" + key + "' is required");
    return *v;
  };

  RunConfig c;
  c.train_path = detail::resolve_path(req("data.train"), config_dir);
  if (auto t = kv.get("data.test")) c.test_path = detail::resolve_path(*t, config_dir);
  if (auto f = kv.get("data.format")) {
    c.format = parse_data_format(*f);
  } else {
    c.format = c.train_path.extension() == ".csv" ? DataFormat::kCsv : DataFormat::kJsonl;
  }
  const auto words = kv.with_prefix("label_words.");
  if (words.size() < 2) throw ConfigError("at least two label_words.<class> entries are required");
  c.labels = LabelSet(words);
  for (const auto& [raw, cls] : kv.with_prefix("label_map.")) {
    if (!c.labels.index_of(cls)) throw ConfigError("label_map." + raw + " names unknown class '" + cls + "'");
    c.label_map[raw] = cls;
  }

  if (auto v = kv.get("template.base")) c.template_base = *v;
  const auto base = parse_template(c.template_base);
  if (base.family() != TemplateFamily::kBase) throw TemplateError("template.base must only use {TEXT} and {MASK}");
  c.template_label_aware = kv.get("template.label_aware").value_or(detail::rewrite_mask(base, "{LABEL} {CONJ} {MASK}"));
  c.template_conj_search = kv.get("template.conj_search").value_or(detail::rewrite_mask(base, "{LABEL} {MASK} {TOKEN}"));
  if (c.label_aware().family() != TemplateFamily::kLabelAware) {
    throw TemplateError("template.label_aware needs a {LABEL} slot and no {TOKEN} slot");
  }
  if (c.conj_search().family() != TemplateFamily::kConjSearch) throw TemplateError("template.conj_search needs a {TOKEN} slot");

  if (auto v = kv.get("method")) c.method = *v;
  if (std::find(known_methods().begin(), known_methods().end(), c.method) == known_methods().end()) {
    throw ConfigError("unknown method '" + c.method + "'");
  }
  if (auto v = kv.get("conj")) c.conj = *v;
  if (c.conj.empty()) throw ConfigError("conj must be non-empty");
  if (auto v = kv.get("k")) c.train.k = detail::parse_number<std::size_t>("k", *v);
  if (auto v = kv.get("shots")) c.shots = detail::parse_list<int>("shots", *v);
  if (auto v = kv.get("seeds")) c.seeds = detail::parse_list<std::uint64_t>("seeds", *v);
  for (int s : c.shots) {
    if (s <= 0) throw ConfigError("shots must be positive");
  }

  auto& t = c.train;
  if (auto v = kv.get("train.learning_rate")) t.learning_rate = detail::parse_real("train.learning_rate", *v);
  if (auto v = kv.get("train.max_epochs")) t.max_epochs = detail::parse_number<int>("train.max_epochs", *v);
  if (auto v = kv.get("train.patience")) t.patience = detail::parse_number<int>("train.patience", *v);
  if (auto v = kv.get("train.batch_size")) t.batch_size = detail::parse_number<std::size_t>("train.batch_size", *v);
  if (auto v = kv.get("train.max_chars")) t.max_chars = detail::parse_number<std::size_t>("train.max_chars", *v);
  if (auto v = kv.get("train.adam_beta1")) t.adam_beta1 = detail::parse_real("train.adam_beta1", *v);
  if (auto v = kv.get("train.adam_beta2")) t.adam_beta2 = detail::parse_real("train.adam_beta2", *v);
  if (auto v = kv.get("train.adam_epsilon")) t.adam_epsilon = detail::parse_real("train.adam_epsilon", *v);
  if (auto v = kv.get("train.weight_decay")) t.weight_decay = detail::parse_real("train.weight_decay", *v);
  if (kv.get("train.seed")) throw ConfigError("train.seed is taken from the seeds list; remove it");
  t.validate();

  const auto backend = req("backend");
  const auto colon = backend.find(':');
  if (colon == std::string::npos) throw ConfigError("backend must be mock:<table.json> or tiny:<checkpoint>");
  c.backend_kind = backend.substr(0, colon);
  if (c.backend_kind != "mock" && c.backend_kind != "tiny") {
    throw ConfigError("unknown backend kind '" + c.backend_kind + "' (expected mock or tiny)");
  }
  std::filesystem::path cache_dir = config_dir;
  if (const char* env = std::getenv("LAAV_CACHE_DIR"); env && *env) cache_dir = env;
  c.backend_path = detail::resolve_path(backend.substr(colon + 1), cache_dir);
  if (const char* dev = std::getenv("LAAV_DEVICE"); dev && *dev && std::string(dev) != "cpu") {
    throw ConfigError(std::string("LAAV_DEVICE=") + dev + ": only the cpu device is available");
  }

  c.output_dir = detail::resolve_path(kv.get("output_dir").value_or("runs"), config_dir);
  if (auto v = kv.get("analysis.sample")) c.analysis_sample = detail::parse_number<std::size_t>("analysis.sample", *v);
  if (auto v = kv.get("analysis.shortlist")) c.shortlist = detail::parse_words(*v);

  // Canonical snapshot: every effective value, fixed key order.
  auto& r = c.resolved;
  r.set("data.train", c.train_path.string());
  r.set("data.test", c.test_path.string());
  r.set("data.format", c.format == DataFormat::kCsv ? "csv" : "jsonl");
  for (std::size_t i = 0; i < c.labels.size(); ++i) r.set("label_words." + c.labels.class_name(i), c.labels.label_word(i));
  for (const auto& [raw, cls] : c.label_map) r.set("label_map." + raw, cls);
  r.set("template.base", c.template_base);
  r.set("template.label_aware", c.template_label_aware);
  r.set("template.conj_search", c.template_conj_search);
  r.set("method", c.method);
  r.set("conj", c.conj);
  r.set("k", std::to_string(t.k));
  auto join = [](const auto& xs) {
    std::string s;
    for (const auto& x : xs) s += (s.empty() ? "" : ",") + std::to_string(x);
    return s;
  };
  r.set("shots", join(c.shots));
  r.set("seeds", join(c.seeds));
  auto real = [](double d) {
    std::ostringstream os;
    os.precision(17);
    os << d;
    return os.str();
  };
  r.set("train.learning_rate", real(t.learning_rate));
  r.set("train.max_epochs", std::to_string(t.max_epochs));
  r.set("train.patience", std::to_string(t.patience));
  r.set("train.batch_size", std::to_string(t.batch_size));
  r.set("train.max_chars", std::to_string(t.max_chars));
  r.set("train.adam_beta1", real(t.adam_beta1));
  r.set("train.adam_beta2", real(t.adam_beta2));
  r.set("train.adam_epsilon", real(t.adam_epsilon));
  r.set("train.weight_decay", real(t.weight_decay));
  r.set("backend", c.backend_kind + ":" + c.backend_path.string());
  r.set("output_dir", c.output_dir.string());
  if (c.analysis_sample) r.set("analysis.sample", std::to_string(*c.analysis_sample));
  if (!c.shortlist.empty()) {
    std::string s;
    for (const auto& w : c.shortlist) s += (s.empty() ? "" : ",") + w;
    r.set("analysis.shortlist", s);
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  auto kv = KeyValueConfig::load(path);
  for (const auto& o : overrides) kv.apply_override(o);
  return resolve_config(kv, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

}  // namespace laav
