#include "mtm/cli/config.hpp"

#include <charconv>
#include <fstream>
#include <map>

#include "mtm/errors.hpp"

namespace mtm::cli {

using nlohmann::json;

namespace {

const std::vector<Field> kModelFields = {
    {"num_topics", FieldType::integer, "number of topics K"},
    {"prior", FieldType::string, "vtm | normal | ard | horseshoe"},
    {"rate_form", FieldType::string, "log_additive | exp_sum"},
    {"epochs", FieldType::integer, "training epochs"},
    {"batch_size", FieldType::integer, "documents per step"},
    {"lr", FieldType::number, "Adam learning rate"},
    {"eb_steps_per_model_step", FieldType::integer, "empirical-Bayes steps per model step"},
    {"hidden_units", FieldType::integer, "encoder hidden width"},
    {"hidden_layers", FieldType::integer, "encoder depth (1 or 2)"},
    {"normal_sigma", FieldType::number, "sd of the normal deviation prior"},
    {"ard_a", FieldType::number, "initial Gamma shape"},
    {"ard_b", FieldType::number, "initial Gamma rate"},
    {"hs_tau", FieldType::number, "initial horseshoe global scale"},
    {"hs_init", FieldType::number, "initial horseshoe local scales"},
};

const std::vector<Field> kSyntheticFields = {
    {"num_docs", FieldType::integer, "documents to generate"},
    {"vocab_size", FieldType::integer, "vocabulary size"},
    {"num_topics", FieldType::integer, "topics"},
    {"num_envs", FieldType::integer, "environments"},
    {"tokens_per_doc", FieldType::integer, "tokens per document"},
    {"gamma_sparsity", FieldType::number, "probability a deviation is zero"},
    {"gamma_scale", FieldType::number, "sd of nonzero deviations"},
};

std::vector<Field> concat(std::initializer_list<std::vector<Field>> parts) {
  std::vector<Field> out;
  for (const auto& p : parts) {
    for (const auto& f : p) {
      bool dup = false;
      for (const auto& g : out) dup = dup || g.key == f.key;
      if (!dup) out.push_back(f);
    }
  }
  return out;
}

const std::map<std::string, std::vector<Field>>& schema() {
  static const std::map<std::string, std::vector<Field>> s = {
      {"build-vocab",
       {{"corpus", FieldType::string, "input corpus (JSONL)"},
        {"min_df", FieldType::number, "minimum document frequency fraction"},
        {"max_df", FieldType::number, "maximum document frequency fraction"},
        {"stopwords", FieldType::string, "stopword file, one per line"}}},
      {"train", concat({{{"corpus", FieldType::string, "training corpus (JSONL)"},
                         {"vocab", FieldType::string, "vocabulary file"}},
                        kModelFields})},
      {"eval",
       {{"model", FieldType::string, "model artifact"},
        {"test", FieldType::string, "test corpus (JSONL)"},
        {"vocab", FieldType::string, "vocabulary for the test corpus (defaults to the model's)"},
        {"modes", FieldType::string_list,
         "beta_only, with_gamma, with_gamma:<env>, npmi, sparsity, count_opposite, top_words"},
        {"protocol", FieldType::string, "doc_completion | full_doc"},
        {"ratio", FieldType::number, "observed fraction for doc_completion"},
        {"top_n", FieldType::integer, "words per topic for npmi, count_opposite and top_words"},
        {"sparsity_threshold", FieldType::number, "magnitude below which a deviation counts as zero"}}},
      {"topics",
       {{"model", FieldType::string, "model artifact"}, {"top_n", FieldType::integer, "words per topic"}}},
      {"causal", concat({{{"mode", FieldType::string, "semi_synthetic | recovery | ols"},
                          {"model", FieldType::string, "model artifact (semi_synthetic)"},
                          {"corpus", FieldType::string, "corpus (semi_synthetic)"},
                          {"keywords", FieldType::string, "keyword list file (JSON object of lists)"},
                          {"keyword_lists", FieldType::keyword_lists, "inline keyword lists"},
                          {"data", FieldType::string, "JSONL rows {y, t, env} (ols)"},
                          {"base_p", FieldType::number, "Bernoulli outcome probability"},
                          {"bump", FieldType::number, "added to outcomes of keyword documents"},
                          {"min_hits", FieldType::integer, "distinct keywords needed for the bump"},
                          {"samples_per_list", FieldType::integer, "documents drawn per keyword list"},
                          {"extra_samples", FieldType::integer, "documents drawn from the rest"},
                          {"top_n", FieldType::integer, "top words used for topic matching"},
                          {"epochs", FieldType::integer, "training epochs (recovery)"},
                          {"batch_size", FieldType::integer, "documents per step (recovery)"},
                          {"lr", FieldType::number, "learning rate (recovery)"}},
                         kSyntheticFields})},
      {"simulate", kSyntheticFields},
      {"grad-check",
       {{"prior", FieldType::string, "normal | ard | horseshoe | vtm"},
        {"rate_form", FieldType::string, "log_additive | exp_sum"},
        {"num_docs", FieldType::integer, "documents"},
        {"vocab_size", FieldType::integer, "vocabulary size"},
        {"num_topics", FieldType::integer, "topics"},
        {"num_envs", FieldType::integer, "environments"},
        {"tolerance", FieldType::number, "maximum relative error"}}},
  };
  return s;
}

const std::vector<Field> kGlobalFields = {
    {"seed", FieldType::integer, "random seed"},
    {"out", FieldType::string, "output path"},
};

bool type_ok(const json& v, FieldType t) {
  switch (t) {
    case FieldType::integer: return v.is_number_integer();
    case FieldType::number: return v.is_number();
    case FieldType::string: return v.is_string();
    case FieldType::boolean: return v.is_boolean();
    case FieldType::string_list:
      if (!v.is_array()) return false;
      for (const auto& x : v) {
        if (!x.is_string()) return false;
      }
      return true;
    case FieldType::keyword_lists:
      if (!v.is_object()) return false;
      for (const auto& [k, list] : v.items()) {
        if (!type_ok(list, FieldType::string_list)) return false;
      }
      return true;
  }
  return false;
}

std::vector<KeywordList> keyword_lists_from_json(const json& j) {
  std::vector<KeywordList> out;
  for (const auto& [name, list] : j.items()) out.push_back({name, list.get<std::vector<std::string>>()});
  return out;
}

}  // namespace

const std::vector<Field>& fields_for(const std::string& command) {
  auto it = schema().find(command);
  if (it == schema().end()) throw ConfigError("unknown command '" + command + "'");
  return it->second;
}

const std::vector<Field>& global_fields() { return kGlobalFields; }

Settings Settings::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config '" + path.string() + "' must be a JSON object");
  return Settings(std::move(j));
}

void Settings::set_from_string(const Field& field, const std::string& raw) {
  switch (field.type) {
    case FieldType::integer: {
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
      if (ec != std::errc() || p != raw.data() + raw.size()) {
        throw ConfigError(field.key + ": expected an integer, got '" + raw + "'");
      }
      values_[field.key] = v;
      break;
    }
    case FieldType::number: {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(raw, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != raw.size()) throw ConfigError(field.key + ": expected a number, got '" + raw + "'");
      values_[field.key] = v;
      break;
    }
    case FieldType::string: values_[field.key] = raw; break;
    case FieldType::boolean:
      if (raw != "true" && raw != "false") throw ConfigError(field.key + ": expected true or false");
      values_[field.key] = raw == "true";
      break;
    case FieldType::string_list: {
      json list = json::array();
      std::size_t start = 0;
      while (start <= raw.size()) {
        const std::size_t comma = raw.find(',', start);
        const std::string item = raw.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!item.empty()) list.push_back(item);
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      values_[field.key] = list;
      break;
    }
    case FieldType::keyword_lists:
      try {
        values_[field.key] = json::parse(raw);
      } catch (const json::exception&) {
        throw ConfigError(field.key + ": expected a JSON object of token lists");
      }
      break;
  }
}

void Settings::check(const std::string& command) const {
  const auto& fields = fields_for(command);
  for (const auto& [key, value] : values_.items()) {
    const Field* f = nullptr;
    for (const auto& g : fields) {
      if (g.key == key) f = &g;
    }
    for (const auto& g : kGlobalFields) {
      if (g.key == key) f = &g;
    }
    if (f == nullptr) throw ConfigError("unknown setting '" + key + "' for command " + command);
    if (!type_ok(value, f->type)) throw ConfigError("setting '" + key + "' has the wrong type");
  }
  if (has("seed") && values_.at("seed").get<std::int64_t>() < 0) throw ConfigError("seed must be >= 0");
}

std::int64_t Settings::integer(const std::string& key, std::int64_t fallback) const {
  return has(key) ? values_.at(key).get<std::int64_t>() : fallback;
}

std::size_t Settings::count(const std::string& key, std::size_t fallback) const {
  const std::int64_t v = integer(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ConfigError(key + " must be >= 0");
  return static_cast<std::size_t>(v);
}

double Settings::number(const std::string& key, double fallback) const {
  return has(key) ? values_.at(key).get<double>() : fallback;
}

std::string Settings::string(const std::string& key, const std::string& fallback) const {
  return has(key) ? values_.at(key).get<std::string>() : fallback;
}

bool Settings::boolean(const std::string& key, bool fallback) const {
  return has(key) ? values_.at(key).get<bool>() : fallback;
}

std::vector<std::string> Settings::strings(const std::string& key) const {
  return has(key) ? values_.at(key).get<std::vector<std::string>>() : std::vector<std::string>{};
}

std::string Settings::required_path(const std::string& key) const {
  if (!has(key) || string(key).empty()) throw ConfigError("missing required setting '" + key + "'");
  return string(key);
}

ModelConfig model_config(const Settings& s) {
  ModelConfig c;
  c.num_topics = s.count("num_topics", c.num_topics);
  c.prior.variant = parse_prior_variant(s.string("prior", std::string(to_string(c.prior.variant))));
  c.rate_form = parse_rate_form(s.string("rate_form", std::string(to_string(c.rate_form))));
  c.epochs = s.count("epochs", c.epochs);
  c.batch_size = s.count("batch_size", c.batch_size);
  c.lr = s.number("lr", c.lr);
  c.eb_steps_per_model_step = s.count("eb_steps_per_model_step", c.eb_steps_per_model_step);
  c.hidden_units = s.count("hidden_units", c.hidden_units);
  c.hidden_layers = s.count("hidden_layers", c.hidden_layers);
  c.prior.normal_sigma = s.number("normal_sigma", c.prior.normal_sigma);
  c.prior.ard_a = s.number("ard_a", c.prior.ard_a);
  c.prior.ard_b = s.number("ard_b", c.prior.ard_b);
  c.prior.hs_tau = s.number("hs_tau", c.prior.hs_tau);
  c.prior.hs_init = s.number("hs_init", c.prior.hs_init);
  c.seed = s.count("seed", 0);
  c.validate();
  return c;
}

SyntheticSpec synthetic_spec(const Settings& s) {
  SyntheticSpec g;
  g.num_docs = s.count("num_docs", g.num_docs);
  g.vocab_size = s.count("vocab_size", g.vocab_size);
  g.num_topics = s.count("num_topics", g.num_topics);
  g.num_envs = s.count("num_envs", g.num_envs);
  g.tokens_per_doc = s.count("tokens_per_doc", g.tokens_per_doc);
  g.gamma_sparsity = s.number("gamma_sparsity", g.gamma_sparsity);
  g.gamma_scale = s.number("gamma_scale", g.gamma_scale);
  g.seed = s.count("seed", 0);
  if (g.num_docs < 1 || g.vocab_size < 1 || g.num_topics < 1 || g.num_envs < 1 || g.tokens_per_doc < 1) {
    throw ConfigError("synthetic sizes must all be >= 1");
  }
  if (!(g.gamma_sparsity >= 0.0 && g.gamma_sparsity <= 1.0)) throw ConfigError("gamma_sparsity must lie in [0, 1]");
  if (!(g.gamma_scale > 0.0)) throw ConfigError("gamma_scale must be positive");
  return g;
}

ExperimentSpec experiment_spec(const Settings& s) {
  ExperimentSpec e;
  e.base_p = s.number("base_p", e.base_p);
  e.bump = s.number("bump", e.bump);
  e.min_hits = s.count("min_hits", e.min_hits);
  e.samples_per_list = s.count("samples_per_list", e.samples_per_list);
  e.extra_samples = s.count("extra_samples", e.extra_samples);
  e.seed = s.count("seed", 0);
  if (s.has("keyword_lists")) e.keyword_lists = keyword_lists_from_json(s.raw().at("keyword_lists"));
  if (s.has("keywords")) {
    auto more = read_keyword_lists(s.string("keywords"));
    e.keyword_lists.insert(e.keyword_lists.end(), more.begin(), more.end());
  }
  e.validate();
  return e;
}

PlantedSpec planted_spec(const Settings& s) {
  PlantedSpec p;
  p.num_docs = s.count("num_docs", p.num_docs);
  p.vocab_size = s.count("vocab_size", p.vocab_size);
  p.num_topics = s.count("num_topics", p.num_topics);
  p.num_envs = s.count("num_envs", p.num_envs);
  p.tokens_per_doc = s.count("tokens_per_doc", p.tokens_per_doc);
  p.gamma_sparsity = s.number("gamma_sparsity", p.gamma_sparsity);
  p.gamma_scale = s.number("gamma_scale", p.gamma_scale);
  p.seed = s.count("seed", 0);
  if (p.num_topics < 2) throw ConfigError("recovery needs num_topics >= 2");
  if (p.num_keywords >= p.vocab_size) throw ConfigError("vocab_size must exceed the keyword count");
  if (!(p.gamma_sparsity >= 0.0 && p.gamma_sparsity <= 1.0)) throw ConfigError("gamma_sparsity must lie in [0, 1]");
  return p;
}

VocabSettings vocab_settings(const Settings& s) {
  VocabSettings v;
  v.min_df = s.number("min_df", v.min_df);
  v.max_df = s.number("max_df", v.max_df);
  if (!(v.min_df >= 0.0 && v.min_df < v.max_df && v.max_df <= 1.0)) {
    throw ConfigError("document frequency bounds must satisfy 0 <= min_df < max_df <= 1");
  }
  return v;
}

std::vector<KeywordList> read_keyword_lists(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open keyword file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("keyword file '" + path.string() + "': " + e.what());
  }
  if (!type_ok(j, FieldType::keyword_lists)) {
    throw ConfigError("keyword file '" + path.string() + "' must map list names to token arrays");
  }
  return keyword_lists_from_json(j);
}

}  // namespace mtm::cli
