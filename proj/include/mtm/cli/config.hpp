#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtm/causal.hpp"
#include "mtm/evaluation.hpp"
#include "mtm/model.hpp"

namespace mtm::cli {

enum class FieldType { integer, number, string, boolean, string_list, keyword_lists };

struct Field {
  std::string key;
  FieldType type;
  std::string help;
};

// Keys each command accepts, in addition to the global seed and out.
const std::vector<Field>& fields_for(const std::string& command);
const std::vector<Field>& global_fields();

// A flat JSON object of settings. Command-line flags are merged on top of
// the config file, then every value is checked against the field schema.
class Settings {
 public:
  Settings() = default;
  explicit Settings(nlohmann::json values) : values_(std::move(values)) {}

  static Settings from_file(const std::filesystem::path& path);

  // Parses `raw` according to the field type and stores it under `key`.
  void set_from_string(const Field& field, const std::string& raw);
  // Throws ConfigError for unknown keys or values of the wrong type.
  void check(const std::string& command) const;

  bool has(const std::string& key) const { return values_.contains(key); }
  std::int64_t integer(const std::string& key, std::int64_t fallback) const;
  std::size_t count(const std::string& key, std::size_t fallback) const;
  double number(const std::string& key, double fallback) const;
  std::string string(const std::string& key, const std::string& fallback = "") const;
  bool boolean(const std::string& key, bool fallback) const;
  std::vector<std::string> strings(const std::string& key) const;
  std::string required_path(const std::string& key) const;
  const nlohmann::json& raw() const { return values_; }

 private:
  nlohmann::json values_ = nlohmann::json::object();
};

// Builders validate the owning type's invariants and throw ConfigError.
ModelConfig model_config(const Settings& s);
SyntheticSpec synthetic_spec(const Settings& s);
ExperimentSpec experiment_spec(const Settings& s);
PlantedSpec planted_spec(const Settings& s);

struct VocabSettings {
  double min_df = 0.006;
  double max_df = 0.5;
};
VocabSettings vocab_settings(const Settings& s);

std::vector<KeywordList> read_keyword_lists(const std::filesystem::path& path);

}  // namespace mtm::cli
