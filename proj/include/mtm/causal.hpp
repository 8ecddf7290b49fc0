#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtm/corpus.hpp"
#include "mtm/inference.hpp"
#include "mtm/model.hpp"
#include "mtm/numerics.hpp"

namespace mtm {

struct KeywordList {
  std::string name;
  std::vector<std::string> tokens;
};

struct ExperimentSpec {
  std::vector<KeywordList> keyword_lists;
  double base_p = 0.5;
  double bump = 0.2;
  std::size_t min_hits = 2;  // distinct keywords
  std::size_t samples_per_list = 700;
  std::size_t extra_samples = 700;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Coefficient {
  std::string name;
  double estimate = 0.0;
  double std_err = 0.0;
  double t_stat = 0.0;
  double p_value = 0.0;
};

struct CausalResult {
  std::vector<Coefficient> coefs;  // const, T, then covariates
  std::size_t n = 0;
  std::size_t treated_count = 0;
  double rss = 0.0;

  const Coefficient& at(const std::string& name) const;
  const Coefficient& treatment() const { return at("T"); }
};

// T_i = 1 when topic k is the argmax of row i (ties go to the smaller index).
std::vector<std::uint8_t> assign_treatment(const Matrix& theta, std::size_t topic);
// T_i = 1 when the summed proportion of `topics` exceeds every other entry.
// A single topic reduces to assign_treatment.
std::vector<std::uint8_t> assign_treatment(const Matrix& theta, std::span<const std::size_t> topics);

struct TopicMatch {
  std::size_t topic = 0;
  std::size_t overlap = 0;
  std::vector<std::size_t> tied;  // every topic reaching the maximal overlap, ascending
};

// Topic whose top_n global words share the most tokens with `keywords`.
// Throws NoOverlap when no topic shares any.
TopicMatch match_topic(const TrainedModel& model, std::span<const std::string> keywords, std::size_t top_n = 10);

struct SemiSyntheticSample {
  std::vector<std::size_t> docs;  // indices into the corpus
  std::vector<double> y;
  std::vector<std::uint8_t> bumped;
  // Keyword list a doc was drawn for, or -1 for the extra stratum.
  std::vector<int> stratum;
};

// Number of distinct tokens of `keywords` present in the document.
std::size_t keyword_hits(const Document& doc, const Vocabulary& vocab, std::span<const std::string> keywords);

// Draws samples_per_list documents hitting each list (without replacement,
// lists in order) and extra_samples from the documents left over. A document
// gets the bump when it hits min_hits keywords of any list. Throws
// InsufficientDocs naming the stratum that ran short.
SemiSyntheticSample semi_synthetic_outcomes(const Corpus& corpus, const ExperimentSpec& spec);

struct Covariates {
  Matrix X;
  std::vector<std::string> names;
};

// One-hot environment indicators for the given documents, dropping the first
// level present and any absent level.
Covariates environment_dummies(const Corpus& corpus, std::span<const std::size_t> docs);

// OLS of y on [1, T, X] with classical standard errors and two-sided p-values.
CausalResult estimate_ate(std::span<const double> y, std::span<const std::uint8_t> treatment,
                          const Covariates& covariates = {});

// Plain-text table with *** p<0.001, ** p<0.01, * p<0.05.
std::string regression_table(const CausalResult& result, const std::string& title = "");
std::string significance_stars(double p_value);

// Synthetic corpus in which each document has a dominant topic and topic 0
// concentrates its mass on a keyword list. The chance that topic 0 dominates
// depends on the environment.
struct PlantedSpec {
  std::size_t num_docs = 1500;
  std::size_t vocab_size = 100;
  std::size_t num_topics = 5;
  std::size_t num_envs = 2;
  std::size_t tokens_per_doc = 30;
  std::size_t num_keywords = 6;
  double keyword_boost = 3.0;   // added to topic 0's log weights on keywords
  double keyword_damp = -4.0;   // added to other topics' log weights on keywords
  double dominance = 6.0;       // added to the dominant topic's log intensity
  double planted_share_low = 0.2;
  double planted_share_high = 0.4;  // env 0; later envs interpolate down to low
  double gamma_sparsity = 0.9;
  double gamma_scale = 1.0;
  std::uint64_t seed = 0;
};

struct PlantedData {
  SyntheticData data;
  std::vector<std::string> keywords;
  std::vector<std::size_t> dominant;  // per document
};

PlantedData generate_planted(const PlantedSpec& spec);

// Normalized true proportions, one row per document.
Matrix true_proportions(const TrueParams& truth);

struct RecoverySpec {
  PlantedSpec data;
  ExperimentSpec experiment;  // keyword_lists is filled with the planted list
  ModelConfig model;          // num_topics follows data.num_topics
  bool train_models = true;   // false runs the oracle pipeline only
};

struct RecoveryResult {
  double true_effect = 0.0;
  CausalResult oracle;
  std::optional<CausalResult> mtm;
  std::optional<CausalResult> vtm;
  std::optional<TopicMatch> mtm_match;
  std::optional<TopicMatch> vtm_match;
};

RecoveryResult end_to_end_recovery(const RecoverySpec& spec);

}  // namespace mtm
