#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mtm/corpus.hpp"
#include "mtm/inference.hpp"
#include "mtm/rng.hpp"

namespace mtm {

enum class PerplexityProtocol { doc_completion, full_doc };

struct PerplexityMode {
  bool with_gamma = false;
  std::size_t env = 0;  // used only when with_gamma
  PerplexityProtocol protocol = PerplexityProtocol::doc_completion;
  double ratio = 0.5;  // observed fraction for doc_completion

  static PerplexityMode beta_only(PerplexityProtocol protocol = PerplexityProtocol::doc_completion) {
    return {false, 0, protocol, 0.5};
  }
  static PerplexityMode gamma_of(std::size_t env,
                                 PerplexityProtocol protocol = PerplexityProtocol::doc_completion) {
    return {true, env, protocol, 0.5};
  }
};

std::string describe(const PerplexityMode& mode);

struct EvalReport {
  double perplexity = 0.0;
  std::size_t token_count = 0;
  double log_likelihood = 0.0;  // summed over scored tokens
  PerplexityMode mode;
  std::map<std::size_t, double> per_env_breakdown;  // keyed by the doc's own environment
  std::size_t skipped_docs = 0;                      // empty or unsplittable documents
};

// Held-out perplexity. Document-completion splits are keyed by the document's
// raw id and the term strings, so results do not depend on document order or
// vocabulary order. Throws VocabMismatch, NoGammaVariant, EnvOutOfRange.
EvalReport perplexity(const TrainedModel& model, const Corpus& test, const PerplexityMode& mode,
                      const RngStream& rng);

// Mean NPMI of each topic's top_n words (by beta), averaged over topics.
// Probabilities are document frequencies in `ref`; eps is added to the joint
// only. Pairs involving a word absent from `ref` are skipped, and a pair that
// occurs in every document scores 0.
double npmi(const TrainedModel& model, const Corpus& ref, std::size_t top_n = 10, double eps = 1e-12);
std::vector<double> npmi_per_topic(const TrainedModel& model, const Corpus& ref, std::size_t top_n = 10,
                                   double eps = 1e-12);

struct TopicSource {
  bool global = true;
  std::size_t env = 0;

  static TopicSource beta() { return {true, 0}; }
  static TopicSource gamma(std::size_t env) { return {false, env}; }
};

// Largest weights first, ties by vocabulary index; n is clamped to V.
std::vector<TermId> top_word_ids(const TrainedModel& model, std::size_t topic, TopicSource source,
                                 std::size_t n);
std::vector<std::string> top_words(const TrainedModel& model, std::size_t topic, TopicSource source,
                                   std::size_t n);

// Fraction of |gamma_ekv| < threshold, one entry per environment.
std::vector<double> sparsity(const TrainedModel& model, double threshold = 0.01);

struct CountOppositeReport {
  double median = 0.0;  // NaN when no (env, topic) cell has documents in both environments
  // counts[e][k]; -1 marks cells excluded for lack of documents.
  std::vector<std::vector<int>> counts;
};

// Requires exactly two environments. Documents are assigned to the argmax
// topic of their inferred proportions.
CountOppositeReport count_opposite(const TrainedModel& model, const Corpus& test, std::size_t top_n = 10);

}  // namespace mtm
