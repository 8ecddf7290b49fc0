#include "mtm/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "mtm/errors.hpp"
#include "mtm/model.hpp"
#include "mtm/parallel.hpp"

namespace mtm {

namespace {

constexpr std::size_t kDocsPerChunk = 64;

const Matrix* gamma_for(const TrainedModel& model, const PerplexityMode& mode) {
  if (!mode.with_gamma) return nullptr;
  if (!model.has_gamma()) throw NoGammaVariant("perplexity: model has no environment deviations");
  if (mode.env >= model.gamma_hat.size()) {
    throw EnvOutOfRange("perplexity: environment " + std::to_string(mode.env) + " out of range");
  }
  return &model.gamma_hat[mode.env];
}

struct DocScore {
  double ll = 0.0;
  std::size_t tokens = 0;
  std::size_t env = 0;
  bool skipped = false;
};

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::size_t> argmax_topics(const TrainedModel& model, const std::vector<Document>& docs) {
  std::vector<std::size_t> out(docs.size(), 0);
  const std::size_t chunks = (docs.size() + kDocsPerChunk - 1) / kDocsPerChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kDocsPerChunk, end = std::min(docs.size(), begin + kDocsPerChunk);
    const Matrix theta = infer_theta(model, std::span<const Document>(docs.data() + begin, end - begin));
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = theta.row(i - begin);
      out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  });
  return out;
}

}  // namespace

std::string describe(const PerplexityMode& mode) {
  std::string s = mode.with_gamma ? "with_gamma(" + std::to_string(mode.env) + ")" : "beta_only";
  if (mode.protocol == PerplexityProtocol::full_doc) {
    s += "/full_doc";
  } else {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "/doc_completion(%g)", mode.ratio);
    s += buf;
  }
  return s;
}

EvalReport perplexity(const TrainedModel& model, const Corpus& test, const PerplexityMode& mode,
                      const RngStream& rng) {
  if (!(test.vocab == model.vocab)) throw VocabMismatch("perplexity: test vocabulary differs from the model's");
  if (mode.protocol == PerplexityProtocol::doc_completion && !(mode.ratio > 0.0 && mode.ratio < 1.0)) {
    throw DomainError("perplexity: completion ratio must lie in (0, 1)");
  }
  const Matrix* gamma = gamma_for(model, mode);

  std::vector<std::uint64_t> term_keys(model.vocab_size());
  for (std::size_t v = 0; v < term_keys.size(); ++v) term_keys[v] = hash_string(model.vocab.term(v));

  const std::size_t D = test.docs.size();
  std::vector<DocScore> scores(D);
  const std::size_t chunks = (D + kDocsPerChunk - 1) / kDocsPerChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kDocsPerChunk, end = std::min(D, begin + kDocsPerChunk);
    std::vector<Document> observed;
    std::vector<Document> scored;
    std::vector<std::size_t> slot;
    for (std::size_t i = begin; i < end; ++i) {
      const Document& doc = test.docs[i];
      scores[i].env = doc.env;
      if (doc.total() == 0) {
        scores[i].skipped = true;
        continue;
      }
      if (mode.protocol == PerplexityProtocol::full_doc) {
        observed.push_back(doc);
        scored.push_back(doc);
      } else {
        const std::string key = doc.raw_id.empty() ? "#" + std::to_string(i) : doc.raw_id;
        try {
          HeldoutSplit split = split_heldout_words(doc, mode.ratio, rng.split(hash_string(key)), term_keys);
          observed.push_back(std::move(split.observed));
          scored.push_back(std::move(split.held));
        } catch (const DegenerateDocument&) {
          scores[i].skipped = true;
          continue;
        }
      }
      slot.push_back(i);
    }
    if (slot.empty()) return;
    const Matrix theta = infer_theta(model, observed);
    for (std::size_t j = 0; j < slot.size(); ++j) {
      const auto rates = word_rates(theta.row(j), model.beta_hat, gamma, model.config.rate_form);
      DocScore& s = scores[slot[j]];
      s.ll = log_likelihood(scored[j].counts, rates);
      s.tokens = scored[j].total();
    }
  });

  EvalReport report;
  report.mode = mode;
  std::map<std::size_t, std::pair<double, std::size_t>> by_env;
  for (const DocScore& s : scores) {
    if (s.skipped) {
      ++report.skipped_docs;
      continue;
    }
    report.log_likelihood += s.ll;
    report.token_count += s.tokens;
    auto& e = by_env[s.env];
    e.first += s.ll;
    e.second += s.tokens;
  }
  if (report.token_count == 0) throw DegenerateDocument("perplexity: no scorable tokens in the test corpus");
  report.perplexity = std::exp(-report.log_likelihood / static_cast<double>(report.token_count));
  for (const auto& [env, acc] : by_env) {
    report.per_env_breakdown[env] = std::exp(-acc.first / static_cast<double>(acc.second));
  }
  return report;
}

std::vector<TermId> top_word_ids(const TrainedModel& model, std::size_t topic, TopicSource source,
                                 std::size_t n) {
  if (topic >= model.num_topics()) throw IndexOutOfRange("top_words: topic " + std::to_string(topic) + " out of range");
  const Matrix* weights = &model.beta_hat;
  if (!source.global) {
    if (!model.has_gamma()) throw NoGammaVariant("top_words: model has no environment deviations");
    if (source.env >= model.gamma_hat.size()) {
      throw IndexOutOfRange("top_words: environment " + std::to_string(source.env) + " out of range");
    }
    weights = &model.gamma_hat[source.env];
  }
  const auto row = weights->row(topic);
  std::vector<TermId> ids(row.size());
  std::iota(ids.begin(), ids.end(), TermId{0});
  n = std::min(n, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                    [&](TermId a, TermId b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
  ids.resize(n);
  return ids;
}

std::vector<std::string> top_words(const TrainedModel& model, std::size_t topic, TopicSource source,
                                   std::size_t n) {
  std::vector<std::string> out;
  for (TermId id : top_word_ids(model, topic, source, n)) out.push_back(model.vocab.term(id));
  return out;
}

std::vector<double> npmi_per_topic(const TrainedModel& model, const Corpus& ref, std::size_t top_n,
                                   double eps) {
  if (ref.docs.empty()) throw DomainError("npmi: reference corpus is empty");
  const double D = static_cast<double>(ref.docs.size());
  std::vector<double> out;
  for (std::size_t k = 0; k < model.num_topics(); ++k) {
    // Reference ids of the topic's top words; words unknown to ref are dropped.
    std::vector<TermId> ids;
    for (const auto& w : top_words(model, k, TopicSource::beta(), top_n)) {
      if (auto id = ref.vocab.id(w)) ids.push_back(*id);
    }
    const std::size_t m = ids.size();
    std::vector<double> df(m, 0.0);
    Matrix joint(m, m);
    std::vector<char> present(m);
    for (const auto& doc : ref.docs) {
      for (std::size_t i = 0; i < m; ++i) {
        present[i] = std::binary_search(doc.counts.begin(), doc.counts.end(), TermCount{ids[i], 0},
                                        [](const TermCount& a, const TermCount& b) { return a.term < b.term; });
        if (present[i]) df[i] += 1.0;
      }
      for (std::size_t i = 0; i < m; ++i) {
        if (!present[i]) continue;
        for (std::size_t j = i + 1; j < m; ++j) {
          if (present[j]) joint(i, j) += 1.0;
        }
      }
    }
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i + 1; j < m; ++j) {
        if (df[i] == 0.0 || df[j] == 0.0) continue;
        const double pij = joint(i, j) / D;
        const double pi = df[i] / D, pj = df[j] / D;
        ++pairs;
        if (pij == 1.0) continue;  // contributes 0
        total += std::log((pij + eps) / (pi * pj)) / -std::log(pij + eps);
      }
    }
    if (pairs > 0) out.push_back(total / static_cast<double>(pairs));
  }
  return out;
}

double npmi(const TrainedModel& model, const Corpus& ref, std::size_t top_n, double eps) {
  const auto per_topic = npmi_per_topic(model, ref, top_n, eps);
  if (per_topic.empty()) return 0.0;
  return std::accumulate(per_topic.begin(), per_topic.end(), 0.0) / static_cast<double>(per_topic.size());
}

std::vector<double> sparsity(const TrainedModel& model, double threshold) {
  if (!model.has_gamma()) throw NoGammaVariant("sparsity: model has no environment deviations");
  std::vector<double> out;
  for (const auto& g : model.gamma_hat) {
    std::size_t small = 0;
    for (double x : g.data()) {
      if (std::abs(x) < threshold) ++small;
    }
    out.push_back(static_cast<double>(small) / static_cast<double>(g.size()));
  }
  return out;
}

CountOppositeReport count_opposite(const TrainedModel& model, const Corpus& test, std::size_t top_n) {
  if (model.num_envs() != 2 || model.gamma_hat.size() != 2) {
    throw RequiresTwoEnvironments("count_opposite: needs a model with exactly two environments");
  }
  if (!(test.vocab == model.vocab)) throw VocabMismatch("count_opposite: test vocabulary differs from the model's");
  const std::size_t K = model.num_topics(), V = model.vocab_size();
  const auto assigned = argmax_topics(model, test.docs);

  // freq[k][e] holds token counts per word for docs assigned to topic k in env e.
  std::vector<std::array<std::vector<double>, 2>> counts(K);
  std::vector<std::array<double, 2>> totals(K, {0.0, 0.0});
  for (auto& c : counts) c = {std::vector<double>(V, 0.0), std::vector<double>(V, 0.0)};
  for (std::size_t i = 0; i < test.docs.size(); ++i) {
    const Document& doc = test.docs[i];
    if (doc.env > 1) throw EnvOutOfRange("count_opposite: document environment out of range");
    for (const auto& tc : doc.counts) {
      counts[assigned[i]][doc.env][tc.term] += tc.count;
      totals[assigned[i]][doc.env] += tc.count;
    }
  }

  CountOppositeReport report;
  report.counts.assign(2, std::vector<int>(K, -1));
  std::vector<double> cells;
  for (std::size_t e = 0; e < 2; ++e) {
    const std::size_t o = 1 - e;
    for (std::size_t k = 0; k < K; ++k) {
      if (totals[k][e] == 0.0 || totals[k][o] == 0.0) continue;
      int n = 0;
      for (TermId w : top_word_ids(model, k, TopicSource::gamma(e), top_n)) {
        if (counts[k][o][w] / totals[k][o] > counts[k][e][w] / totals[k][e]) ++n;
      }
      report.counts[e][k] = n;
      cells.push_back(n);
    }
  }
  report.median = cells.empty() ? std::numeric_limits<double>::quiet_NaN() : median_of(cells);
  return report;
}

}  // namespace mtm
