#include "mtm/causal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mtm/errors.hpp"
#include "mtm/evaluation.hpp"
#include "mtm/rng.hpp"

namespace mtm {

void ExperimentSpec::validate() const {
  if (!(base_p >= 0.0 && base_p <= 1.0)) throw ConfigError("base_p must lie in [0, 1]");
  if (min_hits < 1) throw ConfigError("min_hits must be >= 1");
  if (!std::isfinite(bump)) throw ConfigError("bump must be finite");
  for (const auto& list : keyword_lists) {
    if (list.tokens.empty()) throw ConfigError("keyword list '" + list.name + "' is empty");
  }
}

const Coefficient& CausalResult::at(const std::string& name) const {
  for (const auto& c : coefs) {
    if (c.name == name) return c;
  }
  throw IndexOutOfRange("no coefficient named '" + name + "'");
}

std::vector<std::uint8_t> assign_treatment(const Matrix& theta, std::size_t topic) {
  const std::size_t t[] = {topic};
  return assign_treatment(theta, t);
}

std::vector<std::uint8_t> assign_treatment(const Matrix& theta, std::span<const std::size_t> topics) {
  if (topics.empty()) throw IndexOutOfRange("assign_treatment: no topics given");
  for (std::size_t k : topics) {
    if (k >= theta.cols()) throw IndexOutOfRange("assign_treatment: topic " + std::to_string(k) + " out of range");
  }
  const std::size_t first = *std::min_element(topics.begin(), topics.end());
  std::vector<std::uint8_t> out(theta.rows(), 0);
  for (std::size_t i = 0; i < theta.rows(); ++i) {
    const auto row = theta.row(i);
    double mass = 0.0;
    for (std::size_t k : topics) mass += row[k];
    bool wins = true;
    for (std::size_t j = 0; j < row.size() && wins; ++j) {
      if (std::find(topics.begin(), topics.end(), j) != topics.end()) continue;
      // Ties with an earlier topic go to that topic.
      wins = j < first ? mass > row[j] : mass >= row[j];
    }
    out[i] = wins ? 1 : 0;
  }
  return out;
}

TopicMatch match_topic(const TrainedModel& model, std::span<const std::string> keywords, std::size_t top_n) {
  if (keywords.empty()) throw DomainError("match_topic: keyword list is empty");
  TopicMatch best;
  for (std::size_t k = 0; k < model.num_topics(); ++k) {
    std::size_t overlap = 0;
    for (const auto& w : top_words(model, k, TopicSource::beta(), top_n)) {
      if (std::find(keywords.begin(), keywords.end(), w) != keywords.end()) ++overlap;
    }
    if (overlap > best.overlap) {
      best = {k, overlap, {k}};
    } else if (overlap == best.overlap && overlap > 0) {
      best.tied.push_back(k);
    }
  }
  if (best.overlap == 0) throw NoOverlap("match_topic: no topic shares a top word with the keywords");
  return best;
}

std::size_t keyword_hits(const Document& doc, const Vocabulary& vocab, std::span<const std::string> keywords) {
  std::vector<TermId> ids;
  for (const auto& w : keywords) {
    if (auto id = vocab.id(w)) ids.push_back(*id);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::size_t hits = 0;
  for (const auto& tc : doc.counts) {
    if (std::binary_search(ids.begin(), ids.end(), tc.term)) ++hits;
  }
  return hits;
}

SemiSyntheticSample semi_synthetic_outcomes(const Corpus& corpus, const ExperimentSpec& spec) {
  spec.validate();
  const std::size_t D = corpus.docs.size();
  const std::size_t L = spec.keyword_lists.size();
  std::vector<std::vector<std::uint8_t>> hits(L, std::vector<std::uint8_t>(D, 0));
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t d = 0; d < D; ++d) {
      hits[l][d] = keyword_hits(corpus.docs[d], corpus.vocab, spec.keyword_lists[l].tokens) >= spec.min_hits;
    }
  }

  const RngStream root(spec.seed, 0xCA5A);
  std::vector<std::uint8_t> taken(D, 0);
  SemiSyntheticSample out;
  auto draw = [&](std::vector<std::size_t> pool, std::size_t n, int stratum, RngStream rng,
                  const std::string& label) {
    if (pool.size() < n) {
      throw InsufficientDocs("stratum '" + label + "' has " + std::to_string(pool.size()) +
                             " eligible documents, needs " + std::to_string(n));
    }
    rng.shuffle(pool);
    pool.resize(n);
    std::sort(pool.begin(), pool.end());
    for (std::size_t d : pool) {
      taken[d] = 1;
      out.docs.push_back(d);
      out.stratum.push_back(stratum);
    }
  };
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<std::size_t> pool;
    for (std::size_t d = 0; d < D; ++d) {
      if (hits[l][d] && !taken[d]) pool.push_back(d);
    }
    draw(std::move(pool), spec.samples_per_list, static_cast<int>(l), root.split(l), spec.keyword_lists[l].name);
  }
  std::vector<std::size_t> rest;
  for (std::size_t d = 0; d < D; ++d) {
    if (!taken[d]) rest.push_back(d);
  }
  draw(std::move(rest), spec.extra_samples, -1, root.split(L), "extra");

  RngStream y_rng = root.split(L + 1);
  for (std::size_t d : out.docs) {
    bool bumped = false;
    for (std::size_t l = 0; l < L; ++l) bumped = bumped || hits[l][d];
    out.bumped.push_back(bumped ? 1 : 0);
    out.y.push_back((y_rng.bernoulli(spec.base_p) ? 1.0 : 0.0) + (bumped ? spec.bump : 0.0));
  }
  return out;
}

Covariates environment_dummies(const Corpus& corpus, std::span<const std::size_t> docs) {
  const std::size_t E = std::max<std::size_t>(1, corpus.num_envs);
  std::vector<std::size_t> seen(E, 0);
  for (std::size_t d : docs) {
    const std::size_t e = corpus.docs.at(d).env;
    if (e >= E) throw EnvOutOfRange("environment_dummies: document environment out of range");
    ++seen[e];
  }
  std::vector<std::size_t> levels;
  for (std::size_t e = 0; e < E; ++e) {
    if (seen[e] > 0) levels.push_back(e);
  }
  Covariates c;
  if (levels.size() < 2) {
    c.X = Matrix(docs.size(), 0);
    return c;
  }
  c.X = Matrix(docs.size(), levels.size() - 1);
  for (std::size_t j = 1; j < levels.size(); ++j) {
    const std::size_t e = levels[j];
    c.names.push_back("env:" + (e < corpus.env_names.size() ? corpus.env_names[e] : std::to_string(e)));
    for (std::size_t i = 0; i < docs.size(); ++i) c.X(i, j - 1) = corpus.docs[docs[i]].env == e ? 1.0 : 0.0;
  }
  return c;
}

CausalResult estimate_ate(std::span<const double> y, std::span<const std::uint8_t> treatment,
                          const Covariates& covariates) {
  const std::size_t n = y.size();
  const std::size_t q = covariates.X.cols();
  if (treatment.size() != n) throw ShapeMismatch("estimate_ate: treatment length differs from outcome length");
  if (q > 0 && covariates.X.rows() != n) throw ShapeMismatch("estimate_ate: covariate rows differ from outcome length");
  const std::size_t p = 2 + q;
  if (n <= p) throw RankDeficient("estimate_ate: need more observations than regressors");
  Matrix design(n, p);
  std::size_t treated = 0;
  for (std::size_t i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = treatment[i] ? 1.0 : 0.0;
    treated += treatment[i] ? 1 : 0;
    for (std::size_t j = 0; j < q; ++j) design(i, 2 + j) = covariates.X(i, j);
  }
  const LeastSquaresResult fit = least_squares(design, y);

  CausalResult r;
  r.n = n;
  r.treated_count = treated;
  r.rss = fit.rss;
  const double dof = static_cast<double>(n - p);
  for (std::size_t j = 0; j < p; ++j) {
    Coefficient c;
    c.name = j == 0 ? "const" : j == 1 ? "T" : (j - 2 < covariates.names.size() ? covariates.names[j - 2] : "x" + std::to_string(j - 2));
    c.estimate = fit.coef[j];
    c.std_err = std::sqrt(fit.residual_variance * fit.xtx_inverse(j, j));
    if (c.std_err > 0.0) {
      c.t_stat = c.estimate / c.std_err;
      c.p_value = std::min(1.0, 2.0 * t_sf(std::abs(c.t_stat), dof));
    } else {
      // Exact fit: the estimate carries no sampling error.
      c.t_stat = c.estimate == 0.0 ? 0.0 : std::copysign(INFINITY, c.estimate);
      c.p_value = c.estimate == 0.0 ? 1.0 : 0.0;
    }
    r.coefs.push_back(c);
  }
  return r;
}

std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

std::string regression_table(const CausalResult& result, const std::string& title) {
  std::ostringstream os;
  char line[160];
  if (!title.empty()) os << title << "\n";
  std::snprintf(line, sizeof(line), "%-16s %10s %10s %9s %10s\n", "", "coef", "std.err", "t", "p");
  os << line;
  for (const auto& c : result.coefs) {
    std::snprintf(line, sizeof(line), "%-16s %10.3f %10.3f %9.2f %10.4f %s\n", c.name.c_str(), c.estimate, c.std_err,
                  c.t_stat, c.p_value, significance_stars(c.p_value).c_str());
    os << line;
  }
  std::snprintf(line, sizeof(line), "n = %zu, treated = %zu, residual SS = %.4f\n", result.n, result.treated_count,
                result.rss);
  os << line << "*** p<0.001, ** p<0.01, * p<0.05\n";
  return os.str();
}

PlantedData generate_planted(const PlantedSpec& spec) {
  if (spec.num_topics < 2) throw ConfigError("generate_planted: needs at least two topics");
  if (spec.num_keywords < 1 || spec.num_keywords >= spec.vocab_size) {
    throw ConfigError("generate_planted: num_keywords must lie in [1, vocab_size)");
  }
  SyntheticSpec base;
  base.num_docs = 1;
  base.vocab_size = spec.vocab_size;
  base.num_topics = spec.num_topics;
  base.num_envs = spec.num_envs;
  base.tokens_per_doc = spec.tokens_per_doc;
  base.gamma_sparsity = spec.gamma_sparsity;
  base.gamma_scale = spec.gamma_scale;
  base.seed = spec.seed;
  PlantedData out;
  out.data = generate_synthetic(base);
  TrueParams& truth = out.data.truth;
  Corpus& corpus = out.data.corpus;
  const std::size_t D = spec.num_docs, K = spec.num_topics, E = spec.num_envs, W = spec.num_keywords;

  for (std::size_t v = 0; v < W; ++v) {
    out.keywords.push_back(corpus.vocab.term(static_cast<TermId>(v)));
    truth.beta(0, v) += spec.keyword_boost;
    for (std::size_t k = 1; k < K; ++k) truth.beta(k, v) += spec.keyword_damp;
    for (std::size_t e = 0; e < E; ++e) {
      for (std::size_t k = 0; k < K; ++k) {
        truth.gamma[e](k, v) = 0.0;
        truth.support_mask[(e * K + k) * spec.vocab_size + v] = 0;
      }
    }
  }

  RngStream doc_rng = RngStream(spec.seed, 0x5EED).split(3);
  truth.doc_thetas = Matrix(D, K);
  corpus.docs.clear();
  corpus.docs.reserve(D);
  for (std::size_t d = 0; d < D; ++d) {
    const std::size_t env = doc_rng.uniform_index(E);
    const double frac = E > 1 ? static_cast<double>(env) / static_cast<double>(E - 1) : 0.0;
    const double share = spec.planted_share_high - frac * (spec.planted_share_high - spec.planted_share_low);
    const std::size_t z = doc_rng.bernoulli(share) ? 0 : 1 + doc_rng.uniform_index(K - 1);
    auto theta = truth.doc_thetas.row(d);
    for (std::size_t k = 0; k < K; ++k) theta[k] = std::exp(doc_rng.normal() + (k == z ? spec.dominance : 0.0));
    Document doc = sample_document(theta, truth.beta, &truth.gamma[env], spec.tokens_per_doc, doc_rng);
    doc.env = env;
    doc.raw_id = "d" + std::to_string(d);
    corpus.docs.push_back(std::move(doc));
    out.dominant.push_back(z);
  }
  return out;
}

Matrix true_proportions(const TrueParams& truth) {
  Matrix p = truth.doc_thetas;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const auto row = normalize_l1(p.row(i));
    std::copy(row.begin(), row.end(), p.row(i).begin());
  }
  return p;
}

namespace {

CausalResult run_pipeline(const Matrix& theta, std::span<const std::size_t> topics, const SemiSyntheticSample& sample,
                          const Covariates& covariates) {
  const auto t_all = assign_treatment(theta, topics);
  std::vector<std::uint8_t> t;
  for (std::size_t d : sample.docs) t.push_back(t_all[d]);
  return estimate_ate(sample.y, t, covariates);
}

}  // namespace

RecoveryResult end_to_end_recovery(const RecoverySpec& spec) {
  const PlantedData planted = generate_planted(spec.data);
  const Corpus& corpus = planted.data.corpus;
  ExperimentSpec experiment = spec.experiment;
  experiment.keyword_lists = {{"planted", planted.keywords}};
  const SemiSyntheticSample sample = semi_synthetic_outcomes(corpus, experiment);
  const Covariates covariates = environment_dummies(corpus, sample.docs);

  RecoveryResult r;
  r.true_effect = experiment.bump;
  const std::size_t planted_topic[] = {0};
  r.oracle = run_pipeline(true_proportions(planted.data.truth), planted_topic, sample, covariates);
  if (!spec.train_models) return r;

  auto fit = [&](PriorVariant variant, std::optional<CausalResult>& result, std::optional<TopicMatch>& match) {
    ModelConfig config = spec.model;
    config.num_topics = spec.data.num_topics;
    config.prior.variant = variant;
    const TrainedModel model = train(corpus, config);
    match = match_topic(model, planted.keywords);
    result = run_pipeline(infer_theta(model, corpus.docs), match->tied, sample, covariates);
  };
  fit(spec.model.prior.variant == PriorVariant::vtm ? PriorVariant::ard : spec.model.prior.variant, r.mtm, r.mtm_match);
  fit(PriorVariant::vtm, r.vtm, r.vtm_match);
  return r;
}

}  // namespace mtm
