#include "mtm/model.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "mtm/errors.hpp"
#include "mtm/kernels.hpp"
#include "mtm/rng.hpp"

namespace mtm {

std::string_view to_string(RateForm form) {
  return form == RateForm::log_additive ? "log_additive" : "exp_sum";
}

std::string_view to_string(PriorVariant variant) {
  switch (variant) {
    case PriorVariant::vtm: return "vtm";
    case PriorVariant::normal: return "normal";
    case PriorVariant::ard: return "ard";
    case PriorVariant::horseshoe: return "horseshoe";
  }
  return "unknown";
}

RateForm parse_rate_form(std::string_view name) {
  if (name == "log_additive") return RateForm::log_additive;
  if (name == "exp_sum") return RateForm::exp_sum;
  throw ConfigError("unknown rate form '" + std::string(name) + "' (log_additive | exp_sum)");
}

PriorVariant parse_prior_variant(std::string_view name) {
  if (name == "vtm") return PriorVariant::vtm;
  if (name == "normal") return PriorVariant::normal;
  if (name == "ard") return PriorVariant::ard;
  if (name == "horseshoe") return PriorVariant::horseshoe;
  throw ConfigError("unknown prior '" + std::string(name) + "' (vtm | normal | ard | horseshoe)");
}

void ModelConfig::validate() const {
  if (num_topics < 1) throw ConfigError("num_topics must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (hidden_units < 1) throw ConfigError("hidden_units must be >= 1");
  if (hidden_layers != 1 && hidden_layers != 2) throw ConfigError("hidden_layers must be 1 or 2");
  if (!(prior.normal_sigma > 0.0)) throw ConfigError("normal_sigma must be positive");
  if (!(prior.ard_a > 0.0) || !(prior.ard_b > 0.0)) throw ConfigError("ard_a and ard_b must be positive");
  if (!(prior.hs_tau > 0.0) || !(prior.hs_init > 0.0)) throw ConfigError("horseshoe scales must be positive");
  for (double l : prior.hs_lambda.data()) {
    if (!(l > 0.0)) throw ConfigError("horseshoe local scales must be positive");
  }
}

std::vector<double> word_rates(std::span<const double> theta, const Matrix& beta,
                               const Matrix* gamma_e, RateForm form) {
  const std::size_t K = beta.rows();
  const std::size_t V = beta.cols();
  if (theta.size() != K) throw ShapeMismatch("word_rates: theta length != K");
  if (gamma_e != nullptr && (gamma_e->rows() != K || gamma_e->cols() != V)) {
    throw ShapeMismatch("word_rates: gamma slice shape != beta shape");
  }
  std::vector<double> rates(V, 0.0);
  std::vector<double> component(V);
  for (std::size_t k = 0; k < K; ++k) {
    const auto b = beta.row(k);
    if (gamma_e == nullptr) {
      for (std::size_t v = 0; v < V; ++v) component[v] = std::exp(b[v]);
    } else if (form == RateForm::log_additive) {
      const auto g = gamma_e->row(k);
      for (std::size_t v = 0; v < V; ++v) component[v] = std::exp(b[v] + g[v]);
    } else {
      const auto g = gamma_e->row(k);
      for (std::size_t v = 0; v < V; ++v) component[v] = std::exp(b[v]) + std::exp(g[v]);
    }
    kernels::axpy(theta[k], component, rates);
  }
  return rates;
}

std::vector<double> word_rates(std::span<const double> theta, const Matrix& beta,
                               const EnvDeviations& gamma, std::size_t env, RateForm form) {
  if (gamma.empty()) return word_rates(theta, beta, nullptr, form);
  if (env >= gamma.size()) {
    throw EnvOutOfRange("word_rates: environment " + std::to_string(env) + " >= " +
                        std::to_string(gamma.size()));
  }
  return word_rates(theta, beta, &gamma[env], form);
}

double log_likelihood(std::span<const TermCount> counts, std::span<const double> rates) {
  double total_rate = 0.0;
  for (double r : rates) total_rate += r;
  if (!(total_rate > 0.0)) throw ZeroMass("log_likelihood: rates sum to zero");
  const double log_total = std::log(total_rate);
  double ll = 0.0;
  for (const auto& tc : counts) {
    if (tc.term >= rates.size()) throw ShapeMismatch("log_likelihood: term id out of range");
    ll += tc.count * (std::log(rates[tc.term]) - log_total);
  }
  return ll;
}

double log_prior_gamma(const EnvDeviations& gamma, const PriorSpec& prior) {
  double lp = 0.0;
  switch (prior.variant) {
    case PriorVariant::vtm:
      throw VariantMismatch("log_prior_gamma: the vtm variant has no deviations");
    case PriorVariant::normal:
      for (const auto& g : gamma) {
        for (double x : g.data()) lp += normal_logpdf(x, 0.0, prior.normal_sigma);
      }
      return lp;
    case PriorVariant::ard: {
      const double dof = 2.0 * prior.ard_a;
      const double scale = std::sqrt(prior.ard_b / prior.ard_a);
      for (const auto& g : gamma) {
        for (double x : g.data()) lp += student_t_logpdf(x, dof, scale);
      }
      return lp;
    }
    case PriorVariant::horseshoe: {
      if (prior.hs_lambda.rows() != gamma.size()) {
        throw ShapeMismatch("log_prior_gamma: hs_lambda rows != number of environments");
      }
      for (std::size_t e = 0; e < gamma.size(); ++e) {
        for (std::size_t k = 0; k < gamma[e].rows(); ++k) {
          const double lambda = prior.hs_lambda(e, k);
          const double sd = lambda * prior.hs_tau;
          for (double x : gamma[e].row(k)) lp += normal_logpdf(x, 0.0, sd);
          lp += half_cauchy_logpdf(lambda, 1.0);
        }
      }
      return lp + half_cauchy_logpdf(prior.hs_tau, 1.0);
    }
  }
  return lp;
}

double log_prior_global(const Matrix& beta, const Matrix& log_theta) {
  const double c = -0.5 * std::log(2.0 * std::numbers::pi);
  double lp = 0.0;
  for (double x : beta.data()) lp += c - 0.5 * x * x;
  for (double x : log_theta.data()) lp += c - 0.5 * x * x;
  return lp;
}

Vocabulary synthetic_vocabulary(std::size_t vocab_size) {
  std::vector<std::string> terms;
  terms.reserve(vocab_size);
  char buf[32];
  for (std::size_t v = 0; v < vocab_size; ++v) {
    std::snprintf(buf, sizeof buf, "w%04zu", v);
    terms.emplace_back(buf);
  }
  return Vocabulary(std::move(terms));
}

Document sample_document(std::span<const double> theta, const Matrix& beta, const Matrix* gamma_e,
                         std::size_t num_tokens, RngStream& rng) {
  const auto rates = word_rates(theta, beta, gamma_e, RateForm::log_additive);
  const CategoricalSampler sampler(rates);
  std::vector<std::uint32_t> counts(beta.cols(), 0);
  for (std::size_t i = 0; i < num_tokens; ++i) ++counts[sampler(rng)];
  Document doc;
  for (std::size_t v = 0; v < counts.size(); ++v) {
    if (counts[v] > 0) doc.counts.push_back({static_cast<TermId>(v), counts[v]});
  }
  return doc;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_docs < 1 || spec.vocab_size < 1 || spec.num_topics < 1 || spec.num_envs < 1 ||
      spec.tokens_per_doc < 1) {
    throw ConfigError("generate_synthetic: all counts must be >= 1");
  }
  if (!(spec.gamma_sparsity >= 0.0 && spec.gamma_sparsity <= 1.0)) {
    throw ConfigError("generate_synthetic: gamma_sparsity must lie in [0, 1]");
  }
  const std::size_t D = spec.num_docs, V = spec.vocab_size, K = spec.num_topics,
                    E = spec.num_envs;
  const RngStream root(spec.seed, 0x5EED);
  RngStream param_rng = root.split(1);
  RngStream doc_rng = root.split(2);

  SyntheticData out;
  TrueParams& truth = out.truth;
  truth.beta = Matrix(K, V);
  for (double& x : truth.beta.data()) x = param_rng.normal();
  truth.gamma.assign(E, Matrix(K, V));
  truth.support_mask.assign(E * K * V, 0);
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t v = 0; v < V; ++v) {
        if (param_rng.bernoulli(spec.gamma_sparsity)) continue;
        double g = 0.0;
        while (g == 0.0) g = param_rng.normal(0.0, spec.gamma_scale);
        truth.gamma[e](k, v) = g;
        truth.support_mask[(e * K + k) * V + v] = 1;
      }
    }
  }

  Corpus& corpus = out.corpus;
  corpus.vocab = synthetic_vocabulary(V);
  corpus.num_envs = E;
  for (std::size_t e = 0; e < E; ++e) corpus.env_names.push_back("env" + std::to_string(e));
  truth.doc_thetas = Matrix(D, K);
  corpus.docs.reserve(D);
  for (std::size_t d = 0; d < D; ++d) {
    const std::size_t env = doc_rng.uniform_index(E);
    auto theta = truth.doc_thetas.row(d);
    for (double& t : theta) t = std::exp(doc_rng.normal());
    Document doc = sample_document(theta, truth.beta, &truth.gamma[env], spec.tokens_per_doc, doc_rng);
    doc.env = env;
    doc.raw_id = "d" + std::to_string(d);
    corpus.docs.push_back(std::move(doc));
  }
  return out;
}

}  // namespace mtm
