#include "doctest.h"

#include <cmath>
#include <numbers>
#include <vector>

#include "mtm/errors.hpp"
#include "mtm/model.hpp"
#include "oracles.hpp"

using namespace mtm;

namespace {

Matrix filled(std::size_t r, std::size_t c, std::vector<double> values) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < values.size(); ++i) m.data()[i] = values[i];
  return m;
}

Matrix random_matrix(RngStream& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  Matrix m(r, c);
  for (double& x : m.data()) x = rng.normal(0.0, sd);
  return m;
}

// Empirical word distribution of the docs in environment e.
std::vector<double> env_frequencies(const Corpus& c, const std::vector<std::size_t>& envs, std::size_t e) {
  std::vector<double> f(c.vocab.size(), 0.0);
  double total = 0;
  for (std::size_t d = 0; d < c.size(); ++d) {
    if (envs[d] != e) continue;
    for (const auto& tc : c.docs[d].counts) {
      f[tc.term] += tc.count;
      total += tc.count;
    }
  }
  for (double& x : f) x /= total;
  return f;
}

double tv(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(p[i] - q[i]);
  return 0.5 * s;
}

double mean_token_ll(const Corpus& c, const Matrix& thetas, const Matrix& beta, const EnvDeviations& gamma) {
  double ll = 0;
  std::size_t tokens = 0;
  for (std::size_t d = 0; d < c.size(); ++d) {
    const auto rates = word_rates(thetas.row(d), beta, gamma, c.docs[d].env, RateForm::log_additive);
    ll += log_likelihood(c.docs[d].counts, rates);
    tokens += c.docs[d].total();
  }
  return ll / tokens;
}

}  // namespace

TEST_CASE("word_rates fixtures") {
  const Matrix beta1 = filled(1, 3, {0.3, -1.0, 2.0});
  const Matrix zero(1, 3);
  const auto r = word_rates(std::vector<double>{1.0}, beta1, &zero, RateForm::log_additive);
  for (std::size_t v = 0; v < 3; ++v) CHECK(r[v] == doctest::Approx(std::exp(beta1(0, v))).epsilon(1e-15));

  const Matrix beta2(1, 2);
  const Matrix g = filled(1, 2, {std::log(2.0), 0.0});
  const auto r2 = word_rates(std::vector<double>{2.0}, beta2, &g, RateForm::log_additive);
  CHECK(r2[0] == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(r2[1] == doctest::Approx(2.0).epsilon(1e-15));

  const Matrix b3(2, 5), g3(2, 5);
  const auto r3 = word_rates(std::vector<double>{1.0, 1.0}, b3, &g3, RateForm::exp_sum);
  for (double x : r3) CHECK(x == 4.0);

  const EnvDeviations envs{g3};
  CHECK_THROWS_AS(word_rates(std::vector<double>{1.0, 1.0}, b3, envs, 1, RateForm::log_additive), EnvOutOfRange);
}

TEST_CASE("rates are positive and gamma zero matches the mixture oracle") {
  RngStream rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t K = 3, V = 9;
    const Matrix beta = random_matrix(rng, K, V, 3.0);
    const Matrix gamma = random_matrix(rng, K, V, 3.0);
    std::vector<double> theta(K);
    for (double& t : theta) t = std::exp(rng.normal(0, 2));
    for (RateForm form : {RateForm::log_additive, RateForm::exp_sum}) {
      for (double x : word_rates(theta, beta, &gamma, form)) CHECK(x > 0.0);
    }
    const Matrix zero(K, V);
    const auto with_zero = normalize_l1(word_rates(theta, beta, &zero, RateForm::log_additive));
    const auto no_gamma = normalize_l1(word_rates(theta, beta, nullptr, RateForm::log_additive));
    // sum_k theta_k softmax(beta_k) Z_k / sum_k theta_k Z_k
    std::vector<double> mix(V, 0.0);
    double mass = 0;
    for (std::size_t k = 0; k < K; ++k) {
      double z = 0;
      for (std::size_t v = 0; v < V; ++v) z += std::exp(beta(k, v));
      for (std::size_t v = 0; v < V; ++v) mix[v] += theta[k] * z * (std::exp(beta(k, v)) / z);
      mass += theta[k] * z;
    }
    for (std::size_t v = 0; v < V; ++v) {
      CHECK(with_zero[v] == doctest::Approx(mix[v] / mass).epsilon(1e-12));
      CHECK(no_gamma[v] == with_zero[v]);
    }
  }
}

TEST_CASE("log_likelihood") {
  const std::vector<TermCount> one{{0, 1}};
  CHECK(log_likelihood(one, std::vector<double>{1, 1}) == doctest::Approx(std::log(0.5)));
  const std::vector<TermCount> c{{0, 2}, {1, 1}};
  const double expected = 2 * std::log(2.0 / 3) + std::log(1.0 / 3);
  CHECK(log_likelihood(c, std::vector<double>{2, 1}) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(-1.90954250488));
  for (double scale : {1e-3, 0.5, 7.0, 1e6}) {
    CHECK(log_likelihood(c, std::vector<double>{2 * scale, scale}) == doctest::Approx(expected).epsilon(1e-13));
  }
}

TEST_CASE("log_prior_gamma") {
  const std::size_t E = 2, K = 3, V = 4;
  const EnvDeviations zero(E, Matrix(K, V));
  PriorSpec ard;
  ard.ard_a = 1;
  ard.ard_b = 1;
  CHECK(log_prior_gamma(zero, ard) == doctest::Approx(E * K * V * student_t_logpdf(0, 2, 1)).epsilon(1e-14));

  PriorSpec defaults;
  const EnvDeviations tenth(1, Matrix(1, 1, 0.1));
  CHECK(std::fabs(log_prior_gamma(tenth, defaults) - oracle::gamma_mixed_normal_logpdf(0.1, 3.7, 0.34)) < 1e-6);

  PriorSpec normal;
  normal.variant = PriorVariant::normal;
  const double c = -0.5 * std::log(2 * std::numbers::pi);
  CHECK(log_prior_gamma(zero, normal) == doctest::Approx(E * K * V * c).epsilon(1e-14));
  CHECK(log_prior_gamma(EnvDeviations(1, Matrix(1, 1, 1.0)), normal) == doctest::Approx(c - 0.5).epsilon(1e-14));

  PriorSpec hs;
  hs.variant = PriorVariant::horseshoe;
  hs.hs_lambda = Matrix(1, 2);
  hs.hs_lambda(0, 0) = 0.4;
  hs.hs_lambda(0, 1) = 1.5;
  hs.hs_tau = 0.7;
  const Matrix g = filled(2, 2, {0.1, -0.3, 0.0, 2.0});
  double expected = 0;
  auto half_cauchy = [](double x) { return std::log(2.0 / (std::numbers::pi * (1 + x * x))); };
  for (std::size_t k = 0; k < 2; ++k) {
    const double sd = hs.hs_lambda(0, k) * hs.hs_tau;
    for (std::size_t v = 0; v < 2; ++v) expected += c - std::log(sd) - 0.5 * std::pow(g(k, v) / sd, 2);
    expected += half_cauchy(hs.hs_lambda(0, k));
  }
  expected += half_cauchy(hs.hs_tau);
  CHECK(log_prior_gamma(EnvDeviations{g}, hs) == doctest::Approx(expected).epsilon(1e-13));

  PriorSpec vtm;
  vtm.variant = PriorVariant::vtm;
  CHECK_THROWS_AS(log_prior_gamma(zero, vtm), VariantMismatch);
}

TEST_CASE("log_prior_global") {
  const double c = -0.5 * std::log(2 * std::numbers::pi);
  CHECK(log_prior_global(Matrix(2, 3), Matrix(4, 2)) == doctest::Approx(14 * c).epsilon(1e-14));
  CHECK(log_prior_global(Matrix(1, 1, 1.0), Matrix()) == doctest::Approx(c - 0.5).epsilon(1e-14));
}

TEST_CASE("config validation and names") {
  ModelConfig ok;
  CHECK_NOTHROW(ok.validate());
  CHECK(ok.num_topics == 20);
  CHECK(ok.epochs == 150);
  CHECK(ok.lr == 0.01);
  CHECK(ok.eb_steps_per_model_step == 2);
  ModelConfig bad = ok;
  bad.num_topics = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.prior.ard_a = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.hidden_layers = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  for (auto v : {PriorVariant::vtm, PriorVariant::normal, PriorVariant::ard, PriorVariant::horseshoe}) {
    CHECK(parse_prior_variant(to_string(v)) == v);
  }
  CHECK(parse_rate_form("exp_sum") == RateForm::exp_sum);
  CHECK_THROWS_AS(parse_prior_variant("lda"), ConfigError);
}

TEST_CASE("generate_synthetic") {
  SyntheticSpec spec;
  spec.num_docs = 100;
  const auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  CHECK(a.corpus.docs == b.corpus.docs);
  CHECK(a.truth.beta == b.truth.beta);
  CHECK(a.truth.gamma == b.truth.gamma);
  for (std::size_t e = 0; e < spec.num_envs; ++e) {
    for (std::size_t k = 0; k < spec.num_topics; ++k) {
      for (std::size_t v = 0; v < spec.vocab_size; ++v) {
        CHECK(a.truth.supported(e, k, v) == (a.truth.gamma[e](k, v) != 0.0));
      }
    }
  }
  for (const auto& d : a.corpus.docs) CHECK(d.total() == spec.tokens_per_doc);

  spec.gamma_sparsity = 1.0;
  const auto dense = generate_synthetic(spec);
  for (auto m : dense.truth.support_mask) CHECK(m == 0);
}

TEST_CASE("environment word distributions diverge beyond a label-permutation null") {
  SyntheticSpec spec;
  spec.num_docs = 2000;
  spec.vocab_size = 100;
  spec.num_topics = 5;
  const auto data = generate_synthetic(spec);
  std::vector<std::size_t> envs;
  for (const auto& d : data.corpus.docs) envs.push_back(d.env);
  const double observed = tv(env_frequencies(data.corpus, envs, 0), env_frequencies(data.corpus, envs, 1));
  RngStream rng(77);
  double null_max = 0;
  for (int i = 0; i < 20; ++i) {
    auto shuffled = envs;
    rng.shuffle(shuffled);
    null_max = std::max(null_max, tv(env_frequencies(data.corpus, shuffled, 0), env_frequencies(data.corpus, shuffled, 1)));
  }
  MESSAGE("tv observed " << observed << " null max " << null_max);
  CHECK(observed > 2 * null_max);
}

TEST_CASE("true parameters score better than random parameters") {
  SyntheticSpec spec;
  spec.num_docs = 300;
  const auto data = generate_synthetic(spec);
  const double truth = mean_token_ll(data.corpus, data.truth.doc_thetas, data.truth.beta, data.truth.gamma);
  RngStream rng(5);
  for (int draw = 0; draw < 20; ++draw) {
    Matrix thetas = random_matrix(rng, spec.num_docs, spec.num_topics);
    for (double& t : thetas.data()) t = std::exp(t);
    const Matrix beta = random_matrix(rng, spec.num_topics, spec.vocab_size);
    EnvDeviations gamma;
    for (std::size_t e = 0; e < spec.num_envs; ++e) {
      Matrix g(spec.num_topics, spec.vocab_size);
      for (double& x : g.data()) x = rng.bernoulli(spec.gamma_sparsity) ? 0.0 : rng.normal();
      gamma.push_back(g);
    }
    CHECK(mean_token_ll(data.corpus, thetas, beta, gamma) < truth);
  }
}
