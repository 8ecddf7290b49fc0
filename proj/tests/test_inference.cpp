#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <vector>

#include "mtm/errors.hpp"
#include "mtm/gradcheck.hpp"
#include "mtm/inference.hpp"

using namespace mtm;

namespace {

Corpus small_corpus(std::size_t docs = 40, std::uint64_t seed = 0) {
  SyntheticSpec spec;
  spec.num_docs = docs;
  spec.vocab_size = 20;
  spec.num_topics = 3;
  spec.tokens_per_doc = 30;
  spec.seed = seed;
  return generate_synthetic(spec).corpus;
}

ModelConfig small_config(PriorVariant variant = PriorVariant::ard) {
  ModelConfig c;
  c.num_topics = 3;
  c.epochs = 3;
  c.batch_size = 16;
  c.hidden_units = 8;
  c.prior.variant = variant;
  return c;
}

std::vector<const Document*> pointers(const Corpus& c) {
  std::vector<const Document*> p;
  for (const auto& d : c.docs) p.push_back(&d);
  return p;
}

}  // namespace

TEST_CASE("analytic gradients match finite differences") {
  for (auto v : {PriorVariant::vtm, PriorVariant::normal, PriorVariant::ard, PriorVariant::horseshoe}) {
    for (auto f : {RateForm::log_additive, RateForm::exp_sum}) {
      GradCheckSpec spec;
      spec.variant = v;
      spec.rate_form = f;
      const auto report = check_elbo_gradients(spec);
      INFO(to_string(v) << " " << to_string(f));
      CHECK(report.max_rel_error <= 1e-4);
      CHECK(report.coordinates > 0);
    }
  }
  GradCheckSpec deep;
  deep.hidden_layers = 2;
  CHECK(check_elbo_gradients(deep).max_rel_error <= 1e-4);
}

TEST_CASE("encoder with zero weights returns the mu bias") {
  Encoder enc(6, 3, 5, 1);
  for (double& p : enc.params()) p = 0.0;
  enc.mu_bias()[0] = 0.25;
  enc.mu_bias()[1] = -1.5;
  enc.mu_bias()[2] = 3.0;
  Document empty;
  Document some;
  some.counts = {{1, 3}, {4, 1}};
  const std::vector<const Document*> batch{&empty, &some};
  for (auto mode : {EncoderMode::eval, EncoderMode::train}) {
    const auto out = enc.forward(batch, mode);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t k = 0; k < 3; ++k) CHECK(out.mu(i, k) == enc.mu_bias()[k]);
    }
  }
}

TEST_CASE("encoder clamps log sigma") {
  Encoder enc(4, 2, 3, 1);
  for (double& p : enc.params()) p = 0.0;
  enc.ls_bias()[0] = 40.0;
  enc.ls_bias()[1] = -40.0;
  Document d;
  d.counts = {{0, 1}};
  const std::vector<const Document*> batch{&d};
  const auto out = enc.forward(batch, EncoderMode::eval);
  CHECK(out.log_sigma(0, 0) == kLogSigmaMax);
  CHECK(out.log_sigma(0, 1) == kLogSigmaMin);
}

TEST_CASE("samples are mean plus sigma times the recorded noise") {
  const ModelConfig config = small_config();
  VariationalState state(20, 2, config);
  RngStream init(3);
  state.initialize(init);
  Matrix mus(4, 3, 0.2), log_sigmas(4, 3, -5.0);
  for (double& x : state.log_sigma_beta()) x = -5.0;
  const RngStream noise(9);
  const auto a = sample_latents(state, mus, log_sigmas, noise);
  const auto b = sample_latents(state, mus, log_sigmas, noise);
  CHECK(a.beta == b.beta);
  CHECK(a.theta == b.theta);
  CHECK(a.gamma == b.gamma);
  const double s = std::exp(-5.0);
  for (std::size_t i = 0; i < a.beta.size(); ++i) {
    CHECK(a.beta.data()[i] == state.mu_beta()[i] + s * a.z_beta.data()[i]);
  }
  for (std::size_t i = 0; i < a.theta.size(); ++i) {
    CHECK(a.theta.data()[i] == std::exp(0.2 + s * a.z_theta.data()[i]));
  }
  // Shrinking sigma shrinks the deviation from the mean proportionally.
  Matrix wider(4, 3, -4.0);
  const auto c = sample_latents(state, mus, wider, noise);
  for (std::size_t i = 0; i < c.log_theta.size(); ++i) {
    CHECK(c.log_theta.data()[i] - 0.2 == doctest::Approx(std::exp(1.0) * (a.log_theta.data()[i] - 0.2)).epsilon(1e-12));
  }
}

TEST_CASE("lognormal theta has the analytic mean") {
  ModelConfig config = small_config();
  config.num_topics = 1;
  VariationalState state(2, 1, config);
  RngStream init(1);
  state.initialize(init);
  const double mu = 0.3, sigma = 0.5;
  Matrix mus(100000, 1, mu), ls(100000, 1, std::log(sigma));
  const auto s = sample_latents(state, mus, ls, RngStream(17));
  double mean = 0;
  for (double t : s.theta.data()) mean += t;
  mean /= 100000;
  const double expected = std::exp(mu + 0.5 * sigma * sigma);
  CHECK(std::fabs(mean / expected - 1.0) < 0.01);
}

TEST_CASE("elbo with zero likelihood weight and tight q is nonpositive") {
  const Corpus c = small_corpus();
  for (auto v : {PriorVariant::normal, PriorVariant::ard, PriorVariant::horseshoe, PriorVariant::vtm}) {
    VariationalState state(c.vocab.size(), c.num_envs, small_config(v));
    RngStream init(2);
    state.initialize(init);
    for (double& x : state.log_sigma_beta()) x = kLogSigmaMin;
    for (std::size_t e = 0; state.has_gamma() && e < state.E(); ++e) {
      for (double& x : state.log_sigma_gamma(e)) x = kLogSigmaMin;
    }
    for (double& w : state.encoder.ls_weight()) w = 0.0;
    for (double& b : state.encoder.ls_bias()) b = kLogSigmaMin;
    const auto docs = pointers(c);
    ElboOptions opt;
    opt.likelihood_weight = 0.0;
    opt.compute_gradients = false;
    const auto r = elbo(docs, state, docs.size(), RngStream(4), opt);
    INFO(to_string(v));
    CHECK(r.value <= 0.0);
  }
}

TEST_CASE("doc part scales with the corpus size") {
  const Corpus c = small_corpus();
  VariationalState state(c.vocab.size(), c.num_envs, small_config());
  RngStream init(5);
  state.initialize(init);
  const auto docs = pointers(c);
  const std::vector<const Document*> batch(docs.begin(), docs.begin() + 10);
  const auto one = elbo(batch, state, 40, RngStream(6));
  const auto two = elbo(batch, state, 80, RngStream(6));
  CHECK(two.doc_part == doctest::Approx(2 * one.doc_part).epsilon(1e-13));
  CHECK(two.global_part == one.global_part);
  CHECK(one.value == doctest::Approx(one.global_part + one.doc_part).epsilon(1e-13));
}

TEST_CASE("empirical Bayes steps raise the averaged elbo") {
  const Corpus c = small_corpus();
  VariationalState state(c.vocab.size(), c.num_envs, small_config());
  RngStream init(8);
  state.initialize(init);
  const auto docs = pointers(c);
  auto averaged = [&](const VariationalState& s) {
    ElboOptions opt;
    opt.compute_gradients = false;
    double total = 0;
    for (std::uint64_t i = 0; i < 50; ++i) total += elbo(docs, s, docs.size(), RngStream(1000 + i), opt).value;
    return total / 50;
  };
  const double before = averaged(state);
  AdamState adam(2, 0.01);
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto eb = eb_objective(state, RngStream(50 + s));
    for (double& g : eb.grad) g = -g;
    adam_update(state.eb, eb.grad, adam);
  }
  const double after = averaged(state);
  MESSAGE("before " << before << " after " << after);
  CHECK(after >= before);
}

TEST_CASE("eb_objective gradient matches finite differences") {
  const Corpus c = small_corpus();
  VariationalState state(c.vocab.size(), c.num_envs, small_config());
  RngStream init(8);
  state.initialize(init);
  const RngStream noise(3);
  const auto eb = eb_objective(state, noise);
  const auto fd = finite_diff_grad(
      [&](std::span<const double> x) {
        VariationalState s = state;
        s.eb.assign(x.begin(), x.end());
        return eb_objective(s, noise).value;
      },
      state.eb);
  for (std::size_t i = 0; i < 2; ++i) CHECK(eb.grad[i] == doctest::Approx(fd[i]).epsilon(1e-6));
  VariationalState normal(c.vocab.size(), c.num_envs, small_config(PriorVariant::normal));
  CHECK_THROWS_AS(eb_objective(normal, noise), VariantMismatch);
}

TEST_CASE("training with zero epochs returns the initialized model") {
  const Corpus c = small_corpus();
  ModelConfig config = small_config();
  config.epochs = 0;
  const auto m = train(c, config);
  CHECK(m.training_log.empty());
  CHECK(m.num_topics() == 3);
  CHECK(m.vocab_size() == c.vocab.size());
  CHECK(m.gamma_hat.size() == c.num_envs);
}

TEST_CASE("training is deterministic and independent of the thread count") {
  const Corpus c = small_corpus(60);
  for (auto v : {PriorVariant::ard, PriorVariant::horseshoe, PriorVariant::vtm}) {
    const ModelConfig config = small_config(v);
    setenv("MULTITOPIC_THREADS", "1", 1);
    const auto a = train(c, config);
    setenv("MULTITOPIC_THREADS", "4", 1);
    const auto b = train(c, config);
    unsetenv("MULTITOPIC_THREADS");
    const auto d = train(c, config);
    CHECK(a == b);
    CHECK(a == d);
    CHECK(a.training_log.size() == config.epochs);
    CHECK(a.has_gamma() == (v != PriorVariant::vtm));
    for (double x : a.training_log) CHECK(std::isfinite(x));
  }
  ModelConfig other = small_config();
  other.seed = 1;
  CHECK_FALSE(train(c, other) == train(c, small_config()));
}

TEST_CASE("infer_theta returns proportions") {
  const Corpus c = small_corpus();
  const auto m = train(c, small_config());
  const Matrix theta = infer_theta(m, c.docs);
  for (std::size_t d = 0; d < c.size(); ++d) {
    double s = 0;
    for (double t : theta.row(d)) {
      CHECK(t > 0.0);
      s += t;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK(infer_theta(m, c.docs[0]) == infer_theta(m, c.docs[0]));
  const std::vector<Document> twins{c.docs[3], c.docs[3]};
  const Matrix tt = infer_theta(m, twins);
  CHECK(std::vector<double>(tt.row(0).begin(), tt.row(0).end()) ==
        std::vector<double>(tt.row(1).begin(), tt.row(1).end()));
}

TEST_CASE("training rejects documents outside the environment range") {
  Corpus c = small_corpus();
  c.docs[0].env = 7;
  CHECK_THROWS(train(c, small_config()));
}
