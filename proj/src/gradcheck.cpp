#include "mtm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mtm/inference.hpp"

namespace mtm {

GradCheckReport check_elbo_gradients(const GradCheckSpec& spec) {
  SyntheticSpec gen;
  gen.num_docs = spec.num_docs;
  gen.vocab_size = spec.vocab_size;
  gen.num_topics = spec.num_topics;
  gen.num_envs = spec.num_envs;
  gen.tokens_per_doc = 20;
  gen.gamma_sparsity = 0.5;
  gen.seed = spec.seed;
  const SyntheticData data = generate_synthetic(gen);

  ModelConfig config;
  config.num_topics = spec.num_topics;
  config.rate_form = spec.rate_form;
  config.prior.variant = spec.variant;
  config.hidden_units = spec.hidden_units;
  config.hidden_layers = spec.hidden_layers;

  VariationalState state(spec.vocab_size, spec.num_envs, config);
  RngStream rng(spec.seed, 0x6C4E);
  RngStream init = rng.split(0);
  state.initialize(init);

  // Move away from the symmetric initialization so every term is exercised.
  RngStream perturb = rng.split(1);
  const std::size_t KV = state.K() * state.V();
  for (std::size_t i = 0; i < KV; ++i) {
    state.mu_beta()[i] = perturb.normal(0.0, 0.5);
    state.log_sigma_beta()[i] = -1.5 + perturb.uniform();
  }
  if (state.has_gamma()) {
    for (std::size_t e = 0; e < state.E(); ++e) {
      for (std::size_t i = 0; i < KV; ++i) {
        state.mu_gamma(e)[i] = perturb.normal(0.0, 0.3);
        state.log_sigma_gamma(e)[i] = -1.5 + perturb.uniform();
      }
    }
  }
  if (spec.variant == PriorVariant::horseshoe) {
    for (double& l : state.log_hs_lambda()) l = std::log(0.2 + 0.6 * perturb.uniform());
    state.log_hs_tau() = std::log(0.3 + 0.4 * perturb.uniform());
  }
  state.eb = {std::log(1.0 + 4.0 * perturb.uniform()), std::log(0.1 + 0.5 * perturb.uniform())};

  std::vector<const Document*> batch;
  for (const auto& d : data.corpus.docs) batch.push_back(&d);
  const RngStream noise = rng.split(2);
  const std::size_t total_docs = 2 * batch.size();

  const ElboResult analytic = elbo(batch, state, total_docs, noise);

  struct Block {
    const char* name;
    std::vector<double>* params;
    const std::vector<double>* grad;
  };
  std::vector<double> encoder_params(state.encoder.params().begin(), state.encoder.params().end());
  const bool check_eb = spec.variant == PriorVariant::ard;
  std::vector<Block> blocks = {{"globals", &state.globals, &analytic.grads.globals},
                               {"encoder", &encoder_params, &analytic.grads.encoder}};
  if (check_eb) blocks.push_back({"eb", &state.eb, &analytic.grads.eb});

  GradCheckReport report;
  for (const Block& b : blocks) {
    std::vector<double> base = *b.params;
    auto f = [&](std::span<const double> x) {
      std::copy(x.begin(), x.end(), b.params->begin());
      if (b.params == &encoder_params) {
        std::copy(x.begin(), x.end(), state.encoder.params().begin());
      }
      const double v = elbo(batch, state, total_docs, noise, {.compute_gradients = false}).value;
      std::copy(base.begin(), base.end(), b.params->begin());
      if (b.params == &encoder_params) {
        std::copy(base.begin(), base.end(), state.encoder.params().begin());
      }
      return v;
    };
    const std::vector<double> numeric = finite_diff_grad(f, base);
    GradCheckBlock out{b.name, base.size(), 0.0};
    for (std::size_t i = 0; i < base.size(); ++i) {
      const double a = (*b.grad)[i];
      const double fd = numeric[i];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3});
      out.max_rel_error = std::max(out.max_rel_error, rel);
    }
    report.max_rel_error = std::max(report.max_rel_error, out.max_rel_error);
    report.coordinates += base.size();
    report.blocks.push_back(out);
  }
  return report;
}

}  // namespace mtm
