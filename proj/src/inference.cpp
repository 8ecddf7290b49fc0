#include "mtm/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <ostream>

#include "mtm/errors.hpp"
#include "mtm/kernels.hpp"
#include "mtm/parallel.hpp"

namespace mtm {
namespace {

const double kLogNormConst = -0.5 * std::log(2.0 * std::numbers::pi);
const double kEntropyConst = 0.5 * (1.0 + std::log(2.0 * std::numbers::pi));
constexpr std::size_t kDocsPerChunk = 16;

bool inside_clamp(double log_sigma) { return log_sigma > kLogSigmaMin && log_sigma < kLogSigmaMax; }
double sigma_of(double log_sigma) { return std::exp(std::clamp(log_sigma, kLogSigmaMin, kLogSigmaMax)); }

}  // namespace

VariationalState::VariationalState(std::size_t vocab_size, std::size_t num_envs, const ModelConfig& config)
    : encoder(vocab_size, config.num_topics, config.hidden_units, config.hidden_layers),
      K_(config.num_topics),
      V_(vocab_size),
      E_(num_envs),
      variant_(config.prior.variant),
      rate_form_(config.rate_form),
      base_prior_(config.prior) {
  if (E_ == 0) throw ShapeMismatch("VariationalState: need at least one environment");
  std::size_t n = 2 * K_ * V_;
  if (has_gamma()) n += 2 * E_ * K_ * V_;
  if (variant_ == PriorVariant::horseshoe) n += E_ * K_ + 1;
  globals.assign(n, 0.0);
  eb = {std::log(base_prior_.ard_a), std::log(base_prior_.ard_b)};
}

void VariationalState::initialize(RngStream& rng) {
  RngStream mu_rng = rng.split(0);
  RngStream enc_rng = rng.split(1);
  for (double& x : mu_beta()) x = mu_rng.normal(0.0, 0.01);
  std::fill(log_sigma_beta().begin(), log_sigma_beta().end(), -2.0);
  if (has_gamma()) {
    for (std::size_t e = 0; e < E_; ++e) {
      for (double& x : mu_gamma(e)) x = mu_rng.normal(0.0, 0.01);
      auto ls = log_sigma_gamma(e);
      std::fill(ls.begin(), ls.end(), -2.0);
    }
  }
  if (variant_ == PriorVariant::horseshoe) {
    auto ll = log_hs_lambda();
    const Matrix& given = base_prior_.hs_lambda;
    for (std::size_t e = 0; e < E_; ++e) {
      for (std::size_t k = 0; k < K_; ++k) {
        const bool have = given.rows() == E_ && given.cols() == K_;
        ll[e * K_ + k] = std::log(have ? given(e, k) : base_prior_.hs_init);
      }
    }
    log_hs_tau() = std::log(base_prior_.hs_tau);
  }
  encoder.initialize(enc_rng);
  eb = {std::log(base_prior_.ard_a), std::log(base_prior_.ard_b)};
}

PriorSpec VariationalState::prior() const {
  PriorSpec p = base_prior_;
  p.ard_a = std::exp(eb[0]);
  p.ard_b = std::exp(eb[1]);
  if (variant_ == PriorVariant::horseshoe) {
    p.hs_lambda = Matrix(E_, K_);
    const auto ll = log_hs_lambda();
    for (std::size_t i = 0; i < E_ * K_; ++i) p.hs_lambda.data()[i] = std::exp(ll[i]);
    p.hs_tau = std::exp(log_hs_tau());
  }
  return p;
}

void VariationalState::clamp_log_sigmas() {
  auto clamp_span = [](std::span<double> s) {
    for (double& x : s) x = std::clamp(x, kLogSigmaMin, kLogSigmaMax);
  };
  clamp_span(log_sigma_beta());
  if (has_gamma()) {
    for (std::size_t e = 0; e < E_; ++e) clamp_span(log_sigma_gamma(e));
  }
}

LatentSample sample_latents(const VariationalState& state, const Matrix& doc_mus,
                            const Matrix& doc_log_sigmas, const RngStream& rng) {
  const std::size_t K = state.K(), V = state.V(), E = state.E();
  LatentSample s;
  RngStream beta_rng = rng.split(0);
  RngStream gamma_rng = rng.split(1);
  RngStream theta_rng = rng.split(2);

  s.z_beta = Matrix(K, V);
  s.beta = Matrix(K, V);
  const auto mb = state.mu_beta();
  const auto lb = state.log_sigma_beta();
  for (std::size_t i = 0; i < K * V; ++i) {
    const double z = beta_rng.normal();
    s.z_beta.data()[i] = z;
    s.beta.data()[i] = mb[i] + sigma_of(lb[i]) * z;
  }
  if (state.has_gamma()) {
    s.z_gamma.assign(E, Matrix(K, V));
    s.gamma.assign(E, Matrix(K, V));
    for (std::size_t e = 0; e < E; ++e) {
      const auto mg = state.mu_gamma(e);
      const auto lg = state.log_sigma_gamma(e);
      for (std::size_t i = 0; i < K * V; ++i) {
        const double z = gamma_rng.normal();
        s.z_gamma[e].data()[i] = z;
        s.gamma[e].data()[i] = mg[i] + sigma_of(lg[i]) * z;
      }
    }
  }
  const std::size_t n = doc_mus.rows();
  s.z_theta = Matrix(n, K);
  s.log_theta = Matrix(n, K);
  s.theta = Matrix(n, K);
  for (std::size_t i = 0; i < n * K; ++i) {
    const double z = theta_rng.normal();
    s.z_theta.data()[i] = z;
    const double lt = doc_mus.data()[i] + sigma_of(doc_log_sigmas.data()[i]) * z;
    s.log_theta.data()[i] = lt;
    s.theta.data()[i] = std::exp(lt);
  }
  return s;
}

namespace {

// Log-prior of the deviations and its derivatives.
struct GammaPriorTerms {
  double value = 0.0;
  EnvDeviations d_gamma;
  std::vector<double> d_eb;         // (log a, log b) for ARD
  std::vector<double> d_log_lambda;  // E*K for horseshoe
  double d_log_tau = 0.0;
};

GammaPriorTerms gamma_prior_terms(const EnvDeviations& gamma, const PriorSpec& prior, bool grads) {
  GammaPriorTerms t;
  t.value = log_prior_gamma(gamma, prior);
  if (!grads) return t;
  const std::size_t E = gamma.size();
  t.d_gamma.assign(E, Matrix(gamma[0].rows(), gamma[0].cols()));
  switch (prior.variant) {
    case PriorVariant::normal: {
      const double inv_var = 1.0 / (prior.normal_sigma * prior.normal_sigma);
      for (std::size_t e = 0; e < E; ++e) {
        for (std::size_t i = 0; i < gamma[e].size(); ++i) t.d_gamma[e].data()[i] = -gamma[e].data()[i] * inv_var;
      }
      break;
    }
    case PriorVariant::ard: {
      // log p = lgamma(a+1/2) - lgamma(a) - log(2 pi b)/2 - (a+1/2) log(1 + g^2/(2b))
      const double a = prior.ard_a, b = prior.ard_b;
      double da = 0.0, db = 0.0;
      std::size_t count = 0;
      for (std::size_t e = 0; e < E; ++e) {
        for (std::size_t i = 0; i < gamma[e].size(); ++i) {
          const double g = gamma[e].data()[i];
          const double denom = 2.0 * b + g * g;
          t.d_gamma[e].data()[i] = -(2.0 * a + 1.0) * g / denom;
          da -= std::log1p(g * g / (2.0 * b));
          db += (a + 0.5) * g * g / (b * denom);
          ++count;
        }
      }
      const double n = static_cast<double>(count);
      da += n * (digamma(a + 0.5) - digamma(a));
      db -= n * 0.5 / b;
      t.d_eb = {a * da, b * db};
      break;
    }
    case PriorVariant::horseshoe: {
      const std::size_t K = gamma[0].rows();
      const double tau = prior.hs_tau;
      t.d_log_lambda.assign(E * K, 0.0);
      double d_tau_total = 0.0;
      for (std::size_t e = 0; e < E; ++e) {
        for (std::size_t k = 0; k < K; ++k) {
          const double lambda = prior.hs_lambda(e, k);
          const double var = lambda * lambda * tau * tau;
          double dls = 0.0;  // d/d log(scale) of the normal terms
          const auto g = gamma[e].row(k);
          auto dg = t.d_gamma[e].row(k);
          for (std::size_t v = 0; v < g.size(); ++v) {
            dg[v] = -g[v] / var;
            dls += -1.0 + g[v] * g[v] / var;
          }
          t.d_log_lambda[e * K + k] = dls - 2.0 * lambda * lambda / (1.0 + lambda * lambda);
          d_tau_total += dls;
        }
      }
      t.d_log_tau = d_tau_total - 2.0 * tau * tau / (1.0 + tau * tau);
      break;
    }
    case PriorVariant::vtm:
      break;
  }
  return t;
}

}  // namespace

ElboResult elbo(std::span<const Document* const> batch, const VariationalState& state,
                std::size_t total_docs, const RngStream& rng, const ElboOptions& options) {
  const std::size_t n = batch.size();
  if (n == 0) throw ShapeMismatch("elbo: empty batch");
  const std::size_t K = state.K(), V = state.V(), E = state.E();
  const bool has_gamma = state.has_gamma();
  const bool grads = options.compute_gradients;
  const double scale = static_cast<double>(total_docs) / static_cast<double>(n);
  const double lw = options.likelihood_weight;
  const std::size_t slices = has_gamma ? E : 1;

  for (const Document* d : batch) {
    if (has_gamma && d->env >= E) throw EnvOutOfRange("elbo: document environment out of range");
  }

  ElboResult out;
  const Encoder::Output enc = state.encoder.forward(batch, options.mode, &out.encoder_cache);
  const LatentSample smp = sample_latents(state, enc.mu, enc.log_sigma, rng);

  // Per-slice rate components and the factors that turn the rate gradient
  // G (K x V, d objective / d (theta_k * component)) into latent gradients.
  std::vector<Matrix> component(slices, Matrix(K, V));
  Matrix beta_factor;            // exp(beta), used by exp_sum
  std::vector<Matrix> gamma_factor;  // exp(gamma_e), used by exp_sum
  const bool exp_sum = has_gamma && state.rate_form() == RateForm::exp_sum;
  if (exp_sum) {
    beta_factor = Matrix(K, V);
    for (std::size_t i = 0; i < K * V; ++i) beta_factor.data()[i] = std::exp(smp.beta.data()[i]);
    gamma_factor.assign(E, Matrix(K, V));
  }
  for (std::size_t s = 0; s < slices; ++s) {
    auto comp = component[s].data();
    for (std::size_t i = 0; i < K * V; ++i) {
      const double b = smp.beta.data()[i];
      if (!has_gamma) {
        comp[i] = std::exp(b);
      } else if (!exp_sum) {
        comp[i] = std::exp(b + smp.gamma[s].data()[i]);
      } else {
        const double eg = std::exp(smp.gamma[s].data()[i]);
        gamma_factor[s].data()[i] = eg;
        comp[i] = beta_factor.data()[i] + eg;
      }
    }
  }

  // Per-document work in fixed chunks; chunk results are reduced in order.
  const std::size_t num_chunks = (n + kDocsPerChunk - 1) / kDocsPerChunk;
  struct ChunkResult {
    std::vector<Matrix> G;
    double ll = 0.0;
    double doc_value = 0.0;
    std::size_t tokens = 0;
  };
  std::vector<ChunkResult> chunks(num_chunks);
  Matrix d_mu(n, K), d_ls(n, K);

  parallel_for(num_chunks, [&](std::size_t c) {
    ChunkResult& cr = chunks[c];
    if (grads) cr.G.assign(slices, Matrix(K, V));
    std::vector<double> rates(V), g(V);
    const std::size_t begin = c * kDocsPerChunk, end = std::min(n, begin + kDocsPerChunk);
    for (std::size_t i = begin; i < end; ++i) {
      const Document& doc = *batch[i];
      const std::size_t s = has_gamma ? doc.env : 0;
      const Matrix& comp = component[s];
      const auto theta = smp.theta.row(i);
      std::fill(rates.begin(), rates.end(), 0.0);
      for (std::size_t k = 0; k < K; ++k) kernels::axpy(theta[k], comp.row(k), rates);
      const double total_rate = kernels::sum(rates);
      const double N = static_cast<double>(doc.total());
      double ll = -N * std::log(total_rate);
      for (const auto& tc : doc.counts) ll += tc.count * std::log(rates[tc.term]);
      cr.ll += ll;
      cr.tokens += doc.total();

      double doc_value = lw * ll;
      for (std::size_t k = 0; k < K; ++k) {
        const double lt = smp.log_theta(i, k);
        doc_value += kLogNormConst - 0.5 * lt * lt + enc.log_sigma(i, k) + kEntropyConst;
      }
      cr.doc_value += doc_value;
      if (!grads) continue;

      std::fill(g.begin(), g.end(), -N / total_rate);
      for (const auto& tc : doc.counts) g[tc.term] += tc.count / rates[tc.term];
      for (std::size_t k = 0; k < K; ++k) {
        const double d_theta = kernels::dot(g, comp.row(k));
        kernels::axpy(scale * lw * theta[k], g, cr.G[s].row(k));
        const double d_log_theta = scale * (lw * theta[k] * d_theta - smp.log_theta(i, k));
        d_mu(i, k) = d_log_theta;
        d_ls(i, k) = d_log_theta * std::exp(enc.log_sigma(i, k)) * smp.z_theta(i, k) + scale;
      }
    }
  });

  double doc_value = 0.0;
  for (const auto& cr : chunks) {
    doc_value += cr.doc_value;
    out.log_likelihood += cr.ll;
    out.tokens += cr.tokens;
  }
  out.doc_part = scale * doc_value;

  // Global terms: priors and closed-form entropies.
  double global = 0.0;
  for (double b : smp.beta.data()) global += kLogNormConst - 0.5 * b * b;
  for (double ls : state.log_sigma_beta()) global += std::clamp(ls, kLogSigmaMin, kLogSigmaMax) + kEntropyConst;
  const PriorSpec prior = state.prior();
  GammaPriorTerms gp;
  if (has_gamma) {
    gp = gamma_prior_terms(smp.gamma, prior, grads);
    global += gp.value;
    for (std::size_t e = 0; e < E; ++e) {
      for (double ls : state.log_sigma_gamma(e)) global += std::clamp(ls, kLogSigmaMin, kLogSigmaMax) + kEntropyConst;
    }
  }
  out.global_part = global;
  out.value = out.global_part + out.doc_part;
  if (!grads) return out;

  std::vector<Matrix> G(slices, Matrix(K, V));
  for (const auto& cr : chunks) {
    for (std::size_t s = 0; s < slices; ++s) kernels::axpy(1.0, cr.G[s].data(), G[s].data());
  }

  out.grads.globals.assign(state.globals.size(), 0.0);
  out.grads.eb.assign(2, 0.0);
  auto& gg = out.grads.globals;

  // d objective / d beta sample
  std::vector<double> d_beta(K * V);
  for (std::size_t i = 0; i < K * V; ++i) d_beta[i] = -smp.beta.data()[i];
  for (std::size_t s = 0; s < slices; ++s) {
    const Matrix& factor = exp_sum ? beta_factor : component[s];
    kernels::mul_axpy(1.0, G[s].data(), factor.data(), d_beta);
  }
  const auto lsb = state.log_sigma_beta();
  for (std::size_t i = 0; i < K * V; ++i) {
    gg[i] = d_beta[i];
    gg[K * V + i] = inside_clamp(lsb[i]) ? d_beta[i] * std::exp(lsb[i]) * smp.z_beta.data()[i] + 1.0 : 0.0;
  }

  if (has_gamma) {
    for (std::size_t e = 0; e < E; ++e) {
      std::vector<double> d_gamma(gp.d_gamma[e].data().begin(), gp.d_gamma[e].data().end());
      const Matrix& factor = exp_sum ? gamma_factor[e] : component[e];
      kernels::mul_axpy(1.0, G[e].data(), factor.data(), d_gamma);
      const auto lsg = state.log_sigma_gamma(e);
      const std::size_t mu_off = state.gamma_offset() + e * K * V;
      const std::size_t ls_off = state.gamma_offset() + (E + e) * K * V;
      for (std::size_t i = 0; i < K * V; ++i) {
        gg[mu_off + i] = d_gamma[i];
        gg[ls_off + i] =
            inside_clamp(lsg[i]) ? d_gamma[i] * std::exp(lsg[i]) * smp.z_gamma[e].data()[i] + 1.0 : 0.0;
      }
    }
    if (prior.variant == PriorVariant::ard) out.grads.eb = gp.d_eb;
    if (prior.variant == PriorVariant::horseshoe) {
      const std::size_t off = state.hs_offset();
      std::copy(gp.d_log_lambda.begin(), gp.d_log_lambda.end(), gg.begin() + static_cast<std::ptrdiff_t>(off));
      gg[off + E * K] = gp.d_log_tau;
    }
  }

  out.grads.encoder.assign(state.encoder.num_params(), 0.0);
  state.encoder.backward(out.encoder_cache, d_mu, d_ls, out.grads.encoder);
  return out;
}

EbObjective eb_objective(const VariationalState& state, const RngStream& rng) {
  if (state.variant() != PriorVariant::ard) throw VariantMismatch("eb_objective: ARD prior only");
  const std::size_t K = state.K(), V = state.V(), E = state.E();
  RngStream gamma_rng = rng.split(1);
  EnvDeviations gamma(E, Matrix(K, V));
  for (std::size_t e = 0; e < E; ++e) {
    const auto mg = state.mu_gamma(e);
    const auto lg = state.log_sigma_gamma(e);
    for (std::size_t i = 0; i < K * V; ++i) gamma[e].data()[i] = mg[i] + sigma_of(lg[i]) * gamma_rng.normal();
  }
  const GammaPriorTerms t = gamma_prior_terms(gamma, state.prior(), true);
  return {t.value, t.d_eb};
}

TrainedModel snapshot(const VariationalState& state, const Corpus& corpus, const ModelConfig& config) {
  TrainedModel m;
  m.config = config;
  m.config.prior = state.prior();
  m.vocab = corpus.vocab;
  m.env_names = corpus.env_names;
  while (m.env_names.size() < state.E()) m.env_names.push_back("env" + std::to_string(m.env_names.size()));
  const std::size_t K = state.K(), V = state.V();
  m.beta_hat = Matrix(K, V);
  std::copy(state.mu_beta().begin(), state.mu_beta().end(), m.beta_hat.data().begin());
  if (state.has_gamma()) {
    m.gamma_hat.assign(state.E(), Matrix(K, V));
    for (std::size_t e = 0; e < state.E(); ++e) {
      std::copy(state.mu_gamma(e).begin(), state.mu_gamma(e).end(), m.gamma_hat[e].data().begin());
    }
  }
  m.encoder = state.encoder;
  return m;
}

namespace {

// Mean per-document ELBO over all documents, evaluated with the eval-mode
// encoder and the same noise at every call, so successive epochs differ only
// through the parameters.
double fixed_noise_elbo(const VariationalState& state, const std::vector<const Document*>& docs,
                        std::size_t batch_size, const RngStream& noise) {
  const std::size_t D = docs.size();
  double total = 0.0;
  std::size_t b = 0;
  for (std::size_t begin = 0; begin < D; begin += batch_size, ++b) {
    const std::size_t end = std::min(D, begin + batch_size);
    const std::span<const Document* const> batch(docs.data() + begin, end - begin);
    const ElboResult r = elbo(batch, state, D, noise.split(b),
                              {.mode = EncoderMode::eval, .compute_gradients = false});
    // Global terms are counted once; each batch contributes its documents.
    total += r.doc_part / (static_cast<double>(D) / static_cast<double>(end - begin));
    if (begin == 0) total += r.global_part;
  }
  return total / static_cast<double>(D);
}

}  // namespace

TrainedModel train(const Corpus& corpus, const ModelConfig& config, const TrainOptions& options) {
  config.validate();
  std::vector<const Document*> docs;
  for (const auto& d : corpus.docs) {
    if (d.total() > 0) docs.push_back(&d);
  }
  if (docs.empty()) throw ShapeMismatch("train: corpus has no nonempty documents");
  const std::size_t V = corpus.vocab.size();
  const std::size_t E = std::max<std::size_t>(1, corpus.num_envs);
  const std::size_t D = docs.size();

  const RngStream root(config.seed, 0x7A1);
  VariationalState state(V, E, config);
  {
    RngStream init = root.split(1);
    state.initialize(init);
  }
  AdamState adam_globals(state.globals.size(), config.lr);
  AdamState adam_encoder(state.encoder.num_params(), config.lr);
  AdamState adam_eb(2, config.lr);
  const bool run_eb = config.prior.variant == PriorVariant::ard && config.eb_steps_per_model_step > 0;

  std::vector<double> training_log;
  std::size_t step = 0;
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> neg;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<const Document*> order = docs;
    RngStream shuffle_rng = root.split(2).split(epoch);
    shuffle_rng.shuffle(order);
    for (std::size_t begin = 0; begin < D; begin += config.batch_size, ++step) {
      const std::size_t end = std::min(D, begin + config.batch_size);
      const std::span<const Document* const> batch(order.data() + begin, end - begin);
      const RngStream step_rng = root.split(3).split(step);
      ElboResult r = elbo(batch, state, D, step_rng);
      if (!std::isfinite(r.value)) throw NonFiniteLoss(step);

      // Adam minimizes, so feed it the negated ELBO gradient.
      neg.resize(r.grads.globals.size());
      for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -r.grads.globals[i];
      adam_update(state.globals, neg, adam_globals);
      for (double& g : r.grads.encoder) g = -g;
      adam_update(state.encoder.params(), r.grads.encoder, adam_encoder);
      state.encoder.update_running_stats(r.encoder_cache);
      state.clamp_log_sigmas();

      if (run_eb) {
        for (std::size_t s = 0; s < config.eb_steps_per_model_step; ++s) {
          EbObjective eb = eb_objective(state, step_rng.split(100 + s));
          for (double& g : eb.grad) g = -g;
          adam_update(state.eb, eb.grad, adam_eb);
        }
      }
    }
    const double mean_elbo = fixed_noise_elbo(state, docs, config.batch_size, root.split(4));
    training_log.push_back(mean_elbo);
    if (options.log != nullptr) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      *options.log << "epoch " << epoch + 1 << " elbo " << mean_elbo << " time " << secs << "s\n";
    }
  }

  TrainedModel model = snapshot(state, corpus, config);
  model.training_log = std::move(training_log);
  return model;
}

Matrix infer_theta(const TrainedModel& model, std::span<const Document> docs) {
  const std::size_t K = model.num_topics();
  Matrix out(docs.size(), K);
  if (docs.empty()) return out;
  std::vector<const Document*> ptrs;
  ptrs.reserve(docs.size());
  for (const auto& d : docs) ptrs.push_back(&d);
  const auto enc = model.encoder.forward(ptrs, EncoderMode::eval);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto mu = enc.mu.row(i);
    const double mx = *std::max_element(mu.begin(), mu.end());
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      out(i, k) = std::exp(mu[k] - mx);
      total += out(i, k);
    }
    for (std::size_t k = 0; k < K; ++k) out(i, k) /= total;
  }
  return out;
}

std::vector<double> infer_theta(const TrainedModel& model, const Document& doc) {
  const Matrix m = infer_theta(model, std::span<const Document>(&doc, 1));
  return {m.row(0).begin(), m.row(0).end()};
}

}  // namespace mtm
