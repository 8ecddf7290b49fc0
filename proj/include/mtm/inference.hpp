#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mtm/corpus.hpp"
#include "mtm/encoder.hpp"
#include "mtm/model.hpp"
#include "mtm/numerics.hpp"
#include "mtm/rng.hpp"

namespace mtm {

// Mean-field Gaussian factors for beta and gamma, the amortized encoder for
// log theta, and the empirical-Bayes / horseshoe hyperparameters.
//
// `globals` packs, in order: mu_beta (K*V), log_sigma_beta (K*V), mu_gamma
// (E*K*V), log_sigma_gamma (E*K*V) and, for the horseshoe prior, log lambda
// (E*K) followed by log tau. Gamma blocks are empty for the VTM variant.
// `eb` holds (log a, log b) for the ARD prior.
class VariationalState {
 public:
  VariationalState() = default;
  VariationalState(std::size_t vocab_size, std::size_t num_envs, const ModelConfig& config);

  // mu ~ N(0, 0.01^2), log sigma = -2, encoder per Encoder::initialize,
  // hyperparameters from the config's PriorSpec.
  void initialize(RngStream& rng);

  std::size_t K() const noexcept { return K_; }
  std::size_t V() const noexcept { return V_; }
  std::size_t E() const noexcept { return E_; }
  PriorVariant variant() const noexcept { return variant_; }
  RateForm rate_form() const noexcept { return rate_form_; }
  bool has_gamma() const noexcept { return variant_ != PriorVariant::vtm; }

  std::span<double> mu_beta() { return block(0, K_ * V_); }
  std::span<double> log_sigma_beta() { return block(K_ * V_, K_ * V_); }
  std::span<double> mu_gamma(std::size_t e) { return block(2 * K_ * V_ + e * K_ * V_, K_ * V_); }
  std::span<double> log_sigma_gamma(std::size_t e) {
    return block(2 * K_ * V_ + (E_ + e) * K_ * V_, K_ * V_);
  }
  std::span<double> log_hs_lambda() { return block(hs_offset(), E_ * K_); }
  double& log_hs_tau() { return globals[hs_offset() + E_ * K_]; }
  std::span<const double> mu_beta() const { return cblock(0, K_ * V_); }
  std::span<const double> log_sigma_beta() const { return cblock(K_ * V_, K_ * V_); }
  std::span<const double> mu_gamma(std::size_t e) const { return cblock(2 * K_ * V_ + e * K_ * V_, K_ * V_); }
  std::span<const double> log_sigma_gamma(std::size_t e) const {
    return cblock(2 * K_ * V_ + (E_ + e) * K_ * V_, K_ * V_);
  }
  std::span<const double> log_hs_lambda() const { return cblock(hs_offset(), E_ * K_); }
  double log_hs_tau() const { return globals[hs_offset() + E_ * K_]; }

  // Block offsets inside `globals` for the log-sigma parameters, used to clamp.
  std::size_t gamma_offset() const noexcept { return 2 * K_ * V_; }
  std::size_t hs_offset() const noexcept { return gamma_offset() + (has_gamma() ? 2 * E_ * K_ * V_ : 0); }

  // Current prior with (a, b) and horseshoe scales read from the parameters.
  PriorSpec prior() const;

  // Clamps every log-sigma entry to [-5, 5].
  void clamp_log_sigmas();

  std::vector<double> globals;
  Encoder encoder;
  std::vector<double> eb;  // (log a, log b)

 private:
  std::span<double> block(std::size_t off, std::size_t len) { return std::span<double>(globals).subspan(off, len); }
  std::span<const double> cblock(std::size_t off, std::size_t len) const {
    return std::span<const double>(globals).subspan(off, len);
  }

  std::size_t K_ = 0, V_ = 0, E_ = 0;
  PriorVariant variant_ = PriorVariant::ard;
  RateForm rate_form_ = RateForm::log_additive;
  PriorSpec base_prior_;
};

struct LatentSample {
  Matrix log_theta;  // n x K
  Matrix theta;      // n x K, exp(log_theta)
  Matrix beta;       // K x V
  EnvDeviations gamma;
  Matrix z_theta;
  Matrix z_beta;
  EnvDeviations z_gamma;
};

// theta = exp(mu + sigma z), beta = mu + sigma z, gamma = mu + sigma z. The
// noise for beta, gamma and theta comes from rng.split(0), (1) and (2).
LatentSample sample_latents(const VariationalState& state, const Matrix& doc_mus,
                            const Matrix& doc_log_sigmas, const RngStream& rng);

struct ElboOptions {
  double likelihood_weight = 1.0;
  EncoderMode mode = EncoderMode::train;
  bool compute_gradients = true;
};

struct ElboGradients {
  std::vector<double> globals;
  std::vector<double> encoder;
  std::vector<double> eb;
};

struct ElboResult {
  double value = 0.0;
  // value = global_part + doc_part; doc_part carries the D_total/|batch| factor.
  double global_part = 0.0;
  double doc_part = 0.0;
  double log_likelihood = 0.0;  // unscaled sum over the batch
  std::size_t tokens = 0;
  ElboGradients grads;
  Encoder::Cache encoder_cache;
};

// Single-sample reparameterized ELBO with exact gradients of the sampled
// objective. Gaussian entropies are evaluated in closed form.
ElboResult elbo(std::span<const Document* const> batch, const VariationalState& state,
                std::size_t total_docs, const RngStream& rng, const ElboOptions& options = {});

// The (a, b)-dependent part of the ELBO for a fresh gamma draw and its
// gradient with respect to (log a, log b). ARD only.
struct EbObjective {
  double value = 0.0;
  std::vector<double> grad;
};
EbObjective eb_objective(const VariationalState& state, const RngStream& rng);

struct TrainedModel {
  ModelConfig config;  // prior holds the learned hyperparameters
  Vocabulary vocab;
  std::vector<std::string> env_names;
  Matrix beta_hat;
  EnvDeviations gamma_hat;  // empty for vtm
  Encoder encoder;
  std::vector<double> training_log;

  std::size_t num_topics() const noexcept { return beta_hat.rows(); }
  std::size_t vocab_size() const noexcept { return beta_hat.cols(); }
  std::size_t num_envs() const noexcept { return env_names.size(); }
  bool has_gamma() const noexcept { return !gamma_hat.empty(); }

  friend bool operator==(const TrainedModel&, const TrainedModel&) = default;
};

struct TrainOptions {
  std::ostream* log = nullptr;  // one line per epoch when set
};

TrainedModel train(const Corpus& corpus, const ModelConfig& config, const TrainOptions& options = {});

// Builds a TrainedModel from the posterior means of a state.
TrainedModel snapshot(const VariationalState& state, const Corpus& corpus, const ModelConfig& config);

// Topic proportions: softmax of the eval-mode encoder mean.
std::vector<double> infer_theta(const TrainedModel& model, const Document& doc);
Matrix infer_theta(const TrainedModel& model, std::span<const Document> docs);

}  // namespace mtm
