#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtm/corpus.hpp"
#include "mtm/numerics.hpp"

namespace mtm {

enum class RateForm {
  log_additive,  // rate_v = sum_k theta_k * exp(beta_kv + gamma_ekv)
  exp_sum,       // rate_v = sum_k theta_k * (exp(beta_kv) + exp(gamma_ekv))
};

enum class PriorVariant { vtm, normal, ard, horseshoe };

std::string_view to_string(RateForm form);
std::string_view to_string(PriorVariant variant);
RateForm parse_rate_form(std::string_view name);
PriorVariant parse_prior_variant(std::string_view name);

// One K x V matrix per environment.
using EnvDeviations = std::vector<Matrix>;

struct PriorSpec {
  PriorVariant variant = PriorVariant::ard;
  double normal_sigma = 1.0;
  // Gamma(shape a, rate b) on the precision of each deviation.
  double ard_a = 3.7;
  double ard_b = 0.34;
  // Horseshoe local scales (E x K) and global scale. An empty hs_lambda is
  // filled with hs_init once the dimensions are known.
  Matrix hs_lambda;
  double hs_tau = 0.4;
  double hs_init = 0.4;

  bool has_gamma() const noexcept { return variant != PriorVariant::vtm; }
};

struct ModelConfig {
  std::size_t num_topics = 20;
  RateForm rate_form = RateForm::log_additive;
  PriorSpec prior;
  std::size_t epochs = 150;
  std::size_t batch_size = 128;
  double lr = 0.01;
  std::size_t eb_steps_per_model_step = 2;
  std::uint64_t seed = 0;
  std::size_t hidden_units = 50;
  std::size_t hidden_layers = 1;

  // Throws ConfigError on invalid values.
  void validate() const;
};

inline bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.num_topics == b.num_topics && a.rate_form == b.rate_form &&
         a.prior.variant == b.prior.variant && a.prior.normal_sigma == b.prior.normal_sigma &&
         a.prior.ard_a == b.prior.ard_a && a.prior.ard_b == b.prior.ard_b &&
         a.prior.hs_lambda == b.prior.hs_lambda && a.prior.hs_tau == b.prior.hs_tau &&
         a.prior.hs_init == b.prior.hs_init && a.epochs == b.epochs && a.batch_size == b.batch_size &&
         a.lr == b.lr && a.eb_steps_per_model_step == b.eb_steps_per_model_step && a.seed == b.seed &&
         a.hidden_units == b.hidden_units && a.hidden_layers == b.hidden_layers;
}

// `gamma_e` may be null, meaning no environment deviation (the VTM case).
std::vector<double> word_rates(std::span<const double> theta, const Matrix& beta,
                               const Matrix* gamma_e, RateForm form);
// Throws EnvOutOfRange when env >= gamma.size() and gamma is nonempty.
std::vector<double> word_rates(std::span<const double> theta, const Matrix& beta,
                               const EnvDeviations& gamma, std::size_t env, RateForm form);

// Multinomial log-likelihood over the L1-normalized rates, without the
// multinomial coefficient.
double log_likelihood(std::span<const TermCount> counts, std::span<const double> rates);

double log_prior_gamma(const EnvDeviations& gamma, const PriorSpec& prior);
double log_prior_global(const Matrix& beta, const Matrix& log_theta);

struct SyntheticSpec {
  std::size_t num_docs = 500;
  std::size_t vocab_size = 60;
  std::size_t num_topics = 4;
  std::size_t num_envs = 2;
  std::size_t tokens_per_doc = 50;
  double gamma_sparsity = 0.9;
  double gamma_scale = 1.0;
  std::uint64_t seed = 0;
};

struct TrueParams {
  Matrix beta;
  EnvDeviations gamma;
  Matrix doc_thetas;  // D x K intensities
  // Flat E x K x V, true where gamma is nonzero.
  std::vector<std::uint8_t> support_mask;

  bool supported(std::size_t e, std::size_t k, std::size_t v) const {
    return support_mask[(e * beta.rows() + k) * beta.cols() + v] != 0;
  }
};

struct SyntheticData {
  Corpus corpus;
  TrueParams truth;
};

// Vocabulary terms are "w0000", "w0001", ... and environments "env0", ...
SyntheticData generate_synthetic(const SyntheticSpec& spec);

Vocabulary synthetic_vocabulary(std::size_t vocab_size);

// Draws `num_tokens` tokens from the normalized log-additive rates.
Document sample_document(std::span<const double> theta, const Matrix& beta, const Matrix* gamma_e,
                         std::size_t num_tokens, RngStream& rng);

}  // namespace mtm
