#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtm/model.hpp"

namespace mtm {

struct GradCheckSpec {
  PriorVariant variant = PriorVariant::ard;
  RateForm rate_form = RateForm::log_additive;
  std::uint64_t seed = 0;
  std::size_t num_docs = 8;
  std::size_t vocab_size = 30;
  std::size_t num_topics = 3;
  std::size_t num_envs = 2;
  std::size_t hidden_units = 50;
  std::size_t hidden_layers = 1;
};

struct GradCheckBlock {
  std::string name;
  std::size_t size = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Relative error |a - f| / max(|a|, |f|, 1e-3) between analytic and central
// finite-difference gradients of the sampled ELBO, with the noise held fixed,
// on a small random instance with perturbed variational parameters.
GradCheckReport check_elbo_gradients(const GradCheckSpec& spec);

}  // namespace mtm
