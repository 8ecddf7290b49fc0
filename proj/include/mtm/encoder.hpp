#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtm/corpus.hpp"
#include "mtm/numerics.hpp"
#include "mtm/rng.hpp"

namespace mtm {

enum class EncoderMode { train, eval };

inline constexpr double kLogSigmaMin = -5.0;
inline constexpr double kLogSigmaMax = 5.0;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.99;

// Amortized encoder for the per-document topic intensities:
//   x = log(1 + counts), h = ReLU(batchnorm(W x + b)) per hidden layer,
//   mu = W_mu h + b_mu, log_sigma = clamp(W_ls h + b_ls, -5, 5).
// Batch normalization has no affine part. Trainable weights live in one flat
// vector so optimizers and gradient checks can treat them uniformly.
class Encoder {
 public:
  Encoder() = default;
  Encoder(std::size_t vocab_size, std::size_t num_topics, std::size_t hidden_units,
          std::size_t hidden_layers);

  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t num_topics() const noexcept { return num_topics_; }
  std::size_t hidden_units() const noexcept { return hidden_; }
  std::size_t hidden_layers() const noexcept { return layers_; }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  void initialize(RngStream& rng);

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }
  std::size_t num_params() const noexcept { return params_.size(); }

  std::span<double> layer_weight(std::size_t l);  // H x in, row-major
  std::span<double> layer_bias(std::size_t l);
  std::span<double> mu_weight();  // K x H
  std::span<double> mu_bias();
  std::span<double> ls_weight();
  std::span<double> ls_bias();
  std::span<const double> layer_weight(std::size_t l) const;
  std::span<const double> layer_bias(std::size_t l) const;
  std::span<const double> mu_weight() const;
  std::span<const double> mu_bias() const;
  std::span<const double> ls_weight() const;
  std::span<const double> ls_bias() const;

  std::vector<double>& running_mean(std::size_t l) { return running_mean_[l]; }
  std::vector<double>& running_var(std::size_t l) { return running_var_[l]; }
  const std::vector<double>& running_mean(std::size_t l) const { return running_mean_[l]; }
  const std::vector<double>& running_var(std::size_t l) const { return running_var_[l]; }

  struct Layer {
    Matrix input;   // n x in
    Matrix xhat;    // n x H, normalized pre-activations
    Matrix output;  // n x H, after ReLU
    std::vector<double> batch_mean;
    std::vector<double> batch_var;
    std::vector<double> inv_std;
  };
  struct Cache {
    EncoderMode mode = EncoderMode::eval;
    std::vector<Layer> layers;
    Matrix ls_raw;  // pre-clamp log sigma
  };
  struct Output {
    Matrix mu;         // n x K
    Matrix log_sigma;  // n x K, clamped
  };

  Output forward(std::span<const Document* const> docs, EncoderMode mode, Cache* cache = nullptr) const;

  // Accumulates d(objective)/d(params) into `grad` given the objective's
  // derivatives with respect to mu and the clamped log sigma.
  void backward(const Cache& cache, const Matrix& d_mu, const Matrix& d_log_sigma,
                std::span<double> grad) const;

  // EMA update of the running statistics from a train-mode forward pass.
  void update_running_stats(const Cache& cache, double momentum = kBatchNormMomentum);

  friend bool operator==(const Encoder&, const Encoder&) = default;

 private:
  std::size_t layer_input(std::size_t l) const { return l == 0 ? vocab_size_ : hidden_; }
  std::size_t layer_offset(std::size_t l) const;
  std::size_t head_offset() const;

  std::size_t vocab_size_ = 0;
  std::size_t num_topics_ = 0;
  std::size_t hidden_ = 0;
  std::size_t layers_ = 0;
  std::vector<double> params_;
  std::vector<std::vector<double>> running_mean_;
  std::vector<std::vector<double>> running_var_;
};

// Dense log(1 + count) input rows for a batch.
Matrix encoder_input(std::span<const Document* const> docs, std::size_t vocab_size);

}  // namespace mtm
