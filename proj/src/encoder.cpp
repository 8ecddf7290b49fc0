#include "mtm/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "mtm/errors.hpp"
#include "mtm/kernels.hpp"

namespace mtm {

Encoder::Encoder(std::size_t vocab_size, std::size_t num_topics, std::size_t hidden_units,
                 std::size_t hidden_layers)
    : vocab_size_(vocab_size), num_topics_(num_topics), hidden_(hidden_units), layers_(hidden_layers) {
  if (vocab_size == 0 || num_topics == 0 || hidden_units == 0 || hidden_layers == 0) {
    throw ShapeMismatch("Encoder: all dimensions must be positive");
  }
  std::size_t n = 0;
  for (std::size_t l = 0; l < layers_; ++l) n += hidden_ * layer_input(l) + hidden_;
  n += 2 * (num_topics_ * hidden_ + num_topics_);
  params_.assign(n, 0.0);
  running_mean_.assign(layers_, std::vector<double>(hidden_, 0.0));
  running_var_.assign(layers_, std::vector<double>(hidden_, 1.0));
}

std::size_t Encoder::layer_offset(std::size_t l) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < l; ++i) off += hidden_ * layer_input(i) + hidden_;
  return off;
}

std::size_t Encoder::head_offset() const { return layer_offset(layers_); }

std::span<double> Encoder::layer_weight(std::size_t l) {
  return std::span<double>(params_).subspan(layer_offset(l), hidden_ * layer_input(l));
}
std::span<double> Encoder::layer_bias(std::size_t l) {
  return std::span<double>(params_).subspan(layer_offset(l) + hidden_ * layer_input(l), hidden_);
}
std::span<double> Encoder::mu_weight() {
  return std::span<double>(params_).subspan(head_offset(), num_topics_ * hidden_);
}
std::span<double> Encoder::mu_bias() {
  return std::span<double>(params_).subspan(head_offset() + num_topics_ * hidden_, num_topics_);
}
std::span<double> Encoder::ls_weight() {
  return std::span<double>(params_).subspan(head_offset() + num_topics_ * hidden_ + num_topics_,
                                            num_topics_ * hidden_);
}
std::span<double> Encoder::ls_bias() {
  return std::span<double>(params_).subspan(head_offset() + 2 * num_topics_ * hidden_ + num_topics_,
                                            num_topics_);
}
std::span<const double> Encoder::layer_weight(std::size_t l) const {
  return const_cast<Encoder*>(this)->layer_weight(l);
}
std::span<const double> Encoder::layer_bias(std::size_t l) const {
  return const_cast<Encoder*>(this)->layer_bias(l);
}
std::span<const double> Encoder::mu_weight() const { return const_cast<Encoder*>(this)->mu_weight(); }
std::span<const double> Encoder::mu_bias() const { return const_cast<Encoder*>(this)->mu_bias(); }
std::span<const double> Encoder::ls_weight() const { return const_cast<Encoder*>(this)->ls_weight(); }
std::span<const double> Encoder::ls_bias() const { return const_cast<Encoder*>(this)->ls_bias(); }

void Encoder::initialize(RngStream& rng) {
  auto fill = [&](std::span<double> w, std::size_t fan_in) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : w) x = (2.0 * rng.uniform() - 1.0) * limit;
  };
  std::fill(params_.begin(), params_.end(), 0.0);
  for (std::size_t l = 0; l < layers_; ++l) fill(layer_weight(l), layer_input(l));
  fill(mu_weight(), hidden_);
  fill(ls_weight(), hidden_);
  for (std::size_t l = 0; l < layers_; ++l) {
    std::fill(running_mean_[l].begin(), running_mean_[l].end(), 0.0);
    std::fill(running_var_[l].begin(), running_var_[l].end(), 1.0);
  }
}

Matrix encoder_input(std::span<const Document* const> docs, std::size_t vocab_size) {
  Matrix x(docs.size(), vocab_size);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (const auto& tc : docs[i]->counts) {
      if (tc.term >= vocab_size) throw ShapeMismatch("encoder: term id outside the vocabulary");
      x(i, tc.term) = std::log1p(static_cast<double>(tc.count));
    }
  }
  return x;
}

Encoder::Output Encoder::forward(std::span<const Document* const> docs, EncoderMode mode,
                                 Cache* cache) const {
  const std::size_t n = docs.size();
  if (n == 0) throw ShapeMismatch("encoder: empty batch");
  Cache local;
  Cache& c = cache != nullptr ? *cache : local;
  c.mode = mode;
  c.layers.assign(layers_, Layer{});

  Matrix input = encoder_input(docs, vocab_size_);
  for (std::size_t l = 0; l < layers_; ++l) {
    Layer& layer = c.layers[l];
    const std::size_t in = layer_input(l);
    const auto W = layer_weight(l);
    const auto b = layer_bias(l);
    Matrix pre(n, hidden_);
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = input.row(i);
      for (std::size_t j = 0; j < hidden_; ++j) {
        pre(i, j) = kernels::dot(W.subspan(j * in, in), x) + b[j];
      }
    }
    layer.batch_mean.assign(hidden_, 0.0);
    layer.batch_var.assign(hidden_, 0.0);
    layer.inv_std.assign(hidden_, 0.0);
    for (std::size_t j = 0; j < hidden_; ++j) {
      double mean, var;
      if (mode == EncoderMode::train) {
        mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += pre(i, j);
        mean /= static_cast<double>(n);
        var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (pre(i, j) - mean) * (pre(i, j) - mean);
        var /= static_cast<double>(n);
      } else {
        mean = running_mean_[l][j];
        var = running_var_[l][j];
      }
      layer.batch_mean[j] = mean;
      layer.batch_var[j] = var;
      layer.inv_std[j] = 1.0 / std::sqrt(var + kBatchNormEps);
    }
    layer.xhat = Matrix(n, hidden_);
    layer.output = Matrix(n, hidden_);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < hidden_; ++j) {
        const double xh = (pre(i, j) - layer.batch_mean[j]) * layer.inv_std[j];
        layer.xhat(i, j) = xh;
        layer.output(i, j) = xh > 0.0 ? xh : 0.0;
      }
    }
    layer.input = std::move(input);
    input = layer.output;
  }

  Output out{Matrix(n, num_topics_), Matrix(n, num_topics_)};
  c.ls_raw = Matrix(n, num_topics_);
  const auto Wm = mu_weight();
  const auto bm = mu_bias();
  const auto Ws = ls_weight();
  const auto bs = ls_bias();
  for (std::size_t i = 0; i < n; ++i) {
    const auto h = input.row(i);
    for (std::size_t k = 0; k < num_topics_; ++k) {
      out.mu(i, k) = kernels::dot(Wm.subspan(k * hidden_, hidden_), h) + bm[k];
      const double raw = kernels::dot(Ws.subspan(k * hidden_, hidden_), h) + bs[k];
      c.ls_raw(i, k) = raw;
      out.log_sigma(i, k) = std::clamp(raw, kLogSigmaMin, kLogSigmaMax);
    }
  }
  return out;
}

void Encoder::backward(const Cache& cache, const Matrix& d_mu, const Matrix& d_log_sigma,
                       std::span<double> grad) const {
  if (grad.size() != params_.size()) throw ShapeMismatch("encoder backward: gradient size");
  const std::size_t n = d_mu.rows();
  const std::size_t H = hidden_;
  const std::size_t K = num_topics_;

  // Offsets into the flat gradient mirror the parameter layout.
  auto gview = [&](std::span<const double> p) {
    return grad.subspan(static_cast<std::size_t>(p.data() - params_.data()), p.size());
  };
  auto gWm = gview(mu_weight());
  auto gbm = gview(mu_bias());
  auto gWs = gview(ls_weight());
  auto gbs = gview(ls_bias());
  const auto Wm = mu_weight();
  const auto Ws = ls_weight();

  const Matrix& h_top = cache.layers.back().output;
  Matrix dh(n, H);
  for (std::size_t i = 0; i < n; ++i) {
    const auto h = h_top.row(i);
    auto dhi = dh.row(i);
    for (std::size_t k = 0; k < K; ++k) {
      const double gm = d_mu(i, k);
      const double raw = cache.ls_raw(i, k);
      const double gs = (raw > kLogSigmaMin && raw < kLogSigmaMax) ? d_log_sigma(i, k) : 0.0;
      if (gm != 0.0) {
        kernels::axpy(gm, h, gWm.subspan(k * H, H));
        kernels::axpy(gm, Wm.subspan(k * H, H), dhi);
        gbm[k] += gm;
      }
      if (gs != 0.0) {
        kernels::axpy(gs, h, gWs.subspan(k * H, H));
        kernels::axpy(gs, Ws.subspan(k * H, H), dhi);
        gbs[k] += gs;
      }
    }
  }

  for (std::size_t l = layers_; l-- > 0;) {
    const Layer& layer = cache.layers[l];
    const std::size_t in = layer_input(l);
    Matrix dpre(n, H);
    for (std::size_t j = 0; j < H; ++j) {
      if (cache.mode == EncoderMode::train) {
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double dx = layer.xhat(i, j) > 0.0 ? dh(i, j) : 0.0;
          mean_d += dx;
          mean_dx += dx * layer.xhat(i, j);
        }
        mean_d /= static_cast<double>(n);
        mean_dx /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double dx = layer.xhat(i, j) > 0.0 ? dh(i, j) : 0.0;
          dpre(i, j) = layer.inv_std[j] * (dx - mean_d - layer.xhat(i, j) * mean_dx);
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          dpre(i, j) = layer.xhat(i, j) > 0.0 ? dh(i, j) * layer.inv_std[j] : 0.0;
        }
      }
    }
    auto gW = gview(layer_weight(l));
    auto gb = gview(layer_bias(l));
    const auto W = layer_weight(l);
    Matrix dinput(l > 0 ? n : 0, l > 0 ? in : 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = layer.input.row(i);
      for (std::size_t j = 0; j < H; ++j) {
        const double g = dpre(i, j);
        if (g == 0.0) continue;
        kernels::axpy(g, x, gW.subspan(j * in, in));
        gb[j] += g;
        if (l > 0) kernels::axpy(g, W.subspan(j * in, in), dinput.row(i));
      }
    }
    if (l > 0) dh = std::move(dinput);
  }
}

void Encoder::update_running_stats(const Cache& cache, double momentum) {
  if (cache.mode != EncoderMode::train) return;
  for (std::size_t l = 0; l < layers_; ++l) {
    for (std::size_t j = 0; j < hidden_; ++j) {
      running_mean_[l][j] = momentum * running_mean_[l][j] + (1.0 - momentum) * cache.layers[l].batch_mean[j];
      running_var_[l][j] = momentum * running_var_[l][j] + (1.0 - momentum) * cache.layers[l].batch_var[j];
    }
  }
}

}  // namespace mtm
