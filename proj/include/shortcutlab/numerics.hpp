#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "shortcutlab/common.hpp"

namespace shortcutlab {

// ---------------------------------------------------------------------------
// Matrix: dense row-major, double precision.
// ---------------------------------------------------------------------------

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// ---------------------------------------------------------------------------
// Counter-based RNG. Every draw is a pure function of
// (master_seed, stream_id, counter), so independent streams never interact
// and replaying a stream is trivial.
// ---------------------------------------------------------------------------

struct RngStream {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;
  std::uint64_t counter = 0;

  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream) : master_seed(seed), stream_id(stream) {}

  std::uint64_t next_u64();
  double next_uniform();                       // [0, 1)
  double next_uniform(double lo, double hi);
  double next_normal();                        // Box-Muller, consumes two counters
  std::size_t next_index(std::size_t n);       // uniform over {0, .., n-1}
  std::size_t next_categorical(const std::vector<double>& weights);  // inverse CDF

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = next_index(i + 1);
      std::swap(v[i], v[j]);
    }
  }
};

// Derives a stream id from a purpose tag plus up to two indices. Streams with
// different tags or indices are independent by construction.
std::uint64_t stream_id(std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0);

// ---------------------------------------------------------------------------
// Dense affine layer and pointwise ops.
// ---------------------------------------------------------------------------

struct LayerParams {
  Matrix weight;  // [out x in]
  Matrix bias;    // [1 x out]
};

struct DenseGrads {
  Matrix d_input;
  LayerParams d_params;
};

// Uniform init in +-1/sqrt(fan_in) for weights and biases; draw order is
// weights row-major, then biases.
LayerParams init_layer(std::size_t in_dim, std::size_t out_dim, RngStream& rng);

// out = input * W^T + b, input [B x in] -> out [B x out].
Matrix dense_forward(const Matrix& input, const LayerParams& p);
DenseGrads dense_backward(const Matrix& input, const LayerParams& p, const Matrix& d_output);

Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& x, const Matrix& d_output);

// ---------------------------------------------------------------------------
// Losses. All losses are means over the batch; d_logits is the gradient of
// that mean.
// ---------------------------------------------------------------------------

struct LossResult {
  double loss = 0.0;
  Matrix d_logits;
};

// Row-wise softmax with max subtraction.
Matrix softmax(const Matrix& logits);

// Weighted mean cross-entropy: sum_i w_i * (-log p_{y_i}) / sum_i w_i.
// Empty weights means uniform. Log arguments are clamped at 1e-12.
LossResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                                 const std::vector<double>& weights = {});

// Generalized cross-entropy (1 - p_y^q) / q with q in (0, 1].
LossResult generalized_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                                     double q);

// p <- p - lr * (grad + weight_decay * p), applied to weights and biases.
void sgd_update(LayerParams& p, const LayerParams& grads, double lr, double weight_decay);

}  // namespace shortcutlab
