#include "shortcutlab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace shortcutlab {

// ---------------------------------------------------------------------------
// RngStream
// ---------------------------------------------------------------------------

namespace {

// SplitMix64 finalizer, used as the mixing function for the counter scheme.
std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t RngStream::next_u64() {
  return mix64(mix64(mix64(master_seed) ^ stream_id) ^ counter++);
}

double RngStream::next_uniform() {
  // 53 random bits into [0, 1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_uniform(double lo, double hi) {
  if (!(lo <= hi)) throw ConfigError("RngStream::next_uniform: lo > hi");
  return lo + (hi - lo) * next_uniform();
}

double RngStream::next_normal() {
  double u1 = next_uniform();
  double u2 = next_uniform();
  // 1 - u1 lies in (0, 1], keeping the log finite.
  double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::size_t RngStream::next_index(std::size_t n) {
  if (n == 0) throw ConfigError("RngStream::next_index: n == 0");
  // Rejection sampling for an unbiased draw.
  std::uint64_t bound = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= bound);
  return static_cast<std::size_t>(v % n);
}

std::size_t RngStream::next_categorical(const std::vector<double>& weights) {
  if (weights.empty()) throw ConfigError("RngStream::next_categorical: empty weights");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ConfigError("RngStream::next_categorical: negative weight");
    total += w;
  }
  if (total <= 0.0) throw ConfigError("RngStream::next_categorical: weights sum to zero");
  double u = next_uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;
}

std::uint64_t stream_id(std::string_view tag, std::uint64_t a, std::uint64_t b) {
  // FNV-1a over the tag, then mix in the indices.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  h = mix64(h ^ mix64(a));
  h = mix64(h ^ mix64(b));
  return h;
}

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

namespace {

void check_finite_dims(std::size_t got, std::size_t want, const char* where) {
  if (got != want) throw ConfigError(std::string(where) + ": dimension mismatch");
}

// dst[0..n) += s * src[0..n)
inline void axpy(double* dst, const double* src, double s, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) dst[k] += s * src[k];
}

}  // namespace

LayerParams init_layer(std::size_t in_dim, std::size_t out_dim, RngStream& rng) {
  if (in_dim == 0 || out_dim == 0) throw ConfigError("init_layer: zero dimension");
  double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  LayerParams p;
  p.weight = Matrix(out_dim, in_dim);
  p.bias = Matrix(1, out_dim);
  for (double& w : p.weight.data) w = rng.next_uniform(-bound, bound);
  for (double& b : p.bias.data) b = rng.next_uniform(-bound, bound);
  return p;
}

Matrix dense_forward(const Matrix& input, const LayerParams& p) {
  std::size_t in_dim = p.weight.cols, out_dim = p.weight.rows;
  check_finite_dims(input.cols, in_dim, "dense_forward");

  // Transposed copy of W so the inner loop walks contiguous memory.
  Matrix wt(in_dim, out_dim);
  for (std::size_t o = 0; o < out_dim; ++o)
    for (std::size_t k = 0; k < in_dim; ++k) wt(k, o) = p.weight(o, k);

  Matrix out(input.rows, out_dim);
  for (std::size_t i = 0; i < input.rows; ++i) {
    double* oi = out.row(i);
    for (std::size_t o = 0; o < out_dim; ++o) oi[o] = p.bias(0, o);
    const double* xi = input.row(i);
    for (std::size_t k = 0; k < in_dim; ++k) {
      if (xi[k] != 0.0) axpy(oi, wt.row(k), xi[k], out_dim);
    }
  }
  return out;
}

DenseGrads dense_backward(const Matrix& input, const LayerParams& p, const Matrix& d_output) {
  std::size_t in_dim = p.weight.cols, out_dim = p.weight.rows;
  check_finite_dims(input.cols, in_dim, "dense_backward");
  check_finite_dims(d_output.cols, out_dim, "dense_backward");
  check_finite_dims(d_output.rows, input.rows, "dense_backward");

  DenseGrads g;
  g.d_input = Matrix(input.rows, in_dim);
  g.d_params.weight = Matrix(out_dim, in_dim);
  g.d_params.bias = Matrix(1, out_dim);

  for (std::size_t i = 0; i < input.rows; ++i) {
    const double* di = d_output.row(i);
    const double* xi = input.row(i);
    double* gi = g.d_input.row(i);
    for (std::size_t o = 0; o < out_dim; ++o) {
      double d = di[o];
      if (d == 0.0) continue;
      g.d_params.bias(0, o) += d;
      axpy(g.d_params.weight.row(o), xi, d, in_dim);   // dW = d_out^T * input
      axpy(gi, p.weight.row(o), d, in_dim);            // d_in = d_out * W
    }
  }
  return g;
}

Matrix relu(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

Matrix relu_backward(const Matrix& x, const Matrix& d_output) {
  if (!x.same_shape(d_output)) throw ConfigError("relu_backward: shape mismatch");
  Matrix out = d_output;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (x.data[i] <= 0.0) out.data[i] = 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Matrix softmax(const Matrix& logits) {
  Matrix out(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const double* zi = logits.row(i);
    double* pi = out.row(i);
    double m = zi[0];
    for (std::size_t j = 1; j < logits.cols; ++j) m = std::max(m, zi[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      pi[j] = std::exp(zi[j] - m);
      total += pi[j];
    }
    for (std::size_t j = 0; j < logits.cols; ++j) pi[j] /= total;
  }
  return out;
}

namespace {

void check_labels(const Matrix& logits, const std::vector<int>& labels, const char* where) {
  if (labels.size() != logits.rows) throw ConfigError(std::string(where) + ": label count mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols)
      throw ConfigError(std::string(where) + ": label out of range");
  }
  if (logits.rows == 0) throw ConfigError(std::string(where) + ": empty batch");
}

}  // namespace

LossResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                                 const std::vector<double>& weights) {
  check_labels(logits, labels, "softmax_cross_entropy");
  if (!weights.empty() && weights.size() != labels.size())
    throw ConfigError("softmax_cross_entropy: weight count mismatch");

  double weight_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double w = weights.empty() ? 1.0 : weights[i];
    if (w < 0.0) throw ConfigError("softmax_cross_entropy: negative weight");
    weight_sum += w;
  }
  if (weight_sum <= 0.0) throw ConfigError("softmax_cross_entropy: weights sum to zero");

  Matrix probs = softmax(logits);
  LossResult res;
  res.d_logits = Matrix(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    double w = weights.empty() ? 1.0 : weights[i];
    std::size_t y = static_cast<std::size_t>(labels[i]);
    res.loss += w * -std::log(std::max(probs(i, y), 1e-12));
    double scale = w / weight_sum;
    const double* pi = probs.row(i);
    double* di = res.d_logits.row(i);
    for (std::size_t j = 0; j < logits.cols; ++j) di[j] = scale * pi[j];
    di[y] -= scale;
  }
  res.loss /= weight_sum;
  return res;
}

LossResult generalized_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                                     double q) {
  check_labels(logits, labels, "generalized_cross_entropy");
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("generalized_cross_entropy: q must be in (0, 1]");

  Matrix probs = softmax(logits);
  LossResult res;
  res.d_logits = Matrix(logits.rows, logits.cols);
  double inv_n = 1.0 / static_cast<double>(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    std::size_t y = static_cast<std::size_t>(labels[i]);
    double py = std::max(probs(i, y), 1e-12);
    res.loss += (1.0 - std::pow(py, q)) / q;
    double pyq = std::pow(py, q);
    const double* pi = probs.row(i);
    double* di = res.d_logits.row(i);
    for (std::size_t j = 0; j < logits.cols; ++j) di[j] = inv_n * pyq * pi[j];
    di[y] -= inv_n * pyq;
  }
  res.loss *= inv_n;
  return res;
}

void sgd_update(LayerParams& p, const LayerParams& grads, double lr, double weight_decay) {
  if (!p.weight.same_shape(grads.weight) || !p.bias.same_shape(grads.bias))
    throw ConfigError("sgd_update: shape mismatch");
  for (std::size_t i = 0; i < p.weight.data.size(); ++i)
    p.weight.data[i] -= lr * (grads.weight.data[i] + weight_decay * p.weight.data[i]);
  for (std::size_t i = 0; i < p.bias.data.size(); ++i)
    p.bias.data[i] -= lr * (grads.bias.data[i] + weight_decay * p.bias.data[i]);
}

}  // namespace shortcutlab
