#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "shortcutlab/numerics.hpp"
#include "testutil.hpp"

using namespace shortcutlab;

// ---------------------------------------------------------------------------
// RngStream
// ---------------------------------------------------------------------------

TEST_CASE("rng is a pure function of seed, stream and counter") {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream c(42, 8);
  c.counter = 0;
  RngStream d(42, 7);
  d.counter = 50;
  RngStream e(42, 7);
  e.counter = 50;
  CHECK(d.next_u64() == e.next_u64());
  CHECK(a.next_u64() != c.next_u64());

  RngStream other_seed(43, 7);
  RngStream base(42, 7);
  CHECK(base.next_u64() != other_seed.next_u64());
}

TEST_CASE("uniform draws stay in [0, 1) and ranges are respected") {
  RngStream rng(1, stream_id("test/uniform"));
  for (int i = 0; i < 10000; ++i) {
    double u = rng.next_uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 1000; ++i) {
    double u = rng.next_uniform(-2.5, 3.5);
    CHECK(u >= -2.5);
    CHECK(u < 3.5);
  }
  CHECK_THROWS_AS(rng.next_uniform(1.0, 0.0), ConfigError);
}

TEST_CASE("normal draws have unit-ish moments") {
  RngStream rng(9, stream_id("test/normal"));
  const int n = 40000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = rng.next_normal();
    sum += z;
    sumsq += z * z;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("categorical follows the inverse CDF") {
  RngStream rng(3, stream_id("test/categorical"));
  std::vector<double> weights = {1.0, 0.0, 3.0};
  int counts[3] = {0, 0, 0};
  const int n = 20000;
  for (int i = 0; i < n; ++i) counts[rng.next_categorical(weights)]++;
  CHECK(counts[1] == 0);
  CHECK(std::abs(counts[0] / double(n) - 0.25) < 0.02);
  CHECK(std::abs(counts[2] / double(n) - 0.75) < 0.02);

  CHECK_THROWS_AS(rng.next_categorical({}), ConfigError);
  CHECK_THROWS_AS(rng.next_categorical({0.0, 0.0}), ConfigError);
  CHECK_THROWS_AS(rng.next_categorical({1.0, -0.5}), ConfigError);
}

TEST_CASE("shuffle is a deterministic permutation") {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  RngStream a(11, stream_id("test/shuffle"));
  RngStream b(11, stream_id("test/shuffle"));
  auto va = v, vb = v;
  a.shuffle(va);
  b.shuffle(vb);
  CHECK(va == vb);
  CHECK(va != v);
  CHECK(std::set<int>(va.begin(), va.end()).size() == 50);
}

TEST_CASE("stream_id separates tags and indices") {
  CHECK(stream_id("a") != stream_id("b"));
  CHECK(stream_id("a", 0) != stream_id("a", 1));
  CHECK(stream_id("a", 0, 0) != stream_id("a", 0, 1));
  CHECK(stream_id("a", 2, 3) == stream_id("a", 2, 3));
}

// ---------------------------------------------------------------------------
// Dense layer and pointwise ops
// ---------------------------------------------------------------------------

TEST_CASE("dense_forward matches a hand-computed affine map") {
  LayerParams p;
  p.weight = Matrix(2, 3);
  // W = [[1, 2, 3], [4, 5, 6]]
  for (int i = 0; i < 6; ++i) p.weight.data[i] = i + 1;
  p.bias = Matrix(1, 2);
  p.bias(0, 0) = 0.5;
  p.bias(0, 1) = -0.5;

  Matrix x(1, 3);
  x(0, 0) = 1.0;
  x(0, 1) = -1.0;
  x(0, 2) = 2.0;

  Matrix out = dense_forward(x, p);
  CHECK(out(0, 0) == doctest::Approx(1.0 - 2.0 + 6.0 + 0.5));
  CHECK(out(0, 1) == doctest::Approx(4.0 - 5.0 + 12.0 - 0.5));

  Matrix bad(1, 4);
  CHECK_THROWS_AS(dense_forward(bad, p), ConfigError);
}

TEST_CASE("relu and its backward mask") {
  Matrix x(1, 4);
  x(0, 0) = -1.0;
  x(0, 1) = 0.0;
  x(0, 2) = 2.0;
  x(0, 3) = -0.5;
  Matrix y = relu(x);
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == 0.0);
  CHECK(y(0, 2) == 2.0);
  CHECK(y(0, 3) == 0.0);

  Matrix d(1, 4, 1.0);
  Matrix dx = relu_backward(x, d);
  CHECK(dx(0, 0) == 0.0);
  CHECK(dx(0, 1) == 0.0);
  CHECK(dx(0, 2) == 1.0);
  CHECK(dx(0, 3) == 0.0);
}

TEST_CASE("init_layer bounds and determinism") {
  RngStream a(5, stream_id("test/init"));
  RngStream b(5, stream_id("test/init"));
  LayerParams pa = init_layer(16, 4, a);
  LayerParams pb = init_layer(16, 4, b);
  CHECK(testutil::bit_equal(pa.weight, pb.weight));
  CHECK(testutil::bit_equal(pa.bias, pb.bias));
  double bound = 1.0 / std::sqrt(16.0);
  for (double w : pa.weight.data) CHECK(std::abs(w) <= bound);
  for (double v : pa.bias.data) CHECK(std::abs(v) <= bound);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

TEST_CASE("cross-entropy on uniform logits is log K") {
  Matrix z(1, 2);
  std::vector<int> y = {0};
  LossResult r = softmax_cross_entropy(z, y);
  CHECK(r.loss == doctest::Approx(std::log(2.0)));
  CHECK(r.d_logits(0, 0) == doctest::Approx(-0.5));
  CHECK(r.d_logits(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("weighted cross-entropy matches hand computation") {
  Matrix z(2, 2);
  z(0, 0) = 2.0;
  z(1, 1) = 1.0;
  std::vector<int> y = {0, 1};
  std::vector<double> w = {3.0, 1.0};

  Matrix p = softmax(z);
  double expect = (3.0 * -std::log(p(0, 0)) + 1.0 * -std::log(p(1, 1))) / 4.0;
  LossResult r = softmax_cross_entropy(z, y, w);
  CHECK(r.loss == doctest::Approx(expect));

  CHECK_THROWS_AS(softmax_cross_entropy(z, y, {1.0}), ConfigError);
  CHECK_THROWS_AS(softmax_cross_entropy(z, y, {0.0, 0.0}), ConfigError);
  CHECK_THROWS_AS(softmax_cross_entropy(z, y, {-1.0, 2.0}), ConfigError);
  CHECK_THROWS_AS(softmax_cross_entropy(z, {0, 5}), ConfigError);
}

TEST_CASE("cross-entropy survives extreme logits via the clamp") {
  Matrix z(1, 2);
  z(0, 0) = -1000.0;
  z(0, 1) = 1000.0;
  LossResult r = softmax_cross_entropy(z, {0});
  CHECK(std::isfinite(r.loss));
  CHECK(r.loss <= -std::log(1e-12) + 1.0);
}

TEST_CASE("softmax rows are normalized and shift-invariant") {
  RngStream rng(17, stream_id("test/softmax"));
  Matrix z(4, 5);
  for (double& v : z.data) v = rng.next_normal();
  Matrix p = softmax(z);
  for (std::size_t i = 0; i < p.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < p.cols; ++j) s += p(i, j);
    CHECK(s == doctest::Approx(1.0));
  }
  Matrix z2 = z;
  for (double& v : z2.data) v += 7.5;
  Matrix p2 = softmax(z2);
  CHECK(testutil::max_abs_diff(p, p2) < 1e-12);
}

TEST_CASE("generalized cross-entropy at q=1 equals 1 - p_y") {
  RngStream rng(23, stream_id("test/gce"));
  Matrix z(3, 4);
  for (double& v : z.data) v = rng.next_normal();
  std::vector<int> y = {1, 3, 0};
  Matrix p = softmax(z);
  double expect = ((1.0 - p(0, 1)) + (1.0 - p(1, 3)) + (1.0 - p(2, 0))) / 3.0;
  LossResult r = generalized_cross_entropy(z, y, 1.0);
  CHECK(r.loss == doctest::Approx(expect));

  CHECK_THROWS_AS(generalized_cross_entropy(z, y, 0.0), ConfigError);
  CHECK_THROWS_AS(generalized_cross_entropy(z, y, 1.5), ConfigError);
}

TEST_CASE("sgd_update applies decay to weights and biases") {
  LayerParams p;
  p.weight = Matrix(1, 1, 2.0);
  p.bias = Matrix(1, 1, 1.0);
  LayerParams g;
  g.weight = Matrix(1, 1, 0.5);
  g.bias = Matrix(1, 1, 0.25);
  sgd_update(p, g, 0.1, 0.01);
  CHECK(p.weight(0, 0) == doctest::Approx(2.0 - 0.1 * (0.5 + 0.01 * 2.0)));
  CHECK(p.bias(0, 0) == doctest::Approx(1.0 - 0.1 * (0.25 + 0.01 * 1.0)));
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

namespace {

// One randomized two-layer network with a loss on top; checks every analytic
// gradient against central differences.
void check_network_gradients(std::uint64_t trial, int loss_kind) {
  RngStream rng(1000 + trial, stream_id("test/fd", trial));
  std::size_t batch = 1 + rng.next_index(5);
  std::size_t in_dim = 2 + rng.next_index(6);
  std::size_t hidden = 2 + rng.next_index(5);
  std::size_t classes = 2 + rng.next_index(4);

  Matrix x(batch, in_dim);
  for (double& v : x.data) v = rng.next_normal();
  std::vector<int> labels(batch);
  for (auto& y : labels) y = static_cast<int>(rng.next_index(classes));
  std::vector<double> weights(batch);
  for (auto& w : weights) w = 0.2 + rng.next_uniform();

  LayerParams l1 = init_layer(in_dim, hidden, rng);
  LayerParams l2 = init_layer(hidden, classes, rng);

  auto loss_of = [&]() {
    Matrix h = relu(dense_forward(x, l1));
    Matrix z = dense_forward(h, l2);
    switch (loss_kind) {
      case 0: return softmax_cross_entropy(z, labels).loss;
      case 1: return softmax_cross_entropy(z, labels, weights).loss;
      default: return generalized_cross_entropy(z, labels, 0.7).loss;
    }
  };

  // Analytic pass.
  Matrix a1 = dense_forward(x, l1);
  Matrix h = relu(a1);
  Matrix z = dense_forward(h, l2);
  LossResult lr = loss_kind == 0   ? softmax_cross_entropy(z, labels)
                  : loss_kind == 1 ? softmax_cross_entropy(z, labels, weights)
                                   : generalized_cross_entropy(z, labels, 0.7);
  DenseGrads g2 = dense_backward(h, l2, lr.d_logits);
  Matrix dh = relu_backward(a1, g2.d_input);
  DenseGrads g1 = dense_backward(x, l1, dh);

  auto check_block = [&](std::vector<double>& param, const std::vector<double>& analytic) {
    std::vector<double> numeric = testutil::numeric_grad(loss_of, param);
    CHECK(testutil::grad_rel_error(analytic, numeric) <= 1e-4);
  };
  check_block(l1.weight.data, g1.d_params.weight.data);
  check_block(l1.bias.data, g1.d_params.bias.data);
  check_block(l2.weight.data, g2.d_params.weight.data);
  check_block(l2.bias.data, g2.d_params.bias.data);
  check_block(x.data, g1.d_input.data);
}

}  // namespace

TEST_CASE("analytic gradients match finite differences over randomized shapes") {
  for (std::uint64_t trial = 0; trial < 21; ++trial) {
    check_network_gradients(trial, static_cast<int>(trial % 3));
  }
}
