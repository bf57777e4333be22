#include <doctest.h>

#include <cmath>
#include <set>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "tsenet/error.hpp"
#include "tsenet/nn.hpp"
#include "tsenet/random.hpp"

using namespace tsenet;
using namespace tsenet::nn;

namespace {

expansion::PgmCore toy_core() {
  expansion::PgmCore core;
  core.layer_sizes = {20, 8, 4};
  for (std::size_t l = 0; l < 3; ++l) {
    std::vector<std::string> names;
    for (std::size_t u = 0; u < core.layer_sizes[l]; ++u) names.push_back("n" + std::to_string(l) + std::to_string(u));
    core.names.push_back(names);
  }
  auto add = [&](std::vector<std::vector<std::size_t>> rows) {
    std::vector<std::vector<expansion::EdgeOrigin>> kinds;
    for (auto& r : rows) {
      std::set<std::size_t> s(r.begin(), r.end());
      r.assign(s.begin(), s.end());
      kinds.emplace_back(r.size(), expansion::EdgeOrigin::skeleton);
    }
    core.adjacency.push_back(rows);
    core.origins.push_back(kinds);
  };
  std::vector<std::vector<std::size_t>> l1(8), l2(4);
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t i = 0; i < 6; ++i) l1[u].push_back((u * 2 + i) % 20);
  for (std::size_t u = 0; u < 4; ++u) l2[u] = {2 * u, 2 * u + 1, (2 * u + 4) % 8};
  add(l1);
  add(l2);
  core.validate();
  return core;
}

// Parameter count by the construction rule, independent of the builder.
std::size_t recount(const expansion::PgmCore& core, std::size_t B, std::size_t s, std::size_t outputs,
                    bool skips = true) {
  const std::size_t L = core.n_layers();
  std::size_t n = core.edge_count();
  for (std::size_t l = 1; l < L; ++l) n += core.layer_sizes[l];
  n += core.layer_sizes[L - 1] * B + B;
  std::size_t feature = B;
  if (skips) {
    for (std::size_t l = 0; l + 1 < L; ++l) n += core.layer_sizes[l] * s + s;
    feature += (L - 1) * s;
  }
  return n + feature * outputs + outputs;
}

Matrix<double> random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

template <class T>
void jitter_biases(Network<T>& net, Rng& rng) {
  for (auto& l : net.layers)
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = static_cast<T>(0.1 * rng.normal());
}

template <class T>
bool off_mask_zero(const Network<T>& net) {
  for (const auto& l : net.layers) {
    if (((l.mask.array() == T(0)) && (l.weights.array() != T(0))).any()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("TSE-Net parameter count follows the construction rule") {
  const auto core = toy_core();
  CHECK(core.edge_count() == 60);
  const auto net = build_tse_net<float>(core, {16, 8}, 3, Head::softmax_ce, 1);
  CHECK(net.param_count() == recount(core, 16, 8, 3));
  CHECK(net.param_count() == 491);
  // Output fan-in is B + (L - 1) s.
  CHECK(net.layers.back().in_dim() == 16 + 2 * 8);
  std::size_t groups = 0;
  for (const auto& l : net.layers) groups += l.role == Role::feature || l.role == Role::skip;
  CHECK(groups == core.n_layers());
}

TEST_CASE("backbone masks mirror the core adjacency") {
  const auto core = toy_core();
  const auto net = build_tse_net<double>(core, {16, 8}, 3, Head::softmax_ce, 2);
  for (std::size_t l = 0; l + 1 < core.n_layers(); ++l) {
    const auto& layer = net.layers[l];
    CHECK(layer.role == Role::backbone);
    for (std::size_t u = 0; u < core.layer_sizes[l + 1]; ++u) {
      const auto& row = core.adjacency[l][u];
      for (std::size_t c = 0; c < core.layer_sizes[l]; ++c) {
        const bool edge = std::find(row.begin(), row.end(), c) != row.end();
        CHECK(layer.mask(u, c) == (edge ? 1.0 : 0.0));
      }
    }
  }
  CHECK(off_mask_zero(net));
}

TEST_CASE("single-layer core has no skip groups") {
  expansion::PgmCore core;
  core.layer_sizes = {5};
  core.names = {{"a", "b", "c", "d", "e"}};
  const auto net = build_tse_net<float>(core, {4, 2}, 2, Head::sigmoid_bce, 0);
  CHECK(net.layers.size() == 2);
  CHECK(net.layers[0].role == Role::feature);
  CHECK(net.param_count() == 5 * 4 + 4 + 4 + 1);
}

TEST_CASE("builders reject bad arguments") {
  const auto core = toy_core();
  CHECK_THROWS_AS(build_tse_net<float>(core, {16, 8}, 1, Head::softmax_ce, 0), ConfigError);
  CHECK_THROWS_AS(build_tse_net<float>(core, {0, 8}, 3, Head::softmax_ce, 0), ConfigError);
  CHECK_THROWS_AS(build_tse_net<float>(core, {16, 8}, 3, Head::sigmoid_bce, 0), ConfigError);
  CHECK_THROWS_AS(build_fnn<float>({256, 1, Shape::rectangle}, 10, 2, Head::sigmoid_bce, 0), ConfigError);
  CHECK_THROWS_AS(build_fnn<float>({512, 5, Shape::rectangle}, 10, 2, Head::sigmoid_bce, 0), ConfigError);
  CHECK_THROWS_AS(default_head(1), ConfigError);
  CHECK(default_head(2) == Head::sigmoid_bce);
  CHECK(default_head(4) == Head::softmax_ce);
}

TEST_CASE("forward arithmetic and modes") {
  Network<double> net = build_dense<double>(2, std::vector<std::size_t>{1}, 2, Head::sigmoid_bce, 0);
  net.layers[0].weights << 1.0, -1.0;
  net.layers[0].bias << 0.0;
  Matrix<double> x(1, 2);
  x << 2.0, 1.0;
  CHECK(forward_nodes(net, x)[1](0, 0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(forward(net, Matrix<double>(1, 3), Mode::eval, 0.0, 0), ConfigError);

  Rng rng(3);
  const auto big = build_tse_net<double>(toy_core(), {16, 8}, 3, Head::softmax_ce, 4);
  const auto xb = random_matrix(rng, 7, 20);
  const auto eval = forward(big, xb, Mode::eval, 0.0, 0);
  const auto train0 = forward(big, xb, Mode::train, 0.0, 99);
  CHECK(eval == train0);
  for (Eigen::Index i = 0; i < eval.rows(); ++i) CHECK(std::abs(eval.row(i).sum() - 1.0) < 1e-9);
}

TEST_CASE("gradients match finite differences") {
  Rng rng(11);
  const auto core = gradcheck::random_core(5, {10, 5, 3}, 3);
  for (Head head : {Head::softmax_ce, Head::sigmoid_bce}) {
    const std::size_t classes = head == Head::sigmoid_bce ? 2 : 3;
    auto net = build_tse_net<double>(core, {4, 3}, classes, head, 6);
    jitter_biases(net, rng);
    REQUIRE(net.param_count() <= 1000);
    const auto x = random_matrix(rng, 6, 10);
    const auto y = random_labels(rng, 6, classes);
    const auto d = gradcheck::check(net, x, y, 1e-3, 1e-6);
    CHECK(d.off_mask_zero);
    CHECK(d.checked + d.skipped == net.param_count());
    CHECK(d.skipped * 20 <= d.checked);
    CHECK(d.max_rel < 1e-6);
    const auto f = gradcheck::check(net.cast<float>(), x, y, 1e-3, 1e-4);
    CHECK(f.off_mask_zero);
    CHECK(f.max_rel < 1e-4);
  }
}

TEST_CASE("gradient edge cases") {
  Rng rng(12);
  auto net = build_tse_net<double>(toy_core(), {6, 3}, 3, Head::softmax_ce, 7);
  const Matrix<double> zero = Matrix<double>::Zero(4, 20);
  const auto y = random_labels(rng, 4, 3);
  Cache<double> c;
  forward(net, zero, Mode::eval, 0.0, 0, &c);
  const auto g = backward(net, c, y);
  // Layers reading the input directly see zero activations.
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    if (net.layers[k].sources == std::vector<std::size_t>{0}) CHECK(g.weights[k].cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(g.bias.back().cwiseAbs().maxCoeff() > 0.0);

  // The mean loss is unchanged by duplicating the batch, and so is its gradient.
  const auto x = random_matrix(rng, 5, 20);
  const auto y5 = random_labels(rng, 5, 3);
  Matrix<double> x2(10, 20);
  x2 << x, x;
  std::vector<int> y10 = y5;
  y10.insert(y10.end(), y5.begin(), y5.end());
  Cache<double> c1, c2;
  forward(net, x, Mode::eval, 0.0, 0, &c1);
  forward(net, x2, Mode::eval, 0.0, 0, &c2);
  const auto g1 = backward(net, c1, y5);
  const auto g2 = backward(net, c2, y10);
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    CHECK((g1.weights[k] - g2.weights[k]).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((g1.bias[k] - g2.bias[k]).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("Adam first step and mask invariance") {
  Network<double> net = build_dense<double>(1, std::vector<std::size_t>{}, 2, Head::sigmoid_bce, 0);
  net.layers[0].weights(0, 0) = 0.0;
  net.layers[0].bias(0) = 0.0;
  auto state = adam_init(net);
  Gradients<double> g{{Matrix<double>::Ones(1, 1)}, {Vector<double>::Zero(1)}};
  adam_step(net, g, state, AdamConfig{});
  // Bias-corrected moments are both 1, so the step is -lr / (1 + eps).
  CHECK(net.layers[0].weights(0, 0) == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(std::abs(net.layers[0].weights(0, 0) - -9.99999995e-4) < 1e-11);
  CHECK(net.layers[0].bias(0) == 0.0);

  Rng rng(13);
  auto tse = build_tse_net<float>(toy_core(), {8, 4}, 3, Head::softmax_ce, 8);
  auto st = adam_init(tse);
  const Matrix<float> x = random_matrix(rng, 16, 20).cast<float>();
  const auto y = random_labels(rng, 16, 3);
  for (int step = 0; step < 1000; ++step) {
    Cache<float> c;
    forward(tse, x, Mode::train, 0.5, static_cast<std::uint64_t>(step), &c);
    adam_step(tse, backward(tse, c, y), st, AdamConfig{});
    if (step % 100 == 0) REQUIRE(off_mask_zero(tse));
  }
  CHECK(off_mask_zero(tse));
}

TEST_CASE("training on a separable toy set") {
  Rng rng(21);
  const std::size_t n = 400, d = 6;
  Matrix<float> x(n, d);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      x(i, j) = static_cast<float>(rng.normal());
      s += (j % 2 ? -1.0 : 1.0) * x(i, j);
    }
    y[i] = s > 0.0 ? 1 : 0;
  }
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.dropout_rate = 0.0;
  cfg.adam.learning_rate = 1e-2;
  cfg.batch_size = 32;
  cfg.seed = 5;
  const auto net = build_dense<float>(d, std::vector<std::size_t>{16}, 2, Head::sigmoid_bce, 3);
  const auto r = train(net, x, y, x, y, cfg);
  CHECK(r.history.size() <= 51);
  CHECK(evaluate(r.net, x, y, true).accuracy >= 0.99);
  const auto again = train(net, x, y, x, y, cfg);
  REQUIRE(again.history.size() == r.history.size());
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    CHECK(again.history[e].train_loss == r.history[e].train_loss);
    CHECK(again.history[e].validation.auc == r.history[e].validation.auc);
  }
  CHECK(again.net == r.net);
  CHECK_THROWS_AS(train(net, Matrix<float>(0, d), std::vector<int>{}, x, y, cfg), ConfigError);
}

TEST_CASE("untrained loss is close to ln K") {
  Rng rng(22);
  for (std::size_t k : {3u, 4u}) {
    const auto net = build_dense<double>(8, std::vector<std::size_t>{32}, k, Head::softmax_ce, k);
    const auto x = random_matrix(rng, 400, 8);
    std::vector<int> y(400);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % k);
    CHECK(loss(net, x, y) == doctest::Approx(std::log(static_cast<double>(k))).epsilon(0.1));
  }
}

TEST_CASE("AUC by ranks equals pair counting") {
  CHECK(auc(std::vector<double>{0.9, 0.8, 0.3}, std::vector<int>{1, 0, 1}) == doctest::Approx(0.5));
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(auc(std::vector<double>{0.4, 0.4, 0.4}, std::vector<int>{0, 1, 1}) == 0.5);
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(49);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(6)) / 5.0;
      y[i] = rng.bernoulli(0.5);
    }
    y[0] = 0;
    y[1] = 1;
    CHECK(auc(s, y) == doctest::Approx(oracle::auc_pairs(s, y)).epsilon(1e-12));
  }
  const auto multi = build_dense<float>(3, std::vector<std::size_t>{4}, 3, Head::softmax_ce, 0);
  CHECK_THROWS_AS(evaluate(multi, Matrix<float>(Matrix<float>::Zero(3, 3)), std::vector<int>{0, 1, 2}, true), ConfigError);
}

TEST_CASE("FNN grid") {
  const auto grid = fnn_grid();
  CHECK(grid.size() == 21);
  std::set<std::vector<std::size_t>> shapes;
  for (const auto& p : grid) shapes.insert(p.widths());
  CHECK(shapes.size() == 21);
  const auto net = build_fnn<float>({1024, 2, Shape::rectangle}, 1644, 2, Head::sigmoid_bce, 0);
  CHECK(net.param_count() == 1644u * 1024 + 1024 + 1024 * 1024 + 1024 + 1024 + 1);
  const auto a = build_fnn<float>({512, 1, Shape::conic}, 50, 3, Head::softmax_ce, 1);
  const auto b = build_fnn<float>({512, 1, Shape::rectangle}, 50, 3, Head::softmax_ce, 1);
  CHECK(a == b);
  CHECK((GridPoint{512, 4, Shape::conic}.widths() == std::vector<std::size_t>{512, 256, 128, 64}));
}

TEST_CASE("magnitude pruning") {
  Network<double> net = build_dense<double>(4, std::vector<std::size_t>{}, 2, Head::sigmoid_bce, 0);
  net.layers[0].weights << 0.5, -0.3, 0.1, 0.0;
  const auto p = magnitude_prune(net, 2 + 1);
  CHECK(p.layers[0].mask(0, 0) == 1.0);
  CHECK(p.layers[0].mask(0, 1) == 1.0);
  CHECK(p.layers[0].mask(0, 2) == 0.0);
  CHECK(p.layers[0].mask(0, 3) == 0.0);
  CHECK(magnitude_prune(net, net.param_count()) == net);
  CHECK_THROWS_AS(magnitude_prune(net, 0), ConfigError);
  CHECK_THROWS_AS(magnitude_prune(net, 6), ConfigError);

  // Ties go to the lower flat index.
  net.layers[0].weights << 0.2, -0.2, 0.2, 0.1;
  const auto t = magnitude_prune(net, 3);
  CHECK(t.layers[0].mask(0, 0) == 1.0);
  CHECK(t.layers[0].mask(0, 1) == 1.0);

  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t in = 3 + rng.below(20);
    std::vector<std::size_t> hidden(rng.below(3) + 1);
    for (auto& h : hidden) h = 2 + rng.below(12);
    const auto dense = build_dense<float>(in, hidden, 2 + rng.below(3), Head::softmax_ce, rng.next());
    std::size_t biases = 0;
    for (const auto& l : dense.layers) biases += l.out_dim();
    const std::size_t target = biases + rng.below(dense.param_count() - biases + 1);
    const auto pruned = magnitude_prune(dense, target);
    CHECK(pruned.param_count() == target);
    CHECK(off_mask_zero(pruned));
  }
}

TEST_CASE("backbone-only mode drops the skip groups") {
  Rng rng(41);
  const auto core = toy_core();
  const auto full = build_tse_net<double>(core, {16, 8}, 3, Head::softmax_ce, 9);
  const auto bare = build_tse_net<double>(core, {16, 8}, 3, Head::softmax_ce, 9, false);
  CHECK(bare.param_count() < full.param_count());
  CHECK(bare.param_count() == recount(core, 16, 8, 3, false));
  const auto x = random_matrix(rng, 4, 20);
  const auto y = random_labels(rng, 4, 3);
  const auto r = gradcheck::check(bare, x, y, 1e-3, 1e-6);
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("dropout preserves the expected output") {
  Rng rng(51);
  // One hidden layer feeding a linear output: E[logits] equals the eval logits.
  const auto net = build_dense<double>(5, std::vector<std::size_t>{12}, 3, Head::softmax_ce, 10);
  const auto x = random_matrix(rng, 4, 5);
  Cache<double> eval;
  forward(net, x, Mode::eval, 0.0, 0, &eval);
  const Matrix<double>& target = eval.act.back();
  const int runs = 10000;
  Matrix<double> sum = Matrix<double>::Zero(target.rows(), target.cols());
  Matrix<double> sq = sum;
  for (int r = 0; r < runs; ++r) {
    Cache<double> c;
    forward(net, x, Mode::train, 0.5, static_cast<std::uint64_t>(r), &c);
    sum += c.act.back();
    sq += c.act.back().cwiseProduct(c.act.back());
  }
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const double mean = sum.data()[i] / runs;
    const double var = sq.data()[i] / runs - mean * mean;
    const double se = std::sqrt(var / runs);
    CHECK(std::abs(mean - target.data()[i]) <= 3.0 * se);
  }
}
