#include "tsenet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "tsenet/error.hpp"
#include "tsenet/random.hpp"

namespace tsenet::nn {

Head default_head(std::size_t n_classes) {
  if (n_classes < 2) throw ConfigError("a classifier needs at least two classes");
  return n_classes == 2 ? Head::sigmoid_bce : Head::softmax_ce;
}

std::string to_string(Head h) { return h == Head::sigmoid_bce ? "sigmoid_bce" : "softmax_ce"; }

Head parse_head(const std::string& s) {
  if (s == "sigmoid_bce") return Head::sigmoid_bce;
  if (s == "softmax_ce") return Head::softmax_ce;
  throw ConfigError("unknown head '" + s + "'");
}

std::string to_string(Role r) {
  switch (r) {
    case Role::backbone: return "backbone";
    case Role::feature: return "feature";
    case Role::skip: return "skip";
    case Role::hidden: return "hidden";
    case Role::output: return "output";
  }
  return "hidden";
}

Role parse_role(const std::string& s) {
  for (Role r : {Role::backbone, Role::feature, Role::skip, Role::hidden, Role::output}) {
    if (to_string(r) == s) return r;
  }
  throw ConfigError("unknown layer role '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation parse_activation(const std::string& s) {
  for (Activation a : {Activation::relu, Activation::sigmoid, Activation::identity}) {
    if (to_string(a) == s) return a;
  }
  throw ConfigError("unknown activation '" + s + "'");
}

std::string to_string(Shape s) { return s == Shape::conic ? "conic" : "rectangle"; }

template <class T>
std::size_t MaskedLayer<T>::param_count() const {
  return static_cast<std::size_t>((mask.array() != T(0)).count()) + out_dim();
}

template <class T>
bool MaskedLayer<T>::operator==(const MaskedLayer& o) const {
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
  };
  return activation == o.activation && role == o.role && tag == o.tag && sources == o.sources &&
         same(weights, o.weights) && same(mask, o.mask) && same(bias, o.bias);
}

template <class T>
std::size_t Network<T>::node_width(std::size_t node) const {
  if (node == 0) return input_dim;
  return layers.at(node - 1).out_dim();
}

template <class T>
std::size_t Network<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.param_count();
  return n;
}

template <class T>
void Network<T>::validate() const {
  if (input_dim == 0) throw ValidationError("network input is empty");
  if (n_classes < 2) throw ValidationError("network needs at least two classes");
  if (layers.empty()) throw ValidationError("network has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    if (l.sources.empty()) throw ValidationError("layer has no sources");
    std::size_t in = 0;
    for (std::size_t s : l.sources) {
      if (s > k) throw ValidationError("layer reads a node that is not yet computed");
      in += node_width(s);
    }
    if (l.out_dim() == 0 || l.in_dim() != in) throw ValidationError("layer input width does not match its sources");
    if (l.mask.rows() != l.weights.rows() || l.mask.cols() != l.weights.cols() ||
        static_cast<std::size_t>(l.bias.size()) != l.out_dim()) {
      throw ValidationError("layer shapes disagree");
    }
    if (((l.mask.array() != T(0)) && (l.mask.array() != T(1))).any()) throw ValidationError("mask must be 0/1");
    if (((l.mask.array() == T(0)) && (l.weights.array() != T(0))).any()) {
      throw ValidationError("off-mask weight is nonzero");
    }
  }
  const auto& last = layers.back();
  if (last.activation != Activation::identity || last.out_dim() != output_dim()) {
    throw ValidationError("last layer must emit one logit per output");
  }
}

template <class T>
bool Network<T>::operator==(const Network& o) const {
  return input_dim == o.input_dim && n_classes == o.n_classes && head == o.head && layers == o.layers;
}

namespace {

// Uniform +-sqrt(6 / (fan_in + fan_out)), fan_in counted per unit from the
// mask and fan_out as the mean column count of the mask.
template <class T>
void init_weights(MaskedLayer<T>& l, std::uint64_t seed) {
  Rng rng(seed);
  const double nnz = static_cast<double>((l.mask.array() != T(0)).count());
  const double fan_out = nnz / static_cast<double>(l.in_dim());
  l.weights.setZero();
  l.bias.setZero();
  for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
    const double fan_in = static_cast<double>((l.mask.row(r).array() != T(0)).count());
    const double limit = std::sqrt(6.0 / std::max(1.0, fan_in + fan_out));
    for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
      if (l.mask(r, c) != T(0)) l.weights(r, c) = static_cast<T>(rng.uniform(-limit, limit));
    }
  }
}

template <class T>
MaskedLayer<T> dense_layer(std::size_t in, std::size_t out, Activation a, Role role, std::size_t tag,
                           std::vector<std::size_t> sources) {
  MaskedLayer<T> l;
  l.weights = Matrix<T>::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  l.mask = Matrix<T>::Ones(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  l.bias = Vector<T>::Zero(static_cast<Eigen::Index>(out));
  l.activation = a;
  l.role = role;
  l.tag = tag;
  l.sources = std::move(sources);
  return l;
}

template <class T>
void finish(Network<T>& net, std::uint64_t seed) {
  for (std::size_t k = 0; k < net.layers.size(); ++k) init_weights(net.layers[k], derive_seed(seed, k));
  net.validate();
}

// Concatenated input of a layer. Single-source layers read the node in place.
template <class T>
const Matrix<T>& gathered(const std::vector<Matrix<T>>& nodes, const std::vector<std::size_t>& sources,
                          Matrix<T>& scratch) {
  if (sources.size() == 1) return nodes[sources[0]];
  Eigen::Index width = 0;
  for (std::size_t s : sources) width += nodes[s].cols();
  scratch.resize(nodes[sources[0]].rows(), width);
  Eigen::Index at = 0;
  for (std::size_t s : sources) {
    scratch.middleCols(at, nodes[s].cols()) = nodes[s];
    at += nodes[s].cols();
  }
  return scratch;
}

template <class T>
void check_labels(const Network<T>& net, std::span<const int> labels, Eigen::Index rows) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) throw ConfigError("label count does not match batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= net.n_classes) throw ConfigError("label out of range");
  }
}

template <class T>
double loss_from_logits(const Network<T>& net, const Matrix<T>& z, std::span<const int> labels) {
  check_labels(net, labels, z.rows());
  if (z.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (net.head == Head::sigmoid_bce) {
      const double v = z(i, 0);
      total += std::max(v, 0.0) - v * labels[i] + std::log1p(std::exp(-std::abs(v)));
    } else {
      const double m = z.row(i).maxCoeff();
      double s = 0.0;
      for (Eigen::Index c = 0; c < z.cols(); ++c) s += std::exp(static_cast<double>(z(i, c)) - m);
      total += m + std::log(s) - static_cast<double>(z(i, labels[i]));
    }
  }
  return total / static_cast<double>(z.rows());
}

template <class T>
Matrix<T> probabilities(Head head, const Matrix<T>& z) {
  if (head == Head::sigmoid_bce) {
    return z.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  }
  Matrix<T> p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const T m = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

constexpr Eigen::Index kEvalChunk = 2048;

}  // namespace

template <class T>
Network<T> build_tse_net(const expansion::PgmCore& core, const FeatureWidths& widths, std::size_t n_classes,
                         Head head, std::uint64_t seed, bool skip_paths) {
  core.validate();
  if (n_classes < 2) throw ConfigError("a classifier needs at least two classes");
  if (widths.top < 1 || widths.skip < 1) throw ConfigError("feature widths must be positive");
  if (head == Head::sigmoid_bce && n_classes != 2) throw ConfigError("sigmoid head needs exactly two classes");
  const std::size_t L = core.n_layers();
  Network<T> net;
  net.input_dim = core.layer_sizes[0];
  net.n_classes = n_classes;
  net.head = head;
  for (std::size_t l = 0; l + 1 < L; ++l) {
    MaskedLayer<T> layer = dense_layer<T>(core.layer_sizes[l], core.layer_sizes[l + 1], Activation::relu,
                                          Role::backbone, l + 1, {l});
    layer.mask.setZero();
    for (std::size_t u = 0; u < core.adjacency[l].size(); ++u)
      for (std::size_t c : core.adjacency[l][u]) layer.mask(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(c)) = T(1);
    net.layers.push_back(std::move(layer));
  }
  // Node l holds core level l.
  std::vector<std::size_t> features;
  net.layers.push_back(dense_layer<T>(core.layer_sizes[L - 1], widths.top, Activation::relu, Role::feature, L - 1, {L - 1}));
  features.push_back(net.layers.size());
  if (skip_paths) {
    for (std::size_t l = 0; l + 1 < L; ++l) {
      net.layers.push_back(dense_layer<T>(core.layer_sizes[l], widths.skip, Activation::relu, Role::skip, l, {l}));
      features.push_back(net.layers.size());
    }
  }
  std::size_t in = 0;
  for (std::size_t f : features) in += net.node_width(f);
  net.layers.push_back(dense_layer<T>(in, net.output_dim(), Activation::identity, Role::output, 0, features));
  finish(net, seed);
  return net;
}

std::vector<std::size_t> GridPoint::widths() const {
  std::vector<std::size_t> w;
  std::size_t u = units;
  for (std::size_t i = 0; i < layers; ++i) {
    w.push_back(u);
    if (shape == Shape::conic) u = std::max<std::size_t>(16, u / 2);
  }
  return w;
}

std::string GridPoint::label() const {
  return std::to_string(units) + "x" + std::to_string(layers) + "-" + to_string(shape);
}

std::vector<GridPoint> fnn_grid() {
  std::vector<GridPoint> out;
  for (std::size_t units : {512, 1024, 2048})
    for (std::size_t layers = 1; layers <= 4; ++layers)
      for (Shape s : {Shape::rectangle, Shape::conic}) {
        if (layers == 1 && s == Shape::conic) continue;
        out.push_back({units, layers, s});
      }
  return out;
}

template <class T>
Network<T> build_dense(std::size_t in_dim, std::span<const std::size_t> hidden, std::size_t n_classes, Head head,
                       std::uint64_t seed) {
  if (in_dim == 0) throw ConfigError("input width must be positive");
  if (n_classes < 2) throw ConfigError("a classifier needs at least two classes");
  if (head == Head::sigmoid_bce && n_classes != 2) throw ConfigError("sigmoid head needs exactly two classes");
  Network<T> net;
  net.input_dim = in_dim;
  net.n_classes = n_classes;
  net.head = head;
  std::size_t width = in_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] == 0) throw ConfigError("hidden width must be positive");
    net.layers.push_back(dense_layer<T>(width, hidden[i], Activation::relu, Role::hidden, i + 1, {i}));
    width = hidden[i];
  }
  net.layers.push_back(
      dense_layer<T>(width, net.output_dim(), Activation::identity, Role::output, 0, {hidden.size()}));
  finish(net, seed);
  return net;
}

template <class T>
Network<T> build_fnn(const GridPoint& p, std::size_t in_dim, std::size_t n_classes, Head head, std::uint64_t seed) {
  const auto grid = fnn_grid();
  const bool on_grid = std::find(grid.begin(), grid.end(), p) != grid.end() ||
                       (p.layers == 1 && std::find(grid.begin(), grid.end(), GridPoint{p.units, 1, Shape::rectangle}) != grid.end());
  if (!on_grid) throw ConfigError("grid point " + p.label() + " is not on the FNN grid");
  const auto w = p.widths();
  return build_dense<T>(in_dim, w, n_classes, head, seed);
}

template <class T>
Matrix<T> forward(const Network<T>& net, const Matrix<T>& x, Mode mode, double dropout_rate, std::uint64_t seed,
                  Cache<T>* cache) {
  if (static_cast<std::size_t>(x.cols()) != net.input_dim) {
    throw ConfigError("batch width " + std::to_string(x.cols()) + " does not match input width " +
                      std::to_string(net.input_dim));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  const bool drop = mode == Mode::train && dropout_rate > 0.0;
  const std::size_t n_nodes = net.layers.size() + 1;
  Cache<T> local;
  Cache<T>& c = cache ? *cache : local;
  c.act.assign(n_nodes, Matrix<T>());
  c.value.assign(n_nodes, Matrix<T>());
  c.keep.assign(n_nodes, Matrix<T>());
  c.value[0] = x;
  Matrix<T> scratch;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto& l = net.layers[k];
    const Matrix<T>& in = gathered(c.value, l.sources, scratch);
    Matrix<T> z = in * l.weights.transpose();
    z.rowwise() += l.bias.transpose();
    switch (l.activation) {
      case Activation::relu: z = z.cwiseMax(T(0)); break;
      case Activation::sigmoid: z = z.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); }); break;
      case Activation::identity: break;
    }
    Matrix<T>& act = c.act[k + 1];
    act = std::move(z);
    if (drop && l.activation != Activation::identity) {
      Rng rng(derive_seed(seed, k));
      const T scale = static_cast<T>(1.0 / (1.0 - dropout_rate));
      Matrix<T>& keep = c.keep[k + 1];
      keep.resize(act.rows(), act.cols());
      for (Eigen::Index i = 0; i < keep.size(); ++i) keep.data()[i] = rng.bernoulli(dropout_rate) ? T(0) : scale;
      c.value[k + 1] = act.cwiseProduct(keep);
    } else {
      c.value[k + 1] = act;
    }
  }
  c.probs = probabilities(net.head, c.act.back());
  return c.probs;
}

template <class T>
std::vector<Matrix<T>> forward_nodes(const Network<T>& net, const Matrix<T>& x) {
  Cache<T> c;
  forward(net, x, Mode::eval, 0.0, 0, &c);
  return std::move(c.value);
}

template <class T>
double loss(const Network<T>& net, const Cache<T>& cache, std::span<const int> labels) {
  return loss_from_logits(net, cache.act.back(), labels);
}

template <class T>
double loss(const Network<T>& net, const Matrix<T>& x, std::span<const int> labels) {
  Cache<T> c;
  forward(net, x, Mode::eval, 0.0, 0, &c);
  return loss(net, c, labels);
}

template <class T>
Gradients<T> backward(const Network<T>& net, const Cache<T>& cache, std::span<const int> labels) {
  const Eigen::Index n = cache.probs.rows();
  check_labels(net, labels, n);
  const std::size_t n_layers = net.layers.size();
  Gradients<T> g;
  g.weights.resize(n_layers);
  g.bias.resize(n_layers);
  std::vector<Matrix<T>> dvalue(n_layers + 1);

  // Both heads give d(loss)/d(logits) = (p - target) / n.
  Matrix<T> dz = cache.probs;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (net.head == Head::sigmoid_bce) {
      dz(i, 0) -= static_cast<T>(labels[i]);
    } else {
      dz(i, labels[i]) -= T(1);
    }
  }
  if (n > 0) dz /= static_cast<T>(n);

  Matrix<T> scratch;
  for (std::size_t k = n_layers; k-- > 0;) {
    const auto& l = net.layers[k];
    if (k + 1 < n_layers) {
      Matrix<T>& d = dvalue[k + 1];
      if (d.size() == 0) d = Matrix<T>::Zero(cache.act[k + 1].rows(), cache.act[k + 1].cols());
      if (cache.keep[k + 1].size() != 0) d.array() *= cache.keep[k + 1].array();
      const auto& a = cache.act[k + 1];
      switch (l.activation) {
        case Activation::relu: d = (a.array() > T(0)).select(d, T(0)); break;
        case Activation::sigmoid: d.array() *= a.array() * (T(1) - a.array()); break;
        case Activation::identity: break;
      }
      dz = std::move(d);
    }
    const Matrix<T>& in = gathered(cache.value, l.sources, scratch);
    g.weights[k] = (dz.transpose() * in).cwiseProduct(l.mask);
    g.bias[k] = dz.colwise().sum().transpose();
    const bool needs_input = std::any_of(l.sources.begin(), l.sources.end(), [](std::size_t s) { return s != 0; });
    if (!needs_input) continue;
    const Matrix<T> dx = dz * l.weights;
    Eigen::Index at = 0;
    for (std::size_t s : l.sources) {
      const Eigen::Index w = cache.value[s].cols();
      if (s != 0) {
        if (dvalue[s].size() == 0) {
          dvalue[s] = dx.middleCols(at, w);
        } else {
          dvalue[s] += dx.middleCols(at, w);
        }
      }
      at += w;
    }
  }
  return g;
}

template <class T>
AdamState<T> adam_init(const Network<T>& net) {
  AdamState<T> s;
  for (const auto& l : net.layers) {
    s.m_w.push_back(Matrix<T>::Zero(l.weights.rows(), l.weights.cols()));
    s.v_w.push_back(Matrix<T>::Zero(l.weights.rows(), l.weights.cols()));
    s.m_b.push_back(Vector<T>::Zero(l.bias.size()));
    s.v_b.push_back(Vector<T>::Zero(l.bias.size()));
  }
  return s;
}

template <class T>
void adam_step(Network<T>& net, const Gradients<T>& g, AdamState<T>& s, const AdamConfig& cfg) {
  if (g.weights.size() != net.layers.size() || s.m_w.size() != net.layers.size()) {
    throw ConfigError("optimizer state does not match the network");
  }
  ++s.step;
  const double t = static_cast<double>(s.step);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.epsilon);
  auto update = [&](auto& theta, const auto& grad, auto& m, auto& v) {
    m.array() = b1 * m.array() + (T(1) - b1) * grad.array();
    v.array() = b2 * v.array() + (T(1) - b2) * grad.array().square();
    theta.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  };
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    auto& l = net.layers[k];
    update(l.weights, g.weights[k], s.m_w[k], s.v_w[k]);
    update(l.bias, g.bias[k], s.m_b[k], s.v_b[k]);
    l.apply_mask();
  }
}

void TrainConfig::validate() const {
  if (!(adam.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (batch_size == 0 || epochs == 0) throw ConfigError("batch size and epochs must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ConfigError("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ConfigError("AUC needs 0/1 labels");
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ValidationError("AUC needs both classes present");
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t r = i; r < j; ++r) {
      if (labels[order[r]] == 1) rank_sum += avg;
    }
    i = j;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

template <class T>
Metrics evaluate(const Network<T>& net, const Matrix<T>& x, std::span<const int> y, bool want_auc) {
  if (want_auc && net.head != Head::sigmoid_bce) throw ConfigError("AUC is defined for the binary head only");
  check_labels(net, y, x.rows());
  if (x.rows() == 0) throw ConfigError("cannot evaluate an empty split");
  Metrics m;
  m.param_count = net.param_count();
  std::vector<double> scores;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (Eigen::Index at = 0; at < x.rows(); at += kEvalChunk) {
    const Eigen::Index len = std::min(kEvalChunk, x.rows() - at);
    Cache<T> c;
    forward(net, Matrix<T>(x.middleRows(at, len)), Mode::eval, 0.0, 0, &c);
    const auto ys = y.subspan(static_cast<std::size_t>(at), static_cast<std::size_t>(len));
    loss_sum += loss(net, c, ys) * static_cast<double>(len);
    for (Eigen::Index i = 0; i < len; ++i) {
      int pred;
      if (net.head == Head::sigmoid_bce) {
        pred = c.probs(i, 0) >= T(0.5) ? 1 : 0;
        scores.push_back(static_cast<double>(c.probs(i, 0)));
      } else {
        Eigen::Index arg;
        c.probs.row(i).maxCoeff(&arg);
        pred = static_cast<int>(arg);
      }
      correct += pred == ys[static_cast<std::size_t>(i)];
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(x.rows());
  m.loss = loss_sum / static_cast<double>(x.rows());
  if (want_auc) m.auc = auc(scores, y);
  return m;
}

template <class T>
TrainResult<T> train(Network<T> net, const Matrix<T>& x_train, std::span<const int> y_train, const Matrix<T>& x_val,
                     std::span<const int> y_val, const TrainConfig& cfg) {
  cfg.validate();
  net.validate();
  if (x_train.rows() == 0 || x_val.rows() == 0) throw ConfigError("training and validation splits must be non-empty");
  check_labels(net, y_train, x_train.rows());
  const bool binary = net.head == Head::sigmoid_bce;

  TrainResult<T> out;
  auto better = [](const Metrics& a, const Metrics& b) {
    return a.selection() > b.selection() || (a.selection() == b.selection() && a.loss < b.loss);
  };
  Metrics best = evaluate(net, x_val, y_val, binary);
  out.history.push_back({0, loss(net, x_train, y_train), best});
  out.net = net;

  AdamState<T> state = adam_init(net);
  const std::size_t n = static_cast<std::size_t>(x_train.rows());
  std::vector<Eigen::Index> order(n);
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(derive_seed(cfg.seed, epoch));
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::vector<int> yb;
    for (std::size_t at = 0, batch = 0; at < n; at += cfg.batch_size, ++batch) {
      const std::size_t len = std::min(cfg.batch_size, n - at);
      const std::span<const Eigen::Index> idx(order.data() + at, len);
      const Matrix<T> xb = x_train(idx, Eigen::all);
      yb.resize(len);
      for (std::size_t i = 0; i < len; ++i) yb[i] = y_train[static_cast<std::size_t>(idx[i])];
      Cache<T> c;
      forward(net, xb, Mode::train, cfg.dropout_rate, derive_seed(derive_seed(cfg.seed, epoch), batch + 1), &c);
      loss_sum += loss(net, c, yb) * static_cast<double>(len);
      adam_step(net, backward(net, c, yb), state, cfg.adam);
    }
    const Metrics v = evaluate(net, x_val, y_val, binary);
    out.history.push_back({epoch, loss_sum / static_cast<double>(n), v});
    spdlog::debug("epoch {}: train loss {:.5f}, validation {:.5f}", epoch, out.history.back().train_loss,
                  v.selection());
    if (better(v, best)) {
      best = v;
      out.net = net;
      out.best_epoch = epoch;
      stale = 0;
    } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
      break;
    }
  }
  return out;
}

template <class T>
Network<T> magnitude_prune(const Network<T>& net, std::size_t target_params) {
  net.validate();
  std::size_t biases = 0;
  for (const auto& l : net.layers) biases += l.out_dim();
  if (target_params < biases) {
    throw ConfigError("target of " + std::to_string(target_params) + " parameters is below the " +
                      std::to_string(biases) + " biases");
  }
  const std::size_t current = net.param_count();
  if (target_params > current) throw ConfigError("target exceeds the current parameter count");
  const std::size_t keep = target_params - biases;

  struct Entry {
    T magnitude;
    std::size_t layer;
    Eigen::Index index;  // row-major within the layer
  };
  std::vector<Entry> entries;
  entries.reserve(current - biases);
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto& l = net.layers[k];
    for (Eigen::Index i = 0; i < l.mask.size(); ++i) {
      if (l.mask.data()[i] != T(0)) entries.push_back({std::abs(l.weights.data()[i]), k, i});
    }
  }
  // Flat order is (layer, index), so earlier entries win ties.
  auto stronger = [](const Entry& a, const Entry& b) {
    if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
    return a.layer != b.layer ? a.layer < b.layer : a.index < b.index;
  };
  if (keep < entries.size()) {
    std::nth_element(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(keep), entries.end(), stronger);
  }
  Network<T> out = net;
  for (auto& l : out.layers) l.mask.setZero();
  for (std::size_t i = 0; i < keep; ++i) out.layers[entries[i].layer].mask.data()[entries[i].index] = T(1);
  for (auto& l : out.layers) l.apply_mask();
  return out;
}

template <class T>
Matrix<T> gather_rows(std::span<const float> values, std::size_t cols, std::span<const std::size_t> rows) {
  Matrix<T> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if ((rows[i] + 1) * cols > values.size()) throw ConfigError("row index out of range");
    for (std::size_t j = 0; j < cols; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<T>(values[rows[i] * cols + j]);
    }
  }
  return m;
}

#define TSENET_NN_INSTANTIATE(T)                                                                                   \
  template struct MaskedLayer<T>;                                                                                  \
  template struct Network<T>;                                                                                      \
  template Network<T> build_tse_net<T>(const expansion::PgmCore&, const FeatureWidths&, std::size_t, Head,        \
                                       std::uint64_t, bool);                                                       \
  template Network<T> build_fnn<T>(const GridPoint&, std::size_t, std::size_t, Head, std::uint64_t);              \
  template Network<T> build_dense<T>(std::size_t, std::span<const std::size_t>, std::size_t, Head, std::uint64_t); \
  template Matrix<T> forward<T>(const Network<T>&, const Matrix<T>&, Mode, double, std::uint64_t, Cache<T>*);     \
  template std::vector<Matrix<T>> forward_nodes<T>(const Network<T>&, const Matrix<T>&);                           \
  template double loss<T>(const Network<T>&, const Cache<T>&, std::span<const int>);                              \
  template double loss<T>(const Network<T>&, const Matrix<T>&, std::span<const int>);                             \
  template Gradients<T> backward<T>(const Network<T>&, const Cache<T>&, std::span<const int>);                    \
  template AdamState<T> adam_init<T>(const Network<T>&);                                                           \
  template void adam_step<T>(Network<T>&, const Gradients<T>&, AdamState<T>&, const AdamConfig&);                 \
  template Metrics evaluate<T>(const Network<T>&, const Matrix<T>&, std::span<const int>, bool);                  \
  template TrainResult<T> train<T>(Network<T>, const Matrix<T>&, std::span<const int>, const Matrix<T>&,          \
                                   std::span<const int>, const TrainConfig&);                                      \
  template Network<T> magnitude_prune<T>(const Network<T>&, std::size_t);                                          \
  template Matrix<T> gather_rows<T>(std::span<const float>, std::size_t, std::span<const std::size_t>);

TSENET_NN_INSTANTIATE(float)
TSENET_NN_INSTANTIATE(double)

}  // namespace tsenet::nn
