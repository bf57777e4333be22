#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tsenet/expansion.hpp"

// Masked feedforward networks over a DAG of dense blocks. Node 0 is the
// input; layer k writes node k + 1 and reads the concatenation of its
// source nodes. The last layer produces logits.
namespace tsenet::nn {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Activation : std::uint8_t { relu, sigmoid, identity };
enum class Head : std::uint8_t { softmax_ce, sigmoid_bce };
enum class Mode : std::uint8_t { train, eval };
enum class Role : std::uint8_t { backbone, feature, skip, hidden, output };

/// sigmoid + BCE for two classes, softmax + CE otherwise.
Head default_head(std::size_t n_classes);
std::string to_string(Head h);
Head parse_head(const std::string& s);
std::string to_string(Role r);
Role parse_role(const std::string& s);
std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

template <class T>
struct MaskedLayer {
  Matrix<T> weights;  ///< out x in; zero wherever mask is zero
  Matrix<T> mask;     ///< 0/1
  Vector<T> bias;
  Activation activation = Activation::relu;
  Role role = Role::hidden;
  std::size_t tag = 0;               ///< core level for backbone/skip layers, depth for hidden
  std::vector<std::size_t> sources;  ///< input nodes, concatenated in order

  std::size_t in_dim() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t param_count() const;
  /// Re-zeroes off-mask weights.
  void apply_mask() { weights.array() *= mask.array(); }
  bool operator==(const MaskedLayer&) const;
};

template <class T>
struct Network {
  std::size_t input_dim = 0;
  std::size_t n_classes = 0;
  Head head = Head::softmax_ce;
  std::vector<MaskedLayer<T>> layers;

  std::size_t output_dim() const { return head == Head::sigmoid_bce ? 1 : n_classes; }
  std::size_t node_width(std::size_t node) const;
  std::size_t param_count() const;
  /// Throws ValidationError on inconsistent shapes or off-mask weights.
  void validate() const;
  template <class U>
  Network<U> cast() const;
  bool operator==(const Network&) const;
};

struct FeatureWidths {
  std::size_t top = 128;  ///< B, dense group over the top core layer
  std::size_t skip = 32;  ///< s, one group per non-top core layer
};

/// Backbone mirrors the core adjacency; one dense feature group reads the top
/// core layer and, unless `skip_paths` is false, one skip group reads each
/// lower core layer. The output layer reads every feature group.
template <class T>
Network<T> build_tse_net(const expansion::PgmCore& core, const FeatureWidths& widths, std::size_t n_classes,
                         Head head, std::uint64_t seed, bool skip_paths = true);

enum class Shape : std::uint8_t { rectangle, conic };
std::string to_string(Shape s);

struct GridPoint {
  std::size_t units = 512;
  std::size_t layers = 1;
  Shape shape = Shape::rectangle;

  /// Hidden widths; conic halves per layer (floor, at least 16).
  std::vector<std::size_t> widths() const;
  std::string label() const;
  bool operator==(const GridPoint&) const = default;
};

/// Distinct FNN baselines: {512, 1024, 2048} x {1..4} x {rectangle, conic},
/// with one-layer conic nets dropped as duplicates.
std::vector<GridPoint> fnn_grid();

/// Throws ConfigError unless `p` lies on the grid.
template <class T>
Network<T> build_fnn(const GridPoint& p, std::size_t in_dim, std::size_t n_classes, Head head, std::uint64_t seed);
/// Dense ReLU chain with arbitrary hidden widths.
template <class T>
Network<T> build_dense(std::size_t in_dim, std::span<const std::size_t> hidden, std::size_t n_classes, Head head,
                       std::uint64_t seed);

/// Per-forward state kept for backward. `act[k]` is node k before dropout,
/// `value[k]` what consumers read, `keep[k]` the scaled dropout mask (empty
/// when none was applied). The last node holds logits.
template <class T>
struct Cache {
  std::vector<Matrix<T>> act;
  std::vector<Matrix<T>> value;
  std::vector<Matrix<T>> keep;
  Matrix<T> probs;
};

/// Returns class probabilities: batch x output_dim (one column for sigmoid).
template <class T>
Matrix<T> forward(const Network<T>& net, const Matrix<T>& x, Mode mode, double dropout_rate, std::uint64_t seed,
                  Cache<T>* cache = nullptr);

/// Value of every node in eval mode.
template <class T>
std::vector<Matrix<T>> forward_nodes(const Network<T>& net, const Matrix<T>& x);

template <class T>
struct Gradients {
  std::vector<Matrix<T>> weights;
  std::vector<Vector<T>> bias;
};

/// Mean loss of cached outputs against `labels`.
template <class T>
double loss(const Network<T>& net, const Cache<T>& cache, std::span<const int> labels);
/// Eval-mode mean loss.
template <class T>
double loss(const Network<T>& net, const Matrix<T>& x, std::span<const int> labels);

/// Exact gradients of the mean loss; off-mask entries are zero.
template <class T>
Gradients<T> backward(const Network<T>& net, const Cache<T>& cache, std::span<const int> labels);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<Matrix<T>> m_w, v_w;
  std::vector<Vector<T>> m_b, v_b;
  std::uint64_t step = 0;
};

template <class T>
AdamState<T> adam_init(const Network<T>& net);
/// theta -= lr * m_hat / (sqrt(v_hat) + eps), then the mask is re-applied.
template <class T>
void adam_step(Network<T>& net, const Gradients<T>& g, AdamState<T>& state, const AdamConfig& cfg);

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  double dropout_rate = 0.5;
  std::size_t patience = 10;  ///< epochs without validation improvement before stopping; 0 never stops
  std::uint64_t seed = 0;

  void validate() const;
};

struct Metrics {
  double accuracy = 0.0;
  std::optional<double> auc;  ///< binary head only
  double loss = 0.0;
  std::size_t param_count = 0;

  /// AUC when present, accuracy otherwise.
  double selection() const { return auc ? *auc : accuracy; }
};

struct EpochRecord {
  std::size_t epoch = 0;  ///< 0 is the untrained network
  double train_loss = 0.0;
  Metrics validation;
};

template <class T>
struct TrainResult {
  Network<T> net;  ///< best-validation snapshot
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

/// Adam on shuffled minibatches with early stopping on the validation metric.
template <class T>
TrainResult<T> train(Network<T> net, const Matrix<T>& x_train, std::span<const int> y_train, const Matrix<T>& x_val,
                     std::span<const int> y_val, const TrainConfig& cfg);

/// Accuracy is argmax agreement (p >= 0.5 for sigmoid). AUC is filled for
/// the sigmoid head; requesting it on a softmax head throws ConfigError.
template <class T>
Metrics evaluate(const Network<T>& net, const Matrix<T>& x, std::span<const int> y, bool want_auc);

/// Mann-Whitney statistic with average ranks for ties.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Keeps the `target_params - biases` largest-magnitude weights across all
/// layers (ties to the lower flat index) and masks the rest.
template <class T>
Network<T> magnitude_prune(const Network<T>& net, std::size_t target_params);

template <class T>
template <class U>
Network<U> Network<T>::cast() const {
  Network<U> out;
  out.input_dim = input_dim;
  out.n_classes = n_classes;
  out.head = head;
  for (const auto& l : layers) {
    MaskedLayer<U> c;
    c.weights = l.weights.template cast<U>();
    c.mask = l.mask.template cast<U>();
    c.bias = l.bias.template cast<U>();
    c.activation = l.activation;
    c.role = l.role;
    c.tag = l.tag;
    c.sources = l.sources;
    out.layers.push_back(std::move(c));
  }
  return out;
}

/// Rows of `values` (row-major, `cols` wide) as a matrix.
template <class T>
Matrix<T> gather_rows(std::span<const float> values, std::size_t cols, std::span<const std::size_t> rows);

}  // namespace tsenet::nn
