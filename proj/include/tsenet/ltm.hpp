#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tsenet/bitmatrix.hpp"

// Binary latent tree models: exact inference, EM, scoring and data completion.
namespace tsenet::ltm {

struct Node {
  std::string label;
  bool observed = false;
  int column = -1;  ///< data column of an observed node
  int parent = -1;  ///< -1 for the root
};

/// cpt[s][x] = P(node = x | parent = s). The root keeps its marginal in both rows.
using Cpt = std::array<std::array<double, 2>, 2>;

class TreeModel {
 public:
  TreeModel() = default;
  /// Validates that the parent links form one rooted tree. CPTs start uniform.
  explicit TreeModel(std::vector<Node> nodes);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t v) const { return nodes_[v]; }
  const std::vector<Node>& nodes() const { return nodes_; }
  int root() const { return root_; }
  const std::vector<int>& children(std::size_t v) const { return children_[v]; }
  /// Breadth-first order from the root; parents precede children.
  const std::vector<int>& order() const { return order_; }

  const Cpt& cpt(std::size_t v) const { return cpts_[v]; }
  void set_cpt(std::size_t v, const Cpt& cpt);
  std::array<double, 2> prior() const { return cpts_[root_][0]; }
  void set_prior(std::array<double, 2> p);

  /// 1 + 2 (n - 1) for an all-binary tree.
  std::size_t free_parameters() const { return nodes_.empty() ? 0 : 1 + 2 * (nodes_.size() - 1); }

  std::vector<int> latent_nodes() const;
  std::vector<int> observed_nodes() const;

  /// Relabels the two states of node v; the joint distribution is unchanged.
  void flip_states(std::size_t v);

  bool operator==(const TreeModel& o) const;

 private:
  std::vector<Node> nodes_;
  std::vector<std::vector<int>> children_;
  std::vector<int> order_;
  std::vector<Cpt> cpts_;
  int root_ = -1;
};

/// Observed data compressed to distinct assignments with multiplicities.
struct PatternTable {
  std::vector<int> columns;             ///< data column of each table column
  std::size_t n_patterns = 0;
  std::vector<std::uint8_t> states;     ///< n_patterns x columns.size(), row-major
  std::vector<double> weights;
  std::vector<std::uint32_t> case_pattern;  ///< pattern index per data row
  std::size_t n_cases = 0;

  const std::uint8_t* pattern(std::size_t p) const { return states.data() + p * columns.size(); }
};

PatternTable make_patterns(const BitMatrix& data, std::span<const int> columns);
/// Pattern table over the observed columns of `m`.
PatternTable make_patterns(const TreeModel& m, const BitMatrix& data);

struct ScoreReport {
  double loglik = 0.0;
  std::size_t d = 0;
  std::size_t n = 0;
  double bic = 0.0;
};

ScoreReport make_score(double loglik, std::size_t d, std::size_t n);

double log_likelihood(const TreeModel& m, const PatternTable& data);
double log_likelihood(const TreeModel& m, const BitMatrix& data);
ScoreReport bic(const TreeModel& m, const BitMatrix& data);
ScoreReport bic(const TreeModel& m, const PatternTable& data);

struct EmConfig {
  int restarts = 4;
  int max_iter = 100;
  double tol = 1e-4;        ///< relative change of the EM objective
  double smoothing = 1.0;   ///< Laplace pseudo-count
  std::uint64_t seed = 0;
};

/// Per-iteration trace of one EM run. `objective` is the log-likelihood plus
/// the log of the Dirichlet prior implied by the pseudo-count; it is the
/// quantity EM never decreases. With zero smoothing the two coincide.
struct EmRun {
  std::vector<double> loglik;
  std::vector<double> objective;
};

struct EmResult {
  TreeModel model;
  double loglik = 0.0;
  std::vector<EmRun> runs;
  std::size_t best_restart = 0;
};

/// Fits the CPTs of `structure` (its current parameters are ignored). Latent
/// states of the winner are canonicalized, see `canonicalize_latents`.
EmResult em_fit(const TreeModel& structure, const PatternTable& data, const EmConfig& cfg);
EmResult em_fit(const TreeModel& structure, const BitMatrix& data, const EmConfig& cfg);

/// A single EM run started from the parameters already in `m`.
EmResult em_refine(const TreeModel& m, const PatternTable& data, int max_iter, double tol,
                   double smoothing);

/// Flips latents so that state 1 gives the larger probability of state 1 to
/// the node's first child.
void canonicalize_latents(TreeModel& m);

/// Exact P(v | observed) for every node v. `observed_states` follows the order
/// of `m.observed_nodes()`.
std::vector<std::array<double, 2>> posterior_marginals(const TreeModel& m,
                                                        std::span<const std::uint8_t> observed_states);

/// MAP state of each listed latent for every data row (ties go to state 0).
BitMatrix map_completion(const TreeModel& m, const BitMatrix& data, std::span<const int> latents);

}  // namespace tsenet::ltm
