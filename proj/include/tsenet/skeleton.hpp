#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tsenet/bitmatrix.hpp"
#include "tsenet/ltm.hpp"
#include "tsenet/stats.hpp"

// Layer-wise construction of a hierarchy of binary latent variables.
namespace tsenet::skeleton {

struct SkeletonConfig {
  double delta = 3.0;              ///< UD-test threshold on the BIC gap
  std::size_t top_threshold = 500; ///< stop once a layer has at most this many latents
  std::size_t max_group = 15;
  /// Rows used for grouping and parameter fitting; 0 uses every row.
  /// Completion always covers every row.
  std::size_t structure_sample = 0;
  int refit_iter = 50;             ///< cap for the joint two-layer refit
  ltm::EmConfig em;                ///< `em.seed` is ignored; seeds derive from `seed`
  std::uint64_t seed = 0;

  void validate() const;
};

using Group = std::vector<std::size_t>;
using Edge = std::pair<std::size_t, std::size_t>;

struct UdResult {
  bool pass = true;
  bool tested = false;  ///< false for groups of at most two variables
  ltm::TreeModel m1;
  ltm::TreeModel m2;
  ltm::ScoreReport bic1;
  ltm::ScoreReport bic2;
  double gap = 0.0;     ///< bic2.bic - bic1.bic
  /// Children of the second-layer latents of m2; `side2` holds the newly added variable.
  Group side1;
  Group side2;
};

/// Single-latent star over the data columns `group` (node 0 is the latent).
ltm::TreeModel one_latent_model(std::span<const std::size_t> group);
/// Two linked latents: node 0 (root) parents `side1`, node 1 parents `side2`.
ltm::TreeModel two_latent_model(std::span<const std::size_t> side1, std::span<const std::size_t> side2);

/// EM fit of a given bipartition; returns the fitted model and its BIC.
std::pair<ltm::TreeModel, ltm::ScoreReport> fit_two_latent(const ltm::PatternTable& table,
                                                           std::span<const std::size_t> side1,
                                                           std::span<const std::size_t> side2,
                                                           const ltm::EmConfig& em);

/// Unidimensionality test of `group`; the last member is the variable added most recently.
UdResult ud_test(const BitMatrix& data, std::span<const std::size_t> group, const SkeletonConfig& cfg,
                 std::uint64_t seed);

struct Grouping {
  std::vector<Group> groups;     ///< members sorted ascending, in order of finalization
  /// Gap of the test that closed each group; empty if no test ran.
  std::vector<std::optional<double>> ud_gaps;
};

/// Greedy partition of `cols` into unidimensional groups.
Grouping build_groups(const BitMatrix& data, std::span<const std::size_t> cols, const SkeletonConfig& cfg,
                      std::uint64_t seed);

/// Maximum-weight spanning tree over `mi`; ties go to the lexicographically
/// smaller edge. Edges are returned as (a < b), sorted.
std::vector<Edge> chow_liu(const stats::MiMatrix& mi);

struct Layer {
  std::size_t level = 1;             ///< level of this layer's latents (0 is observed)
  std::vector<Group> groups;         ///< latent k parents groups[k] at level - 1
  std::vector<std::string> names;    ///< "L{level}_{k}"
  /// Nodes 0..k-1 are the latents; observed node columns index level - 1 units.
  ltm::TreeModel model;
  BitMatrix completed;               ///< rows x k MAP states
  std::vector<Edge> chow_liu_edges;
  bool links_in_skeleton = false;    ///< chow-liu links kept only on the top layer
  std::vector<std::optional<double>> ud_gaps;

  bool operator==(const Layer&) const = default;
};

Layer build_layer(const BitMatrix& data, std::size_t level, const SkeletonConfig& cfg);

struct Hierarchy {
  std::vector<std::string> observed_names;
  BitMatrix observed;
  std::vector<Layer> layers;

  std::size_t n_levels() const { return layers.size() + 1; }
  std::size_t level_size(std::size_t level) const;
  const BitMatrix& level_data(std::size_t level) const;
  const std::string& name(std::size_t level, std::size_t unit) const;
  /// For each unit at `level` (< top), the index of its parent at level + 1.
  std::vector<std::size_t> parents(std::size_t level) const;

  bool operator==(const Hierarchy&) const = default;
};

/// Builds layers until the top has at most `top_threshold` latents. Throws
/// Error if a layer fails to shrink.
Hierarchy stack(const BitMatrix& observed, std::vector<std::string> names, const SkeletonConfig& cfg);

}  // namespace tsenet::skeleton
