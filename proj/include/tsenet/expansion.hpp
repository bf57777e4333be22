#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tsenet/skeleton.hpp"

// Conditional-MI expansion of a skeleton into the layered PGM core.
namespace tsenet::expansion {

struct ExpansionConfig {
  double fan_in_fraction = 0.05;  ///< rho; total fan-in K = max(1, ceil(rho * |layer below|))
  /// Candidates must score strictly above this; 0 disables the floor.
  double cmi_floor = 0.0;

  void validate() const;
  std::size_t budget(std::size_t lower_size) const;
};

enum class EdgeOrigin : std::uint8_t { skeleton, expansion };

/// Layered sparse connectivity. Level 0 is observed; adjacency[l][u] lists
/// the level-l units feeding unit u of level l + 1, sorted ascending, with
/// origins[l][u] parallel to it.
struct PgmCore {
  std::vector<std::size_t> layer_sizes;
  std::vector<std::vector<std::string>> names;
  std::vector<std::vector<std::vector<std::size_t>>> adjacency;
  std::vector<std::vector<std::vector<EdgeOrigin>>> origins;

  std::size_t n_layers() const { return layer_sizes.size(); }
  std::size_t edge_count() const;
  std::size_t expansion_edge_count() const;
  /// Throws ValidationError when a structural invariant fails.
  void validate() const;

  bool operator==(const PgmCore&) const = default;
};

struct Candidate {
  std::size_t unit = 0;  ///< index at the lower level
  double score = 0.0;    ///< I(upper; unit | skeleton parent of unit)
};

/// Non-children of `unit` at level - 1, by descending score then ascending index.
std::vector<Candidate> rank_candidates(const skeleton::Hierarchy& h, std::size_t level, std::size_t unit);

PgmCore expand(const skeleton::Hierarchy& h, const ExpansionConfig& cfg);

/// Layered DOT graph: skeleton edges solid, expansion edges dashed.
std::string to_dot(const PgmCore& core);
void export_graph(const PgmCore& core, const std::string& path);

}  // namespace tsenet::expansion
