#include "tsenet/expansion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "tsenet/error.hpp"
#include "tsenet/parallel.hpp"
#include "tsenet/persist.hpp"
#include "tsenet/stats.hpp"

namespace tsenet::expansion {

void ExpansionConfig::validate() const {
  if (!(fan_in_fraction > 0.0 && fan_in_fraction <= 1.0)) {
    throw ConfigError("fan-in fraction must lie in (0, 1]");
  }
  if (!(cmi_floor >= 0.0)) throw ConfigError("CMI floor must be non-negative");
}

std::size_t ExpansionConfig::budget(std::size_t lower_size) const {
  const double k = std::ceil(fan_in_fraction * static_cast<double>(lower_size) - 1e-12);
  return std::max<std::size_t>(1, static_cast<std::size_t>(k));
}

std::size_t PgmCore::edge_count() const {
  std::size_t n = 0;
  for (const auto& layer : adjacency)
    for (const auto& row : layer) n += row.size();
  return n;
}

std::size_t PgmCore::expansion_edge_count() const {
  std::size_t n = 0;
  for (const auto& layer : origins)
    for (const auto& row : layer) n += std::count(row.begin(), row.end(), EdgeOrigin::expansion);
  return n;
}

void PgmCore::validate() const {
  if (layer_sizes.empty()) throw ValidationError("core has no layers");
  if (names.size() != layer_sizes.size()) throw ValidationError("core names do not match layer count");
  if (adjacency.size() + 1 != layer_sizes.size() || origins.size() != adjacency.size()) {
    throw ValidationError("core adjacency does not match layer count");
  }
  for (std::size_t l = 0; l < layer_sizes.size(); ++l) {
    if (layer_sizes[l] == 0) throw ValidationError("core layer is empty");
    if (names[l].size() != layer_sizes[l]) throw ValidationError("core names do not match layer size");
  }
  for (std::size_t l = 0; l < adjacency.size(); ++l) {
    if (adjacency[l].size() != layer_sizes[l + 1] || origins[l].size() != layer_sizes[l + 1]) {
      throw ValidationError("core adjacency does not match layer size");
    }
    for (std::size_t u = 0; u < adjacency[l].size(); ++u) {
      const auto& row = adjacency[l][u];
      if (row.empty()) throw ValidationError("core unit has no inputs");
      if (origins[l][u].size() != row.size()) throw ValidationError("edge origins do not match edges");
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (row[i] >= layer_sizes[l]) throw ValidationError("core edge index out of range");
        if (i > 0 && row[i] <= row[i - 1]) throw ValidationError("core edges must be sorted and unique");
      }
    }
  }
}

std::vector<Candidate> rank_candidates(const skeleton::Hierarchy& h, std::size_t level, std::size_t unit) {
  if (level < 1 || level >= h.n_levels()) throw ConfigError("expansion level out of range");
  const BitMatrix& upper = h.level_data(level);
  const BitMatrix& lower = h.level_data(level - 1);
  if (unit >= upper.cols()) throw ConfigError("expansion unit out of range");
  const auto parent = h.parents(level - 1);
  const std::size_t n = upper.rows();
  std::vector<Candidate> out;
  for (std::size_t c = 0; c < lower.cols(); ++c) {
    if (parent[c] == unit) continue;
    out.push_back({c, stats::conditional_mi(upper.column(unit), lower.column(c), upper.column(parent[c]), n)});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  return out;
}

PgmCore expand(const skeleton::Hierarchy& h, const ExpansionConfig& cfg) {
  cfg.validate();
  if (h.layers.empty()) throw ConfigError("hierarchy has no latent layers");
  PgmCore core;
  for (std::size_t l = 0; l < h.n_levels(); ++l) {
    core.layer_sizes.push_back(h.level_size(l));
    std::vector<std::string> nm;
    for (std::size_t u = 0; u < h.level_size(l); ++u) nm.push_back(h.name(l, u));
    core.names.push_back(std::move(nm));
  }
  for (std::size_t level = 1; level < h.n_levels(); ++level) {
    const auto& groups = h.layers[level - 1].groups;
    const std::size_t k = cfg.budget(h.level_size(level - 1));
    std::vector<std::vector<std::size_t>> rows(groups.size());
    std::vector<std::vector<EdgeOrigin>> kinds(groups.size());
    parallel_for(groups.size(), [&](std::size_t u) {
      std::vector<std::pair<std::size_t, EdgeOrigin>> edges;
      for (std::size_t c : groups[u]) edges.emplace_back(c, EdgeOrigin::skeleton);
      if (groups[u].size() < k) {
        const std::size_t extra = k - groups[u].size();
        for (const Candidate& c : rank_candidates(h, level, u)) {
          if (edges.size() - groups[u].size() >= extra) break;
          if (cfg.cmi_floor > 0.0 && !(c.score > cfg.cmi_floor)) break;
          edges.emplace_back(c.unit, EdgeOrigin::expansion);
        }
      }
      std::sort(edges.begin(), edges.end());
      for (const auto& [c, o] : edges) {
        rows[u].push_back(c);
        kinds[u].push_back(o);
      }
    });
    for (std::size_t u = 0; u < groups.size(); ++u) {
      if (groups[u].size() > k) {
        spdlog::warn("{}: skeleton fan-in {} exceeds budget {}; no expansion edges added", h.name(level, u),
                     groups[u].size(), k);
      }
    }
    core.adjacency.push_back(std::move(rows));
    core.origins.push_back(std::move(kinds));
  }
  core.validate();
  return core;
}

std::string to_dot(const PgmCore& core) {
  core.validate();
  std::ostringstream out;
  out << "digraph pgm_core {\n  rankdir=BT;\n  node [shape=circle];\n";
  auto id = [](std::size_t l, std::size_t u) { return "n" + std::to_string(l) + "_" + std::to_string(u); };
  auto quoted = [](const std::string& s) {
    std::string q = "\"";
    for (char ch : s) {
      if (ch == '"' || ch == '\\') q += '\\';
      q += ch;
    }
    return q + "\"";
  };
  for (std::size_t l = 0; l < core.n_layers(); ++l) {
    out << "  { rank=same;";
    for (std::size_t u = 0; u < core.layer_sizes[l]; ++u) {
      out << ' ' << id(l, u) << " [label=" << quoted(core.names[l][u]) << "];";
    }
    out << " }\n";
  }
  for (std::size_t l = 0; l < core.adjacency.size(); ++l) {
    for (std::size_t u = 0; u < core.adjacency[l].size(); ++u) {
      const auto& row = core.adjacency[l][u];
      for (std::size_t i = 0; i < row.size(); ++i) {
        out << "  " << id(l, row[i]) << " -> " << id(l + 1, u) << " [style="
            << (core.origins[l][u][i] == EdgeOrigin::skeleton ? "solid" : "dashed") << "];\n";
      }
    }
  }
  out << "}\n";
  return out.str();
}

void export_graph(const PgmCore& core, const std::string& path) {
  persist::write_file_atomic(path, to_dot(core));
}

}  // namespace tsenet::expansion
