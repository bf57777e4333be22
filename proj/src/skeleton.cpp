#include "tsenet/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include <spdlog/spdlog.h>

#include "tsenet/error.hpp"
#include "tsenet/parallel.hpp"
#include "tsenet/random.hpp"

namespace tsenet::skeleton {

namespace {

std::vector<int> as_columns(std::span<const std::size_t> g) {
  return std::vector<int>(g.begin(), g.end());
}

std::uint64_t group_key(std::span<const std::size_t> g) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t v : g) {
    h ^= static_cast<std::uint64_t>(v);
    h *= 0x100000001b3ULL;
  }
  return h;
}

ltm::EmConfig seeded(const ltm::EmConfig& em, std::uint64_t seed) {
  ltm::EmConfig c = em;
  c.seed = seed;
  return c;
}

std::vector<std::size_t> structure_rows(std::size_t n, std::size_t sample, std::uint64_t seed) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  if (sample == 0 || sample >= n) return rows;
  Rng rng(seed);
  rng.shuffle(rows);
  rows.resize(sample);
  std::sort(rows.begin(), rows.end());
  return rows;
}

double max_mi_to(const stats::MiMatrix& mi, std::size_t v, const Group& g) {
  double best = -1.0;
  for (std::size_t u : g) best = std::max(best, mi(v, u));
  return best;
}

// One EM run for the bipartition (side1, side2) started from `from`, a fit
// in which the last member of side2 was still under the first latent.
std::pair<ltm::TreeModel, ltm::ScoreReport> refit_moved(const ltm::TreeModel& from,
                                                        const ltm::PatternTable& table,
                                                        std::span<const std::size_t> side1,
                                                        std::span<const std::size_t> side2,
                                                        const ltm::EmConfig& em) {
  ltm::TreeModel init = two_latent_model(side1, side2);
  init.set_prior(from.prior());
  init.set_cpt(1, from.cpt(1));
  for (std::size_t v = 2; v < init.size(); ++v) {
    const int col = init.node(v).column;
    for (std::size_t u = 2; u < from.size(); ++u) {
      if (from.node(u).column == col) {
        init.set_cpt(v, from.cpt(u));
        break;
      }
    }
  }
  ltm::EmResult r = ltm::em_refine(init, table, em.max_iter, em.tol, em.smoothing);
  const ltm::ScoreReport score = ltm::make_score(r.loglik, r.model.free_parameters(), table.n_cases);
  return {std::move(r.model), score};
}

}  // namespace

void SkeletonConfig::validate() const {
  if (!(delta >= 0.0)) throw ConfigError("delta must be non-negative");
  if (top_threshold < 1) throw ConfigError("top_threshold must be at least 1");
  if (max_group < 2) throw ConfigError("max_group must be at least 2");
  if (refit_iter < 1) throw ConfigError("refit_iter must be positive");
  if (em.restarts < 1 || em.max_iter < 1) throw ConfigError("EM restarts and iterations must be positive");
  if (!(em.tol >= 0.0) || !(em.smoothing >= 0.0)) throw ConfigError("EM tolerance and smoothing must be non-negative");
}

ltm::TreeModel one_latent_model(std::span<const std::size_t> group) {
  std::vector<ltm::Node> nodes{{"H", false, -1, -1}};
  for (std::size_t c : group) nodes.push_back({"x" + std::to_string(c), true, static_cast<int>(c), 0});
  return ltm::TreeModel(std::move(nodes));
}

ltm::TreeModel two_latent_model(std::span<const std::size_t> side1, std::span<const std::size_t> side2) {
  std::vector<ltm::Node> nodes{{"H1", false, -1, -1}, {"H2", false, -1, 0}};
  for (std::size_t c : side1) nodes.push_back({"x" + std::to_string(c), true, static_cast<int>(c), 0});
  for (std::size_t c : side2) nodes.push_back({"x" + std::to_string(c), true, static_cast<int>(c), 1});
  return ltm::TreeModel(std::move(nodes));
}

std::pair<ltm::TreeModel, ltm::ScoreReport> fit_two_latent(const ltm::PatternTable& table,
                                                           std::span<const std::size_t> side1,
                                                           std::span<const std::size_t> side2,
                                                           const ltm::EmConfig& em) {
  ltm::EmResult r = ltm::em_fit(two_latent_model(side1, side2), table, em);
  const ltm::ScoreReport score = ltm::make_score(r.loglik, r.model.free_parameters(), table.n_cases);
  return {std::move(r.model), score};
}

UdResult ud_test(const BitMatrix& data, std::span<const std::size_t> group, const SkeletonConfig& cfg,
                 std::uint64_t seed) {
  UdResult out;
  if (group.size() <= 2) {
    out.side1.assign(group.begin(), group.end());
    return out;
  }
  out.tested = true;
  const auto cols = as_columns(group);
  const ltm::PatternTable table = ltm::make_patterns(data, cols);
  std::uint64_t stream = 0;

  ltm::EmResult r1 = ltm::em_fit(one_latent_model(group), table, seeded(cfg.em, derive_seed(seed, stream++)));
  out.bic1 = ltm::make_score(r1.loglik, r1.model.free_parameters(), table.n_cases);
  out.m1 = std::move(r1.model);

  // Greedy search: the new variable seeds the second latent, then single
  // variables move over while the best move improves BIC.
  Group side1(group.begin(), group.end() - 1);
  Group side2{group.back()};
  auto [m2, s2] = fit_two_latent(table, side1, side2, seeded(cfg.em, derive_seed(seed, stream++)));
  while (side1.size() > 1) {
    std::size_t best_i = side1.size();
    ltm::TreeModel best_m;
    ltm::ScoreReport best_s = s2;
    for (std::size_t i = 0; i < side1.size(); ++i) {
      Group a = side1;
      a.erase(a.begin() + static_cast<std::ptrdiff_t>(i));
      Group b = side2;
      b.push_back(side1[i]);
      auto [m, s] = refit_moved(m2, table, a, b, cfg.em);
      if (s.bic > best_s.bic) {
        best_s = s;
        best_m = std::move(m);
        best_i = i;
      }
    }
    if (best_i == side1.size()) break;
    side2.push_back(side1[best_i]);
    side1.erase(side1.begin() + static_cast<std::ptrdiff_t>(best_i));
    m2 = std::move(best_m);
    s2 = best_s;
  }
  out.m2 = std::move(m2);
  out.bic2 = s2;
  out.gap = s2.bic - out.bic1.bic;
  out.pass = out.gap <= cfg.delta;
  out.side1 = std::move(side1);
  out.side2 = std::move(side2);
  return out;
}

Grouping build_groups(const BitMatrix& data, std::span<const std::size_t> cols, const SkeletonConfig& cfg,
                      std::uint64_t seed) {
  if (cols.size() < 2) throw ConfigError("grouping needs at least two variables");
  const std::size_t n = cols.size();
  const stats::MiMatrix mi = stats::mi_matrix(data, cols);

  // Seed pairs in descending MI, ties by (i, j).
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  std::stable_sort(pairs.begin(), pairs.end(), [&](const auto& a, const auto& b) {
    return mi(a.first, a.second) > mi(b.first, b.second);
  });
  std::size_t next_pair = 0;

  std::vector<char> alive(n, 1);
  std::size_t remaining = n;
  Grouping out;
  auto finalize = [&](Group local, std::optional<double> gap) {
    for (std::size_t v : local) {
      alive[v] = 0;
      --remaining;
    }
    std::sort(local.begin(), local.end());
    out.groups.push_back(std::move(local));
    out.ud_gaps.push_back(gap);
  };

  while (remaining > 0) {
    if (remaining == 1) {
      const std::size_t v = static_cast<std::size_t>(std::find(alive.begin(), alive.end(), 1) - alive.begin());
      std::size_t best = 0;
      double best_mi = -1.0;
      for (std::size_t k = 0; k < out.groups.size(); ++k) {
        const double m = max_mi_to(mi, v, out.groups[k]);
        if (m > best_mi) {
          best_mi = m;
          best = k;
        }
      }
      auto& g = out.groups[best];
      g.insert(std::upper_bound(g.begin(), g.end(), v), v);
      alive[v] = 0;
      remaining = 0;
      break;
    }
    while (!(alive[pairs[next_pair].first] && alive[pairs[next_pair].second])) ++next_pair;
    Group g{pairs[next_pair].first, pairs[next_pair].second};
    // Max MI from every remaining variable to the current group.
    std::vector<double> link(n, -1.0);
    for (std::size_t v = 0; v < n; ++v)
      if (alive[v]) link[v] = std::max(mi(v, g[0]), mi(v, g[1]));
    link[g[0]] = link[g[1]] = -1.0;

    std::optional<double> last_gap;
    while (true) {
      if (g.size() == remaining || g.size() >= cfg.max_group) {
        finalize(g, last_gap);
        break;
      }
      std::size_t x = n;
      double best = -1.0;
      for (std::size_t v = 0; v < n; ++v) {
        if (link[v] > best) {
          best = link[v];
          x = v;
        }
      }
      Group trial = g;
      trial.push_back(x);
      std::vector<std::size_t> trial_cols(trial.size());
      for (std::size_t i = 0; i < trial.size(); ++i) trial_cols[i] = cols[trial[i]];
      std::vector<std::size_t> key = trial_cols;
      std::sort(key.begin(), key.end());
      const UdResult ud = ud_test(data, trial_cols, cfg, derive_seed(seed, group_key(key)));
      if (ud.tested) last_gap = ud.gap;
      if (ud.pass) {
        g = std::move(trial);
        link[x] = -1.0;
        for (std::size_t v = 0; v < n; ++v)
          if (link[v] >= 0.0) link[v] = std::max(link[v], mi(v, x));
        continue;
      }
      // Keep the part of the two-latent model away from the new variable.
      Group keep;
      for (std::size_t c : ud.side1) {
        keep.push_back(static_cast<std::size_t>(
            std::find(cols.begin(), cols.end(), c) - cols.begin()));
      }
      finalize(keep.size() >= 2 ? keep : g, last_gap);
      break;
    }
  }
  return out;
}

std::vector<Edge> chow_liu(const stats::MiMatrix& mi) {
  const std::size_t n = mi.size();
  std::vector<Edge> candidates;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) candidates.emplace_back(i, j);
  std::stable_sort(candidates.begin(), candidates.end(), [&](const Edge& a, const Edge& b) {
    return mi(a.first, a.second) > mi(b.first, b.second);
  });
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<Edge> tree;
  for (const Edge& e : candidates) {
    if (tree.size() + 1 >= n) break;
    const std::size_t a = find(e.first), b = find(e.second);
    if (a == b) continue;
    parent[a] = b;
    tree.push_back(e);
  }
  std::sort(tree.begin(), tree.end());
  return tree;
}

Layer build_layer(const BitMatrix& data, std::size_t level, const SkeletonConfig& cfg) {
  cfg.validate();
  if (data.cols() < 2) throw ConfigError("a layer needs at least two input variables");
  const std::uint64_t layer_seed = derive_seed(cfg.seed, level);
  const auto rows = structure_rows(data.rows(), cfg.structure_sample, derive_seed(layer_seed, 0));
  const BitMatrix sample = rows.size() == data.rows() ? data : data.select_rows(rows);

  std::vector<std::size_t> all(data.cols());
  std::iota(all.begin(), all.end(), 0);
  Grouping grouping = build_groups(sample, all, cfg, derive_seed(layer_seed, 1));

  Layer layer;
  layer.level = level;
  layer.groups = std::move(grouping.groups);
  layer.ud_gaps = std::move(grouping.ud_gaps);
  const std::size_t k = layer.groups.size();
  for (std::size_t g = 0; g < k; ++g) layer.names.push_back("L" + std::to_string(level) + "_" + std::to_string(g));

  // Independent single-latent fits give initial parameters and completions.
  std::vector<ltm::TreeModel> fits(k);
  parallel_for(k, [&](std::size_t g) {
    const auto& members = layer.groups[g];
    const auto table = ltm::make_patterns(sample, as_columns(members));
    fits[g] = ltm::em_fit(one_latent_model(members), table,
                          seeded(cfg.em, derive_seed(layer_seed, 2 + g)))
                  .model;
  });
  BitMatrix group_states(sample.rows(), k);
  {
    std::vector<BitMatrix> cols(k);
    const std::vector<int> latent{0};
    parallel_for(k, [&](std::size_t g) { cols[g] = ltm::map_completion(fits[g], sample, latent); });
    for (std::size_t g = 0; g < k; ++g) {
      auto dst = group_states.column(g);
      auto src = cols[g].column(0);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  const stats::MiMatrix latent_mi = stats::mi_matrix(group_states);
  layer.chow_liu_edges = chow_liu(latent_mi);
  std::size_t root = 0;
  double best_total = -1.0;
  for (std::size_t a = 0; a < k; ++a) {
    double total = 0.0;
    for (std::size_t b = 0; b < k; ++b)
      if (a != b) total += latent_mi(a, b);
    if (total > best_total) {
      best_total = total;
      root = a;
    }
  }
  std::vector<int> latent_parent(k, -1);
  {
    std::vector<std::vector<std::size_t>> adj(k);
    for (const auto& [a, b] : layer.chow_liu_edges) {
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    std::vector<char> seen(k, 0);
    std::queue<std::size_t> q;
    q.push(root);
    seen[root] = 1;
    while (!q.empty()) {
      const std::size_t u = q.front();
      q.pop();
      for (std::size_t v : adj[u]) {
        if (seen[v]) continue;
        seen[v] = 1;
        latent_parent[v] = static_cast<int>(u);
        q.push(v);
      }
    }
  }

  std::vector<ltm::Node> nodes;
  for (std::size_t g = 0; g < k; ++g) nodes.push_back({layer.names[g], false, -1, latent_parent[g]});
  for (std::size_t g = 0; g < k; ++g)
    for (std::size_t m : layer.groups[g])
      nodes.push_back({"u" + std::to_string(m), true, static_cast<int>(m), static_cast<int>(g)});
  ltm::TreeModel joint(std::move(nodes));

  // Initialization: member CPTs from the group fits, latent links from the
  // smoothed empirical joint of the group completions.
  {
    std::size_t v = k;
    for (std::size_t g = 0; g < k; ++g)
      for (std::size_t i = 0; i < layer.groups[g].size(); ++i) joint.set_cpt(v++, fits[g].cpt(i + 1));
    const double n = static_cast<double>(sample.rows());
    const double a = std::max(cfg.em.smoothing, 1e-3);
    const double ones = static_cast<double>(group_states.count_ones(root));
    joint.set_prior({(n - ones + a) / (n + 2 * a), (ones + a) / (n + 2 * a)});
    for (std::size_t g = 0; g < k; ++g) {
      if (latent_parent[g] < 0) continue;
      const auto t = stats::contingency(group_states.column(latent_parent[g]), group_states.column(g),
                                        sample.rows());
      const double r0 = static_cast<double>(t.c00 + t.c01), r1 = static_cast<double>(t.c10 + t.c11);
      ltm::Cpt c;
      c[0] = {(t.c00 + a) / (r0 + 2 * a), (t.c01 + a) / (r0 + 2 * a)};
      c[1] = {(t.c10 + a) / (r1 + 2 * a), (t.c11 + a) / (r1 + 2 * a)};
      joint.set_cpt(g, c);
    }
  }
  std::vector<int> table_cols(data.cols());
  std::iota(table_cols.begin(), table_cols.end(), 0);
  const auto table = ltm::make_patterns(sample, table_cols);
  layer.model = ltm::em_refine(joint, table, cfg.refit_iter, cfg.em.tol, cfg.em.smoothing).model;

  std::vector<int> latents(k);
  std::iota(latents.begin(), latents.end(), 0);
  layer.completed = ltm::map_completion(layer.model, data, latents);
  return layer;
}

std::size_t Hierarchy::level_size(std::size_t level) const {
  return level == 0 ? observed.cols() : layers.at(level - 1).groups.size();
}

const BitMatrix& Hierarchy::level_data(std::size_t level) const {
  return level == 0 ? observed : layers.at(level - 1).completed;
}

const std::string& Hierarchy::name(std::size_t level, std::size_t unit) const {
  return level == 0 ? observed_names.at(unit) : layers.at(level - 1).names.at(unit);
}

std::vector<std::size_t> Hierarchy::parents(std::size_t level) const {
  if (level + 1 >= n_levels()) throw ConfigError("the top level has no parents");
  const Layer& up = layers[level];
  std::vector<std::size_t> out(level_size(level), 0);
  for (std::size_t g = 0; g < up.groups.size(); ++g)
    for (std::size_t m : up.groups[g]) out[m] = g;
  return out;
}

Hierarchy stack(const BitMatrix& observed, std::vector<std::string> names, const SkeletonConfig& cfg) {
  cfg.validate();
  if (observed.cols() < 2) throw ConfigError("the skeleton needs at least two observed variables");
  if (names.size() != observed.cols()) throw ValidationError("one name per observed column is required");
  Hierarchy h;
  h.observed_names = std::move(names);
  h.observed = observed;
  const BitMatrix* input = &h.observed;
  for (std::size_t level = 1;; ++level) {
    Layer layer = build_layer(*input, level, cfg);
    if (layer.groups.size() >= input->cols()) {
      throw Error("layer " + std::to_string(level) + " did not shrink: " + std::to_string(input->cols()) +
                  " inputs gave " + std::to_string(layer.groups.size()) + " latents");
    }
    spdlog::info("layer {}: {} variables -> {} latents", level, input->cols(), layer.groups.size());
    h.layers.push_back(std::move(layer));
    const std::size_t size = h.layers.back().groups.size();
    if (size <= cfg.top_threshold || size < 2) break;
    input = &h.layers.back().completed;
  }
  h.layers.back().links_in_skeleton = true;
  return h;
}

}  // namespace tsenet::skeleton
