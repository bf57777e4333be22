#include "tsenet/ltm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <queue>

#include "tsenet/error.hpp"
#include "tsenet/random.hpp"

namespace tsenet::ltm {

namespace {

using Pair = std::array<double, 2>;

constexpr double kTiny = 1e-150;

inline double normalize(Pair& p) {
  const double s = p[0] + p[1];
  if (s > 0.0) {
    p[0] /= s;
    p[1] /= s;
  }
  return s;
}

// Sum-product over one tree for one observed pattern at a time. Messages are
// kept normalized and their scales accumulated in log space.
class Engine {
 public:
  Engine(const TreeModel& m, const PatternTable& table) : m_(m), table_(table) {
    const std::size_t n = m.size();
    tcol_.assign(n, -1);
    for (std::size_t v = 0; v < n; ++v) {
      const Node& node = m.node(v);
      if (!node.observed) continue;
      auto it = std::find(table.columns.begin(), table.columns.end(), node.column);
      if (node.column < 0 || it == table.columns.end()) {
        throw ConfigError("observed node '" + node.label + "' is not mapped to a data column");
      }
      tcol_[v] = static_cast<int>(it - table.columns.begin());
    }
    ev_.assign(n, -1);
    up_.assign(n, {1.0, 1.0});
    msg_.assign(n, {1.0, 1.0});
    down_.assign(n, {0.5, 0.5});
    belief_.assign(n, {0.5, 0.5});
    pair_.assign(n, Cpt{});
    std::size_t max_children = 0;
    for (std::size_t v = 0; v < n; ++v) max_children = std::max(max_children, m.children(v).size());
    pre_.resize(max_children + 1);
    suf_.resize(max_children + 1);
  }

  void set_evidence(std::size_t p) {
    const std::uint8_t* row = table_.pattern(p);
    for (std::size_t v = 0; v < ev_.size(); ++v) ev_[v] = tcol_[v] >= 0 ? row[tcol_[v]] : -1;
  }

  void set_evidence_states(std::span<const std::uint8_t> states) {
    std::size_t k = 0;
    for (std::size_t v = 0; v < ev_.size(); ++v) {
      ev_[v] = m_.node(v).observed ? states[k++] : -1;
    }
  }

  // Returns ln P(evidence); -inf if the evidence is impossible.
  double upward() {
    const auto& order = m_.order();
    double logz = 0.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const int v = *it;
      Pair u{1.0, 1.0};
      if (ev_[v] >= 0) u[1 - ev_[v]] = 0.0;
      for (int c : m_.children(v)) {
        u[0] *= msg_[c][0];
        u[1] *= msg_[c][1];
        const double mx = std::max(u[0], u[1]);
        if (mx < kTiny && mx > 0.0) {
          u[0] /= mx;
          u[1] /= mx;
          logz += std::log(mx);
        }
      }
      const double s = normalize(u);
      if (s <= 0.0) return -std::numeric_limits<double>::infinity();
      logz += std::log(s);
      up_[v] = u;
      if (v != m_.root()) {
        const Cpt& t = m_.cpt(v);
        Pair msg{t[0][0] * u[0] + t[0][1] * u[1], t[1][0] * u[0] + t[1][1] * u[1]};
        const double ms = normalize(msg);
        if (ms <= 0.0) return -std::numeric_limits<double>::infinity();
        logz += std::log(ms);
        msg_[v] = msg;
      }
    }
    const Pair prior = m_.prior();
    const double root_l = prior[0] * up_[m_.root()][0] + prior[1] * up_[m_.root()][1];
    if (root_l <= 0.0) return -std::numeric_limits<double>::infinity();
    return logz + std::log(root_l);
  }

  // Requires a preceding upward(). Fills node beliefs and parent-child joints.
  void downward() {
    const auto& order = m_.order();
    down_[m_.root()] = m_.prior();
    for (int v : order) {
      Pair b{down_[v][0] * up_[v][0], down_[v][1] * up_[v][1]};
      normalize(b);
      belief_[v] = b;
      const auto& ch = m_.children(v);
      if (ch.empty()) continue;
      const std::size_t k = ch.size();
      Pair base = down_[v];
      if (ev_[v] >= 0) base[1 - ev_[v]] = 0.0;
      pre_[0] = base;
      normalize(pre_[0]);
      for (std::size_t i = 0; i < k; ++i) {
        pre_[i + 1] = {pre_[i][0] * msg_[ch[i]][0], pre_[i][1] * msg_[ch[i]][1]};
        normalize(pre_[i + 1]);
      }
      suf_[k] = {1.0, 1.0};
      for (std::size_t i = k; i-- > 0;) {
        suf_[i] = {suf_[i + 1][0] * msg_[ch[i]][0], suf_[i + 1][1] * msg_[ch[i]][1]};
        normalize(suf_[i]);
      }
      for (std::size_t i = 0; i < k; ++i) {
        const int c = ch[i];
        Pair out{pre_[i][0] * suf_[i + 1][0], pre_[i][1] * suf_[i + 1][1]};
        normalize(out);
        const Cpt& t = m_.cpt(c);
        Cpt joint;
        double total = 0.0;
        for (int s = 0; s < 2; ++s) {
          for (int x = 0; x < 2; ++x) {
            joint[s][x] = out[s] * t[s][x] * up_[c][x];
            total += joint[s][x];
          }
        }
        if (total > 0.0) {
          for (auto& row : joint)
            for (auto& e : row) e /= total;
        }
        pair_[c] = joint;
        Pair d{out[0] * t[0][0] + out[1] * t[1][0], out[0] * t[0][1] + out[1] * t[1][1]};
        normalize(d);
        down_[c] = d;
      }
    }
  }

  const Pair& belief(std::size_t v) const { return belief_[v]; }
  const Cpt& pair(std::size_t v) const { return pair_[v]; }

 private:
  const TreeModel& m_;
  const PatternTable& table_;
  std::vector<int> tcol_;
  std::vector<int> ev_;
  std::vector<Pair> up_, msg_, down_, belief_;
  std::vector<Cpt> pair_;
  std::vector<Pair> pre_, suf_;
};

struct Counts {
  Pair root{0.0, 0.0};
  std::vector<Cpt> edge;
};

// Exact inference by enumerating every latent configuration. Used when all
// observed nodes are leaves and there are few latents, which covers the
// small models fitted during grouping; it costs O(leaves + 2^L) per pattern.
constexpr std::size_t kMaxEnumerated = 3;

bool enumerable(const TreeModel& m) {
  std::size_t latents = 0;
  for (std::size_t v = 0; v < m.size(); ++v) {
    if (m.node(v).observed) {
      if (!m.children(v).empty()) return false;
    } else {
      ++latents;
    }
  }
  return latents >= 1 && latents <= kMaxEnumerated;
}

class Enumerator {
 public:
  Enumerator(const TreeModel& m, const PatternTable& table) : m_(m), table_(table) {
    std::vector<int> pos(m.size(), -1);
    for (std::size_t v = 0; v < m.size(); ++v) {
      if (m.node(v).observed) continue;
      pos[v] = static_cast<int>(lat_.size());
      lat_.push_back(static_cast<int>(v));
    }
    n_conf_ = std::size_t{1} << lat_.size();
    base_.assign(n_conf_, 0.0);
    for (std::size_t c = 0; c < n_conf_; ++c) {
      for (std::size_t h = 0; h < lat_.size(); ++h) {
        const int v = lat_[h];
        const int s = (c >> h) & 1;
        if (v == m.root()) {
          base_[c] += std::log(m.prior()[s]);
        } else {
          const int ps = (c >> pos[m.node(v).parent]) & 1;
          base_[c] += std::log(m.cpt(v)[ps][s]);
        }
      }
    }
    for (std::size_t v = 0; v < m.size(); ++v) {
      const Node& node = m.node(v);
      if (!node.observed) continue;
      auto it = std::find(table.columns.begin(), table.columns.end(), node.column);
      if (node.column < 0 || it == table.columns.end()) {
        throw ConfigError("observed node '" + node.label + "' is not mapped to a data column");
      }
      Leaf leaf;
      leaf.node = static_cast<int>(v);
      leaf.tcol = static_cast<int>(it - table.columns.begin());
      leaf.h = pos[node.parent];
      for (int s = 0; s < 2; ++s)
        for (int x = 0; x < 2; ++x) leaf.logp[s][x] = std::log(m.cpt(v)[s][x]);
      leaves_.push_back(leaf);
    }
    post_.resize(n_conf_);
  }

  // ln P(pattern p); adds w times the expected counts when `counts` is set.
  double pattern(std::size_t p, double w, Counts* counts) {
    const std::uint8_t* row = table_.pattern(p);
    double sums[kMaxEnumerated][2] = {};
    for (const Leaf& l : leaves_) {
      const int x = row[l.tcol];
      sums[l.h][0] += l.logp[0][x];
      sums[l.h][1] += l.logp[1][x];
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n_conf_; ++c) {
      double sc = base_[c];
      for (std::size_t h = 0; h < lat_.size(); ++h) sc += sums[h][(c >> h) & 1];
      post_[c] = sc;
      mx = std::max(mx, sc);
    }
    if (mx == -std::numeric_limits<double>::infinity()) return mx;
    double z = 0.0;
    for (std::size_t c = 0; c < n_conf_; ++c) {
      post_[c] = std::exp(post_[c] - mx);
      z += post_[c];
    }
    if (counts) {
      double marg[kMaxEnumerated][2] = {};
      for (std::size_t c = 0; c < n_conf_; ++c) {
        const double q = post_[c] / z;
        for (std::size_t h = 0; h < lat_.size(); ++h) marg[h][(c >> h) & 1] += q;
        for (std::size_t h = 0; h < lat_.size(); ++h) {
          const int v = lat_[h];
          if (v == m_.root()) continue;
          const int u = m_.node(v).parent;
          const std::size_t hu = static_cast<std::size_t>(std::find(lat_.begin(), lat_.end(), u) - lat_.begin());
          counts->edge[v][(c >> hu) & 1][(c >> h) & 1] += w * q;
        }
      }
      const std::size_t hr = static_cast<std::size_t>(std::find(lat_.begin(), lat_.end(), m_.root()) - lat_.begin());
      counts->root[0] += w * marg[hr][0];
      counts->root[1] += w * marg[hr][1];
      for (const Leaf& l : leaves_) {
        const int x = row[l.tcol];
        counts->edge[l.node][0][x] += w * marg[l.h][0];
        counts->edge[l.node][1][x] += w * marg[l.h][1];
      }
    }
    return mx + std::log(z);
  }

 private:
  struct Leaf {
    int node = 0;
    int tcol = 0;
    int h = 0;
    double logp[2][2] = {};
  };
  const TreeModel& m_;
  const PatternTable& table_;
  std::vector<int> lat_;
  std::size_t n_conf_ = 0;
  std::vector<double> base_;
  std::vector<Leaf> leaves_;
  std::vector<double> post_;
};

double e_step(const TreeModel& m, const PatternTable& table, Counts& counts) {
  counts.root = {0.0, 0.0};
  counts.edge.assign(m.size(), Cpt{});
  double ll = 0.0;
  if (enumerable(m)) {
    Enumerator en(m, table);
    for (std::size_t p = 0; p < table.n_patterns; ++p) ll += table.weights[p] * en.pattern(p, table.weights[p], &counts);
    return ll;
  }
  Engine eng(m, table);
  for (std::size_t p = 0; p < table.n_patterns; ++p) {
    const double w = table.weights[p];
    eng.set_evidence(p);
    ll += w * eng.upward();
    eng.downward();
    const Pair& rb = eng.belief(m.root());
    counts.root[0] += w * rb[0];
    counts.root[1] += w * rb[1];
    for (std::size_t v = 0; v < m.size(); ++v) {
      if (static_cast<int>(v) == m.root()) continue;
      const Cpt& j = eng.pair(v);
      for (int s = 0; s < 2; ++s)
        for (int x = 0; x < 2; ++x) counts.edge[v][s][x] += w * j[s][x];
    }
  }
  return ll;
}

void m_step(TreeModel& m, const Counts& counts, double alpha) {
  auto estimate = [alpha](double c0, double c1) -> Pair {
    const double denom = c0 + c1 + 2.0 * alpha;
    if (denom <= 0.0) return {0.5, 0.5};
    return {(c0 + alpha) / denom, (c1 + alpha) / denom};
  };
  m.set_prior(estimate(counts.root[0], counts.root[1]));
  for (std::size_t v = 0; v < m.size(); ++v) {
    if (static_cast<int>(v) == m.root()) continue;
    const Cpt& c = counts.edge[v];
    Cpt t;
    t[0] = estimate(c[0][0], c[0][1]);
    t[1] = estimate(c[1][0], c[1][1]);
    m.set_cpt(v, t);
  }
}

double log_prior(const TreeModel& m, double alpha) {
  if (alpha <= 0.0) return 0.0;
  double lp = 0.0;
  const Pair prior = m.prior();
  lp += std::log(prior[0]) + std::log(prior[1]);
  for (std::size_t v = 0; v < m.size(); ++v) {
    if (static_cast<int>(v) == m.root()) continue;
    for (const auto& row : m.cpt(v))
      for (double e : row) lp += std::log(e);
  }
  return alpha * lp;
}

EmRun run_em(TreeModel& m, const PatternTable& table, int max_iter, double tol, double alpha,
             double& final_ll) {
  EmRun run;
  Counts counts;
  double prev = -std::numeric_limits<double>::infinity();
  bool evaluated = false;
  for (int iter = 0; iter < max_iter; ++iter) {
    const double ll = e_step(m, table, counts);
    const double obj = ll + log_prior(m, alpha);
    run.loglik.push_back(ll);
    run.objective.push_back(obj);
    if (iter > 0 && std::abs(obj - prev) < tol * std::abs(prev)) {
      final_ll = ll;
      evaluated = true;
      break;
    }
    prev = obj;
    m_step(m, counts, alpha);
  }
  if (!evaluated) {
    final_ll = e_step(m, table, counts);
    run.loglik.push_back(final_ll);
    run.objective.push_back(final_ll + log_prior(m, alpha));
  }
  return run;
}

std::vector<double> column_marginals(const PatternTable& table) {
  const std::size_t k = table.columns.size();
  std::vector<double> ones(k, 0.0);
  double total = 0.0;
  for (std::size_t p = 0; p < table.n_patterns; ++p) {
    const std::uint8_t* row = table.pattern(p);
    for (std::size_t j = 0; j < k; ++j) ones[j] += table.weights[p] * row[j];
    total += table.weights[p];
  }
  for (double& o : ones) o = total > 0 ? o / total : 0.5;
  return ones;
}

TreeModel random_init(const TreeModel& structure, const PatternTable& table,
                      const std::vector<double>& marginals, Rng& rng) {
  TreeModel m = structure;
  auto clamp = [](double p) { return std::clamp(p, 0.02, 0.98); };
  auto marginal_of = [&](std::size_t v) {
    const Node& node = m.node(v);
    if (!node.observed) return 0.5;
    auto it = std::find(table.columns.begin(), table.columns.end(), node.column);
    if (it == table.columns.end()) {
      throw ConfigError("observed node '" + node.label + "' is not mapped to a data column");
    }
    return marginals[it - table.columns.begin()];
  };
  for (int v : m.order()) {
    const double base = marginal_of(v);
    if (v == m.root()) {
      const double p1 = clamp(base + rng.uniform(-0.1, 0.1));
      m.set_prior({1.0 - p1, p1});
    } else {
      Cpt t;
      for (int s = 0; s < 2; ++s) {
        const double p1 = clamp(base + rng.uniform(-0.1, 0.1));
        t[s] = {1.0 - p1, p1};
      }
      m.set_cpt(v, t);
    }
  }
  return m;
}

}  // namespace

TreeModel::TreeModel(std::vector<Node> nodes) : nodes_(std::move(nodes)) {
  const std::size_t n = nodes_.size();
  if (n == 0) throw ValidationError("tree model needs at least one node");
  children_.assign(n, {});
  for (std::size_t v = 0; v < n; ++v) {
    const int p = nodes_[v].parent;
    if (p < 0) {
      if (root_ >= 0) throw ValidationError("tree model has more than one root");
      root_ = static_cast<int>(v);
    } else {
      if (static_cast<std::size_t>(p) >= n || p == static_cast<int>(v)) {
        throw ValidationError("invalid parent index");
      }
      children_[p].push_back(static_cast<int>(v));
    }
  }
  if (root_ < 0) throw ValidationError("tree model has no root");
  std::queue<int> q;
  q.push(root_);
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    order_.push_back(v);
    for (int c : children_[v]) q.push(c);
  }
  if (order_.size() != n) throw ValidationError("parent links do not form a connected tree");
  cpts_.assign(n, Cpt{{{0.5, 0.5}, {0.5, 0.5}}});
}

void TreeModel::set_cpt(std::size_t v, const Cpt& cpt) {
  for (const auto& row : cpt) {
    if (row[0] < 0.0 || row[1] < 0.0 || std::abs(row[0] + row[1] - 1.0) > 1e-9) {
      throw ValidationError("conditional distribution must be non-negative and sum to 1");
    }
  }
  cpts_[v] = cpt;
}

void TreeModel::set_prior(std::array<double, 2> p) {
  set_cpt(root_, Cpt{p, p});
}

std::vector<int> TreeModel::latent_nodes() const {
  std::vector<int> out;
  for (std::size_t v = 0; v < nodes_.size(); ++v)
    if (!nodes_[v].observed) out.push_back(static_cast<int>(v));
  return out;
}

std::vector<int> TreeModel::observed_nodes() const {
  std::vector<int> out;
  for (std::size_t v = 0; v < nodes_.size(); ++v)
    if (nodes_[v].observed) out.push_back(static_cast<int>(v));
  return out;
}

void TreeModel::flip_states(std::size_t v) {
  for (auto& row : cpts_[v]) std::swap(row[0], row[1]);
  for (int c : children_[v]) std::swap(cpts_[c][0], cpts_[c][1]);
}

bool TreeModel::operator==(const TreeModel& o) const {
  if (nodes_.size() != o.nodes_.size() || root_ != o.root_) return false;
  for (std::size_t v = 0; v < nodes_.size(); ++v) {
    const Node& a = nodes_[v];
    const Node& b = o.nodes_[v];
    if (a.label != b.label || a.observed != b.observed || a.column != b.column || a.parent != b.parent) {
      return false;
    }
  }
  return cpts_ == o.cpts_;
}

PatternTable make_patterns(const BitMatrix& data, std::span<const int> columns) {
  const std::size_t n = data.rows(), k = columns.size();
  for (int c : columns) {
    if (c < 0 || static_cast<std::size_t>(c) >= data.cols()) {
      throw ConfigError("pattern column out of range");
    }
  }
  PatternTable t;
  t.columns.assign(columns.begin(), columns.end());
  t.n_cases = n;
  t.case_pattern.assign(n, 0);
  if (n == 0) return t;

  std::vector<std::uint8_t> rows(n * k);
  for (std::size_t j = 0; j < k; ++j) {
    const auto col = data.column(columns[j]);
    for (std::size_t i = 0; i < n; ++i) rows[i * k + j] = (col[i >> 6] >> (i & 63)) & 1u;
  }
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto row_less = [&](std::uint32_t a, std::uint32_t b) {
    const int c = k ? std::memcmp(&rows[a * k], &rows[b * k], k) : 0;
    return c < 0 || (c == 0 && a < b);
  };
  std::sort(idx.begin(), idx.end(), row_less);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint32_t i = idx[r];
    const bool fresh = r == 0 || (k && std::memcmp(&rows[i * k], &rows[idx[r - 1] * k], k) != 0);
    if (fresh) {
      t.states.insert(t.states.end(), rows.begin() + i * k, rows.begin() + (i + 1) * k);
      t.weights.push_back(0.0);
      ++t.n_patterns;
    }
    t.weights.back() += 1.0;
    t.case_pattern[i] = static_cast<std::uint32_t>(t.n_patterns - 1);
  }
  return t;
}

PatternTable make_patterns(const TreeModel& m, const BitMatrix& data) {
  std::vector<int> cols;
  for (int v : m.observed_nodes()) {
    const int c = m.node(v).column;
    if (c < 0 || static_cast<std::size_t>(c) >= data.cols()) {
      throw ConfigError("observed node '" + m.node(v).label + "' is not mapped to a data column");
    }
    cols.push_back(c);
  }
  return make_patterns(data, cols);
}

ScoreReport make_score(double loglik, std::size_t d, std::size_t n) {
  ScoreReport r;
  r.loglik = loglik;
  r.d = d;
  r.n = n;
  r.bic = loglik - 0.5 * static_cast<double>(d) * std::log(static_cast<double>(n));
  return r;
}

double log_likelihood(const TreeModel& m, const PatternTable& data) {
  double ll = 0.0;
  if (enumerable(m)) {
    Enumerator en(m, data);
    for (std::size_t p = 0; p < data.n_patterns; ++p) ll += data.weights[p] * en.pattern(p, 0.0, nullptr);
    return ll;
  }
  Engine eng(m, data);
  for (std::size_t p = 0; p < data.n_patterns; ++p) {
    eng.set_evidence(p);
    ll += data.weights[p] * eng.upward();
  }
  return ll;
}

double log_likelihood(const TreeModel& m, const BitMatrix& data) {
  return log_likelihood(m, make_patterns(m, data));
}

ScoreReport bic(const TreeModel& m, const BitMatrix& data) {
  return make_score(log_likelihood(m, data), m.free_parameters(), data.rows());
}

ScoreReport bic(const TreeModel& m, const PatternTable& data) {
  return make_score(log_likelihood(m, data), m.free_parameters(), data.n_cases);
}

void canonicalize_latents(TreeModel& m) {
  const auto& order = m.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int v = *it;
    if (m.node(v).observed || m.children(v).empty()) continue;
    const Cpt& first = m.cpt(m.children(v).front());
    if (first[1][1] < first[0][1]) m.flip_states(v);
  }
}

EmResult em_refine(const TreeModel& m, const PatternTable& data, int max_iter, double tol,
                   double smoothing) {
  EmResult res;
  res.model = m;
  res.runs.push_back(run_em(res.model, data, std::max(1, max_iter), tol, smoothing, res.loglik));
  canonicalize_latents(res.model);
  return res;
}

EmResult em_fit(const TreeModel& structure, const PatternTable& data, const EmConfig& cfg) {
  const auto marginals = column_marginals(data);
  if (structure.latent_nodes().empty()) {
    // Fully observed: the expected counts are the observed counts, so a
    // single M-step gives the smoothed maximum-likelihood estimate.
    EmResult res;
    res.model = TreeModel(structure.nodes());
    Counts counts;
    e_step(res.model, data, counts);
    m_step(res.model, counts, cfg.smoothing);
    res.loglik = log_likelihood(res.model, data);
    res.runs.push_back({{res.loglik}, {res.loglik + log_prior(res.model, cfg.smoothing)}});
    return res;
  }
  EmResult best;
  bool have = false;
  const int restarts = std::max(1, cfg.restarts);
  for (int r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    TreeModel m = random_init(structure, data, marginals, rng);
    double ll = 0.0;
    EmRun run = run_em(m, data, std::max(1, cfg.max_iter), cfg.tol, cfg.smoothing, ll);
    best.runs.push_back(std::move(run));
    if (!have || ll > best.loglik) {
      best.model = std::move(m);
      best.loglik = ll;
      best.best_restart = static_cast<std::size_t>(r);
      have = true;
    }
  }
  canonicalize_latents(best.model);
  return best;
}

EmResult em_fit(const TreeModel& structure, const BitMatrix& data, const EmConfig& cfg) {
  return em_fit(structure, make_patterns(structure, data), cfg);
}

std::vector<std::array<double, 2>> posterior_marginals(const TreeModel& m,
                                                        std::span<const std::uint8_t> observed_states) {
  const auto obs = m.observed_nodes();
  if (observed_states.size() != obs.size()) {
    throw ConfigError("case must assign every observed node");
  }
  PatternTable dummy;
  for (int v : obs) dummy.columns.push_back(m.node(v).column);
  Engine eng(m, dummy);
  eng.set_evidence_states(observed_states);
  if (!std::isfinite(eng.upward())) throw ValidationError("case has zero probability under the model");
  eng.downward();
  std::vector<std::array<double, 2>> out(m.size());
  for (std::size_t v = 0; v < m.size(); ++v) out[v] = eng.belief(v);
  return out;
}

BitMatrix map_completion(const TreeModel& m, const BitMatrix& data, std::span<const int> latents) {
  for (int v : latents) {
    if (v < 0 || static_cast<std::size_t>(v) >= m.size() || m.node(v).observed) {
      throw ConfigError("completion target is not a latent node");
    }
  }
  const PatternTable table = make_patterns(m, data);
  Engine eng(m, table);
  std::vector<std::uint8_t> state(table.n_patterns * latents.size());
  for (std::size_t p = 0; p < table.n_patterns; ++p) {
    eng.set_evidence(p);
    eng.upward();
    eng.downward();
    for (std::size_t k = 0; k < latents.size(); ++k) {
      state[p * latents.size() + k] = eng.belief(latents[k])[1] > 0.5 ? 1 : 0;
    }
  }
  BitMatrix out(data.rows(), latents.size());
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const std::size_t p = table.case_pattern[i];
    for (std::size_t k = 0; k < latents.size(); ++k) {
      if (state[p * latents.size() + k]) out.set(i, k, true);
    }
  }
  return out;
}

}  // namespace tsenet::ltm
