#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "support/synth.hpp"
#include "tsenet/error.hpp"
#include "tsenet/ltm.hpp"

using namespace tsenet;
using namespace tsenet::ltm;

namespace {

// Latent root 0 with `k` observed children 1..k on columns 0..k-1.
TreeModel star(std::size_t k) {
  std::vector<Node> nodes{{"h", false, -1, -1}};
  for (std::size_t i = 0; i < k; ++i)
    nodes.push_back({"x" + std::to_string(i), true, static_cast<int>(i), 0});
  return TreeModel(nodes);
}

std::vector<std::uint8_t> observed_row(const TreeModel& m, const BitMatrix& bits, std::size_t i) {
  std::vector<std::uint8_t> out;
  for (int v : m.observed_nodes()) out.push_back(bits.get(i, m.node(v).column));
  return out;
}

// Observed columns of a full sample, placed at the model's data columns.
BitMatrix observed_part(const TreeModel& m, const BitMatrix& full) {
  std::size_t width = 0;
  for (int v : m.observed_nodes()) width = std::max<std::size_t>(width, m.node(v).column + 1);
  BitMatrix out(full.rows(), width);
  for (int v : m.observed_nodes())
    for (std::size_t i = 0; i < full.rows(); ++i) out.set(i, m.node(v).column, full.get(i, v));
  return out;
}

}  // namespace

TEST_CASE("tree validation") {
  CHECK_THROWS_AS(TreeModel({{"a", false, -1, -1}, {"b", false, -1, -1}}), ValidationError);
  CHECK_THROWS_AS(TreeModel({{"a", false, -1, 1}, {"b", false, -1, 0}}), ValidationError);
  const TreeModel m = star(3);
  CHECK(m.free_parameters() == 7);
  CHECK(m.order().front() == 0);
  TreeModel c = m;
  CHECK_THROWS_AS(c.set_cpt(1, Cpt{{{0.5, 0.6}, {0.5, 0.5}}}), ValidationError);
}

TEST_CASE("single observed node likelihood") {
  TreeModel m({{"x", true, 0, -1}});
  BitMatrix bits(8, 1);
  for (std::size_t i = 0; i < 8; i += 2) bits.set(i, 0, true);
  const double ll = log_likelihood(m, bits);
  CHECK(ll == doctest::Approx(8 * std::log(0.5)).epsilon(1e-12));
  const ScoreReport r = bic(m, bits);
  CHECK(r.d == 1);
  CHECK(r.n == 8);
  CHECK(r.bic == doctest::Approx(8 * std::log(0.5) - 0.5 * std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("score report decomposition") {
  CHECK(std::abs(make_score(-5.545177, 1, 8).bic - -6.584898) < 1e-6);
  CHECK(make_score(-3.0, 0, 8).bic == -3.0);
  CHECK(make_score(-3.0, 7, 1).bic == -3.0);
  const ScoreReport r = make_score(-12.5, 9, 40);
  CHECK(r.bic == r.loglik - (static_cast<double>(r.d) / 2.0) * std::log(static_cast<double>(r.n)));
}

TEST_CASE("deterministic channels with a uniform root") {
  TreeModel m = star(2);
  m.set_cpt(1, Cpt{{{1.0, 0.0}, {0.0, 1.0}}});
  m.set_cpt(2, Cpt{{{1.0, 0.0}, {0.0, 1.0}}});
  BitMatrix bits(2, 2);
  bits.set(1, 0, true);
  bits.set(1, 1, true);
  CHECK(log_likelihood(m, bits) == doctest::Approx(2 * std::log(0.5)).epsilon(1e-12));

  const std::vector<std::uint8_t> ones{1, 1};
  const auto post = posterior_marginals(m, ones);
  CHECK(post[0][1] == 1.0);

  // Inconsistent evidence has probability zero.
  bits.set(0, 1, true);
  CHECK(std::isinf(log_likelihood(m, bits)));
}

TEST_CASE("uninformative children leave the root prior") {
  TreeModel m = star(2);
  m.set_prior({0.3, 0.7});
  const std::vector<std::uint8_t> e{1, 0};
  const auto post = posterior_marginals(m, e);
  CHECK(post[0][1] == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("likelihood and posteriors match enumeration on random trees") {
  Rng rng(99);
  for (int rep = 0; rep < 60; ++rep) {
    const std::size_t n_nodes = 2 + rng.below(9);
    const TreeModel m = synth::random_tree(rng, n_nodes, 0.6);
    if (m.observed_nodes().empty()) continue;
    const BitMatrix full = synth::sample_tree(m, 6, rng);
    const BitMatrix obs = observed_part(m, full);
    double ref_total = 0.0;
    for (std::size_t i = 0; i < obs.rows(); ++i) {
      const auto row = observed_row(m, obs, i);
      ref_total += oracle::loglik_enumerate(m, row);
      const auto post = posterior_marginals(m, row);
      const auto ref = oracle::posterior_enumerate(m, row);
      for (std::size_t v = 0; v < m.size(); ++v) {
        CHECK(std::abs(post[v][1] - ref[v]) < 1e-12);
        CHECK(std::abs(post[v][0] + post[v][1] - 1.0) < 1e-12);
      }
    }
    CHECK(std::abs(log_likelihood(m, obs) - ref_total) < 1e-12 * std::max(1.0, std::abs(ref_total)));
  }
}

TEST_CASE("pattern table compresses rows") {
  BitMatrix bits(5, 2);
  bits.set(0, 0, true);
  bits.set(2, 0, true);
  bits.set(4, 1, true);
  const std::vector<int> cols{0, 1};
  const PatternTable t = make_patterns(bits, cols);
  CHECK(t.n_patterns == 3);
  double total = 0;
  for (double w : t.weights) total += w;
  CHECK(total == 5.0);
  CHECK(t.case_pattern[0] == t.case_pattern[2]);
  CHECK(t.case_pattern[1] == t.case_pattern[3]);

  TreeModel m({{"x", true, 7, -1}});
  CHECK_THROWS(make_patterns(m, bits));
}

TEST_CASE("fully observed EM is closed form and seed independent") {
  TreeModel m({{"a", true, 0, -1}, {"b", true, 1, 0}});
  BitMatrix bits(10, 2);
  for (std::size_t i = 0; i < 6; ++i) bits.set(i, 0, true);
  for (std::size_t i = 0; i < 4; ++i) bits.set(i, 1, true);
  EmConfig cfg;
  cfg.seed = 1;
  const EmResult r1 = em_fit(m, bits, cfg);
  cfg.seed = 2;
  const EmResult r2 = em_fit(m, bits, cfg);
  CHECK(r1.model == r2.model);
  // (6 + 1) / (10 + 2) with unit pseudo-counts.
  CHECK(r1.model.prior()[1] == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
  // b=1 in 4 of the 6 cases with a=1.
  CHECK(r1.model.cpt(1)[1][1] == doctest::Approx(5.0 / 8.0).epsilon(1e-15));
  CHECK(r1.model.cpt(1)[0][1] == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("EM recovers a planted star") {
  TreeModel truth = star(3);
  truth.set_prior({0.4, 0.6});
  for (int v = 1; v <= 3; ++v) truth.set_cpt(v, synth::channel(0.9));
  Rng rng(2024);
  const BitMatrix full = synth::sample_tree(truth, 5000, rng);
  const BitMatrix obs = observed_part(truth, full);
  EmConfig cfg;
  cfg.seed = 7;
  const EmResult fit = em_fit(star(3), obs, cfg);
  CHECK(std::abs(fit.model.prior()[1] - 0.6) < 0.05);
  for (int v = 1; v <= 3; ++v)
    for (int s = 0; s < 2; ++s) CHECK(std::abs(fit.model.cpt(v)[s][1] - truth.cpt(v)[s][1]) < 0.05);

  const std::vector<int> latents{0};
  const BitMatrix done = map_completion(fit.model, obs, latents);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < 5000; ++i) agree += done.get(i, 0) == full.get(i, 0);
  CHECK(std::max(agree, 5000 - agree) >= 0.85 * 5000);

  const EmResult again = em_fit(star(3), obs, cfg);
  CHECK(again.model == fit.model);
  CHECK(again.best_restart == fit.best_restart);
}

TEST_CASE("EM objective never decreases") {
  Rng rng(8);
  for (int rep = 0; rep < 15; ++rep) {
    const TreeModel truth = synth::random_tree(rng, 3 + rng.below(6), 0.6);
    if (truth.observed_nodes().empty() || truth.latent_nodes().empty()) continue;
    const BitMatrix obs = observed_part(truth, synth::sample_tree(truth, 300, rng));
    EmConfig cfg;
    cfg.seed = rep;
    cfg.restarts = 2;
    cfg.tol = 1e-12;
    const EmResult smoothed = em_fit(truth, obs, cfg);
    for (const auto& run : smoothed.runs)
      for (std::size_t t = 1; t < run.objective.size(); ++t)
        CHECK(run.objective[t] >= run.objective[t - 1] - 1e-9);
    cfg.smoothing = 0.0;
    const EmResult raw = em_fit(truth, obs, cfg);
    for (const auto& run : raw.runs)
      for (std::size_t t = 1; t < run.loglik.size(); ++t)
        CHECK(run.loglik[t] >= run.loglik[t - 1] - 1e-9);
  }
}

TEST_CASE("relabeling a latent leaves the likelihood unchanged") {
  Rng rng(4);
  for (int rep = 0; rep < 30; ++rep) {
    const TreeModel m = synth::random_tree(rng, 3 + rng.below(7), 0.5);
    if (m.latent_nodes().empty() || m.observed_nodes().empty()) continue;
    const BitMatrix obs = observed_part(m, synth::sample_tree(m, 40, rng));
    const double before = log_likelihood(m, obs);
    TreeModel f = m;
    f.flip_states(m.latent_nodes()[rng.below(m.latent_nodes().size())]);
    CHECK(std::abs(log_likelihood(f, obs) - before) < 1e-12 * std::max(1.0, std::abs(before)));
  }
}

TEST_CASE("completion ties go to state 0") {
  TreeModel m = star(1);
  const std::vector<int> latents{0};
  BitMatrix bits(3, 1);
  bits.set(1, 0, true);
  const BitMatrix done = map_completion(m, bits, latents);
  CHECK(done.get(0, 0) == false);
  CHECK(done.get(1, 0) == false);
}

TEST_CASE("canonical labels prefer state 1 for the first child") {
  TreeModel m = star(2);
  m.set_cpt(1, Cpt{{{0.2, 0.8}, {0.9, 0.1}}});
  canonicalize_latents(m);
  CHECK(m.cpt(1)[1][1] > m.cpt(1)[0][1]);
}
