#include "support/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "tsenet/random.hpp"

namespace gradcheck {

using tsenet::nn::Matrix;
using tsenet::nn::Network;

double rel_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

template <class T>
Report check(const Network<T>& net, const Matrix<double>& x, std::span<const int> y, double step, double floor) {
  tsenet::nn::Cache<T> cache;
  tsenet::nn::forward(net, Matrix<T>(x.cast<T>()), tsenet::nn::Mode::eval, 0.0, 0, &cache);
  const auto g = tsenet::nn::backward(net, cache, y);

  Network<double> probe = net.template cast<double>();
  auto f = [&] { return tsenet::nn::loss(probe, x, y); };
  // ReLU on/off pattern; a stencil that changes it straddles a kink.
  auto pattern = [&] {
    std::vector<bool> on;
    tsenet::nn::Cache<double> c;
    tsenet::nn::forward(probe, x, tsenet::nn::Mode::eval, 0.0, 0, &c);
    for (std::size_t k = 0; k < probe.layers.size(); ++k) {
      if (probe.layers[k].activation != tsenet::nn::Activation::relu) continue;
      const auto& a = c.act[k + 1];
      for (Eigen::Index i = 0; i < a.size(); ++i) on.push_back(a.data()[i] > 0.0);
    }
    return on;
  };
  const std::vector<bool> base = pattern();
  // Five-point stencil, truncation error O(h^4). The step shrinks while the
  // stencil crosses a kink; nullopt if it never clears.
  auto central = [&](double& theta) -> std::optional<double> {
    const double keep = theta;
    for (double h = step; h >= step * 1e-4; h *= 0.1) {
      double v[4];
      const double at[4] = {2.0, 1.0, -1.0, -2.0};
      bool smooth = true;
      for (int i = 0; i < 4; ++i) {
        theta = keep + at[i] * h;
        v[i] = f();
        smooth = smooth && pattern() == base;
      }
      theta = keep;
      if (smooth) return (-v[0] + 8.0 * v[1] - 8.0 * v[2] + v[3]) / (12.0 * h);
    }
    return std::nullopt;
  };
  auto compare = [&](Report& r, double analytic, double& theta) {
    const auto fd = central(theta);
    if (!fd) {
      ++r.skipped;
      return;
    }
    r.max_rel = std::max(r.max_rel, rel_error(analytic, *fd, floor));
    ++r.checked;
  };

  Report r;
  for (std::size_t k = 0; k < probe.layers.size(); ++k) {
    auto& l = probe.layers[k];
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) {
      const double analytic = static_cast<double>(g.weights[k].data()[i]);
      if (l.mask.data()[i] == 0.0) {
        r.off_mask_zero = r.off_mask_zero && analytic == 0.0;
        continue;
      }
      compare(r, analytic, l.weights.data()[i]);
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) {
      compare(r, static_cast<double>(g.bias[k](i)), l.bias(i));
    }
  }
  return r;
}

template Report check<float>(const Network<float>&, const Matrix<double>&, std::span<const int>, double, double);
template Report check<double>(const Network<double>&, const Matrix<double>&, std::span<const int>, double, double);

tsenet::expansion::PgmCore random_core(std::uint64_t seed, const std::vector<std::size_t>& sizes, std::size_t fan_in) {
  tsenet::Rng rng(seed);
  tsenet::expansion::PgmCore core;
  core.layer_sizes = sizes;
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    std::vector<std::string> names;
    for (std::size_t u = 0; u < sizes[l]; ++u) names.push_back("u" + std::to_string(l) + "_" + std::to_string(u));
    core.names.push_back(std::move(names));
  }
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    std::vector<std::vector<std::size_t>> rows;
    std::vector<std::vector<tsenet::expansion::EdgeOrigin>> kinds;
    for (std::size_t u = 0; u < sizes[l + 1]; ++u) {
      std::vector<std::size_t> all(sizes[l]);
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      rng.shuffle(all);
      all.resize(std::min(fan_in, all.size()));
      std::sort(all.begin(), all.end());
      kinds.emplace_back(all.size(), tsenet::expansion::EdgeOrigin::skeleton);
      rows.push_back(std::move(all));
    }
    core.adjacency.push_back(std::move(rows));
    core.origins.push_back(std::move(kinds));
  }
  core.validate();
  return core;
}

}  // namespace gradcheck
