#include "tsenet/stats.hpp"

#include <bit>
#include <cmath>

#include "tsenet/error.hpp"
#include "tsenet/parallel.hpp"

namespace tsenet::stats {

namespace {

// n_xy/n * ln(n_xy * n / (n_x * n_y)); empty cells contribute nothing.
inline double mi_term(double nxy, double nx, double ny, double n) {
  if (nxy <= 0.0) return 0.0;
  return nxy / n * std::log(nxy * n / (nx * ny));
}

constexpr std::size_t kTile = 32;

}  // namespace

double entropy(std::span<const double> dist) {
  double sum = 0.0, h = 0.0;
  for (double p : dist) {
    if (p < 0.0) throw ConfigError("negative probability");
    sum += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("probabilities do not sum to 1");
  return h;
}

std::uint64_t Contingency2x2x2::total() const {
  std::uint64_t t = 0;
  for (auto& plane : counts)
    for (auto& row : plane)
      for (auto c : row) t += c;
  return t;
}

double mutual_information(const Contingency2x2& t) {
  const std::uint64_t total = t.total();
  if (total == 0) throw ConfigError("mutual information of an empty table");
  const double n = static_cast<double>(total);
  const double a0 = static_cast<double>(t.c00 + t.c01), a1 = static_cast<double>(t.c10 + t.c11);
  const double b0 = static_cast<double>(t.c00 + t.c10), b1 = static_cast<double>(t.c01 + t.c11);
  const double mi = mi_term(static_cast<double>(t.c00), a0, b0, n) +
                    mi_term(static_cast<double>(t.c01), a0, b1, n) +
                    mi_term(static_cast<double>(t.c10), a1, b0, n) +
                    mi_term(static_cast<double>(t.c11), a1, b1, n);
  return mi < 0.0 ? 0.0 : mi;
}

double conditional_mi(const Contingency2x2x2& t) {
  const std::uint64_t total = t.total();
  if (total == 0) throw ConfigError("conditional mutual information of an empty table");
  double cmi = 0.0;
  for (int z = 0; z < 2; ++z) {
    const auto& c = t.counts[z];
    const std::uint64_t nz = c[0][0] + c[0][1] + c[1][0] + c[1][1];
    if (nz == 0) continue;
    const double w = static_cast<double>(nz) / static_cast<double>(total);
    cmi += w * mutual_information(Contingency2x2{c[0][0], c[0][1], c[1][0], c[1][1]});
  }
  return cmi;
}

Contingency2x2 contingency(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                           std::size_t n) {
  std::uint64_t na = 0, nb = 0, nab = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    na += std::popcount(a[k]);
    nb += std::popcount(b[k]);
    nab += std::popcount(a[k] & b[k]);
  }
  Contingency2x2 t;
  t.c11 = nab;
  t.c10 = na - nab;
  t.c01 = nb - nab;
  t.c00 = n - na - nb + nab;
  return t;
}

Contingency2x2x2 contingency(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                             std::span<const std::uint64_t> z, std::size_t n) {
  std::uint64_t nz = 0, na_z = 0, nb_z = 0, nab_z = 0, na = 0, nb = 0, nab = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const std::uint64_t ab = a[k] & b[k];
    nz += std::popcount(z[k]);
    na_z += std::popcount(a[k] & z[k]);
    nb_z += std::popcount(b[k] & z[k]);
    nab_z += std::popcount(ab & z[k]);
    na += std::popcount(a[k]);
    nb += std::popcount(b[k]);
    nab += std::popcount(ab);
  }
  Contingency2x2x2 t;
  auto fill = [&t](int zz, std::uint64_t m, std::uint64_t ma, std::uint64_t mb, std::uint64_t mab) {
    t.counts[zz][1][1] = mab;
    t.counts[zz][1][0] = ma - mab;
    t.counts[zz][0][1] = mb - mab;
    t.counts[zz][0][0] = m - ma - mb + mab;
  };
  fill(1, nz, na_z, nb_z, nab_z);
  fill(0, n - nz, na - na_z, nb - nb_z, nab - nab_z);
  return t;
}

MiMatrix mi_matrix(const BitMatrix& bits, std::span<const std::size_t> columns) {
  const std::size_t m = columns.size();
  if (m == 0) throw ConfigError("mutual information matrix over an empty column set");
  for (std::size_t c : columns) {
    if (c >= bits.cols()) throw ConfigError("column index out of range");
  }
  const std::size_t n = bits.rows();
  const std::size_t wpc = bits.words_per_col();
  std::vector<std::uint64_t> ones(m);
  for (std::size_t i = 0; i < m; ++i) ones[i] = bits.count_ones(columns[i]);

  MiMatrix out(m);
  const std::size_t tiles = (m + kTile - 1) / kTile;
  // Each tile row owns a disjoint set of (i, j) entries with i in the tile.
  std::vector<std::vector<double>> results(tiles);
  parallel_for(tiles, [&](std::size_t ti) {
    const std::size_t i0 = ti * kTile, i1 = std::min(m, i0 + kTile);
    std::vector<std::uint64_t> joint(kTile * kTile);
    auto& res = results[ti];
    res.assign((i1 - i0) * m, 0.0);
    for (std::size_t tj = ti; tj < tiles; ++tj) {
      const std::size_t j0 = tj * kTile, j1 = std::min(m, j0 + kTile);
      std::fill(joint.begin(), joint.end(), 0);
      // Block the word range so both column tiles stay resident in cache.
      constexpr std::size_t kWordBlock = 512;
      for (std::size_t w0 = 0; w0 < wpc; w0 += kWordBlock) {
        const std::size_t w1 = std::min(wpc, w0 + kWordBlock);
        for (std::size_t i = i0; i < i1; ++i) {
          const std::uint64_t* a = bits.column(columns[i]).data();
          const std::size_t jstart = (tj == ti) ? i + 1 : j0;
          for (std::size_t j = jstart; j < j1; ++j) {
            const std::uint64_t* b = bits.column(columns[j]).data();
            std::uint64_t acc = 0;
            for (std::size_t w = w0; w < w1; ++w) acc += std::popcount(a[w] & b[w]);
            joint[(i - i0) * kTile + (j - j0)] += acc;
          }
        }
      }
      for (std::size_t i = i0; i < i1; ++i) {
        const std::size_t jstart = (tj == ti) ? i + 1 : j0;
        for (std::size_t j = jstart; j < j1; ++j) {
          const std::uint64_t nab = joint[(i - i0) * kTile + (j - j0)];
          Contingency2x2 t;
          t.c11 = nab;
          t.c10 = ones[i] - nab;
          t.c01 = ones[j] - nab;
          t.c00 = n - ones[i] - ones[j] + nab;
          res[(i - i0) * m + j] = n ? mutual_information(t) : 0.0;
        }
      }
    }
  });
  for (std::size_t ti = 0; ti < tiles; ++ti) {
    const std::size_t i0 = ti * kTile, i1 = std::min(m, i0 + kTile);
    for (std::size_t i = i0; i < i1; ++i) {
      for (std::size_t j = i + 1; j < m; ++j) out.set(i, j, results[ti][(i - i0) * m + j]);
    }
  }
  return out;
}

MiMatrix mi_matrix(const BitMatrix& bits) {
  std::vector<std::size_t> cols(bits.cols());
  for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = i;
  return mi_matrix(bits, cols);
}

MiMatrix mi_matrix(const data::Dataset& d, std::span<const std::size_t> columns) {
  return mi_matrix(d.binary(), columns);
}

double conditional_mi(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                      std::span<const std::uint64_t> z, std::size_t n) {
  return conditional_mi(contingency(a, b, z, n));
}

double conditional_mi(const data::Dataset& d, std::size_t a, std::size_t b, std::size_t z) {
  if (a == b || a == z || b == z) throw ConfigError("conditional MI needs three distinct columns");
  const auto& bits = d.binary();
  if (a >= bits.cols() || b >= bits.cols() || z >= bits.cols()) {
    throw ConfigError("column index out of range");
  }
  return conditional_mi(bits.column(a), bits.column(b), bits.column(z), bits.rows());
}

}  // namespace tsenet::stats
