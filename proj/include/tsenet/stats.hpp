#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tsenet/bitmatrix.hpp"
#include "tsenet/data.hpp"

// All information quantities are plug-in estimates in nats.
namespace tsenet::stats {

/// -sum p ln p with 0 ln 0 = 0. Throws ConfigError on a negative entry or a
/// total that differs from 1 by more than 1e-9.
double entropy(std::span<const double> dist);

/// Joint counts of two binary variables; `cAB` is the count of (a=A, b=B).
struct Contingency2x2 {
  std::uint64_t c00 = 0, c01 = 0, c10 = 0, c11 = 0;
  std::uint64_t total() const { return c00 + c01 + c10 + c11; }
};

/// Joint counts of (z, a, b), indexed counts[z][a][b].
struct Contingency2x2x2 {
  std::uint64_t counts[2][2][2] = {};
  std::uint64_t total() const;
};

double mutual_information(const Contingency2x2& t);
double conditional_mi(const Contingency2x2x2& t);

Contingency2x2 contingency(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                           std::size_t n);
Contingency2x2x2 contingency(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                             std::span<const std::uint64_t> z, std::size_t n);

/// Symmetric matrix of pairwise MI; the diagonal is 0 and unused.
class MiMatrix {
 public:
  MiMatrix() = default;
  explicit MiMatrix(std::size_t n) : n_(n), v_(n * n, 0.0) {}
  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return v_[i * n_ + j]; }
  void set(std::size_t i, std::size_t j, double x) {
    v_[i * n_ + j] = x;
    v_[j * n_ + i] = x;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> v_;
};

/// MI among the listed columns; entry (i, j) refers to columns[i], columns[j].
MiMatrix mi_matrix(const BitMatrix& bits, std::span<const std::size_t> columns);
MiMatrix mi_matrix(const BitMatrix& bits);
MiMatrix mi_matrix(const data::Dataset& d, std::span<const std::size_t> columns);

double conditional_mi(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                      std::span<const std::uint64_t> z, std::size_t n);
/// I(a; b | z) over binary columns of `d`. Throws ConfigError on repeated indices.
double conditional_mi(const data::Dataset& d, std::size_t a, std::size_t b, std::size_t z);

}  // namespace tsenet::stats
