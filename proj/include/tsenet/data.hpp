#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tsenet/bitmatrix.hpp"

namespace tsenet::data {

enum class Format { dense_csv, sparse_triplet, bow_vocab };
enum class BinarizePolicy { positive, median };

struct LoadOptions {
  /// Vocabulary file (one token per line) for `bow_vocab`.
  std::string vocab_path;
  /// Optional label file, one integer class per line, row-aligned.
  std::string labels_path;
  /// Dense CSV column holding integer class labels; removed from the features.
  std::string label_column = "label";
};

/// N x D observations. `values` is row-major; the binary view is column-major
/// and only present after `binarize`.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t n_cases, std::size_t n_vars, std::vector<float> values,
          std::vector<std::string> names, std::vector<int> labels = {});

  std::size_t n_cases() const { return n_cases_; }
  std::size_t n_vars() const { return n_vars_; }
  float value(std::size_t i, std::size_t j) const { return values_[i * n_vars_ + j]; }
  std::span<const float> values() const { return values_; }
  std::span<const float> row(std::size_t i) const { return {values_.data() + i * n_vars_, n_vars_}; }
  const std::vector<std::string>& names() const { return names_; }

  bool has_labels() const { return !labels_.empty(); }
  const std::vector<int>& labels() const { return labels_; }
  /// 1 + max label, 0 without labels.
  std::size_t n_classes() const;

  bool has_binary() const { return binary_.cols() == n_vars_ && binary_.rows() == n_cases_ && n_vars_ > 0; }
  const BitMatrix& binary() const;

  Dataset with_binary(BitMatrix binary) const;
  Dataset select_rows(std::span<const std::size_t> rows) const;
  Dataset select_columns(std::span<const std::size_t> cols) const;

 private:
  std::size_t n_cases_ = 0;
  std::size_t n_vars_ = 0;
  std::vector<float> values_;
  std::vector<std::string> names_;
  std::vector<int> labels_;
  BitMatrix binary_;
};

Dataset load_table(const std::string& path, Format format, const LoadOptions& options = {});

/// Sets the binary view. Columns whose binary view is constant are dropped
/// with a logged warning; their names are appended to `dropped` if given.
Dataset binarize(const Dataset& d, BinarizePolicy policy, std::vector<std::string>* dropped = nullptr);

/// Per-column zero mean / unit variance on `values` (constant columns become 0).
Dataset standardize(const Dataset& d);

/// Uniform random subset of at most `max_cases` rows, kept in original order.
Dataset subsample(const Dataset& d, std::size_t max_cases, std::uint64_t seed);

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct SplitSpec {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

SplitSpec split(std::size_t n_cases, const SplitFractions& fractions, std::uint64_t seed);

Format parse_format(const std::string& name);
BinarizePolicy parse_policy(const std::string& name);

}  // namespace tsenet::data
