#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tsenet {

/// Column-major packed binary matrix. Each column is a run of 64-bit words;
/// bits past `rows()` in the last word are always zero.
class BitMatrix {
 public:
  BitMatrix() = default;
  BitMatrix(std::size_t rows, std::size_t cols);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t words_per_col() const { return wpc_; }

  bool get(std::size_t r, std::size_t c) const {
    return (words_[c * wpc_ + (r >> 6)] >> (r & 63)) & 1u;
  }
  void set(std::size_t r, std::size_t c, bool v) {
    std::uint64_t& w = words_[c * wpc_ + (r >> 6)];
    const std::uint64_t bit = std::uint64_t{1} << (r & 63);
    w = v ? (w | bit) : (w & ~bit);
  }

  std::span<const std::uint64_t> column(std::size_t c) const {
    return {words_.data() + c * wpc_, wpc_};
  }
  std::span<std::uint64_t> column(std::size_t c) { return {words_.data() + c * wpc_, wpc_}; }

  std::size_t count_ones(std::size_t c) const;

  BitMatrix select_columns(std::span<const std::size_t> cols) const;
  BitMatrix select_rows(std::span<const std::size_t> rows) const;
  /// Appends the columns of `other` (same row count).
  void append_columns(const BitMatrix& other);

  /// Lowercase hex of a column's words, little-endian word order.
  std::string column_hex(std::size_t c) const;
  void set_column_hex(std::size_t c, const std::string& hex);

  bool operator==(const BitMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t wpc_ = 0;
  std::vector<std::uint64_t> words_;
};

}  // namespace tsenet
