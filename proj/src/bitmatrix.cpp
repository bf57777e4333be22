#include "tsenet/bitmatrix.hpp"

#include <bit>
#include <cstdio>

#include "tsenet/error.hpp"

namespace tsenet {

BitMatrix::BitMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), wpc_((rows + 63) / 64), words_(wpc_ * cols, 0) {}

std::size_t BitMatrix::count_ones(std::size_t c) const {
  std::size_t n = 0;
  for (std::uint64_t w : column(c)) n += std::popcount(w);
  return n;
}

BitMatrix BitMatrix::select_columns(std::span<const std::size_t> cols) const {
  BitMatrix out(rows_, cols.size());
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k] >= cols_) throw ConfigError("column index out of range");
    const auto src = column(cols[k]);
    std::copy(src.begin(), src.end(), out.column(k).begin());
  }
  return out;
}

BitMatrix BitMatrix::select_rows(std::span<const std::size_t> rows) const {
  BitMatrix out(rows.size(), cols_);
  for (std::size_t c = 0; c < cols_; ++c) {
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (get(rows[k], c)) out.set(k, c, true);
    }
  }
  return out;
}

void BitMatrix::append_columns(const BitMatrix& other) {
  if (cols_ == 0 && rows_ == 0) {
    *this = other;
    return;
  }
  if (other.rows_ != rows_) throw ValidationError("row count mismatch when appending columns");
  words_.insert(words_.end(), other.words_.begin(), other.words_.end());
  cols_ += other.cols_;
}

std::string BitMatrix::column_hex(std::size_t c) const {
  std::string out;
  out.reserve(wpc_ * 16);
  char buf[17];
  for (std::uint64_t w : column(c)) {
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(w));
    out += buf;
  }
  return out;
}

void BitMatrix::set_column_hex(std::size_t c, const std::string& hex) {
  if (hex.size() != wpc_ * 16) throw ParseError("bit column has wrong length", 0);
  auto dst = column(c);
  for (std::size_t k = 0; k < wpc_; ++k) {
    std::uint64_t w = 0;
    for (std::size_t j = 0; j < 16; ++j) {
      const char ch = hex[k * 16 + j];
      unsigned v;
      if (ch >= '0' && ch <= '9') v = ch - '0';
      else if (ch >= 'a' && ch <= 'f') v = ch - 'a' + 10;
      else throw ParseError("bad hex digit in bit column", 0);
      w = (w << 4) | v;
    }
    dst[k] = w;
  }
  if (rows_ % 64 != 0 && wpc_ > 0) {
    const std::uint64_t tail = (std::uint64_t{1} << (rows_ % 64)) - 1;
    if (dst[wpc_ - 1] & ~tail) throw ParseError("bit column has bits past the last row", 0);
  }
}

}  // namespace tsenet
