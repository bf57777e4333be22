#include "tsenet/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "tsenet/error.hpp"
#include "tsenet/random.hpp"

namespace tsenet::data {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool parse_double(const std::string& tok, double& out) {
  const std::string t = trim(tok);
  if (t.empty()) return false;
  const char* first = t.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), out);
  return ec == std::errc() && ptr == t.data() + t.size();
}

bool parse_index(const std::string& tok, long long& out) {
  const std::string t = trim(tok);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  return ec == std::errc() && ptr == t.data() + t.size() && !t.empty();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return in;
}

void check_unique(const std::vector<std::string>& names) {
  std::unordered_set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw ValidationError("duplicate variable name '" + n + "'");
  }
}

std::vector<int> read_labels(const std::string& path) {
  auto in = open_or_throw(path);
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    long long v;
    if (!parse_index(t, v) || v < 0) throw ParseError("bad label '" + t + "'", lineno);
    labels.push_back(static_cast<int>(v));
  }
  return labels;
}

Dataset load_dense_csv(const std::string& path, const LoadOptions& options) {
  auto in = open_or_throw(path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      header = split_csv(line);
      break;
    }
  }
  if (header.empty()) throw ParseError("empty file '" + path + "'", lineno);

  std::ptrdiff_t label_col = -1;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].empty()) throw ParseError("empty column name", lineno);
    if (!options.label_column.empty() && header[j] == options.label_column) {
      label_col = static_cast<std::ptrdiff_t>(j);
    } else {
      names.push_back(header[j]);
    }
  }
  check_unique(header);

  std::vector<float> values;
  std::vector<int> labels;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       lineno);
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      double v;
      if (!parse_double(fields[j], v) || !std::isfinite(v)) {
        throw ParseError("bad numeric field '" + fields[j] + "'", lineno);
      }
      if (static_cast<std::ptrdiff_t>(j) == label_col) {
        if (v < 0 || v != std::floor(v)) throw ParseError("label must be a non-negative integer", lineno);
        labels.push_back(static_cast<int>(v));
      } else {
        values.push_back(static_cast<float>(v));
      }
    }
    ++n;
  }
  if (n == 0) throw ParseError("no data rows in '" + path + "'", lineno);
  if (!options.labels_path.empty()) {
    labels = read_labels(options.labels_path);
    if (labels.size() != n) throw ValidationError("label count does not match row count");
  }
  const std::size_t d = names.size();
  return Dataset(n, d, std::move(values), std::move(names), std::move(labels));
}

struct Triplet {
  std::size_t row, col;
  double value;
};

Dataset load_triplets(const std::string& path, const LoadOptions& options,
                      std::vector<std::string> vocab) {
  auto in = open_or_throw(path);
  std::vector<Triplet> triplets;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_row = 0, max_col = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ss(t);
    std::string a, b, c, extra;
    if (!(ss >> a >> b >> c) || (ss >> extra)) throw ParseError("expected 'row col value'", lineno);
    long long r, k;
    double v;
    if (!parse_index(a, r) || !parse_index(b, k) || r < 0 || k < 0) {
      throw ParseError("bad index in triplet", lineno);
    }
    if (!parse_double(c, v) || !std::isfinite(v)) throw ParseError("bad value in triplet", lineno);
    if (!vocab.empty() && static_cast<std::size_t>(k) >= vocab.size()) {
      throw ParseError("column index " + std::to_string(k) + " beyond vocabulary", lineno);
    }
    triplets.push_back({static_cast<std::size_t>(r), static_cast<std::size_t>(k), v});
    max_row = std::max(max_row, static_cast<std::size_t>(r));
    max_col = std::max(max_col, static_cast<std::size_t>(k));
  }
  if (triplets.empty()) throw ParseError("no triplets in '" + path + "'", lineno);

  std::vector<int> labels;
  std::size_t n = max_row + 1;
  if (!options.labels_path.empty()) {
    labels = read_labels(options.labels_path);
    if (labels.size() < n) throw ValidationError("fewer labels than rows in triplet file");
    n = labels.size();
  }
  const std::size_t d = vocab.empty() ? max_col + 1 : vocab.size();
  std::vector<std::string> names = std::move(vocab);
  if (names.empty()) {
    names.reserve(d);
    for (std::size_t j = 0; j < d; ++j) names.push_back("v" + std::to_string(j));
  }
  std::vector<float> values(n * d, 0.0f);
  for (const auto& t : triplets) values[t.row * d + t.col] += static_cast<float>(t.value);
  return Dataset(n, d, std::move(values), std::move(names), std::move(labels));
}

double median_of(std::vector<float> col) {
  const std::size_t n = col.size();
  std::sort(col.begin(), col.end());
  if (n % 2 == 1) return col[n / 2];
  return 0.5 * (static_cast<double>(col[n / 2 - 1]) + static_cast<double>(col[n / 2]));
}

}  // namespace

Dataset::Dataset(std::size_t n_cases, std::size_t n_vars, std::vector<float> values,
                 std::vector<std::string> names, std::vector<int> labels)
    : n_cases_(n_cases),
      n_vars_(n_vars),
      values_(std::move(values)),
      names_(std::move(names)),
      labels_(std::move(labels)) {
  if (values_.size() != n_cases_ * n_vars_) throw ValidationError("value matrix has wrong size");
  if (names_.size() != n_vars_) throw ValidationError("name count does not match variable count");
  if (!labels_.empty() && labels_.size() != n_cases_) {
    throw ValidationError("label count does not match case count");
  }
  for (int l : labels_) {
    if (l < 0) throw ValidationError("labels must be non-negative");
  }
  check_unique(names_);
}

std::size_t Dataset::n_classes() const {
  if (labels_.empty()) return 0;
  return static_cast<std::size_t>(*std::max_element(labels_.begin(), labels_.end())) + 1;
}

const BitMatrix& Dataset::binary() const {
  if (!has_binary()) throw ConfigError("dataset has no binary view; call binarize first");
  return binary_;
}

Dataset Dataset::with_binary(BitMatrix binary) const {
  if (binary.rows() != n_cases_ || binary.cols() != n_vars_) {
    throw ValidationError("binary view shape does not match dataset");
  }
  Dataset out = *this;
  out.binary_ = std::move(binary);
  return out;
}

Dataset Dataset::select_rows(std::span<const std::size_t> rows) const {
  std::vector<float> vals;
  vals.reserve(rows.size() * n_vars_);
  std::vector<int> labs;
  for (std::size_t r : rows) {
    if (r >= n_cases_) throw ConfigError("row index out of range");
    auto src = row(r);
    vals.insert(vals.end(), src.begin(), src.end());
    if (!labels_.empty()) labs.push_back(labels_[r]);
  }
  Dataset out(rows.size(), n_vars_, std::move(vals), names_, std::move(labs));
  if (has_binary()) out.binary_ = binary_.select_rows(rows);
  return out;
}

Dataset Dataset::select_columns(std::span<const std::size_t> cols) const {
  std::vector<float> vals(n_cases_ * cols.size());
  std::vector<std::string> nm;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k] >= n_vars_) throw ConfigError("column index out of range");
    nm.push_back(names_[cols[k]]);
  }
  for (std::size_t i = 0; i < n_cases_; ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) vals[i * cols.size() + k] = value(i, cols[k]);
  }
  Dataset out(n_cases_, cols.size(), std::move(vals), std::move(nm), labels_);
  if (has_binary()) out.binary_ = binary_.select_columns(cols);
  return out;
}

Dataset load_table(const std::string& path, Format format, const LoadOptions& options) {
  switch (format) {
    case Format::dense_csv:
      return load_dense_csv(path, options);
    case Format::sparse_triplet:
      return load_triplets(path, options, {});
    case Format::bow_vocab: {
      if (options.vocab_path.empty()) throw ConfigError("bag-of-words format needs a vocabulary file");
      auto in = open_or_throw(options.vocab_path);
      std::vector<std::string> vocab;
      std::string line;
      while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (!t.empty()) vocab.push_back(t);
      }
      if (vocab.empty()) throw ParseError("empty vocabulary '" + options.vocab_path + "'", 0);
      check_unique(vocab);
      return load_triplets(path, options, std::move(vocab));
    }
  }
  throw ConfigError("unknown format");
}

Dataset binarize(const Dataset& d, BinarizePolicy policy, std::vector<std::string>* dropped) {
  const std::size_t n = d.n_cases(), p = d.n_vars();
  BitMatrix bits(n, p);
  std::vector<std::size_t> keep;
  std::vector<float> col(n);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = d.value(i, j);
    double threshold = 0.0;
    if (policy == BinarizePolicy::median) threshold = median_of(col);
    std::size_t ones = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (static_cast<double>(col[i]) > threshold) {
        bits.set(i, j, true);
        ++ones;
      }
    }
    if (ones == 0 || ones == n) {
      spdlog::warn("dropping constant column '{}'", d.names()[j]);
      if (dropped) dropped->push_back(d.names()[j]);
    } else {
      keep.push_back(j);
    }
  }
  if (keep.empty()) throw ValidationError("every column is constant after binarization");
  if (keep.size() == p) return d.with_binary(std::move(bits));
  Dataset out = d.select_columns(keep);
  return out.with_binary(bits.select_columns(keep));
}

Dataset standardize(const Dataset& d) {
  const std::size_t n = d.n_cases(), p = d.n_vars();
  std::vector<float> vals(d.values().begin(), d.values().end());
  for (std::size_t j = 0; j < p; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += d.value(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = d.value(i, j) - mean;
      var += z * z;
    }
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i) {
      vals[i * p + j] = sd > 0 ? static_cast<float>((d.value(i, j) - mean) / sd) : 0.0f;
    }
  }
  Dataset out(n, p, std::move(vals), d.names(), d.labels());
  return d.has_binary() ? out.with_binary(d.binary()) : out;
}

Dataset subsample(const Dataset& d, std::size_t max_cases, std::uint64_t seed) {
  if (max_cases == 0 || max_cases >= d.n_cases()) return d;
  std::vector<std::size_t> idx(d.n_cases());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(max_cases);
  std::sort(idx.begin(), idx.end());
  return d.select_rows(idx);
}

SplitSpec split(std::size_t n_cases, const SplitFractions& f, std::uint64_t seed) {
  for (double x : {f.train, f.validation, f.test}) {
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("split fraction out of [0,1]");
  }
  if (f.train + f.validation + f.test > 1.0 + 1e-12) throw ConfigError("split fractions sum above 1");
  auto count = [&](double frac) {
    return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n_cases) + 1e-9));
  };
  const std::size_t n_train = count(f.train), n_val = count(f.validation);
  const std::size_t n_test = std::min(count(f.test), n_cases - n_train - n_val);

  std::vector<std::size_t> idx(n_cases);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  SplitSpec s;
  s.seed = seed;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.validation.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.begin() + n_train + n_val + n_test);
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

Format parse_format(const std::string& name) {
  if (name == "dense-csv") return Format::dense_csv;
  if (name == "sparse-triplet") return Format::sparse_triplet;
  if (name == "bag-of-words-vocab") return Format::bow_vocab;
  throw ConfigError("unknown data format '" + name + "'");
}

BinarizePolicy parse_policy(const std::string& name) {
  if (name == "positive") return BinarizePolicy::positive;
  if (name == "median") return BinarizePolicy::median;
  throw ConfigError("unknown binarization policy '" + name + "'");
}

}  // namespace tsenet::data
