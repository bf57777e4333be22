#include "tsenet/interpret.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "tsenet/error.hpp"
#include "tsenet/parallel.hpp"
#include "tsenet/persist.hpp"

namespace tsenet::interpret {

void EmbeddingTable::add(const std::string& token, std::vector<double> v) {
  if (v.empty()) throw ValidationError("embedding for '" + token + "' is empty");
  if (dim_ == 0) dim_ = v.size();
  if (v.size() != dim_) throw ValidationError("embedding for '" + token + "' has the wrong dimension");
  if (!index_.emplace(token, vectors_.size()).second) throw ValidationError("duplicate embedding token '" + token + "'");
  vectors_.push_back(std::move(v));
}

EmbeddingTable EmbeddingTable::parse(const std::string& text) {
  EmbeddingTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> v;
    std::string field;
    while (ls >> field) {
      std::size_t used = 0;
      double x;
      try {
        x = std::stod(field, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != field.size() || !std::isfinite(x)) throw ParseError("bad embedding value '" + field + "'", lineno);
      v.push_back(x);
    }
    if (v.empty()) throw ParseError("embedding line has no values", lineno);
    if (t.dim_ != 0 && v.size() != t.dim_) {
      throw ParseError("expected " + std::to_string(t.dim_) + " values, found " + std::to_string(v.size()), lineno);
    }
    if (t.index_.count(token)) throw ParseError("duplicate token '" + token + "'", lineno);
    t.add(token, std::move(v));
  }
  if (t.size() == 0) throw ValidationError("embedding table is empty");
  return t;
}

EmbeddingTable EmbeddingTable::load(const std::string& path) { return parse(persist::read_file(path)); }

const std::vector<double>* EmbeddingTable::find(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? nullptr : &vectors_[it->second];
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ConfigError("correlation inputs differ in length");
  if (x.size() < 2) throw ConfigError("correlation needs at least two cases");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v[0]; });
  };
  // Checked directly: the mean of equal values can round away from them.
  if (constant(x) || constant(y)) return 0.0;
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = x[i] - mx, b = y[i] - my;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("cosine inputs differ in length");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

namespace {

std::vector<double> word_column(const data::Dataset& d, std::size_t j) {
  std::vector<double> col(d.n_cases());
  for (std::size_t i = 0; i < d.n_cases(); ++i) col[i] = d.value(i, j);
  return col;
}

UnitCharacterization rank_words(std::span<const double> act, const data::Dataset& d,
                                const std::vector<std::vector<double>>& columns, std::size_t unit, std::size_t k) {
  UnitCharacterization u;
  u.unit = unit;
  std::vector<WordScore> all;
  all.reserve(columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) all.push_back({j, d.names()[j], pearson(columns[j], act)});
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    [](const WordScore& a, const WordScore& b) {
                      return a.correlation != b.correlation ? a.correlation > b.correlation : a.index < b.index;
                    });
  all.resize(keep);
  u.top_words = std::move(all);
  return u;
}

}  // namespace

UnitCharacterization unit_top_words(std::span<const double> activations, const data::Dataset& d, std::size_t unit,
                                    std::size_t k) {
  if (activations.size() != d.n_cases()) throw ConfigError("one activation per case is required");
  if (d.n_cases() < 2) throw ConfigError("characterization needs at least two cases");
  std::vector<std::vector<double>> columns;
  for (std::size_t j = 0; j < d.n_vars(); ++j) columns.push_back(word_column(d, j));
  return rank_words(activations, d, columns, unit, k);
}

std::vector<UnitCharacterization> characterize(std::span<const double> activations, std::size_t units,
                                               const data::Dataset& d, std::size_t k) {
  const std::size_t n = d.n_cases();
  if (n < 2) throw ConfigError("characterization needs at least two cases");
  if (activations.size() != n * units) throw ConfigError("activation matrix does not match the dataset");
  std::vector<std::vector<double>> columns;
  for (std::size_t j = 0; j < d.n_vars(); ++j) columns.push_back(word_column(d, j));
  std::vector<UnitCharacterization> out(units);
  parallel_for(units, [&](std::size_t u) {
    std::vector<double> act(n);
    for (std::size_t i = 0; i < n; ++i) act[i] = activations[i * units + u];
    out[u] = rank_words(act, d, columns, u, k);
  });
  return out;
}

ScoreSummary interpretability_score(std::vector<UnitCharacterization>& units, const EmbeddingTable& emb) {
  if (units.empty()) throw ConfigError("no units to score");
  ScoreSummary s;
  double total = 0.0;
  for (auto& u : units) {
    std::vector<const std::vector<double>*> vecs;
    for (const auto& w : u.top_words)
      if (const auto* v = emb.find(w.word)) vecs.push_back(v);
    u.score.reset();
    if (vecs.size() < 2) continue;
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < vecs.size(); ++a)
      for (std::size_t b = a + 1; b < vecs.size(); ++b, ++pairs) sum += cosine(*vecs[a], *vecs[b]);
    u.score = sum / static_cast<double>(pairs);
    total += *u.score;
    ++s.scored_units;
  }
  if (s.scored_units == 0) throw ValidationError("no unit has two top words in the embedding table");
  s.model_score = total / static_cast<double>(s.scored_units);
  return s;
}

std::vector<std::size_t> ancestors(const skeleton::Hierarchy& h, std::size_t layer) {
  if (layer < 1 || layer >= h.n_levels()) throw ConfigError("partition layer out of range");
  std::vector<std::size_t> a(h.level_size(0));
  for (std::size_t v = 0; v < a.size(); ++v) a[v] = v;
  for (std::size_t l = 0; l < layer; ++l) {
    const auto p = h.parents(l);
    for (auto& x : a) x = p[x];
  }
  return a;
}

namespace {

// Evenly spread hues by the golden ratio; saturation and value alternate so
// neighbouring indices stay distinct.
std::array<unsigned char, 3> palette(std::size_t g) {
  const double hue = std::fmod(static_cast<double>(g) * 0.6180339887498949, 1.0) * 6.0;
  const double s = g % 2 ? 0.55 : 0.85, v = g % 3 == 2 ? 0.7 : 0.95;
  const int sector = static_cast<int>(hue);
  const double f = hue - sector;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r, gr, b;
  switch (sector % 6) {
    case 0: r = v, gr = t, b = p; break;
    case 1: r = q, gr = v, b = p; break;
    case 2: r = p, gr = v, b = t; break;
    case 3: r = p, gr = q, b = v; break;
    case 4: r = t, gr = p, b = v; break;
    default: r = v, gr = p, b = q; break;
  }
  auto byte = [](double x) { return static_cast<unsigned char>(std::lround(x * 255.0)); };
  return {byte(r), byte(gr), byte(b)};
}

}  // namespace

std::string partition_ppm(const skeleton::Hierarchy& h, std::size_t layer, std::size_t height, std::size_t width) {
  if (height * width != h.level_size(0) || height == 0) {
    throw ConfigError("image is " + std::to_string(height) + "x" + std::to_string(width) + " but there are " +
                      std::to_string(h.level_size(0)) + " variables");
  }
  const auto a = ancestors(h, layer);
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (std::size_t v = 0; v < a.size(); ++v) {
    const auto c = palette(a[v]);
    out.append(reinterpret_cast<const char*>(c.data()), 3);
  }
  return out;
}

void partition_image(const skeleton::Hierarchy& h, std::size_t layer, std::size_t height, std::size_t width,
                     const std::string& path) {
  persist::write_file_atomic(path, partition_ppm(h, layer, height, width));
}

}  // namespace tsenet::interpret
