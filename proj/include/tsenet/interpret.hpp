#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tsenet/data.hpp"
#include "tsenet/skeleton.hpp"

// Word-level characterization of hidden units and partition rendering.
namespace tsenet::interpret {

/// Token -> vector, every vector the same dimension.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  /// Throws ValidationError on duplicate tokens or inconsistent dimensions.
  void add(const std::string& token, std::vector<double> v);
  /// Text format: token then D reals per line; D is fixed by the first line.
  static EmbeddingTable load(const std::string& path);
  static EmbeddingTable parse(const std::string& text);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return index_.size(); }
  /// nullptr when absent.
  const std::vector<double>* find(const std::string& token) const;

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<double>> vectors_;
};

/// Sample correlation; 0 when either side has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);
double cosine(std::span<const double> a, std::span<const double> b);

struct WordScore {
  std::size_t index = 0;  ///< column of the dataset
  std::string word;
  double correlation = 0.0;
};

struct UnitCharacterization {
  std::size_t unit = 0;
  std::vector<WordScore> top_words;  ///< descending correlation, ties by index
  std::optional<double> score;       ///< set by interpretability_score
};

/// Top-k words by Pearson correlation between raw word columns and the unit.
UnitCharacterization unit_top_words(std::span<const double> activations, const data::Dataset& d, std::size_t unit,
                                    std::size_t k = 10);
/// `activations` is N x units, row-major.
std::vector<UnitCharacterization> characterize(std::span<const double> activations, std::size_t units,
                                               const data::Dataset& d, std::size_t k = 10);

struct ScoreSummary {
  double model_score = 0.0;  ///< mean over units with at least two embedded words
  std::size_t scored_units = 0;
};

/// Fills each unit's score with the mean pairwise cosine of its embedded top
/// words; words missing from `emb` are skipped.
ScoreSummary interpretability_score(std::vector<UnitCharacterization>& units, const EmbeddingTable& emb);

/// Ancestor at `layer` (1..top) of every observed variable.
std::vector<std::size_t> ancestors(const skeleton::Hierarchy& h, std::size_t layer);
/// Binary PPM (P6); pixel (r, c) is variable r * width + c, colored by its ancestor group.
std::string partition_ppm(const skeleton::Hierarchy& h, std::size_t layer, std::size_t height, std::size_t width);
void partition_image(const skeleton::Hierarchy& h, std::size_t layer, std::size_t height, std::size_t width,
                     const std::string& path);

}  // namespace tsenet::interpret
