#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

// Pipeline configuration for tsenet-cli. A config is a flat JSON object of
// dotted keys; every key has a default whose JSON type fixes the key's type.
namespace tsenet::cli {

using nlohmann::json;

/// Bad config file, unknown key or mistyped value. Maps to exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every key with its default. Library defaults come from the C API.
json default_config();

/// Flattens nested objects to dotted keys, checks names and types against the
/// defaults and fills in missing keys. Path-valued keys that are relative are
/// resolved against `base_dir` when it is non-empty.
json normalize(const json& partial, const std::filesystem::path& base_dir = {});
json load_config(const std::filesystem::path& path);

/// Applies "key=value"; the value is parsed as the key's type.
void set_override(json& cfg, const std::string& assignment);

/// Keys that do not affect any artifact's content.
bool is_semantic(const std::string& key);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);
/// Hash of the semantic keys of a normalized config, as 16 hex digits.
std::string config_hash(const json& cfg);

inline constexpr int kManifestVersion = 1;

/// Manifest after recording `stage`. `previous` may be null. The stage entry
/// keeps the effective config, its hash, seeds and each artifact's FNV digest.
json record_stage(const json& previous, const std::string& stage, const json& cfg,
                  const std::vector<std::filesystem::path>& artifacts);
/// Throws ConfigError unless `m` is a manifest of a supported version.
void check_manifest(const json& m);

/// One row of the comparison table. `params_ratio` is relative to the FNN row.
struct ReportRow {
  std::string model;
  std::string metric_name;  ///< "AUC" or "accuracy"
  double metric = 0.0;
  std::size_t params = 0;
};
std::string format_report(const std::vector<ReportRow>& rows, const std::string& reference = "fnn");

/// Writes to a temporary sibling and renames over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

}  // namespace tsenet::cli
