#pragma once

#include <string>

#include "tsenet/expansion.hpp"
#include "tsenet/nn.hpp"
#include "tsenet/skeleton.hpp"

// On-disk artifacts. JSON documents carry a "format" tag and a version;
// doubles round-trip exactly.
namespace tsenet::persist {

/// Writes to a temporary sibling and renames over `path`.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

std::string hierarchy_to_json(const skeleton::Hierarchy& h);
skeleton::Hierarchy hierarchy_from_json(const std::string& text);
void save_hierarchy(const skeleton::Hierarchy& h, const std::string& path);
skeleton::Hierarchy load_hierarchy(const std::string& path);

std::string core_to_json(const expansion::PgmCore& core);
expansion::PgmCore core_from_json(const std::string& text);
void save_core(const expansion::PgmCore& core, const std::string& path);
expansion::PgmCore load_core(const std::string& path);

/// Weights as a JSON header (shapes, masks as per-row index lists, or
/// "dense") plus a blob of little-endian float32: for each layer the
/// masked-in weights in row-major order, then the biases.
struct NetworkFiles {
  std::string header;
  std::string blob;
};
NetworkFiles network_to_files(const nn::Network<float>& net);
nn::Network<float> network_from_files(const std::string& header, const std::string& blob);
/// Writes `stem`.json and `stem`.bin.
void save_network(const nn::Network<float>& net, const std::string& stem);
nn::Network<float> load_network(const std::string& stem);

}  // namespace tsenet::persist
