#include "tsenet/persist.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "tsenet/error.hpp"

namespace tsenet::persist {

using nlohmann::json;

namespace {

constexpr int kVersion = 1;

json bits_to_json(const BitMatrix& b) {
  json cols = json::array();
  for (std::size_t c = 0; c < b.cols(); ++c) cols.push_back(b.column_hex(c));
  return {{"rows", b.rows()}, {"cols", b.cols()}, {"columns", cols}};
}

BitMatrix bits_from_json(const json& j) {
  BitMatrix b(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  const auto& cols = j.at("columns");
  if (cols.size() != b.cols()) throw ValidationError("bit matrix column count mismatch");
  for (std::size_t c = 0; c < b.cols(); ++c) b.set_column_hex(c, cols[c].get<std::string>());
  return b;
}

json model_to_json(const ltm::TreeModel& m) {
  json nodes = json::array();
  json cpts = json::array();
  for (std::size_t v = 0; v < m.size(); ++v) {
    const auto& n = m.node(v);
    nodes.push_back({{"label", n.label}, {"observed", n.observed}, {"column", n.column}, {"parent", n.parent}});
    const auto& t = m.cpt(v);
    cpts.push_back({{t[0][0], t[0][1]}, {t[1][0], t[1][1]}});
  }
  return {{"nodes", nodes}, {"cpts", cpts}};
}

ltm::TreeModel model_from_json(const json& j) {
  std::vector<ltm::Node> nodes;
  for (const auto& n : j.at("nodes")) {
    nodes.push_back({n.at("label").get<std::string>(), n.at("observed").get<bool>(), n.at("column").get<int>(),
                     n.at("parent").get<int>()});
  }
  ltm::TreeModel m(std::move(nodes));
  const auto& cpts = j.at("cpts");
  if (cpts.size() != m.size()) throw ValidationError("one CPT per node is required");
  for (std::size_t v = 0; v < m.size(); ++v) {
    ltm::Cpt t;
    for (int s = 0; s < 2; ++s)
      for (int x = 0; x < 2; ++x) t[s][x] = cpts[v].at(s).at(x).get<double>();
    if (static_cast<int>(v) == m.root()) {
      m.set_prior(t[0]);
      if (t[1] != t[0]) throw ValidationError("root CPT rows must both hold the prior");
    } else {
      m.set_cpt(v, t);
    }
  }
  return m;
}

json parse(const std::string& text, const char* format) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), 0);
  }
  if (!j.is_object() || j.value("format", "") != format) {
    throw ValidationError(std::string("not a ") + format + " document");
  }
  if (j.value("version", 0) != kVersion) throw ValidationError("unsupported artifact version");
  return j;
}

template <class F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed artifact: ") + e.what());
  }
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hierarchy_to_json(const skeleton::Hierarchy& h) {
  json layers = json::array();
  for (const auto& l : h.layers) {
    json gaps = json::array();
    for (const auto& g : l.ud_gaps) gaps.push_back(g ? json(*g) : json(nullptr));
    json edges = json::array();
    for (const auto& [a, b] : l.chow_liu_edges) edges.push_back({a, b});
    layers.push_back({{"level", l.level},
                      {"names", l.names},
                      {"groups", l.groups},
                      {"ud_gaps", gaps},
                      {"chow_liu_edges", edges},
                      {"links_in_skeleton", l.links_in_skeleton},
                      {"model", model_to_json(l.model)},
                      {"completed", bits_to_json(l.completed)}});
  }
  json j = {{"format", "tsenet-hierarchy"},
            {"version", kVersion},
            {"observed_names", h.observed_names},
            {"observed", bits_to_json(h.observed)},
            {"layers", layers}};
  return j.dump(1) + "\n";
}

skeleton::Hierarchy hierarchy_from_json(const std::string& text) {
  const json j = parse(text, "tsenet-hierarchy");
  return guarded([&] {
    skeleton::Hierarchy h;
    h.observed_names = j.at("observed_names").get<std::vector<std::string>>();
    h.observed = bits_from_json(j.at("observed"));
    if (h.observed_names.size() != h.observed.cols()) throw ValidationError("observed names do not match data");
    std::size_t below = h.observed.cols();
    for (const auto& lj : j.at("layers")) {
      skeleton::Layer l;
      l.level = lj.at("level").get<std::size_t>();
      l.names = lj.at("names").get<std::vector<std::string>>();
      l.groups = lj.at("groups").get<std::vector<skeleton::Group>>();
      for (const auto& g : lj.at("ud_gaps")) {
        l.ud_gaps.push_back(g.is_null() ? std::nullopt : std::optional<double>(g.get<double>()));
      }
      for (const auto& e : lj.at("chow_liu_edges")) {
        l.chow_liu_edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
      }
      l.links_in_skeleton = lj.at("links_in_skeleton").get<bool>();
      l.model = model_from_json(lj.at("model"));
      l.completed = bits_from_json(lj.at("completed"));
      if (l.level != h.layers.size() + 1) throw ValidationError("layer levels must be consecutive");
      if (l.names.size() != l.groups.size() || l.ud_gaps.size() != l.groups.size() ||
          l.completed.cols() != l.groups.size() || l.completed.rows() != h.observed.rows()) {
        throw ValidationError("layer fields disagree in size");
      }
      std::vector<int> seen(below, 0);
      for (const auto& g : l.groups)
        for (std::size_t m : g) {
          if (m >= below || seen[m]++) throw ValidationError("layer groups do not partition the level below");
        }
      if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
        throw ValidationError("layer groups do not partition the level below");
      }
      below = l.groups.size();
      h.layers.push_back(std::move(l));
    }
    if (h.layers.empty()) throw ValidationError("hierarchy has no layers");
    return h;
  });
}

void save_hierarchy(const skeleton::Hierarchy& h, const std::string& path) {
  write_file_atomic(path, hierarchy_to_json(h));
}

skeleton::Hierarchy load_hierarchy(const std::string& path) { return hierarchy_from_json(read_file(path)); }

std::string core_to_json(const expansion::PgmCore& core) {
  core.validate();
  json layers = json::array();
  for (std::size_t l = 0; l < core.adjacency.size(); ++l) {
    json units = json::array();
    for (std::size_t u = 0; u < core.adjacency[l].size(); ++u) {
      std::string kinds;
      for (auto o : core.origins[l][u]) kinds += o == expansion::EdgeOrigin::skeleton ? 's' : 'e';
      units.push_back({{"inputs", core.adjacency[l][u]}, {"origins", kinds}});
    }
    layers.push_back({{"units", units}});
  }
  json j = {{"format", "tsenet-core"},
            {"version", kVersion},
            {"layer_sizes", core.layer_sizes},
            {"names", core.names},
            {"layers", layers}};
  return j.dump(1) + "\n";
}

expansion::PgmCore core_from_json(const std::string& text) {
  const json j = parse(text, "tsenet-core");
  return guarded([&] {
    expansion::PgmCore core;
    core.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    core.names = j.at("names").get<std::vector<std::vector<std::string>>>();
    for (const auto& lj : j.at("layers")) {
      std::vector<std::vector<std::size_t>> rows;
      std::vector<std::vector<expansion::EdgeOrigin>> kinds;
      for (const auto& uj : lj.at("units")) {
        rows.push_back(uj.at("inputs").get<std::vector<std::size_t>>());
        std::vector<expansion::EdgeOrigin> k;
        for (char ch : uj.at("origins").get<std::string>()) {
          if (ch != 's' && ch != 'e') throw ValidationError("edge origin must be 's' or 'e'");
          k.push_back(ch == 's' ? expansion::EdgeOrigin::skeleton : expansion::EdgeOrigin::expansion);
        }
        kinds.push_back(std::move(k));
      }
      core.adjacency.push_back(std::move(rows));
      core.origins.push_back(std::move(kinds));
    }
    core.validate();
    return core;
  });
}

void save_core(const expansion::PgmCore& core, const std::string& path) {
  write_file_atomic(path, core_to_json(core));
}

expansion::PgmCore load_core(const std::string& path) { return core_from_json(read_file(path)); }

namespace {

void put_f32(std::string& out, float v) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xffu));
}

float get_f32(const std::string& in, std::size_t& at) {
  if (at + 4 > in.size()) throw ValidationError("weight blob is truncated");
  std::uint32_t u = 0;
  for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
  at += 4;
  return std::bit_cast<float>(u);
}

}  // namespace

NetworkFiles network_to_files(const nn::Network<float>& net) {
  net.validate();
  NetworkFiles f;
  json layers = json::array();
  for (const auto& l : net.layers) {
    json lj = {{"in", l.in_dim()},
               {"out", l.out_dim()},
               {"activation", nn::to_string(l.activation)},
               {"role", nn::to_string(l.role)},
               {"tag", l.tag},
               {"sources", l.sources}};
    if ((l.mask.array() != 0.0f).all()) {
      lj["mask"] = "dense";
    } else {
      json rows = json::array();
      for (Eigen::Index r = 0; r < l.mask.rows(); ++r) {
        std::vector<Eigen::Index> cols;
        for (Eigen::Index c = 0; c < l.mask.cols(); ++c)
          if (l.mask(r, c) != 0.0f) cols.push_back(c);
        rows.push_back(cols);
      }
      lj["mask"] = rows;
    }
    for (Eigen::Index i = 0; i < l.mask.size(); ++i)
      if (l.mask.data()[i] != 0.0f) put_f32(f.blob, l.weights.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) put_f32(f.blob, l.bias(i));
    layers.push_back(std::move(lj));
  }
  json j = {{"format", "tsenet-weights"},
            {"version", kVersion},
            {"input_dim", net.input_dim},
            {"n_classes", net.n_classes},
            {"head", nn::to_string(net.head)},
            {"param_count", net.param_count()},
            {"blob_bytes", f.blob.size()},
            {"layers", layers}};
  f.header = j.dump(1) + "\n";
  return f;
}

nn::Network<float> network_from_files(const std::string& header, const std::string& blob) {
  const json j = parse(header, "tsenet-weights");
  return guarded([&] {
    nn::Network<float> net;
    net.input_dim = j.at("input_dim").get<std::size_t>();
    net.n_classes = j.at("n_classes").get<std::size_t>();
    net.head = nn::parse_head(j.at("head").get<std::string>());
    if (j.at("blob_bytes").get<std::size_t>() != blob.size()) throw ValidationError("weight blob size mismatch");
    std::size_t at = 0;
    for (const auto& lj : j.at("layers")) {
      nn::MaskedLayer<float> l;
      const auto in = lj.at("in").get<Eigen::Index>();
      const auto out = lj.at("out").get<Eigen::Index>();
      l.activation = nn::parse_activation(lj.at("activation").get<std::string>());
      l.role = nn::parse_role(lj.at("role").get<std::string>());
      l.tag = lj.at("tag").get<std::size_t>();
      l.sources = lj.at("sources").get<std::vector<std::size_t>>();
      l.weights = nn::Matrix<float>::Zero(out, in);
      l.bias = nn::Vector<float>::Zero(out);
      const auto& mj = lj.at("mask");
      if (mj.is_string()) {
        if (mj.get<std::string>() != "dense") throw ValidationError("unknown mask kind");
        l.mask = nn::Matrix<float>::Ones(out, in);
      } else {
        if (static_cast<Eigen::Index>(mj.size()) != out) throw ValidationError("mask row count mismatch");
        l.mask = nn::Matrix<float>::Zero(out, in);
        for (Eigen::Index r = 0; r < out; ++r)
          for (const auto& c : mj[static_cast<std::size_t>(r)]) {
            const auto col = c.get<Eigen::Index>();
            if (col < 0 || col >= in) throw ValidationError("mask index out of range");
            l.mask(r, col) = 1.0f;
          }
      }
      for (Eigen::Index i = 0; i < l.mask.size(); ++i)
        if (l.mask.data()[i] != 0.0f) l.weights.data()[i] = get_f32(blob, at);
      for (Eigen::Index i = 0; i < out; ++i) l.bias(i) = get_f32(blob, at);
      net.layers.push_back(std::move(l));
    }
    if (at != blob.size()) throw ValidationError("weight blob has trailing bytes");
    net.validate();
    if (net.param_count() != j.at("param_count").get<std::size_t>()) throw ValidationError("parameter count mismatch");
    return net;
  });
}

void save_network(const nn::Network<float>& net, const std::string& stem) {
  const NetworkFiles f = network_to_files(net);
  write_file_atomic(stem + ".bin", f.blob);
  write_file_atomic(stem + ".json", f.header);
}

nn::Network<float> load_network(const std::string& stem) {
  return network_from_files(read_file(stem + ".json"), read_file(stem + ".bin"));
}

}  // namespace tsenet::persist
