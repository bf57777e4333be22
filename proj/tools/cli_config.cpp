#include "cli_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "tsenet/tsenet.h"

namespace tsenet::cli {

namespace fs = std::filesystem;

namespace {

const char* const kPathKeys[] = {"data.path", "data.vocab", "data.labels", "interpret.embeddings"};

bool is_path_key(const std::string& key) {
  for (const char* k : kPathKeys)
    if (key == k) return true;
  return false;
}

void flatten(const json& j, const std::string& prefix, json& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object())
      flatten(v, key, out);
    else
      out[key] = v;
  }
}

// `v` converted to the type of `like`, or ConfigError.
json coerce(const std::string& key, const json& v, const json& like) {
  const auto bad = [&] { return ConfigError("config key '" + key + "' expects " + like.type_name() + ", got " + v.dump()); };
  if (like.is_string()) {
    if (!v.is_string()) throw bad();
    return v;
  }
  if (like.is_boolean()) {
    if (!v.is_boolean()) throw bad();
    return v;
  }
  if (like.is_number_unsigned()) {
    if (!v.is_number_unsigned()) throw bad();
    return v;
  }
  if (like.is_number_float()) {
    if (!v.is_number()) throw bad();
    return json(v.get<double>());
  }
  throw bad();
}

}  // namespace

json default_config() {
  tsenet_skeleton_config sk;
  tsenet_skeleton_config_default(&sk);
  tsenet_expansion_config ex;
  tsenet_expansion_config_default(&ex);
  tsenet_net_config net;
  tsenet_net_config_default(&net);
  tsenet_train_config tr;
  tsenet_train_config_default(&tr);

  json c = json::object();
  c["seed"] = std::uint64_t{0};
  c["out"] = "tsenet-out";

  c["data.path"] = "";
  c["data.format"] = "dense-csv";
  c["data.vocab"] = "";
  c["data.labels"] = "";
  c["data.label_column"] = "label";
  c["data.max_cases"] = std::uint64_t{0};  // 0 keeps every row
  c["data.binarize"] = "positive";
  c["split.train"] = 0.8;
  c["split.validation"] = 0.1;
  c["split.test"] = 0.1;

  c["skeleton.delta"] = sk.delta;
  c["skeleton.top_threshold"] = std::uint64_t{sk.top_threshold};
  c["skeleton.max_group"] = std::uint64_t{sk.max_group};
  c["skeleton.structure_sample"] = std::uint64_t{sk.structure_sample};
  c["skeleton.refit_iter"] = static_cast<std::uint64_t>(sk.refit_iter);
  c["skeleton.em_restarts"] = static_cast<std::uint64_t>(sk.em_restarts);
  c["skeleton.em_max_iter"] = static_cast<std::uint64_t>(sk.em_max_iter);
  c["skeleton.em_tol"] = sk.em_tol;
  c["skeleton.em_smoothing"] = sk.em_smoothing;

  c["expansion.fan_in_fraction"] = ex.fan_in_fraction;
  c["expansion.cmi_floor"] = ex.cmi_floor;

  c["net.top_width"] = std::uint64_t{net.top_width};
  c["net.skip_width"] = std::uint64_t{net.skip_width};
  c["net.head"] = "auto";

  c["train.learning_rate"] = tr.learning_rate;
  c["train.beta1"] = tr.beta1;
  c["train.beta2"] = tr.beta2;
  c["train.epsilon"] = tr.epsilon;
  c["train.batch_size"] = std::uint64_t{tr.batch_size};
  c["train.epochs"] = std::uint64_t{tr.epochs};
  c["train.dropout_rate"] = tr.dropout_rate;
  c["train.patience"] = std::uint64_t{tr.patience};

  c["interpret.embeddings"] = "";
  c["interpret.k"] = std::uint64_t{10};
  c["interpret.layer"] = "feature";

  c["viz.height"] = std::uint64_t{1};
  c["viz.width"] = std::uint64_t{0};  // 0: observed count / height
  return c;
}

json normalize(const json& partial, const fs::path& base_dir) {
  if (!partial.is_object()) throw ConfigError("config must be a JSON object");
  json flat = json::object();
  flatten(partial, "", flat);
  json cfg = default_config();
  for (const auto& [key, v] : flat.items()) {
    if (!cfg.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    cfg[key] = coerce(key, v, cfg[key]);
    if (is_path_key(key) && !base_dir.empty()) {
      const fs::path p = cfg[key].get<std::string>();
      if (!p.empty() && p.is_relative()) cfg[key] = (base_dir / p).lexically_normal().string();
    }
  }
  return cfg;
}

json load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return normalize(j, path.parent_path());
}

void set_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  if (!cfg.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  const json& like = cfg[key];
  const auto bad = [&] { return ConfigError("config key '" + key + "' expects " + like.type_name() + ", got '" + text + "'"); };
  if (like.is_string()) {
    cfg[key] = text;
  } else if (like.is_boolean()) {
    if (text == "true" || text == "1")
      cfg[key] = true;
    else if (text == "false" || text == "0")
      cfg[key] = false;
    else
      throw bad();
  } else if (like.is_number_unsigned()) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size() || text.empty()) throw bad();
    cfg[key] = v;
  } else {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size() || text.empty()) throw bad();
    cfg[key] = v;
  }
}

bool is_semantic(const std::string& key) { return key != "out"; }

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string config_hash(const json& cfg) {
  // json objects iterate in key order, so the dump is canonical.
  json semantic = json::object();
  for (const auto& [k, v] : cfg.items())
    if (is_semantic(k)) semantic[k] = v;
  return hex64(fnv1a(semantic.dump()));
}

json record_stage(const json& previous, const std::string& stage, const json& cfg,
                  const std::vector<fs::path>& artifacts) {
  json m = previous.is_object() ? previous : json::object();
  m["format"] = "tsenet-manifest";
  m["version"] = kManifestVersion;
  m["stage"] = stage;
  json files = json::object();
  for (const auto& a : artifacts) files[a.filename().string()] = hex64(fnv1a(read_text(a)));
  const auto seed = cfg["seed"].get<std::uint64_t>();
  m["stages"][stage] = {{"config_hash", config_hash(cfg)},
                        {"config", cfg},
                        {"seeds", {{"split", seed}, {"skeleton", seed}, {"init", seed}, {"train", seed}}},
                        {"artifacts", files}};
  return m;
}

void check_manifest(const json& m) {
  if (!m.is_object() || m.value("format", "") != "tsenet-manifest")
    throw ConfigError("not a tsenet manifest");
  if (!m.contains("version") || !m["version"].is_number_integer() || m["version"].get<int>() != kManifestVersion)
    throw ConfigError("unsupported manifest version " + (m.contains("version") ? m["version"].dump() : "(none)"));
}

std::string format_report(const std::vector<ReportRow>& rows, const std::string& reference) {
  const ReportRow* ref = nullptr;
  for (const auto& r : rows)
    if (r.model == reference) ref = &r;
  std::ostringstream os;
  os << std::left << std::setw(10) << "model" << std::setw(10) << "metric" << std::right << std::setw(10) << "value"
     << std::setw(12) << "params" << std::setw(10) << "ratio" << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(10) << r.model << std::setw(10) << r.metric_name << std::right << std::fixed
       << std::setprecision(4) << std::setw(10) << r.metric << std::setw(12) << r.params;
    if (ref && ref->params > 0) {
      os << std::setw(9) << std::setprecision(2) << 100.0 * static_cast<double>(r.params) / ref->params << "%";
    } else {
      os << std::setw(10) << "-";
    }
    os << "\n";
  }
  return os.str();
}

void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out.flush()) throw std::runtime_error("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace tsenet::cli
