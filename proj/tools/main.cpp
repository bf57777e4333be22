// tsenet-cli: runs the pipeline stage by stage inside one output directory.
// Links only the C interface of libtsenet.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cli_config.hpp"
#include "tsenet/tsenet.h"

namespace {

namespace fs = std::filesystem;
using tsenet::cli::json;

// A failed library call. Runtime failures exit 1, everything else 2.
struct ApiError : std::runtime_error {
  tsenet_status status;
  ApiError(tsenet_status s, const std::string& what) : std::runtime_error(what), status(s) {}
};

void ok(tsenet_status s) {
  if (s != TSENET_OK) throw ApiError(s, std::string(tsenet_status_name(s)) + ": " + tsenet_last_error());
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Dataset = std::unique_ptr<tsenet_dataset, Deleter<tsenet_dataset, tsenet_dataset_free>>;
using Hierarchy = std::unique_ptr<tsenet_hierarchy, Deleter<tsenet_hierarchy, tsenet_hierarchy_free>>;
using Core = std::unique_ptr<tsenet_core, Deleter<tsenet_core, tsenet_core_free>>;
using Net = std::unique_ptr<tsenet_net, Deleter<tsenet_net, tsenet_net_free>>;

std::string take(char* s) {
  std::string out = s ? s : "";
  tsenet_string_free(s);
  return out;
}

std::vector<size_t> take(size_t* p, size_t n) {
  std::vector<size_t> out(p, p + n);
  tsenet_indices_free(p);
  return out;
}

const char* or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

struct Prepared {
  Dataset data;  // binarized; networks read its values
  std::vector<size_t> train, validation, test;
  size_t n_vars = 0;
  size_t n_classes = 0;
};

struct Context {
  json cfg;
  fs::path out;

  std::string str(const char* k) const { return cfg[k].get<std::string>(); }
  std::uint64_t u(const char* k) const { return cfg[k].get<std::uint64_t>(); }
  double f(const char* k) const { return cfg[k].get<double>(); }
  std::uint64_t seed() const { return u("seed"); }
  fs::path at(const std::string& name) const { return out / name; }

  Prepared prepare() const {
    const std::string path = str("data.path");
    if (path.empty()) throw tsenet::cli::ConfigError("no dataset: set data.path or pass --data");
    Prepared p;
    tsenet_dataset* raw = nullptr;
    ok(tsenet_dataset_load(path.c_str(), str("data.format").c_str(), or_null(str("data.vocab")),
                           or_null(str("data.labels")), or_null(str("data.label_column")), &raw));
    Dataset d(raw);
    if (u("data.max_cases") > 0) {
      tsenet_dataset* s = nullptr;
      ok(tsenet_dataset_subsample(d.get(), u("data.max_cases"), seed(), &s));
      d.reset(s);
    }
    tsenet_dataset* b = nullptr;
    size_t dropped = 0;
    ok(tsenet_dataset_binarize(d.get(), str("data.binarize").c_str(), &b, &dropped));
    p.data.reset(b);
    size_t n_cases = 0;
    ok(tsenet_dataset_shape(p.data.get(), &n_cases, &p.n_vars, &p.n_classes));
    size_t *tr = nullptr, *va = nullptr, *te = nullptr, ntr = 0, nva = 0, nte = 0;
    ok(tsenet_split(n_cases, f("split.train"), f("split.validation"), f("split.test"), seed(), &tr, &ntr, &va, &nva,
                    &te, &nte));
    p.train = take(tr, ntr);
    p.validation = take(va, nva);
    p.test = take(te, nte);
    return p;
  }

  tsenet_head head() const {
    const std::string h = str("net.head");
    if (h == "auto") return TSENET_HEAD_AUTO;
    if (h == "softmax") return TSENET_HEAD_SOFTMAX;
    if (h == "sigmoid") return TSENET_HEAD_SIGMOID;
    throw tsenet::cli::ConfigError("net.head must be auto, softmax or sigmoid");
  }

  tsenet_train_config train_config() const {
    tsenet_train_config c;
    c.learning_rate = f("train.learning_rate");
    c.beta1 = f("train.beta1");
    c.beta2 = f("train.beta2");
    c.epsilon = f("train.epsilon");
    c.batch_size = u("train.batch_size");
    c.epochs = u("train.epochs");
    c.dropout_rate = f("train.dropout_rate");
    c.patience = u("train.patience");
    c.seed = seed();
    return c;
  }

  json manifest() const {
    const fs::path m = at("manifest.json");
    if (!fs::exists(m)) return json();
    json j;
    try {
      j = json::parse(tsenet::cli::read_text(m));
    } catch (const json::parse_error& e) {
      throw tsenet::cli::ConfigError("corrupt manifest: " + std::string(e.what()));
    }
    tsenet::cli::check_manifest(j);
    return j;
  }

  void record(const std::string& stage, const std::vector<fs::path>& artifacts) const {
    const json m = tsenet::cli::record_stage(manifest(), stage, cfg, artifacts);
    tsenet::cli::write_atomic(at("manifest.json"), m.dump(1) + "\n");
  }
};

Hierarchy load_hierarchy(const Context& c) {
  tsenet_hierarchy* h = nullptr;
  ok(tsenet_hierarchy_load(c.at("hierarchy.json").c_str(), &h));
  return Hierarchy(h);
}

Net load_net(const Context& c, const std::string& model) {
  tsenet_net* n = nullptr;
  ok(tsenet_net_load(c.at(model).c_str(), &n));
  return Net(n);
}

size_t params_of(const tsenet_net* n) {
  size_t p = 0;
  ok(tsenet_net_param_count(n, &p));
  return p;
}

// Trains `init` and writes `model`.{json,bin} plus its training history.
std::vector<fs::path> fit_and_save(const Context& c, const Prepared& p, const tsenet_net* init,
                                   const std::string& model, json* history_out = nullptr) {
  const auto tc = c.train_config();
  tsenet_net* trained = nullptr;
  char* history = nullptr;
  ok(tsenet_net_train(init, p.data.get(), p.train.data(), p.train.size(), p.validation.data(), p.validation.size(),
                      &tc, &trained, &history));
  Net n(trained);
  const json h = json::parse(take(history));
  ok(tsenet_net_save(n.get(), c.at(model).c_str()));
  tsenet::cli::write_atomic(c.at(model + "_history.json"), h.dump(1) + "\n");
  if (history_out) *history_out = h;
  return {c.at(model + ".json"), c.at(model + ".bin"), c.at(model + "_history.json")};
}

const char* const kModels[] = {"tse", "backbone", "fnn", "pruned"};

// Evaluates every trained model on the test split and writes the comparison.
fs::path write_report(const Context& c, const Prepared& p) {
  std::vector<tsenet::cli::ReportRow> rows;
  json j = json::array();
  for (const char* m : kModels) {
    if (!fs::exists(c.at(std::string(m) + ".json"))) continue;
    const Net n = load_net(c, m);
    tsenet_metrics r{};
    ok(tsenet_net_evaluate(n.get(), p.data.get(), p.test.data(), p.test.size(), &r));
    rows.push_back({m, r.has_auc ? "AUC" : "accuracy", r.has_auc ? r.auc : r.accuracy, r.param_count});
    j.push_back({{"model", m},
                 {"accuracy", r.accuracy},
                 {"auc", r.has_auc ? json(r.auc) : json(nullptr)},
                 {"loss", r.loss},
                 {"params", r.param_count}});
  }
  const std::string table = tsenet::cli::format_report(rows);
  tsenet::cli::write_atomic(c.at("report.txt"), table);
  tsenet::cli::write_atomic(c.at("report.json"), json{{"split", "test"}, {"models", j}}.dump(1) + "\n");
  std::cout << table;
  return c.at("report.json");
}

void cmd_skeleton(const Context& c) {
  const Prepared p = c.prepare();
  tsenet_dataset* tr = nullptr;
  ok(tsenet_dataset_select(p.data.get(), p.train.data(), p.train.size(), &tr));
  const Dataset train(tr);
  tsenet_skeleton_config sc;
  tsenet_skeleton_config_default(&sc);
  sc.delta = c.f("skeleton.delta");
  sc.top_threshold = c.u("skeleton.top_threshold");
  sc.max_group = c.u("skeleton.max_group");
  sc.structure_sample = c.u("skeleton.structure_sample");
  sc.refit_iter = static_cast<int>(c.u("skeleton.refit_iter"));
  sc.em_restarts = static_cast<int>(c.u("skeleton.em_restarts"));
  sc.em_max_iter = static_cast<int>(c.u("skeleton.em_max_iter"));
  sc.em_tol = c.f("skeleton.em_tol");
  sc.em_smoothing = c.f("skeleton.em_smoothing");
  sc.seed = c.seed();
  tsenet_hierarchy* h = nullptr;
  ok(tsenet_skeleton_build(train.get(), &sc, &h));
  const Hierarchy hier(h);
  ok(tsenet_hierarchy_save(hier.get(), c.at("hierarchy.json").c_str()));
  char* summary = nullptr;
  ok(tsenet_hierarchy_summary(hier.get(), &summary));
  const std::string s = take(summary);
  tsenet::cli::write_atomic(c.at("skeleton_summary.json"), s);
  std::cout << "level sizes: " << json::parse(s)["level_sizes"].dump() << "\n";
  c.record("skeleton", {c.at("hierarchy.json"), c.at("skeleton_summary.json")});
}

void cmd_expand(const Context& c) {
  const Hierarchy h = load_hierarchy(c);
  tsenet_expansion_config ec{c.f("expansion.fan_in_fraction"), c.f("expansion.cmi_floor")};
  tsenet_core* core = nullptr;
  ok(tsenet_expand(h.get(), &ec, &core));
  const Core g(core);
  ok(tsenet_core_save(g.get(), c.at("core.json").c_str()));
  ok(tsenet_core_export(g.get(), c.at("core.dot").c_str()));
  size_t total = 0, added = 0;
  ok(tsenet_core_edges(g.get(), &total, &added));
  std::cout << "core edges: " << total << " (" << added << " from expansion)\n";
  c.record("expand", {c.at("core.json"), c.at("core.dot")});
}

Net build_tse(const Context& c, const Prepared& p, bool skip_paths) {
  tsenet_core* core = nullptr;
  ok(tsenet_core_load(c.at("core.json").c_str(), &core));
  const Core g(core);
  tsenet_net_config nc{c.u("net.top_width"), c.u("net.skip_width"), skip_paths ? 1 : 0, c.head(), c.seed()};
  tsenet_net* n = nullptr;
  ok(tsenet_net_build_tse(g.get(), &nc, p.n_classes, &n));
  return Net(n);
}

double selection_of(const json& history) {
  const json& v = history["epochs"][history["best_epoch"].get<size_t>()]["validation"];
  return v["auc"].is_null() ? v["accuracy"].get<double>() : v["auc"].get<double>();
}

void cmd_train(const Context& c, const std::string& variant) {
  const Prepared p = c.prepare();
  std::vector<fs::path> artifacts;
  if (variant == "tse" || variant == "backbone") {
    const Net init = build_tse(c, p, variant == "tse");
    std::cout << variant << ": " << params_of(init.get()) << " parameters\n";
    artifacts = fit_and_save(c, p, init.get(), variant);
  } else if (variant == "fnn-grid") {
    json grid = json::array();
    size_t best = 0;
    double best_score = -1.0;
    size_t best_params = 0;
    const size_t n_points = tsenet_fnn_grid_size();
    for (size_t i = 0; i < n_points; ++i) {
      size_t units = 0, layers = 0;
      int conic = 0;
      ok(tsenet_fnn_grid_point(i, &units, &layers, &conic));
      tsenet_net* raw = nullptr;
      ok(tsenet_net_build_fnn(units, layers, conic ? "conic" : "rectangle", p.n_vars, p.n_classes, c.head(),
                              c.seed(), &raw));
      const Net init(raw);
      const std::string name = "grid_" + std::to_string(i);
      json history;
      fit_and_save(c, p, init.get(), name, &history);
      const double score = selection_of(history);
      const size_t params = params_of(init.get());
      std::cout << "grid " << i << " " << units << "x" << layers << (conic ? " conic" : " rectangle")
                << ": validation " << score << ", " << params << " parameters\n";
      grid.push_back({{"index", i},
                      {"units", units},
                      {"layers", layers},
                      {"shape", conic ? "conic" : "rectangle"},
                      {"validation", score},
                      {"params", params}});
      // Ties go to the smaller net, then to the earlier point.
      if (score > best_score || (score == best_score && params < best_params)) {
        best = i;
        best_score = score;
        best_params = params;
      }
    }
    // Keep only the winner under the canonical name.
    for (size_t i = 0; i < n_points; ++i) {
      const std::string name = "grid_" + std::to_string(i);
      if (i == best) {
        for (const char* ext : {".json", ".bin", "_history.json"})
          fs::rename(c.at(name + ext), c.at(std::string("fnn") + ext));
      } else {
        for (const char* ext : {".json", ".bin", "_history.json"}) fs::remove(c.at(name + ext));
      }
    }
    tsenet::cli::write_atomic(c.at("fnn_grid.json"), json{{"best", best}, {"points", grid}}.dump(1) + "\n");
    artifacts = {c.at("fnn.json"), c.at("fnn.bin"), c.at("fnn_history.json"), c.at("fnn_grid.json")};
  } else {  // prune
    const Net fnn = load_net(c, "fnn");
    const Net tse = load_net(c, "tse");
    tsenet_net* raw = nullptr;
    ok(tsenet_net_prune(fnn.get(), params_of(tse.get()), &raw));
    const Net pruned(raw);
    std::cout << "pruned fnn to " << params_of(pruned.get()) << " parameters\n";
    artifacts = fit_and_save(c, p, pruned.get(), "pruned");
  }
  // The report spans every model present, so it is recorded only by `eval`.
  write_report(c, p);
  c.record("train-" + variant, artifacts);
}

void cmd_eval(const Context& c) {
  const Prepared p = c.prepare();
  c.record("eval", {write_report(c, p)});
}

void cmd_interpret(const Context& c, const std::string& model) {
  const std::string emb = c.str("interpret.embeddings");
  if (emb.empty()) throw tsenet::cli::ConfigError("no embedding file: set interpret.embeddings");
  if (!fs::exists(emb)) throw tsenet::cli::ConfigError("embedding file '" + emb + "' does not exist");
  const Prepared p = c.prepare();
  const Net n = load_net(c, model);
  std::string layer = c.str("interpret.layer");
  // Plain FNNs have no feature layer; their top hidden layer plays its part.
  if (layer == "feature" && (model == "fnn" || model == "pruned")) layer = "hidden";
  char* report = nullptr;
  ok(tsenet_interpret(n.get(), p.data.get(), p.test.data(), p.test.size(), emb.c_str(), c.u("interpret.k"),
                      layer.c_str(), &report));
  const json r = json::parse(take(report));
  const fs::path path = c.at("interpret_" + model + ".json");
  tsenet::cli::write_atomic(path, r.dump(1) + "\n");
  std::cout << model << " interpretability: " << r["model_score"].get<double>() << " over "
            << r["scored_units"].get<size_t>() << " units\n";
  c.record("interpret-" + model, {path});
}

void cmd_viz(const Context& c, long layer) {
  const Hierarchy h = load_hierarchy(c);
  size_t levels = 0, observed = 0;
  ok(tsenet_hierarchy_levels(h.get(), &levels));
  ok(tsenet_hierarchy_level_size(h.get(), 0, &observed));
  const size_t height = c.u("viz.height");
  size_t width = c.u("viz.width");
  if (height == 0) throw tsenet::cli::ConfigError("viz.height must be positive");
  if (width == 0) {
    if (observed % height != 0)
      throw tsenet::cli::ConfigError("viz.height does not divide the " + std::to_string(observed) + " observed variables");
    width = observed / height;
  }
  std::vector<fs::path> images;
  for (size_t l = 1; l < levels; ++l) {
    if (layer >= 0 && static_cast<size_t>(layer) != l) continue;
    const fs::path path = c.at("partition_L" + std::to_string(l) + ".ppm");
    ok(tsenet_partition_image(h.get(), l, height, width, path.c_str()));
    images.push_back(path);
    std::cout << "wrote " << path.string() << "\n";
  }
  if (images.empty()) throw tsenet::cli::ConfigError("no latent layer " + std::to_string(layer));
  c.record("viz", images);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TSE-Net: sparse feedforward structure from a hierarchical latent tree"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, data_path, out_dir;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool quiet = false, verbose = false;
  app.add_option("--config", config_path, "JSON config (flat dotted keys or nested objects)");
  auto* seed_opt = app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--data", data_path, "dataset path, overriding data.path");
  app.add_option("--set", overrides, "override a config key: key=value")->take_all();
  app.add_flag("-q,--quiet", quiet, "log errors only");
  app.add_flag("-v,--verbose", verbose, "debug logging");

  auto* skeleton = app.add_subcommand("skeleton", "learn the latent tree skeleton");
  auto* expand = app.add_subcommand("expand", "expand the skeleton into the PGM core");
  auto* train = app.add_subcommand("train", "train a model");
  std::string variant;
  train->add_option("variant", variant, "tse | backbone | fnn-grid | prune")
      ->required()
      ->check(CLI::IsMember({"tse", "backbone", "fnn-grid", "prune"}));
  auto* eval = app.add_subcommand("eval", "evaluate trained models on the test split");
  auto* interpret = app.add_subcommand("interpret", "score hidden units against word embeddings");
  std::string model = "tse";
  interpret->add_option("--model", model, "tse | backbone | fnn | pruned")
      ->check(CLI::IsMember({"tse", "backbone", "fnn", "pruned"}));
  auto* viz = app.add_subcommand("viz", "render layer partitions as images");
  long layer = -1;
  viz->add_option("--layer", layer, "latent layer (default: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  tsenet_set_log_level(quiet ? 4 : verbose ? 1 : 2);
  try {
    Context c;
    c.cfg = config_path.empty() ? tsenet::cli::default_config() : tsenet::cli::load_config(config_path);
    for (const auto& o : overrides) tsenet::cli::set_override(c.cfg, o);
    if (*seed_opt) c.cfg["seed"] = seed;
    if (!out_dir.empty()) c.cfg["out"] = out_dir;
    if (!data_path.empty()) c.cfg["data.path"] = data_path;
    c.out = c.cfg["out"].get<std::string>();
    fs::create_directories(c.out);

    if (skeleton->parsed()) cmd_skeleton(c);
    if (expand->parsed()) cmd_expand(c);
    if (train->parsed()) cmd_train(c, variant);
    if (eval->parsed()) cmd_eval(c);
    if (interpret->parsed()) cmd_interpret(c, model);
    if (viz->parsed()) cmd_viz(c, layer);
  } catch (const ApiError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.status == TSENET_E_RUNTIME ? 1 : 2;
  } catch (const tsenet::cli::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
