// Drives the library through tsenet.h only.
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsenet/tsenet.h"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::string kFixtures = TSENET_FIXTURES;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "tsenet_capi_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string take(char* s) {
  std::string out = s ? s : "";
  tsenet_string_free(s);
  return out;
}

struct Rows {
  size_t *train = nullptr, *val = nullptr, *test = nullptr;
  size_t n_train = 0, n_val = 0, n_test = 0;
  ~Rows() {
    tsenet_indices_free(train);
    tsenet_indices_free(val);
    tsenet_indices_free(test);
  }
};

// Loads and binarizes the planted fixture.
tsenet_dataset* planted() {
  tsenet_dataset* raw = nullptr;
  REQUIRE(tsenet_dataset_load((kFixtures + "/planted.csv").c_str(), "dense-csv", nullptr, nullptr, "label", &raw) ==
          TSENET_OK);
  tsenet_dataset* bin = nullptr;
  size_t dropped = 99;
  REQUIRE(tsenet_dataset_binarize(raw, "positive", &bin, &dropped) == TSENET_OK);
  CHECK(dropped == 0);
  tsenet_dataset_free(raw);
  return bin;
}

}  // namespace

TEST_CASE("status reporting") {
  CHECK(std::strlen(tsenet_version()) > 0);
  CHECK(std::string(tsenet_status_name(TSENET_E_CONFIG)) == "configuration error");

  tsenet_dataset* d = nullptr;
  CHECK(tsenet_dataset_load(nullptr, "dense-csv", nullptr, nullptr, nullptr, &d) == TSENET_E_ARGUMENT);
  CHECK(std::string(tsenet_last_error()).find("NULL") != std::string::npos);
  CHECK(tsenet_dataset_load("/nonexistent/x.csv", "dense-csv", nullptr, nullptr, nullptr, &d) == TSENET_E_IO);
  CHECK(d == nullptr);
  CHECK(tsenet_dataset_load("/nonexistent/x.csv", "yaml", nullptr, nullptr, nullptr, &d) == TSENET_E_CONFIG);

  const auto bad = scratch("bad.csv");
  std::ofstream(bad) << "a,b,label\n1,zz,0\n";
  CHECK(tsenet_dataset_load(bad.c_str(), "dense-csv", nullptr, nullptr, "label", &d) == TSENET_E_PARSE);

  // A successful call clears the message.
  size_t units = 0, layers = 0;
  int conic = 0;
  CHECK(tsenet_fnn_grid_point(0, &units, &layers, &conic) == TSENET_OK);
  CHECK(std::string(tsenet_last_error()).empty());

  tsenet_dataset_free(nullptr);
  tsenet_net_free(nullptr);
}

TEST_CASE("grid enumeration") {
  REQUIRE(tsenet_fnn_grid_size() == 21);
  std::vector<std::string> seen;
  for (size_t i = 0; i < 21; ++i) {
    size_t u = 0, l = 0;
    int c = 0;
    REQUIRE(tsenet_fnn_grid_point(i, &u, &l, &c) == TSENET_OK);
    seen.push_back(std::to_string(u) + "x" + std::to_string(l) + (c ? "c" : "r"));
  }
  std::sort(seen.begin(), seen.end());
  CHECK(std::unique(seen.begin(), seen.end()) == seen.end());
  size_t u = 0, l = 0;
  int c = 0;
  CHECK(tsenet_fnn_grid_point(21, &u, &l, &c) == TSENET_E_ARGUMENT);

  tsenet_net* n = nullptr;
  CHECK(tsenet_net_build_fnn(300, 1, "rectangle", 10, 2, TSENET_HEAD_AUTO, 0, &n) == TSENET_E_CONFIG);
  CHECK(tsenet_net_build_fnn(512, 1, "triangle", 10, 2, TSENET_HEAD_AUTO, 0, &n) == TSENET_E_CONFIG);
  REQUIRE(tsenet_net_build_fnn(512, 2, "conic", 10, 3, TSENET_HEAD_AUTO, 0, &n) == TSENET_OK);
  size_t count = 0;
  tsenet_net_param_count(n, &count);
  // 10 -> 512 -> 256 -> 3
  CHECK(count == 10 * 512 + 512 + 512 * 256 + 256 + 256 * 3 + 3);
  tsenet_net_free(n);
}

TEST_CASE("pipeline through the C surface") {
  tsenet_dataset* d = planted();
  size_t n_cases = 0, n_vars = 0, n_classes = 0;
  REQUIRE(tsenet_dataset_shape(d, &n_cases, &n_vars, &n_classes) == TSENET_OK);
  CHECK(n_cases == 600);
  CHECK(n_vars == 12);
  CHECK(n_classes == 2);

  Rows r;
  REQUIRE(tsenet_split(n_cases, 0.8, 0.1, 0.1, 7, &r.train, &r.n_train, &r.val, &r.n_val, &r.test, &r.n_test) ==
          TSENET_OK);
  CHECK(r.n_train + r.n_val + r.n_test == n_cases);

  tsenet_dataset* train_part = nullptr;
  REQUIRE(tsenet_dataset_select(d, r.train, r.n_train, &train_part) == TSENET_OK);

  tsenet_skeleton_config sc;
  tsenet_skeleton_config_default(&sc);
  CHECK(sc.delta == 3.0);
  sc.top_threshold = 2;
  tsenet_hierarchy* h = nullptr;
  REQUIRE(tsenet_skeleton_build(train_part, &sc, &h) == TSENET_OK);
  size_t levels = 0, level1 = 0;
  tsenet_hierarchy_levels(h, &levels);
  tsenet_hierarchy_level_size(h, 1, &level1);
  CHECK(levels >= 2);
  CHECK(level1 == 4);
  CHECK(tsenet_hierarchy_level_size(h, levels, &level1) == TSENET_E_ARGUMENT);
  char* summary = nullptr;
  REQUIRE(tsenet_hierarchy_summary(h, &summary) == TSENET_OK);
  const auto js = json::parse(take(summary));
  CHECK(js["level_sizes"][0] == 12);

  const auto hpath = scratch("h.json");
  REQUIRE(tsenet_hierarchy_save(h, hpath.c_str()) == TSENET_OK);
  tsenet_hierarchy* h2 = nullptr;
  REQUIRE(tsenet_hierarchy_load(hpath.c_str(), &h2) == TSENET_OK);

  tsenet_expansion_config ec;
  tsenet_expansion_config_default(&ec);
  CHECK(ec.fan_in_fraction == 0.05);
  ec.fan_in_fraction = 0.0;
  tsenet_core* core = nullptr;
  CHECK(tsenet_expand(h2, &ec, &core) == TSENET_E_CONFIG);
  ec.fan_in_fraction = 0.5;
  REQUIRE(tsenet_expand(h2, &ec, &core) == TSENET_OK);
  size_t total = 0, added = 0, core_layers = 0;
  tsenet_core_edges(core, &total, &added);
  tsenet_core_layers(core, &core_layers);
  CHECK(total >= 12);
  CHECK(core_layers == levels);
  REQUIRE(tsenet_core_export(core, scratch("core.dot").c_str()) == TSENET_OK);

  tsenet_net_config nc;
  tsenet_net_config_default(&nc);
  CHECK(nc.top_width == 128);
  CHECK(nc.skip_width == 32);
  nc.top_width = 8;
  nc.skip_width = 4;
  tsenet_net* tse = nullptr;
  REQUIRE(tsenet_net_build_tse(core, &nc, n_classes, &tse) == TSENET_OK);
  nc.skip_paths = 0;
  tsenet_net* backbone = nullptr;
  REQUIRE(tsenet_net_build_tse(core, &nc, n_classes, &backbone) == TSENET_OK);
  size_t tse_params = 0, backbone_params = 0;
  tsenet_net_param_count(tse, &tse_params);
  tsenet_net_param_count(backbone, &backbone_params);
  CHECK(backbone_params < tse_params);

  tsenet_train_config tc;
  tsenet_train_config_default(&tc);
  CHECK(tc.dropout_rate == 0.5);
  tc.epochs = 3;
  tc.batch_size = 32;
  tsenet_net* trained = nullptr;
  char* history = nullptr;
  REQUIRE(tsenet_net_train(tse, d, r.train, r.n_train, r.val, r.n_val, &tc, &trained, &history) == TSENET_OK);
  const auto jh = json::parse(take(history));
  CHECK(jh["epochs"].size() >= 2);
  CHECK(jh["epochs"][0]["epoch"] == 0);

  tsenet_metrics m{};
  REQUIRE(tsenet_net_evaluate(trained, d, r.test, r.n_test, &m) == TSENET_OK);
  CHECK(m.has_auc == 1);
  CHECK(m.param_count == tse_params);
  CHECK(m.accuracy >= 0.0);
  CHECK(m.accuracy <= 1.0);

  const auto stem = scratch("tse");
  REQUIRE(tsenet_net_save(trained, stem.c_str()) == TSENET_OK);
  tsenet_net* loaded = nullptr;
  REQUIRE(tsenet_net_load(stem.c_str(), &loaded) == TSENET_OK);
  tsenet_metrics m2{};
  REQUIRE(tsenet_net_evaluate(loaded, d, r.test, r.n_test, &m2) == TSENET_OK);
  CHECK(m2.loss == m.loss);
  CHECK(m2.auc == m.auc);

  // Pruning a dense net down to the TSE count is exact.
  const size_t widths[] = {64, 32};
  tsenet_net* dense = nullptr;
  REQUIRE(tsenet_net_build_dense(n_vars, widths, 2, n_classes, TSENET_HEAD_AUTO, 3, &dense) == TSENET_OK);
  tsenet_net* pruned = nullptr;
  REQUIRE(tsenet_net_prune(dense, tse_params, &pruned) == TSENET_OK);
  size_t pruned_params = 0;
  tsenet_net_param_count(pruned, &pruned_params);
  CHECK(pruned_params == tse_params);
  tsenet_net* none = nullptr;
  CHECK(tsenet_net_prune(dense, 1, &none) == TSENET_E_CONFIG);

  char* report = nullptr;
  REQUIRE(tsenet_interpret(trained, d, r.test, r.n_test, (kFixtures + "/embeddings.txt").c_str(), 3, nullptr,
                           &report) == TSENET_OK);
  const auto jr = json::parse(take(report));
  CHECK(jr["units"].size() == 8);
  CHECK(jr["layer"] == "feature");
  CHECK(tsenet_interpret(trained, d, r.test, r.n_test, "/nonexistent/emb.txt", 3, nullptr, &report) == TSENET_E_IO);
  CHECK(tsenet_interpret(trained, d, r.test, r.n_test, (kFixtures + "/embeddings.txt").c_str(), 3, "hidden",
                         &report) == TSENET_E_CONFIG);

  const auto ppm = scratch("p.ppm");
  REQUIRE(tsenet_partition_image(h, 1, 3, 4, ppm.c_str()) == TSENET_OK);
  CHECK(fs::file_size(ppm) > 0);

  // Wrong input width is a configuration error, not a crash.
  tsenet_net* narrow = nullptr;
  REQUIRE(tsenet_net_build_dense(5, widths, 1, 2, TSENET_HEAD_AUTO, 0, &narrow) == TSENET_OK);
  CHECK(tsenet_net_evaluate(narrow, d, r.test, r.n_test, &m) == TSENET_E_CONFIG);
  const size_t out_of_range[] = {100000};
  CHECK(tsenet_net_evaluate(trained, d, out_of_range, 1, &m) == TSENET_E_ARGUMENT);

  // Skeletons need the binary view.
  tsenet_dataset* raw = nullptr;
  REQUIRE(tsenet_dataset_load((kFixtures + "/planted.csv").c_str(), "dense-csv", nullptr, nullptr, "label", &raw) ==
          TSENET_OK);
  tsenet_hierarchy* h3 = nullptr;
  CHECK(tsenet_skeleton_build(raw, &sc, &h3) == TSENET_E_CONFIG);

  for (auto* n : {tse, backbone, trained, loaded, dense, pruned, narrow}) tsenet_net_free(n);
  tsenet_core_free(core);
  tsenet_hierarchy_free(h);
  tsenet_hierarchy_free(h2);
  tsenet_dataset_free(train_part);
  tsenet_dataset_free(raw);
  tsenet_dataset_free(d);
}
