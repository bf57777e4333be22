#include "tsenet/tsenet.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "tsenet/data.hpp"
#include "tsenet/error.hpp"
#include "tsenet/expansion.hpp"
#include "tsenet/interpret.hpp"
#include "tsenet/nn.hpp"
#include "tsenet/persist.hpp"
#include "tsenet/skeleton.hpp"

struct tsenet_dataset {
  tsenet::data::Dataset d;
};
struct tsenet_hierarchy {
  tsenet::skeleton::Hierarchy h;
};
struct tsenet_core {
  tsenet::expansion::PgmCore c;
};
struct tsenet_net {
  tsenet::nn::Network<float> n;
};

namespace {

using namespace tsenet;
using nlohmann::json;

thread_local std::string g_error;

struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class F>
tsenet_status guard(F&& f) {
  g_error.clear();
  try {
    f();
    return TSENET_OK;
  } catch (const ArgumentError& e) {
    g_error = e.what();
    return TSENET_E_ARGUMENT;
  } catch (const ParseError& e) {
    g_error = e.what();
    return TSENET_E_PARSE;
  } catch (const ValidationError& e) {
    g_error = e.what();
    return TSENET_E_VALIDATION;
  } catch (const ConfigError& e) {
    g_error = e.what();
    return TSENET_E_CONFIG;
  } catch (const IoError& e) {
    g_error = e.what();
    return TSENET_E_IO;
  } catch (const std::filesystem::filesystem_error& e) {
    g_error = e.what();
    return TSENET_E_IO;
  } catch (const std::exception& e) {
    g_error = e.what();
    return TSENET_E_RUNTIME;
  } catch (...) {
    g_error = "unknown error";
    return TSENET_E_RUNTIME;
  }
}

template <class... P>
void need(P... ptrs) {
  if (((ptrs == nullptr) || ...)) throw ArgumentError("required argument is NULL");
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

size_t* dup(const std::vector<std::size_t>& v) {
  size_t* p = static_cast<size_t*>(std::malloc(std::max<std::size_t>(1, v.size()) * sizeof(size_t)));
  if (!p) throw std::bad_alloc();
  std::copy(v.begin(), v.end(), p);
  return p;
}

std::vector<std::size_t> rows_of(const size_t* rows, size_t n) {
  if (n > 0 && rows == nullptr) throw ArgumentError("row list is NULL");
  return std::vector<std::size_t>(rows, rows + n);
}

nn::Head head_for(tsenet_head h, std::size_t n_classes) {
  switch (h) {
    case TSENET_HEAD_SOFTMAX: return nn::Head::softmax_ce;
    case TSENET_HEAD_SIGMOID: return nn::Head::sigmoid_bce;
    case TSENET_HEAD_AUTO: return nn::default_head(n_classes);
  }
  throw ConfigError("unknown head");
}

// Feature values and labels of `rows`.
nn::Matrix<float> features(const data::Dataset& d, const std::vector<std::size_t>& rows) {
  for (std::size_t r : rows)
    if (r >= d.n_cases()) throw ArgumentError("row index out of range");
  return nn::gather_rows<float>(d.values(), d.n_vars(), rows);
}

std::vector<int> labels(const data::Dataset& d, const std::vector<std::size_t>& rows) {
  if (!d.has_labels()) throw ConfigError("dataset has no labels");
  std::vector<int> y;
  y.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= d.n_cases()) throw ArgumentError("row index out of range");
    y.push_back(d.labels()[r]);
  }
  return y;
}

void check_input(const nn::Network<float>& n, const data::Dataset& d) {
  if (n.input_dim != d.n_vars()) {
    throw ConfigError("network expects " + std::to_string(n.input_dim) + " inputs but the dataset has " +
                      std::to_string(d.n_vars()) + " columns");
  }
}

json metrics_json(const nn::Metrics& m) {
  json j = {{"accuracy", m.accuracy}, {"loss", m.loss}, {"param_count", m.param_count}};
  j["auc"] = m.auc ? json(*m.auc) : json(nullptr);
  return j;
}

}  // namespace

extern "C" {

const char* tsenet_version(void) { return "1.0.0"; }

const char* tsenet_last_error(void) { return g_error.c_str(); }

const char* tsenet_status_name(tsenet_status s) {
  switch (s) {
    case TSENET_OK: return "ok";
    case TSENET_E_ARGUMENT: return "argument error";
    case TSENET_E_PARSE: return "parse error";
    case TSENET_E_VALIDATION: return "validation error";
    case TSENET_E_CONFIG: return "configuration error";
    case TSENET_E_IO: return "I/O error";
    case TSENET_E_RUNTIME: return "runtime error";
  }
  return "unknown status";
}

void tsenet_set_log_level(int level) {
  spdlog::set_level(static_cast<spdlog::level::level_enum>(std::clamp(level, 0, 6)));
}

void tsenet_string_free(char* s) { std::free(s); }

void tsenet_indices_free(size_t* p) { std::free(p); }

tsenet_status tsenet_dataset_load(const char* path, const char* format, const char* vocab_path,
                                  const char* labels_path, const char* label_column, tsenet_dataset** out) {
  return guard([&] {
    need(path, format, out);
    data::LoadOptions opt;
    if (vocab_path) opt.vocab_path = vocab_path;
    if (labels_path) opt.labels_path = labels_path;
    if (label_column) opt.label_column = label_column;
    auto d = std::make_unique<tsenet_dataset>();
    d->d = data::load_table(path, data::parse_format(format), opt);
    *out = d.release();
  });
}

void tsenet_dataset_free(tsenet_dataset* d) { delete d; }

tsenet_status tsenet_dataset_shape(const tsenet_dataset* d, size_t* n_cases, size_t* n_vars, size_t* n_classes) {
  return guard([&] {
    need(d);
    if (n_cases) *n_cases = d->d.n_cases();
    if (n_vars) *n_vars = d->d.n_vars();
    if (n_classes) *n_classes = d->d.n_classes();
  });
}

tsenet_status tsenet_dataset_binarize(const tsenet_dataset* d, const char* policy, tsenet_dataset** out,
                                      size_t* dropped) {
  return guard([&] {
    need(d, policy, out);
    std::vector<std::string> gone;
    auto r = std::make_unique<tsenet_dataset>();
    r->d = data::binarize(d->d, data::parse_policy(policy), &gone);
    if (dropped) *dropped = gone.size();
    *out = r.release();
  });
}

tsenet_status tsenet_dataset_standardize(const tsenet_dataset* d, tsenet_dataset** out) {
  return guard([&] {
    need(d, out);
    auto r = std::make_unique<tsenet_dataset>();
    r->d = data::standardize(d->d);
    *out = r.release();
  });
}

tsenet_status tsenet_dataset_subsample(const tsenet_dataset* d, size_t max_cases, uint64_t seed,
                                       tsenet_dataset** out) {
  return guard([&] {
    need(d, out);
    auto r = std::make_unique<tsenet_dataset>();
    r->d = data::subsample(d->d, max_cases, seed);
    *out = r.release();
  });
}

tsenet_status tsenet_dataset_select(const tsenet_dataset* d, const size_t* rows, size_t n_rows,
                                    tsenet_dataset** out) {
  return guard([&] {
    need(d, out);
    const auto r = rows_of(rows, n_rows);
    for (std::size_t i : r)
      if (i >= d->d.n_cases()) throw ArgumentError("row index out of range");
    auto x = std::make_unique<tsenet_dataset>();
    x->d = d->d.select_rows(r);
    *out = x.release();
  });
}

tsenet_status tsenet_split(size_t n_cases, double train, double validation, double test, uint64_t seed,
                           size_t** train_rows, size_t* n_train, size_t** val_rows, size_t* n_val,
                           size_t** test_rows, size_t* n_test) {
  return guard([&] {
    need(train_rows, n_train, val_rows, n_val, test_rows, n_test);
    const auto s = data::split(n_cases, {train, validation, test}, seed);
    std::unique_ptr<size_t, decltype(&std::free)> a(dup(s.train), &std::free), b(dup(s.validation), &std::free),
        c(dup(s.test), &std::free);
    *n_train = s.train.size();
    *n_val = s.validation.size();
    *n_test = s.test.size();
    *train_rows = a.release();
    *val_rows = b.release();
    *test_rows = c.release();
  });
}

void tsenet_skeleton_config_default(tsenet_skeleton_config* cfg) {
  if (!cfg) return;
  const skeleton::SkeletonConfig d;
  *cfg = {d.delta, d.top_threshold, d.max_group, d.structure_sample, d.refit_iter, d.em.restarts, d.em.max_iter,
          d.em.tol, d.em.smoothing, d.seed};
}

tsenet_status tsenet_skeleton_build(const tsenet_dataset* d, const tsenet_skeleton_config* cfg,
                                    tsenet_hierarchy** out) {
  return guard([&] {
    need(d, cfg, out);
    if (!d->d.has_binary()) throw ConfigError("dataset must be binarized before building a skeleton");
    skeleton::SkeletonConfig c;
    c.delta = cfg->delta;
    c.top_threshold = cfg->top_threshold;
    c.max_group = cfg->max_group;
    c.structure_sample = cfg->structure_sample;
    c.refit_iter = cfg->refit_iter;
    c.em.restarts = cfg->em_restarts;
    c.em.max_iter = cfg->em_max_iter;
    c.em.tol = cfg->em_tol;
    c.em.smoothing = cfg->em_smoothing;
    c.seed = cfg->seed;
    auto h = std::make_unique<tsenet_hierarchy>();
    h->h = skeleton::stack(d->d.binary(), d->d.names(), c);
    *out = h.release();
  });
}

void tsenet_hierarchy_free(tsenet_hierarchy* h) { delete h; }

tsenet_status tsenet_hierarchy_save(const tsenet_hierarchy* h, const char* path) {
  return guard([&] {
    need(h, path);
    persist::save_hierarchy(h->h, path);
  });
}

tsenet_status tsenet_hierarchy_load(const char* path, tsenet_hierarchy** out) {
  return guard([&] {
    need(path, out);
    auto h = std::make_unique<tsenet_hierarchy>();
    h->h = persist::load_hierarchy(path);
    *out = h.release();
  });
}

tsenet_status tsenet_hierarchy_levels(const tsenet_hierarchy* h, size_t* levels) {
  return guard([&] {
    need(h, levels);
    *levels = h->h.n_levels();
  });
}

tsenet_status tsenet_hierarchy_level_size(const tsenet_hierarchy* h, size_t level, size_t* size) {
  return guard([&] {
    need(h, size);
    if (level >= h->h.n_levels()) throw ArgumentError("level out of range");
    *size = h->h.level_size(level);
  });
}

tsenet_status tsenet_hierarchy_summary(const tsenet_hierarchy* h, char** out) {
  return guard([&] {
    need(h, out);
    json sizes = json::array();
    for (std::size_t l = 0; l < h->h.n_levels(); ++l) sizes.push_back(h->h.level_size(l));
    json layers = json::array();
    for (const auto& l : h->h.layers) {
      json groups = json::array(), gaps = json::array();
      for (const auto& g : l.groups) groups.push_back(g.size());
      for (const auto& g : l.ud_gaps) gaps.push_back(g ? json(*g) : json(nullptr));
      layers.push_back({{"level", l.level},
                        {"group_sizes", groups},
                        {"ud_gaps", gaps},
                        {"chow_liu_edges", l.chow_liu_edges.size()},
                        {"links_in_skeleton", l.links_in_skeleton}});
    }
    *out = dup(json{{"level_sizes", sizes}, {"layers", layers}}.dump(1) + "\n");
  });
}

tsenet_status tsenet_partition_image(const tsenet_hierarchy* h, size_t layer, size_t height, size_t width,
                                     const char* path) {
  return guard([&] {
    need(h, path);
    interpret::partition_image(h->h, layer, height, width, path);
  });
}

void tsenet_expansion_config_default(tsenet_expansion_config* cfg) {
  if (!cfg) return;
  const expansion::ExpansionConfig d;
  *cfg = {d.fan_in_fraction, d.cmi_floor};
}

tsenet_status tsenet_expand(const tsenet_hierarchy* h, const tsenet_expansion_config* cfg, tsenet_core** out) {
  return guard([&] {
    need(h, cfg, out);
    expansion::ExpansionConfig c;
    c.fan_in_fraction = cfg->fan_in_fraction;
    c.cmi_floor = cfg->cmi_floor;
    auto r = std::make_unique<tsenet_core>();
    r->c = expansion::expand(h->h, c);
    *out = r.release();
  });
}

void tsenet_core_free(tsenet_core* c) { delete c; }

tsenet_status tsenet_core_save(const tsenet_core* c, const char* path) {
  return guard([&] {
    need(c, path);
    persist::save_core(c->c, path);
  });
}

tsenet_status tsenet_core_load(const char* path, tsenet_core** out) {
  return guard([&] {
    need(path, out);
    auto r = std::make_unique<tsenet_core>();
    r->c = persist::load_core(path);
    *out = r.release();
  });
}

tsenet_status tsenet_core_export(const tsenet_core* c, const char* path) {
  return guard([&] {
    need(c, path);
    expansion::export_graph(c->c, path);
  });
}

tsenet_status tsenet_core_edges(const tsenet_core* c, size_t* total, size_t* expansion) {
  return guard([&] {
    need(c);
    if (total) *total = c->c.edge_count();
    if (expansion) *expansion = c->c.expansion_edge_count();
  });
}

tsenet_status tsenet_core_layers(const tsenet_core* c, size_t* layers) {
  return guard([&] {
    need(c, layers);
    *layers = c->c.n_layers();
  });
}

tsenet_status tsenet_core_layer_size(const tsenet_core* c, size_t layer, size_t* size) {
  return guard([&] {
    need(c, size);
    if (layer >= c->c.n_layers()) throw ArgumentError("layer out of range");
    *size = c->c.layer_sizes[layer];
  });
}

void tsenet_net_config_default(tsenet_net_config* cfg) {
  if (!cfg) return;
  const nn::FeatureWidths w;
  *cfg = {w.top, w.skip, 1, TSENET_HEAD_AUTO, 0};
}

tsenet_status tsenet_net_build_tse(const tsenet_core* c, const tsenet_net_config* cfg, size_t n_classes,
                                   tsenet_net** out) {
  return guard([&] {
    need(c, cfg, out);
    auto r = std::make_unique<tsenet_net>();
    r->n = nn::build_tse_net<float>(c->c, {cfg->top_width, cfg->skip_width}, n_classes,
                                    head_for(cfg->head, n_classes), cfg->seed, cfg->skip_paths != 0);
    *out = r.release();
  });
}

tsenet_status tsenet_net_build_fnn(size_t units, size_t layers, const char* shape, size_t in_dim, size_t n_classes,
                                   tsenet_head head, uint64_t seed, tsenet_net** out) {
  return guard([&] {
    need(shape, out);
    const std::string s = shape;
    if (s != "rectangle" && s != "conic") throw ConfigError("shape must be 'rectangle' or 'conic'");
    auto r = std::make_unique<tsenet_net>();
    r->n = nn::build_fnn<float>({units, layers, s == "conic" ? nn::Shape::conic : nn::Shape::rectangle}, in_dim,
                                n_classes, head_for(head, n_classes), seed);
    *out = r.release();
  });
}

tsenet_status tsenet_net_build_dense(size_t in_dim, const size_t* widths, size_t n_widths, size_t n_classes,
                                     tsenet_head head, uint64_t seed, tsenet_net** out) {
  return guard([&] {
    need(out);
    const auto w = rows_of(widths, n_widths);
    auto r = std::make_unique<tsenet_net>();
    r->n = nn::build_dense<float>(in_dim, w, n_classes, head_for(head, n_classes), seed);
    *out = r.release();
  });
}

size_t tsenet_fnn_grid_size(void) { return nn::fnn_grid().size(); }

tsenet_status tsenet_fnn_grid_point(size_t i, size_t* units, size_t* layers, int* conic) {
  return guard([&] {
    need(units, layers, conic);
    const auto g = nn::fnn_grid();
    if (i >= g.size()) throw ArgumentError("grid index out of range");
    *units = g[i].units;
    *layers = g[i].layers;
    *conic = g[i].shape == nn::Shape::conic;
  });
}

void tsenet_net_free(tsenet_net* n) { delete n; }

tsenet_status tsenet_net_param_count(const tsenet_net* n, size_t* count) {
  return guard([&] {
    need(n, count);
    *count = n->n.param_count();
  });
}

tsenet_status tsenet_net_input_dim(const tsenet_net* n, size_t* dim) {
  return guard([&] {
    need(n, dim);
    *dim = n->n.input_dim;
  });
}

tsenet_status tsenet_net_prune(const tsenet_net* n, size_t target_params, tsenet_net** out) {
  return guard([&] {
    need(n, out);
    auto r = std::make_unique<tsenet_net>();
    r->n = nn::magnitude_prune(n->n, target_params);
    *out = r.release();
  });
}

tsenet_status tsenet_net_save(const tsenet_net* n, const char* stem) {
  return guard([&] {
    need(n, stem);
    persist::save_network(n->n, stem);
  });
}

tsenet_status tsenet_net_load(const char* stem, tsenet_net** out) {
  return guard([&] {
    need(stem, out);
    auto r = std::make_unique<tsenet_net>();
    r->n = persist::load_network(stem);
    *out = r.release();
  });
}

void tsenet_train_config_default(tsenet_train_config* cfg) {
  if (!cfg) return;
  const nn::TrainConfig d;
  *cfg = {d.adam.learning_rate, d.adam.beta1, d.adam.beta2, d.adam.epsilon, d.batch_size,
          d.epochs,             d.dropout_rate, d.patience,  d.seed};
}

tsenet_status tsenet_net_train(const tsenet_net* n, const tsenet_dataset* d, const size_t* train_rows,
                               size_t n_train, const size_t* val_rows, size_t n_val, const tsenet_train_config* cfg,
                               tsenet_net** out, char** history) {
  return guard([&] {
    need(n, d, cfg, out);
    check_input(n->n, d->d);
    nn::TrainConfig c;
    c.adam = {cfg->learning_rate, cfg->beta1, cfg->beta2, cfg->epsilon};
    c.batch_size = cfg->batch_size;
    c.epochs = cfg->epochs;
    c.dropout_rate = cfg->dropout_rate;
    c.patience = cfg->patience;
    c.seed = cfg->seed;
    const auto tr = rows_of(train_rows, n_train), va = rows_of(val_rows, n_val);
    auto result = nn::train(n->n, features(d->d, tr), labels(d->d, tr), features(d->d, va), labels(d->d, va), c);
    if (history) {
      json epochs = json::array();
      for (const auto& e : result.history) {
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation", metrics_json(e.validation)}});
      }
      *history = dup(json{{"best_epoch", result.best_epoch}, {"epochs", epochs}}.dump(1) + "\n");
    }
    auto r = std::make_unique<tsenet_net>();
    r->n = std::move(result.net);
    *out = r.release();
  });
}

tsenet_status tsenet_net_evaluate(const tsenet_net* n, const tsenet_dataset* d, const size_t* rows, size_t n_rows,
                                  tsenet_metrics* out) {
  return guard([&] {
    need(n, d, out);
    check_input(n->n, d->d);
    const auto r = rows_of(rows, n_rows);
    const auto m = nn::evaluate(n->n, features(d->d, r), labels(d->d, r), n->n.head == nn::Head::sigmoid_bce);
    *out = {m.accuracy, m.auc.value_or(0.0), m.auc.has_value(), m.loss, m.param_count};
  });
}

tsenet_status tsenet_interpret(const tsenet_net* n, const tsenet_dataset* d, const size_t* rows, size_t n_rows,
                               const char* embedding_path, size_t k, const char* role, char** report) {
  return guard([&] {
    need(n, d, embedding_path, report);
    check_input(n->n, d->d);
    const nn::Role want = nn::parse_role(role ? role : "feature");
    std::size_t node = 0;
    for (std::size_t l = 0; l < n->n.layers.size(); ++l)
      if (n->n.layers[l].role == want) node = l + 1;
    if (node == 0) throw ConfigError("network has no '" + nn::to_string(want) + "' layer");
    const auto emb = interpret::EmbeddingTable::load(embedding_path);
    const auto r = rows_of(rows, n_rows);
    const auto subset = d->d.select_rows(r);
    const auto nodes = nn::forward_nodes(n->n, features(d->d, r));
    const nn::Matrix<double> act = nodes[node].cast<double>();
    const std::vector<double> flat(act.data(), act.data() + act.size());
    auto units = interpret::characterize(flat, static_cast<std::size_t>(act.cols()), subset, k);
    const auto summary = interpret::interpretability_score(units, emb);
    json ju = json::array();
    for (const auto& u : units) {
      json words = json::array();
      for (const auto& w : u.top_words) words.push_back(json{{"word", w.word}, {"correlation", w.correlation}});
      ju.push_back(json{{"unit", u.unit}, {"top_words", words}, {"score", u.score ? json(*u.score) : json(nullptr)}});
    }
    *report = dup(json{{"layer", nn::to_string(want)},
                       {"model_score", summary.model_score},
                       {"scored_units", summary.scored_units},
                       {"units", ju}}
                      .dump(1) +
                  "\n");
  });
}

}  // extern "C"
