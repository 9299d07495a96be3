// SPDX-License-Identifier: Apache-2.0

#include "prformer/prformer.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <new>
#include <string>

#include "prformer/analysis.hpp"
#include "prformer/checkpoint.hpp"
#include "prformer/error.hpp"
#include "prformer/training.hpp"

struct prf_config {
  prformer::RunConfig value;
};

struct prf_dataset {
  prformer::SeriesTable table;
  std::string source;  // file path, drives "auto" split detection
};

struct prf_model {
  std::unique_ptr<prformer::PRformerModel> model;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
prf_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return PRF_OK;
  } catch (const prformer::Error& e) {
    g_last_error = e.what();
    return static_cast<prf_status>(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return PRF_ERR_DATA;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return PRF_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "internal error: unknown exception";
    return PRF_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw prformer::UsageError(std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

prformer::RunConfig default_config() {
  prformer::RunConfig c;
  if (const char* env = std::getenv("PRFORMER_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long seed = std::strtoull(env, &end, 10);
    if (*end != '\0') throw prformer::UsageError(std::string("PRFORMER_SEED is not an integer: '") + env + "'");
    c.seed = seed;
  }
  return c;
}

void merge_text(prformer::RunConfig& c, const char* text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw prformer::UsageError(std::string("config is not valid JSON: ") + e.what());
  }
  prformer::merge_json(c, j);
}

// Split ranges computed against the dataset's own file name.
prformer::DataSplits splits_for(const prformer::PRformerModel& m, const prf_dataset& d) {
  prformer::RunConfig cfg = m.config();
  if (!d.source.empty()) cfg.dataset = d.source;
  return prformer::resolve_splits(cfg, d.table);
}

prformer::SplitPart part_of(prf_split s) {
  switch (s) {
    case PRF_SPLIT_TRAIN: return prformer::SplitPart::Train;
    case PRF_SPLIT_VAL: return prformer::SplitPart::Val;
    case PRF_SPLIT_TEST: return prformer::SplitPart::Test;
  }
  throw prformer::UsageError("unknown split " + std::to_string(static_cast<int>(s)));
}

void check_channels(const prformer::PRformerModel& m, const prf_dataset& d) {
  if (d.table.cols() != m.channels())
    throw prformer::DataError("dataset has " + std::to_string(d.table.cols()) + " channels, model expects " +
                              std::to_string(m.channels()));
}

}  // namespace

extern "C" {

const char* prf_last_error(void) { return g_last_error.c_str(); }
const char* prf_version(void) { return "0.1.0"; }
void prf_string_free(char* s) { std::free(s); }

prf_status prf_config_create(prf_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new prf_config{default_config()};
  });
}

prf_status prf_config_load_json_file(const char* path, prf_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    auto c = std::make_unique<prf_config>(prf_config{default_config()});
    std::ifstream in(path);
    if (!in) throw prformer::UsageError(std::string("cannot open config file '") + path + "'");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    merge_text(c->value, text.c_str());
    *out = c.release();
  });
}

prf_status prf_config_merge_json(prf_config* config, const char* json_text) {
  return guarded([&] {
    require(config, "config");
    require(json_text, "json_text");
    prformer::RunConfig copy = config->value;
    merge_text(copy, json_text);
    config->value = copy;
  });
}

prf_status prf_config_to_json(const prf_config* config, char** out_json) {
  return guarded([&] {
    require(config, "config");
    require(out_json, "out_json");
    *out_json = dup_string(nlohmann::json(config->value).dump(2));
  });
}

prf_status prf_config_validate(const prf_config* config) {
  return guarded([&] {
    require(config, "config");
    config->value.validate();
  });
}

void prf_config_free(prf_config* config) { delete config; }

prf_status prf_dataset_load_csv(const char* path, size_t max_rows, prf_dataset** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new prf_dataset{prformer::load_csv(path, max_rows), path};
  });
}

prf_status prf_dataset_synthetic(size_t rows, double noise, uint64_t seed, prf_dataset** out) {
  return guarded([&] {
    require(out, "out");
    if (rows < 2) throw prformer::UsageError("synthetic dataset needs at least two rows");
    if (!(noise >= 0.0)) throw prformer::UsageError("synthetic noise must be non-negative");
    prformer::SyntheticOptions opt;
    opt.rows = rows;
    opt.noise = noise;
    opt.seed = seed;
    *out = new prf_dataset{prformer::make_synthetic(opt), ""};
  });
}

prf_status prf_dataset_shape(const prf_dataset* data, size_t* rows, size_t* channels) {
  return guarded([&] {
    require(data, "data");
    if (rows) *rows = data->table.rows();
    if (channels) *channels = data->table.cols();
  });
}

prf_status prf_dataset_write_csv(const prf_dataset* data, const char* path) {
  return guarded([&] {
    require(data, "data");
    require(path, "path");
    prformer::write_csv(data->table, path);
  });
}

void prf_dataset_free(prf_dataset* data) { delete data; }

prf_status prf_model_create(const prf_config* config, size_t channels, prf_model** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = new prf_model{std::make_unique<prformer::PRformerModel>(config->value, channels)};
  });
}

prf_status prf_model_load(const char* checkpoint_path, prf_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    *out = new prf_model{std::make_unique<prformer::PRformerModel>(prformer::load_checkpoint(checkpoint_path))};
  });
}

prf_status prf_model_save(const prf_model* model, const char* checkpoint_path) {
  return guarded([&] {
    require(model, "model");
    require(checkpoint_path, "checkpoint_path");
    prformer::save_checkpoint(*model->model, checkpoint_path);
  });
}

prf_status prf_model_param_count(const prf_model* model, size_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->model->params().scalar_count();
  });
}

prf_status prf_model_config_json(const prf_model* model, char** out_json) {
  return guarded([&] {
    require(model, "model");
    require(out_json, "out_json");
    *out_json = dup_string(nlohmann::json(model->model->config()).dump(2));
  });
}

prf_status prf_model_warnings(const prf_model* model, char** out_text) {
  return guarded([&] {
    require(model, "model");
    require(out_text, "out_text");
    std::string text;
    for (const auto& w : model->model->pyramid().warnings) text += w + "\n";
    *out_text = dup_string(text);
  });
}

prf_status prf_model_forecast(const prf_model* model, const double* inputs, size_t batch, double* outputs) {
  return guarded([&] {
    require(model, "model");
    require(inputs, "inputs");
    require(outputs, "outputs");
    if (batch == 0) throw prformer::UsageError("batch must be positive");
    const auto& m = *model->model;
    const std::size_t l = m.config().lookback, c = m.channels();
    prformer::Tensor x({batch, l, c}, std::vector<double>(inputs, inputs + batch * l * c));
    const prformer::Tensor y = m.predict(x);
    std::copy(y.data().begin(), y.data().end(), outputs);
  });
}

void prf_model_free(prf_model* model) { delete model; }

prf_status prf_train(prf_model* model, const prf_dataset* data, const char* history_csv, const char* checkpoint_path,
                     prf_epoch_callback callback, void* user, prf_train_summary* summary) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    prformer::TrainOptions opt;
    if (history_csv) opt.history_csv = history_csv;
    if (checkpoint_path) opt.checkpoint_path = checkpoint_path;
    if (callback) {
      opt.on_epoch = [&](const prformer::EpochRecord& r) {
        const prf_epoch_record rec{r.epoch, r.lr, r.train_mae, r.val_mae, r.val_mse, r.seconds};
        callback(&rec, user);
      };
    }
    check_channels(*model->model, *data);
    // The split scheme follows the dataset actually supplied.
    prformer::RunConfig cfg = model->model->config();
    if (!data->source.empty() && cfg.dataset != data->source) {
      cfg.dataset = data->source;
      auto rebuilt = std::make_unique<prformer::PRformerModel>(cfg, model->model->channels());
      rebuilt->copy_values_from(model->model->params());
      model->model = std::move(rebuilt);
    }
    const prformer::TrainResult r = prformer::train(*model->model, data->table, opt);
    if (summary) {
      summary->best_val_mae = r.best_val_mae;
      summary->best_epoch = r.best_epoch;
      summary->epochs_run = r.history.size();
      summary->stopped_early = r.stopped_early ? 1 : 0;
      summary->first_epoch_train_mae = r.history.empty() ? 0.0 : r.history.front().train_mae;
    }
  });
}

prf_status prf_evaluate(const prf_model* model, const prf_dataset* data, prf_split split, prf_forecaster forecaster,
                        prf_metrics* out) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    require(out, "out");
    const auto& m = *model->model;
    check_channels(m, *data);
    const prformer::DataSplits s = splits_for(m, *data);
    const prformer::IndexRange range = prformer::pick(s.ranges, part_of(split));
    const std::size_t l = m.config().lookback, h = m.config().pred_len;
    prformer::Metrics met;
    switch (forecaster) {
      case PRF_FORECASTER_MODEL:
        met = prformer::evaluate(m, data->table, range, s.strict_context);
        break;
      case PRF_FORECASTER_PERSISTENCE:
        met = prformer::evaluate_forecaster([&](const prformer::Tensor& x) { return prformer::persistence_forecast(x, h); },
                                            data->table, range, l, h, s.strict_context);
        break;
      case PRF_FORECASTER_LINEAR: {
        const prformer::LinearWindowBaseline lr(data->table, s.ranges.train, l, h);
        met = prformer::evaluate_forecaster([&](const prformer::Tensor& x) { return lr.forecast(x); }, data->table,
                                            range, l, h, s.strict_context);
        break;
      }
      default:
        throw prformer::UsageError("unknown forecaster " + std::to_string(static_cast<int>(forecaster)));
    }
    *out = prf_metrics{met.mse, met.mae, met.windows};
  });
}

prf_status prf_predict(const prf_model* model, const prf_dataset* data, prf_split split, const char* csv_path,
                       size_t* rows_written) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    require(csv_path, "csv_path");
    const auto& m = *model->model;
    check_channels(m, *data);
    const prformer::DataSplits s = splits_for(m, *data);
    const auto rows = prformer::predict_range(m, data->table, prformer::pick(s.ranges, part_of(split)), s.strict_context);
    prformer::write_predictions_csv(rows, csv_path);
    if (rows_written) *rows_written = rows.size();
  });
}

prf_status prf_export_embeddings(const prf_model* model, const prf_dataset* data, prf_split split, const char* run_id,
                                 size_t max_windows, const char* csv_path, size_t* rows_written) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    require(csv_path, "csv_path");
    const auto& m = *model->model;
    check_channels(m, *data);
    const prformer::DataSplits s = splits_for(m, *data);
    const std::size_t n = prformer::export_embeddings(m, data->table, prformer::pick(s.ranges, part_of(split)),
                                                      s.strict_context, run_id ? run_id : "run", csv_path, max_windows);
    if (rows_written) *rows_written = n;
  });
}

prf_status prf_check_pe(size_t trials, size_t d_model, uint64_t seed, prf_pe_report* out) {
  return guarded([&] {
    require(out, "out");
    const prformer::PeCheckReport r = prformer::check_pe(trials, d_model, seed);
    *out = prf_pe_report{r.trials, r.max_dev, r.worst_d_model, r.worst_t, r.worst_s, r.worst_dt};
  });
}

prf_status prf_pe_dot(size_t d_model, double t, double s, double dt, double out[4]) {
  return guarded([&] {
    require(out, "out");
    const prformer::PeDotResult r = prformer::pe_dot_invariance(d_model, t, s, dt);
    out[0] = r.dot_t;
    out[1] = r.dot_s;
    out[2] = r.cos_sum;
    out[3] = r.max_dev;
  });
}

prf_status prf_scaling_bench(const prf_config* config, const prf_bench_options* options, const char* csv_path,
                             prf_bench_row* rows, size_t capacity, size_t* n_rows) {
  return guarded([&] {
    require(config, "config");
    require(options, "options");
    if (capacity && !rows) throw prformer::UsageError("rows must not be null when capacity is positive");
    prformer::BenchOptions opt;
    if (options->n_lookbacks) {
      require(options->lookbacks, "options->lookbacks");
      opt.lookbacks.assign(options->lookbacks, options->lookbacks + options->n_lookbacks);
    }
    if (options->n_d_models) {
      require(options->d_models, "options->d_models");
      opt.d_models.assign(options->d_models, options->d_models + options->n_d_models);
    }
    opt.component = prformer::parse_bench_component(options->component ? options->component : "pre");
    opt.channels = options->channels;
    opt.repetitions = options->repetitions;
    opt.warmup = options->warmup;
    opt.backward = options->backward != 0;
    const auto result = prformer::scaling_bench(config->value, opt);
    if (csv_path) prformer::write_bench_csv(result, opt.component, csv_path);
    for (std::size_t i = 0; i < result.size() && i < capacity; ++i) {
      const auto& r = result[i];
      rows[i] = prf_bench_row{r.lookback, r.d_model, r.median_seconds, r.mean_seconds, r.ratio, r.flops};
    }
    if (n_rows) *n_rows = result.size();
  });
}

}  // extern "C"
