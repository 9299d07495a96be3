// SPDX-License-Identifier: Apache-2.0
//
// prformer: train, evaluate, predict, bench, inspect-embeddings, check-pe.
// Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "prformer/prformer.h"

namespace {

constexpr int kExitUsage = 1;

// Carries a failed C API status up to main.
struct Failure {
  prf_status status;
  std::string message;
};

void check(prf_status s, const std::string& context) {
  if (s == PRF_OK) return;
  const std::string detail = prf_last_error();
  throw Failure{s, detail.rfind(context + ":", 0) == 0 ? detail : context + ": " + detail};
}

int exit_code(prf_status s) {
  switch (s) {
    case PRF_ERR_USAGE: return 1;
    case PRF_ERR_DATA: return 2;
    default: return 3;
  }
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(ptr); }
  T** out() { return &ptr; }
  T* get() const { return ptr; }
};
using Config = Handle<prf_config, prf_config_free>;
using Dataset = Handle<prf_dataset, prf_dataset_free>;
using Model = Handle<prf_model, prf_model_free>;

std::string take_string(char* s) {
  std::string out = s ? s : "";
  prf_string_free(s);
  return out;
}

prf_split parse_split(const std::string& s) {
  if (s == "train") return PRF_SPLIT_TRAIN;
  if (s == "val") return PRF_SPLIT_VAL;
  return PRF_SPLIT_TEST;
}

// Options shared by every subcommand that builds a RunConfig.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::size_t> lookback, pred_len, e_layers, d_model, d_ff, heads, conv_channels, batch_size, epochs,
      patience, max_rows, max_steps;
  std::optional<double> dropout, lr, temperature;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant, split_scheme, loss_scale;
  std::vector<std::size_t> windows;
  bool strict_split = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "JSON run configuration");
    app->add_option("--lookback", lookback, "Lookback length L");
    app->add_option("--pred-len", pred_len, "Forecast horizon H");
    app->add_option("--windows", windows, "Pyramid window lengths, ascending")->delimiter(',');
    app->add_option("--e-layers", e_layers, "Encoder layers");
    app->add_option("--d-model", d_model, "Embedding width D");
    app->add_option("--d-ff", d_ff, "Feed-forward width (0 means 2D)");
    app->add_option("--heads", heads, "Attention heads");
    app->add_option("--conv-channels", conv_channels, "Pyramid convolution channels");
    app->add_option("--dropout", dropout, "Dropout rate");
    app->add_option("--batch-size", batch_size, "Batch size");
    app->add_option("--lr", lr, "Learning rate");
    app->add_option("--temperature", temperature, "Scale-softmax temperature");
    app->add_option("--seed", seed, "Random seed (PRFORMER_SEED is the fallback)");
    app->add_option("--variant", variant, "full, V1, V2 or V3");
    app->add_option("--epochs", epochs, "Epoch cap");
    app->add_option("--patience", patience, "Early-stopping patience");
    app->add_option("--split-scheme", split_scheme, "auto, 6:2:2 or 7:1:2");
    app->add_flag("--strict-split", strict_split, "Keep lookback context inside each split");
    app->add_option("--loss-scale", loss_scale, "raw or normalized");
    app->add_option("--max-rows", max_rows, "Read at most this many data rows");
    app->add_option("--max-steps-per-epoch", max_steps, "Cap optimizer steps per epoch");
  }

  nlohmann::json overrides() const {
    nlohmann::json j = nlohmann::json::object();
    auto put = [&](const char* key, const auto& opt) {
      if (opt) j[key] = *opt;
    };
    put("lookback", lookback);
    put("pred_len", pred_len);
    put("e_layers", e_layers);
    put("d_model", d_model);
    put("d_ff", d_ff);
    put("heads", heads);
    put("conv_channels", conv_channels);
    put("batch_size", batch_size);
    put("epochs", epochs);
    put("patience", patience);
    put("max_rows", max_rows);
    put("max_steps_per_epoch", max_steps);
    put("dropout", dropout);
    put("lr", lr);
    put("temperature", temperature);
    put("seed", seed);
    put("variant", variant);
    put("split_scheme", split_scheme);
    put("loss_scale", loss_scale);
    if (!windows.empty()) j["pyramidal_windows"] = windows;
    if (strict_split) j["strict_split"] = true;
    return j;
  }

  void build(Config& cfg) const {
    if (config_path.empty())
      check(prf_config_create(cfg.out()), "config");
    else
      check(prf_config_load_json_file(config_path.c_str(), cfg.out()), "config");
    check(prf_config_merge_json(cfg.get(), overrides().dump().c_str()), "config flags");
  }
};

std::string config_value(const Config& cfg, const char* key) {
  char* text = nullptr;
  check(prf_config_to_json(cfg.get(), &text), "config");
  const auto j = nlohmann::json::parse(take_string(text));
  return j.at(key).is_string() ? j.at(key).get<std::string>() : j.at(key).dump();
}

void load_data(Dataset& data, const std::string& path, std::size_t synthetic_rows, std::size_t max_rows,
               std::uint64_t synthetic_seed) {
  if (synthetic_rows) {
    check(prf_dataset_synthetic(synthetic_rows, 0.1, synthetic_seed, data.out()), "synthetic data");
  } else {
    if (path.empty()) throw Failure{PRF_ERR_USAGE, "no dataset: pass --data PATH, set \"dataset\" in the config, or use --synthetic ROWS"};
    check(prf_dataset_load_csv(path.c_str(), max_rows, data.out()), "dataset");
  }
  std::size_t rows = 0, cols = 0;
  check(prf_dataset_shape(data.get(), &rows, &cols), "dataset");
  std::printf("data: %zu timesteps x %zu channels (%s)\n", rows, cols, synthetic_rows ? "synthetic" : path.c_str());
}

void print_metrics(const char* label, const prf_metrics& m) {
  std::printf("%-12s mse=%.6f mae=%.6f windows=%zu\n", label, m.mse, m.mae, m.windows);
}

void on_epoch(const prf_epoch_record* r, void*) {
  std::printf("epoch %3zu  lr=%.3g  train_mae=%.6f  val_mae=%.6f  val_mse=%.6f  (%.1fs)\n", r->epoch, r->lr,
              r->train_mae, r->val_mae, r->val_mse, r->seconds);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PRformer time-series forecaster"};
  app.require_subcommand(1);

  // train
  ConfigFlags train_flags;
  std::string train_data, checkpoint = "prformer.ckpt", history;
  std::size_t train_synthetic = 0;
  std::uint64_t synthetic_seed = 7;
  bool dry_run = false;
  auto* train = app.add_subcommand("train", "Train a model and keep the best-validation checkpoint");
  train_flags.attach(train);
  train->add_option("--data", train_data, "CSV dataset (overrides config \"dataset\")");
  train->add_option("--synthetic", train_synthetic, "Use ROWS of generated data instead of a file");
  train->add_option("--synthetic-seed", synthetic_seed, "Generator seed for --synthetic")->capture_default_str();
  train->add_option("--checkpoint", checkpoint, "Checkpoint output path")->capture_default_str();
  train->add_option("--history", history, "Per-epoch history CSV");
  train->add_flag("--dry-run", dry_run, "Build the model and splits, then stop");

  // evaluate / predict / inspect-embeddings share checkpoint + data inputs
  std::string ckpt_in, data_in, split_name = "test", out_path, run_id = "run", baseline = "model";
  std::size_t synthetic_in = 0, max_windows = 0, max_rows_in = 0;
  auto add_inputs = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", ckpt_in, "Checkpoint to load")->required();
    sub->add_option("--data", data_in, "CSV dataset");
    sub->add_option("--synthetic", synthetic_in, "Use ROWS of generated data instead of a file");
    sub->add_option("--synthetic-seed", synthetic_seed, "Generator seed for --synthetic")->capture_default_str();
    sub->add_option("--max-rows", max_rows_in, "Read at most this many data rows");
    sub->add_option("--split", split_name, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
  };
  auto* evaluate = app.add_subcommand("evaluate", "Report MSE/MAE of a checkpoint or baseline on a split");
  add_inputs(evaluate);
  evaluate->add_option("--baseline", baseline, "model, persistence, linear or all")
      ->check(CLI::IsMember({"model", "persistence", "linear", "all"}))
      ->capture_default_str();
  auto* predict = app.add_subcommand("predict", "Write per-window forecasts of a split to CSV");
  add_inputs(predict);
  predict->add_option("--out", out_path, "Prediction CSV path")->required();
  auto* inspect = app.add_subcommand("inspect-embeddings", "Export the variate-token embeddings to CSV");
  add_inputs(inspect);
  inspect->add_option("--out", out_path, "Embedding CSV path")->required();
  inspect->add_option("--run-id", run_id, "Value of the run_id column")->capture_default_str();
  inspect->add_option("--max-windows", max_windows, "Export at most this many windows (0 = all)");

  // bench
  ConfigFlags bench_flags;
  std::vector<std::size_t> lookbacks, d_models;
  std::string component = "pre", bench_out;
  std::size_t reps = 5, warmup = 1, channels = 7;
  bool with_backward = false;
  auto* bench = app.add_subcommand("bench", "Time forward passes across lookback or width sweeps");
  bench_flags.attach(bench);
  bench->add_option("--lookbacks", lookbacks, "Lookback sweep")->delimiter(',');
  bench->add_option("--d-models", d_models, "Width sweep at the configured lookback")->delimiter(',');
  bench->add_option("--component", component, "pre, encoder or model")
      ->check(CLI::IsMember({"pre", "encoder", "model"}))
      ->capture_default_str();
  bench->add_option("--reps", reps, "Timed repetitions per point")->capture_default_str();
  bench->add_option("--warmup", warmup, "Untimed warm-up runs per point")->capture_default_str();
  bench->add_option("--channels", channels, "Variables per input")->capture_default_str();
  bench->add_flag("--backward", with_backward, "Time forward + backward");
  bench->add_option("--out", bench_out, "Bench CSV path");

  // check-pe
  std::size_t pe_d_model = 0, pe_trials = 1000;
  std::uint64_t pe_seed = 1;
  double pe_tol = 1e-9;
  auto* check_pe = app.add_subcommand("check-pe", "Check sinusoidal PE translation invariance");
  check_pe->add_option("--d-model", pe_d_model, "Even width (0 draws one per trial)");
  check_pe->add_option("--trials", pe_trials, "Random draws")->capture_default_str();
  check_pe->add_option("--seed", pe_seed, "Draw seed")->capture_default_str();
  check_pe->add_option("--tolerance", pe_tol, "Largest accepted deviation")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return e.get_exit_code() == 0 ? rc : kExitUsage;
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    if (active == train) {
      Config cfg;
      train_flags.build(cfg);
      const std::string path = train_data.empty() ? config_value(cfg, "dataset") : train_data;
      Dataset data;
      load_data(data, path, train_synthetic, std::stoull(config_value(cfg, "max_rows")), synthetic_seed);
      std::size_t cols = 0;
      check(prf_dataset_shape(data.get(), nullptr, &cols), "dataset");
      Model model;
      check(prf_model_create(cfg.get(), cols, model.out()), "model");
      std::string warnings = [&] {
        char* w = nullptr;
        check(prf_model_warnings(model.get(), &w), "model");
        return take_string(w);
      }();
      if (!warnings.empty()) std::fprintf(stderr, "warning: %s", warnings.c_str());
      std::size_t params = 0;
      check(prf_model_param_count(model.get(), &params), "model");
      std::printf("model: variant=%s params=%zu\n", config_value(cfg, "variant").c_str(), params);
      if (dry_run) {
        prf_metrics m{};
        check(prf_evaluate(model.get(), data.get(), PRF_SPLIT_VAL, PRF_FORECASTER_PERSISTENCE, &m), "splits");
        std::printf("dry run: configuration and splits are valid\n");
        return 0;
      }
      prf_train_summary summary{};
      check(prf_train(model.get(), data.get(), history.empty() ? nullptr : history.c_str(), checkpoint.c_str(),
                      on_epoch, nullptr, &summary),
            "train");
      std::printf("best epoch %zu of %zu, val_mae=%.6f%s\n", summary.best_epoch, summary.epochs_run,
                  summary.best_val_mae, summary.stopped_early ? " (early stop)" : "");
      prf_metrics test{};
      check(prf_evaluate(model.get(), data.get(), PRF_SPLIT_TEST, PRF_FORECASTER_MODEL, &test), "evaluate");
      print_metrics("test", test);
      std::printf("checkpoint: %s\n", checkpoint.c_str());
      return 0;
    }

    if (active == evaluate || active == predict || active == inspect) {
      Model model;
      check(prf_model_load(ckpt_in.c_str(), model.out()), "checkpoint");
      Dataset data;
      std::string path = data_in;
      if (path.empty() && !synthetic_in) {
        char* text = nullptr;
        check(prf_model_config_json(model.get(), &text), "checkpoint");
        path = nlohmann::json::parse(take_string(text)).value("dataset", "");
      }
      load_data(data, path, synthetic_in, max_rows_in, synthetic_seed);
      const prf_split split = parse_split(split_name);
      if (active == evaluate) {
        const std::vector<std::pair<std::string, prf_forecaster>> all = {
            {"model", PRF_FORECASTER_MODEL}, {"persistence", PRF_FORECASTER_PERSISTENCE}, {"linear", PRF_FORECASTER_LINEAR}};
        for (const auto& [name, kind] : all) {
          if (baseline != "all" && baseline != name) continue;
          prf_metrics m{};
          check(prf_evaluate(model.get(), data.get(), split, kind, &m), "evaluate");
          print_metrics((name + "/" + split_name).c_str(), m);
        }
      } else if (active == predict) {
        std::size_t rows = 0;
        check(prf_predict(model.get(), data.get(), split, out_path.c_str(), &rows), "predict");
        std::printf("wrote %zu prediction rows to %s\n", rows, out_path.c_str());
      } else {
        std::size_t rows = 0;
        check(prf_export_embeddings(model.get(), data.get(), split, run_id.c_str(), max_windows, out_path.c_str(),
                                    &rows),
              "inspect-embeddings");
        std::printf("wrote %zu embedding rows to %s\n", rows, out_path.c_str());
      }
      return 0;
    }

    if (active == bench) {
      Config cfg;
      bench_flags.build(cfg);
      if (lookbacks.empty() && d_models.empty()) lookbacks = {720, 1440, 2880};
      prf_bench_options opt{};
      opt.lookbacks = lookbacks.data();
      opt.n_lookbacks = lookbacks.size();
      opt.d_models = d_models.data();
      opt.n_d_models = d_models.size();
      opt.component = component.c_str();
      opt.channels = channels;
      opt.repetitions = reps;
      opt.warmup = warmup;
      opt.backward = with_backward ? 1 : 0;
      std::vector<prf_bench_row> rows(lookbacks.size() + d_models.size());
      std::size_t n = 0;
      check(prf_scaling_bench(cfg.get(), &opt, bench_out.empty() ? nullptr : bench_out.c_str(), rows.data(),
                              rows.size(), &n),
            "bench");
      std::printf("%-10s %8s %8s %14s %14s %8s %14s\n", "component", "L", "D", "median_s", "mean_s", "ratio", "flops");
      for (std::size_t i = 0; i < n; ++i)
        std::printf("%-10s %8zu %8zu %14.6f %14.6f %8.3f %14llu\n", component.c_str(), rows[i].lookback,
                    rows[i].d_model, rows[i].median_seconds, rows[i].mean_seconds, rows[i].ratio,
                    static_cast<unsigned long long>(rows[i].flops));
      return 0;
    }

    // check-pe
    prf_pe_report r{};
    check(prf_check_pe(pe_trials, pe_d_model, pe_seed, &r), "check-pe");
    std::printf("trials=%zu max_deviation=%.3e (d_model=%zu t=%g s=%g dt=%g)\n", r.trials, r.max_dev,
                r.worst_d_model, r.worst_t, r.worst_s, r.worst_dt);
    if (!(r.max_dev < pe_tol)) {
      std::fprintf(stderr, "error: deviation %.3e exceeds tolerance %.3e\n", r.max_dev, pe_tol);
      return 3;
    }
    return 0;
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    if (f.status == PRF_ERR_USAGE) std::cerr << active->help();
    return exit_code(f.status);
  }
}
