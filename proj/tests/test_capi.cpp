// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "prformer/prformer.h"

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("prformer_test_capi_" + name)).string();
}

std::string take(char* s) {
  std::string out = s ? s : "";
  prf_string_free(s);
  return out;
}

prf_config* mini_config() {
  prf_config* cfg = nullptr;
  REQUIRE(prf_config_create(&cfg) == PRF_OK);
  REQUIRE(prf_config_merge_json(cfg,
                                R"({"lookback": 48, "pred_len": 12, "pyramidal_windows": [4, 8], "d_model": 16,
                                    "heads": 2, "conv_channels": 4, "batch_size": 16, "epochs": 2,
                                    "seed": 5})") == PRF_OK);
  return cfg;
}

void count_epochs(const prf_epoch_record* r, void* user) {
  auto* seen = static_cast<std::vector<std::size_t>*>(user);
  seen->push_back(r->epoch);
}

}  // namespace

TEST_CASE("status codes and last error") {
  prf_config* cfg = nullptr;
  CHECK(prf_config_create(nullptr) == PRF_ERR_USAGE);
  CHECK(std::string(prf_last_error()).size() > 0);
  REQUIRE(prf_config_create(&cfg) == PRF_OK);
  CHECK(prf_config_merge_json(cfg, "{\"no_such_key\": 1}") == PRF_ERR_USAGE);
  CHECK(std::string(prf_last_error()).find("no_such_key") != std::string::npos);
  CHECK(prf_config_merge_json(cfg, "{not json") == PRF_ERR_USAGE);
  CHECK(prf_config_merge_json(cfg, "{\"heads\": 3, \"d_model\": 16}") == PRF_OK);
  CHECK(prf_config_validate(cfg) == PRF_ERR_USAGE);
  prf_config_free(cfg);

  prf_dataset* data = nullptr;
  CHECK(prf_dataset_load_csv("/nonexistent/data.csv", 0, &data) == PRF_ERR_DATA);
  CHECK(data == nullptr);
  prf_model* model = nullptr;
  CHECK(prf_model_load("/nonexistent/model.ckpt", &model) == PRF_ERR_DATA);
  CHECK(std::string(prf_version()).size() > 0);
  prf_config_free(nullptr);
  prf_dataset_free(nullptr);
  prf_model_free(nullptr);
}

TEST_CASE("config JSON round trip and the seed environment override") {
  setenv("PRFORMER_SEED", "77", 1);
  prf_config* cfg = nullptr;
  REQUIRE(prf_config_create(&cfg) == PRF_OK);
  const std::string json = take([&] {
    char* s = nullptr;
    REQUIRE(prf_config_to_json(cfg, &s) == PRF_OK);
    return s;
  }());
  CHECK(json.find("\"seed\": 77") != std::string::npos);
  prf_config_free(cfg);
  setenv("PRFORMER_SEED", "seven", 1);
  CHECK(prf_config_create(&cfg) == PRF_ERR_USAGE);
  unsetenv("PRFORMER_SEED");

  const std::string path = temp_path("cfg.json");
  std::ofstream(path) << R"({"lookback": 720, "pyramidal_windows": [24, 48, 72, 144], "d_model": 720})";
  REQUIRE(prf_config_load_json_file(path.c_str(), &cfg) == PRF_OK);
  CHECK(prf_config_validate(cfg) == PRF_OK);
  prf_config_free(cfg);
  CHECK(prf_config_load_json_file(temp_path("missing.json").c_str(), &cfg) == PRF_ERR_USAGE);
  std::filesystem::remove(path);
}

TEST_CASE("train, evaluate, predict and export through the C API") {
  prf_config* cfg = mini_config();
  prf_dataset* data = nullptr;
  REQUIRE(prf_dataset_synthetic(800, 0.1, 3, &data) == PRF_OK);
  std::size_t rows = 0, channels = 0;
  REQUIRE(prf_dataset_shape(data, &rows, &channels) == PRF_OK);
  CHECK(rows == 800);
  CHECK(channels == 3);

  prf_model* model = nullptr;
  REQUIRE(prf_model_create(cfg, channels, &model) == PRF_OK);
  std::size_t params = 0;
  CHECK(prf_model_param_count(model, &params) == PRF_OK);
  CHECK(params > 0);

  const std::string ckpt = temp_path("model.ckpt"), hist = temp_path("history.csv");
  std::vector<std::size_t> epochs;
  prf_train_summary summary{};
  REQUIRE(prf_train(model, data, hist.c_str(), ckpt.c_str(), count_epochs, &epochs, &summary) == PRF_OK);
  CHECK(epochs == std::vector<std::size_t>{1, 2});
  CHECK(summary.epochs_run == 2);
  CHECK(summary.best_epoch >= 1);
  CHECK(summary.first_epoch_train_mae > 0.0);

  prf_metrics val{};
  REQUIRE(prf_evaluate(model, data, PRF_SPLIT_VAL, PRF_FORECASTER_MODEL, &val) == PRF_OK);
  CHECK(val.mae == summary.best_val_mae);
  prf_metrics test{}, persist{}, linear{};
  REQUIRE(prf_evaluate(model, data, PRF_SPLIT_TEST, PRF_FORECASTER_MODEL, &test) == PRF_OK);
  REQUIRE(prf_evaluate(model, data, PRF_SPLIT_TEST, PRF_FORECASTER_PERSISTENCE, &persist) == PRF_OK);
  REQUIRE(prf_evaluate(model, data, PRF_SPLIT_TEST, PRF_FORECASTER_LINEAR, &linear) == PRF_OK);
  CHECK(test.windows == persist.windows);
  CHECK(test.windows == linear.windows);
  CHECK(persist.mse > 0.0);

  prf_model* loaded = nullptr;
  REQUIRE(prf_model_load(ckpt.c_str(), &loaded) == PRF_OK);
  prf_metrics again{};
  REQUIRE(prf_evaluate(loaded, data, PRF_SPLIT_TEST, PRF_FORECASTER_MODEL, &again) == PRF_OK);
  CHECK(again.mse == test.mse);

  std::vector<double> in(2 * 48 * 3, 0.5), out(2 * 12 * 3, 0.0);
  for (std::size_t i = 0; i < in.size(); ++i) in[i] = 0.01 * static_cast<double>(i % 37);
  REQUIRE(prf_model_forecast(loaded, in.data(), 2, out.data()) == PRF_OK);
  CHECK(out[0] != 0.0);

  const std::string pred = temp_path("pred.csv"), emb = temp_path("emb.csv");
  std::size_t written = 0;
  REQUIRE(prf_predict(loaded, data, PRF_SPLIT_TEST, pred.c_str(), &written) == PRF_OK);
  CHECK(written == test.windows * 12 * 3);
  REQUIRE(prf_export_embeddings(loaded, data, PRF_SPLIT_TEST, "r1", 4, emb.c_str(), &written) == PRF_OK);
  CHECK(written == 12);

  const std::string cfg_json = take([&] {
    char* s = nullptr;
    REQUIRE(prf_model_config_json(loaded, &s) == PRF_OK);
    return s;
  }());
  CHECK(cfg_json.find("\"lookback\": 48") != std::string::npos);

  prf_dataset* two = nullptr;
  const std::string two_csv = temp_path("two.csv");
  std::ofstream(two_csv) << "date,a,b\n1,1,2\n2,3,4\n";
  REQUIRE(prf_dataset_load_csv(two_csv.c_str(), 0, &two) == PRF_OK);
  CHECK(prf_evaluate(loaded, two, PRF_SPLIT_TEST, PRF_FORECASTER_MODEL, &again) == PRF_ERR_DATA);

  prf_dataset_free(two);
  prf_model_free(loaded);
  prf_model_free(model);
  prf_dataset_free(data);
  prf_config_free(cfg);
  for (const auto& p : {ckpt, hist, pred, emb, two_csv}) std::filesystem::remove(p);
}

TEST_CASE("analysis entry points") {
  prf_pe_report report{};
  REQUIRE(prf_check_pe(200, 16, 1, &report) == PRF_OK);
  CHECK(report.trials == 200);
  CHECK(report.max_dev < 1e-9);
  double dots[4];
  REQUIRE(prf_pe_dot(8, 1, 2, 0, dots) == PRF_OK);
  CHECK(std::abs(dots[0] - 4.0) < 1e-12);
  CHECK(prf_pe_dot(7, 1, 2, 0, dots) == PRF_ERR_USAGE);

  prf_config* cfg = mini_config();
  const std::size_t lookbacks[] = {16, 32, 64};
  prf_bench_options opt{};
  opt.lookbacks = lookbacks;
  opt.n_lookbacks = 3;
  opt.channels = 2;
  opt.repetitions = 1;
  prf_bench_row rows[2];
  std::size_t n = 0;
  REQUIRE(prf_scaling_bench(cfg, &opt, nullptr, rows, 2, &n) == PRF_OK);
  CHECK(n == 3);
  CHECK(rows[1].lookback == 32);
  opt.n_lookbacks = 2;
  CHECK(prf_scaling_bench(cfg, &opt, nullptr, rows, 2, &n) == PRF_ERR_USAGE);
  prf_config_free(cfg);
}
