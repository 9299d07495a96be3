// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "prformer/analysis.hpp"
#include "prformer/error.hpp"

using namespace prformer;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("prformer_test_analysis_" + name);
}

}  // namespace

TEST_CASE("positional encoding vector layout") {
  const auto pe = pe_vector(4, 1.0);
  REQUIRE(pe.size() == 4);
  CHECK(pe[0] == std::sin(1.0));
  CHECK(pe[1] == std::cos(1.0));
  CHECK(std::fabs(pe[2] - std::sin(0.01)) < 1e-15);
  CHECK(std::fabs(pe[3] - std::cos(0.01)) < 1e-15);
}

TEST_CASE("dot-product identity examples") {
  for (std::size_t d : {2u, 8u, 64u, 512u}) {
    const PeDotResult r = pe_dot_invariance(d, 123.0, 4567.0, 0.0);
    CHECK(std::fabs(r.dot_t - d / 2.0) < 1e-12);
    CHECK(std::fabs(r.cos_sum - d / 2.0) < 1e-12);
  }
  const PeDotResult r = pe_dot_invariance(4, 0.0, 10.0, 1.0);
  CHECK(std::fabs(r.cos_sum - (std::cos(1.0) + std::cos(0.01))) < 1e-15);
  CHECK(std::fabs(r.cos_sum - 1.54025) < 1e-5);
  CHECK(std::fabs(r.dot_t - r.cos_sum) < 1e-12);

  const PeDotResult far = pe_dot_invariance(64, 5.0, 300.0, 7.0);
  CHECK(std::fabs(far.dot_t - far.dot_s) < 1e-9);
  CHECK(std::fabs(far.dot_t - far.cos_sum) < 1e-9);
  CHECK(far.max_dev < 1e-9);
}

TEST_CASE("dot product depends only on the offset over 1000 random draws") {
  const PeCheckReport fixed = check_pe(1000, 64, 1);
  CHECK(fixed.trials == 1000);
  CHECK(fixed.max_dev < 1e-9);
  const PeCheckReport any = check_pe(1000, 0, 2);
  CHECK(any.max_dev < 1e-9);
  CHECK(any.worst_d_model % 2 == 0);
}

TEST_CASE("positional encoding errors") {
  CHECK_THROWS_AS(pe_dot_invariance(7, 1, 2, 3), UsageError);
  CHECK_THROWS_AS(pe_dot_invariance(0, 1, 2, 3), UsageError);
  CHECK_THROWS_AS(pe_dot_invariance(8, -1, 2, 3), UsageError);
  CHECK_THROWS_AS(check_pe(10, 9, 1), UsageError);
}

TEST_CASE("scaling bench validates its sweep") {
  RunConfig base;
  base.pyramidal_windows = {4, 8};
  base.d_model = 8;
  base.heads = 2;
  base.conv_channels = 2;
  BenchOptions opt;
  opt.repetitions = 1;
  opt.warmup = 0;
  opt.channels = 2;
  opt.lookbacks = {64, 128};
  CHECK_THROWS_AS(scaling_bench(base, opt), UsageError);
  opt.lookbacks = {64, 100, 128};
  CHECK_THROWS_AS(scaling_bench(base, opt), UsageError);
  CHECK_THROWS_AS(parse_bench_component("gpu"), UsageError);
  CHECK(parse_bench_component("encoder") == BenchComponent::Encoder);
}

TEST_CASE("scaling bench reports linear FLOP growth in L for the embedding") {
  RunConfig base;
  base.pyramidal_windows = {4, 8};
  base.d_model = 8;
  base.heads = 2;
  base.conv_channels = 2;
  BenchOptions opt;
  opt.repetitions = 2;
  opt.warmup = 0;
  opt.channels = 2;
  opt.lookbacks = {64, 128, 256};
  const auto rows = scaling_bench(base, opt);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].ratio == 0.0);
  for (std::size_t i = 1; i < 3; ++i) {
    CHECK(rows[i].lookback == 2 * rows[i - 1].lookback);
    CHECK(rows[i].median_seconds > 0.0);
    const double flop_ratio = static_cast<double>(rows[i].flops) / static_cast<double>(rows[i - 1].flops);
    CHECK(flop_ratio > 1.8);
    CHECK(flop_ratio < 2.2);
  }
  const auto csv = temp_path("bench.csv");
  write_bench_csv(rows, BenchComponent::Pre, csv.string());
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("component", 0) == 0);
  std::filesystem::remove(csv);

  opt.lookbacks.clear();
  opt.d_models = {8, 16};
  opt.component = BenchComponent::Model;
  const auto by_d = scaling_bench(base, opt);
  CHECK(by_d.size() == 2);
  CHECK(by_d[1].d_model == 16);
}

TEST_CASE("embedding export writes one row per window and variable") {
  RunConfig cfg;
  cfg.lookback = 48;
  cfg.pred_len = 12;
  cfg.pyramidal_windows = {4, 8};
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.conv_channels = 2;
  const PRformerModel m(cfg, 3);
  SyntheticOptions so;
  so.rows = 200;
  const SeriesTable t = make_synthetic(so);
  const auto path = temp_path("emb.csv");
  const std::size_t rows = export_embeddings(m, t, {100, 200}, false, "run7", path.string(), 5);
  CHECK(rows == 15);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "run_id,window,variable,e0,e1,e2,e3,e4,e5,e6,e7");
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    CHECK(line.rfind("run7,", 0) == 0);
    CHECK(std::count(line.begin(), line.end(), ',') == 10);
  }
  CHECK(n == 15);
  std::filesystem::remove(path);
}
