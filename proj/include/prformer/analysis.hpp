// SPDX-License-Identifier: Apache-2.0
//
// Sinusoidal positional-encoding identity check, runtime scaling benchmark
// and embedding export.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prformer/config.hpp"
#include "prformer/data.hpp"
#include "prformer/model.hpp"

namespace prformer {

// PE(t)[2k] = sin(w_k t), PE(t)[2k+1] = cos(w_k t), w_k = 10000^(-2k/d_model).
std::vector<double> pe_vector(std::size_t d_model, double t);

struct PeDotResult {
  double dot_t = 0.0;      // PE(t) . PE(t + dt)
  double dot_s = 0.0;      // PE(s) . PE(s + dt)
  double cos_sum = 0.0;    // sum_k cos(w_k dt)
  double max_dev = 0.0;    // largest pairwise gap among the three
};

// Throws UsageError for odd or zero d_model and negative positions.
PeDotResult pe_dot_invariance(std::size_t d_model, double t, double s, double dt);

struct PeCheckReport {
  std::size_t trials = 0;
  double max_dev = 0.0;
  std::size_t worst_d_model = 0;
  double worst_t = 0.0, worst_s = 0.0, worst_dt = 0.0;
};

// Random draws of (t, s, dt); d_model fixed when non-zero, otherwise drawn
// from the even numbers in [2, 512].
PeCheckReport check_pe(std::size_t trials, std::size_t d_model, std::uint64_t seed);

enum class BenchComponent { Pre, Encoder, Model };
BenchComponent parse_bench_component(const std::string& name);
std::string bench_component_name(BenchComponent c);

struct BenchOptions {
  std::vector<std::size_t> lookbacks;  // sweep over L at template d_model
  std::vector<std::size_t> d_models;   // sweep over D at template lookback, used when lookbacks is empty
  BenchComponent component = BenchComponent::Pre;
  std::size_t channels = 7;
  std::size_t repetitions = 5;
  std::size_t warmup = 1;
  bool backward = false;
};

struct BenchRow {
  std::size_t lookback = 0;
  std::size_t d_model = 0;
  double median_seconds = 0.0;
  double mean_seconds = 0.0;
  double ratio = 0.0;  // median over the previous row's median, 0 for the first row
  std::uint64_t flops = 0;
};

// Times forward (optionally forward+backward) of the chosen component built
// from `base`. A lookback sweep needs at least three values, each a multiple of
// the top pyramid window.
std::vector<BenchRow> scaling_bench(const RunConfig& base, const BenchOptions& options);
void write_bench_csv(const std::vector<BenchRow>& rows, BenchComponent component, const std::string& path);

// One row per (window, variable): run_id, window start, variable index, then
// the D embedding values entering the encoder. max_windows = 0 exports all.
std::size_t export_embeddings(const PRformerModel& model, const SeriesTable& table, const IndexRange& range,
                              bool strict_context, const std::string& run_id, const std::string& path,
                              std::size_t max_windows = 0);

}  // namespace prformer
