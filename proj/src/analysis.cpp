// SPDX-License-Identifier: Apache-2.0

#include "prformer/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <fstream>
#include <limits>
#include <memory>
#include <new>
#include <numeric>
#include <random>

#include "prformer/error.hpp"

namespace prformer {

namespace {

double frequency(std::size_t k, std::size_t d_model) {
  return std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(d_model));
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = gauss(rng);
  return Tensor(std::move(shape), std::move(v));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<double> pe_vector(std::size_t d_model, double t) {
  if (d_model == 0 || d_model % 2 != 0)
    throw UsageError("positional encoding: d_model must be even and positive, got " + std::to_string(d_model));
  std::vector<double> pe(d_model);
  for (std::size_t k = 0; k < d_model / 2; ++k) {
    const double w = frequency(k, d_model);
    pe[2 * k] = std::sin(w * t);
    pe[2 * k + 1] = std::cos(w * t);
  }
  return pe;
}

PeDotResult pe_dot_invariance(std::size_t d_model, double t, double s, double dt) {
  if (t < 0.0 || s < 0.0 || dt < 0.0) throw UsageError("positional encoding: t, s and dt must be non-negative");
  PeDotResult r;
  r.dot_t = dot(pe_vector(d_model, t), pe_vector(d_model, t + dt));
  r.dot_s = dot(pe_vector(d_model, s), pe_vector(d_model, s + dt));
  for (std::size_t k = 0; k < d_model / 2; ++k) r.cos_sum += std::cos(frequency(k, d_model) * dt);
  r.max_dev = std::max({std::fabs(r.dot_t - r.dot_s), std::fabs(r.dot_t - r.cos_sum), std::fabs(r.dot_s - r.cos_sum)});
  return r;
}

PeCheckReport check_pe(std::size_t trials, std::size_t d_model, std::uint64_t seed) {
  if (trials == 0) throw UsageError("check-pe: trials must be positive");
  if (d_model % 2 != 0) throw UsageError("check-pe: d_model must be even, got " + std::to_string(d_model));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> half_dim(1, 256);
  std::uniform_int_distribution<int> position(0, 10000);
  std::uniform_int_distribution<int> offset(0, 1000);
  PeCheckReport report;
  report.trials = trials;
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t d = d_model ? d_model : 2 * half_dim(rng);
    const double t = position(rng), s = position(rng), dt = offset(rng);
    const PeDotResult r = pe_dot_invariance(d, t, s, dt);
    if (i == 0 || r.max_dev > report.max_dev) {
      report.max_dev = r.max_dev;
      report.worst_d_model = d;
      report.worst_t = t;
      report.worst_s = s;
      report.worst_dt = dt;
    }
  }
  return report;
}

BenchComponent parse_bench_component(const std::string& name) {
  if (name == "pre") return BenchComponent::Pre;
  if (name == "encoder") return BenchComponent::Encoder;
  if (name == "model") return BenchComponent::Model;
  throw UsageError("unknown bench component '" + name + "' (expected pre, encoder or model)");
}

std::string bench_component_name(BenchComponent c) {
  switch (c) {
    case BenchComponent::Encoder: return "encoder";
    case BenchComponent::Model: return "model";
    default: return "pre";
  }
}

std::vector<BenchRow> scaling_bench(const RunConfig& base, const BenchOptions& options) {
  if (options.repetitions == 0) throw UsageError("bench: repetitions must be positive");
  if (options.channels == 0) throw UsageError("bench: channels must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> points;  // (lookback, d_model)
  if (!options.lookbacks.empty()) {
    if (options.lookbacks.size() < 3) throw UsageError("bench: need at least three lookback values");
    const std::size_t top = base.pyramidal_windows.empty() ? 1 : base.pyramidal_windows.back();
    for (std::size_t l : options.lookbacks) {
      if (l == 0 || l % top != 0)
        throw UsageError("bench: lookback " + std::to_string(l) + " is not a multiple of the top window " +
                         std::to_string(top));
      points.emplace_back(l, base.d_model);
    }
  } else if (!options.d_models.empty()) {
    for (std::size_t d : options.d_models) points.emplace_back(base.lookback, d);
  } else {
    throw UsageError("bench: give lookbacks or d_models to sweep");
  }

  std::vector<BenchRow> rows;
  std::mt19937_64 rng(base.seed);
  try {
    for (const auto& [lookback, d_model] : points) {
      RunConfig cfg = base;
      cfg.lookback = lookback;
      cfg.d_model = d_model;
      cfg.dropout = 0.0;
      std::function<Tensor()> run;
      PyramidConfig pyramid;
      PREParams pre;
      EncoderParams enc;
      std::unique_ptr<PRformerModel> model;
      Tensor input;
      EncoderOptions eopt;
      eopt.heads = cfg.heads;
      eopt.mixer = cfg.variant == Variant::V1 ? MixerKind::TokenLinear : MixerKind::Attention;
      switch (options.component) {
        case BenchComponent::Pre:
          pyramid = build_pyramid_config(cfg.pyramidal_windows, lookback);
          pre = make_pre_params(pyramid, cfg.conv_channels, d_model, cfg.strict_dims, rng);
          input = random_tensor({options.channels, lookback}, rng);
          run = [&] { return pre_embed(input, pre, pyramid, cfg.temperature); };
          break;
        case BenchComponent::Encoder:
          enc = make_encoder_params(cfg.e_layers, d_model, cfg.ff_dim(), cfg.pred_len, eopt.mixer, rng);
          input = random_tensor({options.channels, d_model}, rng);
          run = [&] { return encode(input, enc, eopt, rng); };
          break;
        case BenchComponent::Model:
          cfg.validate();
          model = std::make_unique<PRformerModel>(cfg, options.channels);
          input = random_tensor({1, lookback, options.channels}, rng);
          run = [&] { return model->forward(input, false, rng).forecast; };
          break;
      }
      auto once = [&] {
        if (options.backward) {
          backward(sum_all(run()));
        } else {
          NoGradGuard ng;
          run();
        }
      };
      for (std::size_t w = 0; w < options.warmup; ++w) once();
      std::vector<double> times;
      BenchRow row;
      row.lookback = lookback;
      row.d_model = d_model;
      {
        FlopCounter flops;
        once();
        row.flops = flops.count();
      }
      for (std::size_t r = 0; r < options.repetitions; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        once();
        times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
      row.median_seconds = median(times);
      row.mean_seconds = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
      row.ratio = rows.empty() ? 0.0 : row.median_seconds / rows.back().median_seconds;
      rows.push_back(row);
    }
  } catch (const std::bad_alloc&) {
    throw DataError("bench: insufficient memory for the requested sizes");
  }
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, BenchComponent component, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.precision(8);
  out << "component,lookback,d_model,median_seconds,mean_seconds,ratio,flops\n";
  for (const auto& r : rows)
    out << bench_component_name(component) << ',' << r.lookback << ',' << r.d_model << ',' << r.median_seconds << ','
        << r.mean_seconds << ',' << r.ratio << ',' << r.flops << '\n';
}

std::size_t export_embeddings(const PRformerModel& model, const SeriesTable& table, const IndexRange& range,
                              bool strict_context, const std::string& run_id, const std::string& path,
                              std::size_t max_windows) {
  if (table.cols() != model.channels())
    throw DataError("dataset has " + std::to_string(table.cols()) + " channels, checkpoint expects " +
                    std::to_string(model.channels()));
  const RunConfig& cfg = model.config();
  auto starts = window_starts(range, cfg.lookback, cfg.pred_len, strict_context);
  if (starts.empty()) throw DataError("embedding export: range holds no complete window");
  if (max_windows && starts.size() > max_windows) starts.resize(max_windows);

  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "run_id,window,variable";
  for (std::size_t d = 0; d < cfg.d_model; ++d) out << ",e" << d;
  out << '\n';

  WindowStream stream(table, starts, cfg.lookback, cfg.pred_len, std::max<std::size_t>(cfg.batch_size, 64), false, 0);
  WindowBatch batch;
  std::mt19937_64 unused(0);
  NoGradGuard ng;
  std::size_t rows = 0;
  while (stream.next(batch)) {
    const Tensor e = model.forward(batch.inputs, false, unused).embeddings;  // (B, C, D)
    const auto v = e.data();
    const std::size_t c = table.cols(), d = cfg.d_model;
    for (std::size_t b = 0; b < batch.starts.size(); ++b)
      for (std::size_t ch = 0; ch < c; ++ch) {
        out << run_id << ',' << batch.starts[b] << ',' << ch;
        for (std::size_t k = 0; k < d; ++k) out << ',' << v[(b * c + ch) * d + k];
        out << '\n';
        ++rows;
      }
  }
  return rows;
}

}  // namespace prformer
