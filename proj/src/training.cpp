// SPDX-License-Identifier: Apache-2.0

#include "prformer/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <Eigen/Dense>

#include "prformer/checkpoint.hpp"
#include "prformer/error.hpp"

namespace prformer {

Tensor mae_loss(const Tensor& y, const Tensor& y_hat) {
  if (y.shape() != y_hat.shape())
    throw UsageError("mae_loss: shape mismatch " + shape_str(y.shape()) + " vs " + shape_str(y_hat.shape()));
  return mean_all(abs(sub(y_hat, y)));
}

Tensor mse_loss(const Tensor& y, const Tensor& y_hat) {
  if (y.shape() != y_hat.shape())
    throw UsageError("mse_loss: shape mismatch " + shape_str(y.shape()) + " vs " + shape_str(y_hat.shape()));
  return mean_all(square(sub(y_hat, y)));
}

void Adam::step(std::vector<Tensor>& params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw UsageError("adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto values = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != values.size()) throw UsageError("adam: parameter shape changed between steps");
    const bool has = p.has_grad();
    const auto g = has ? p.grad() : std::span<const double>{};
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      values[j] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

double learning_rate_for_epoch(double base, std::size_t epoch, double decay, std::size_t decay_start) {
  const std::size_t held = decay_start > 0 ? decay_start - 1 : 0;
  const std::size_t exponent = epoch > held ? epoch - held : 0;
  return base * std::pow(decay, static_cast<double>(exponent));
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (double& g : p.mutable_grad()) g *= f;
  }
  return norm;
}

DataSplits resolve_splits(const RunConfig& config, const SeriesTable& table) {
  DataSplits s;
  s.ranges = split(table.rows(), parse_split_scheme(config.split_scheme, config.dataset));
  s.strict_context = config.strict_split;
  check_split_fits(s.ranges, config.lookback, config.pred_len, s.strict_context);
  return s;
}

IndexRange pick(const SplitRanges& s, SplitPart part) {
  switch (part) {
    case SplitPart::Train: return s.train;
    case SplitPart::Val: return s.val;
    default: return s.test;
  }
}

namespace {

std::vector<std::vector<double>> snapshot(const ParamStore& store) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : store.entries()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

void restore(ParamStore& store, const std::vector<std::vector<double>>& values) {
  auto entries = store.tensors();
  for (std::size_t i = 0; i < entries.size(); ++i)
    std::copy(values[i].begin(), values[i].end(), entries[i].mutable_data().begin());
}

// Objective for one batch on the configured scale.
Tensor batch_loss(const PRformerModel& model, const WindowBatch& batch, std::mt19937_64& rng, bool training) {
  const ForwardOutput out = model.forward(batch.inputs, training, rng);
  if (model.config().loss_scale == "normalized") {
    const RevinState& st = out.revin;
    const Tensor target = add(mul(div(sub(batch.targets, st.mean), st.std), st.gamma), st.beta);
    return mae_loss(target, out.normalized_forecast);
  }
  return mae_loss(batch.targets, out.forecast);
}

void step_model(PRformerModel& model, std::vector<Tensor>& params, Adam& adam, const Tensor& loss, double lr) {
  if (!std::isfinite(loss.item()))
    throw NumericError("training diverged: loss is " + std::to_string(loss.item()) + " at optimizer step " +
                       std::to_string(adam.steps() + 1) + " (lower lr or set grad_clip)");
  model.params().zero_grad();
  backward(loss);
  if (model.config().grad_clip > 0.0) clip_grad_norm(params, model.config().grad_clip);
  adam.step(params, lr);
  clamp_revin_gain(model.revin());
}

}  // namespace

TrainResult train(PRformerModel& model, const SeriesTable& table, const TrainOptions& options) {
  const RunConfig& cfg = model.config();
  if (table.cols() != model.channels())
    throw DataError("dataset has " + std::to_string(table.cols()) + " channels, model expects " +
                    std::to_string(model.channels()));
  const DataSplits splits = resolve_splits(cfg, table);
  const auto train_starts = window_starts(splits.ranges.train, cfg.lookback, cfg.pred_len, true);

  std::vector<Tensor> params = model.parameters();
  Adam adam;
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  TrainResult result;
  result.best_val_mae = std::numeric_limits<double>::infinity();
  auto best = snapshot(model.params());
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = learning_rate_for_epoch(cfg.lr, epoch, cfg.lr_decay, cfg.decay_start_epoch);

    WindowStream stream(table, train_starts, cfg.lookback, cfg.pred_len, cfg.batch_size, true, cfg.seed + epoch);
    WindowBatch batch;
    double loss_sum = 0.0;
    std::size_t seen = 0, steps = 0;
    while (stream.next(batch)) {
      const Tensor loss = batch_loss(model, batch, dropout_rng, true);
      step_model(model, params, adam, loss, rec.lr);
      loss_sum += loss.item() * static_cast<double>(batch.starts.size());
      seen += batch.starts.size();
      if (cfg.max_steps_per_epoch && ++steps == cfg.max_steps_per_epoch) break;
    }
    rec.train_mae = loss_sum / static_cast<double>(seen);

    const Metrics val = evaluate(model, table, splits.ranges.val, splits.strict_context);
    rec.val_mae = val.mae;
    rec.val_mse = val.mse;
    if (!std::isfinite(val.mae)) throw NumericError("validation MAE is not finite at epoch " + std::to_string(epoch));
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);

    if (val.mae < result.best_val_mae) {
      result.best_val_mae = val.mae;
      result.best_epoch = epoch;
      best = snapshot(model.params());
      since_best = 0;
      if (!options.checkpoint_path.empty()) save_checkpoint(model, options.checkpoint_path);
    } else {
      ++since_best;
    }
    if (!options.history_csv.empty()) write_history_csv(result.history, options.history_csv);
    if (options.on_epoch) options.on_epoch(rec);
    if (cfg.patience && since_best >= cfg.patience) {
      result.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  restore(model.params(), best);
  return result;
}

std::vector<double> fit_batch(PRformerModel& model, const WindowBatch& batch, std::size_t steps, double lr) {
  std::vector<Tensor> params = model.parameters();
  Adam adam;
  std::mt19937_64 rng(model.config().seed);
  std::vector<double> losses;
  losses.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const Tensor loss = batch_loss(model, batch, rng, false);
    step_model(model, params, adam, loss, lr);
    losses.push_back(loss.item());
  }
  return losses;
}

Metrics evaluate_forecaster(const Forecaster& f, const SeriesTable& table, const IndexRange& range,
                            std::size_t lookback, std::size_t horizon, bool strict_context, std::size_t batch_size) {
  const auto starts = window_starts(range, lookback, horizon, strict_context);
  if (starts.empty()) throw DataError("evaluation range holds no complete window");
  WindowStream stream(table, starts, lookback, horizon, batch_size, false, 0);
  Metrics m;
  m.mse_by_step.assign(horizon, 0.0);
  double se = 0.0, ae = 0.0;
  std::size_t count = 0;
  const std::size_t c = table.cols();
  WindowBatch batch;
  NoGradGuard ng;
  while (stream.next(batch)) {
    const Tensor pred = f(batch.inputs);
    if (pred.shape() != batch.targets.shape())
      throw DataError("forecast shape " + shape_str(pred.shape()) + " does not match targets " +
                      shape_str(batch.targets.shape()));
    const auto p = pred.data();
    const auto y = batch.targets.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p[i] - y[i];
      se += d * d;
      ae += std::fabs(d);
      m.mse_by_step[(i / c) % horizon] += d * d;
    }
    count += p.size();
    m.windows += batch.starts.size();
  }
  m.mse = se / static_cast<double>(count);
  m.mae = ae / static_cast<double>(count);
  for (auto& v : m.mse_by_step) v /= static_cast<double>(m.windows * c);
  return m;
}

Metrics evaluate(const PRformerModel& model, const SeriesTable& table, const IndexRange& range, bool strict_context) {
  if (table.cols() != model.channels())
    throw DataError("dataset has " + std::to_string(table.cols()) + " channels, checkpoint expects " +
                    std::to_string(model.channels()));
  const RunConfig& cfg = model.config();
  return evaluate_forecaster([&](const Tensor& x) { return model.predict(x); }, table, range, cfg.lookback,
                             cfg.pred_len, strict_context, std::max<std::size_t>(cfg.batch_size, 64));
}

std::vector<PredictionRow> predict_range(const PRformerModel& model, const SeriesTable& table,
                                         const IndexRange& range, bool strict_context) {
  if (table.cols() != model.channels())
    throw DataError("dataset has " + std::to_string(table.cols()) + " channels, checkpoint expects " +
                    std::to_string(model.channels()));
  const RunConfig& cfg = model.config();
  const auto starts = window_starts(range, cfg.lookback, cfg.pred_len, strict_context);
  if (starts.empty()) throw DataError("prediction range holds no complete window");
  WindowStream stream(table, starts, cfg.lookback, cfg.pred_len, std::max<std::size_t>(cfg.batch_size, 64), false, 0);
  std::vector<PredictionRow> rows;
  const std::size_t c = table.cols(), h = cfg.pred_len;
  WindowBatch batch;
  while (stream.next(batch)) {
    const Tensor pred = model.predict(batch.inputs);
    const auto p = pred.data();
    const auto y = batch.targets.data();
    for (std::size_t b = 0; b < batch.starts.size(); ++b)
      for (std::size_t t = 0; t < h; ++t)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t i = (b * h + t) * c + ch;
          rows.push_back({batch.starts[b], t + 1, ch, y[i], p[i]});
        }
  }
  return rows;
}

void write_predictions_csv(const std::vector<PredictionRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "window_start,horizon_step,channel,y_true,y_pred\n";
  for (const auto& r : rows)
    out << r.window_start << ',' << r.horizon_step << ',' << r.channel << ',' << r.y_true << ',' << r.y_pred << '\n';
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.precision(10);
  out << "epoch,lr,train_mae,val_mae,val_mse,seconds\n";
  for (const auto& r : history)
    out << r.epoch << ',' << r.lr << ',' << r.train_mae << ',' << r.val_mae << ',' << r.val_mse << ',' << r.seconds
        << '\n';
}

Tensor persistence_forecast(const Tensor& inputs, std::size_t horizon) {
  const std::size_t b = inputs.dim(0), l = inputs.dim(1), c = inputs.dim(2);
  const auto x = inputs.data();
  std::vector<double> out(b * horizon * c);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < horizon; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) out[(i * horizon + t) * c + ch] = x[(i * l + l - 1) * c + ch];
  return Tensor({b, horizon, c}, std::move(out));
}

LinearWindowBaseline::LinearWindowBaseline(const SeriesTable& table, const IndexRange& train, std::size_t lookback,
                                           std::size_t horizon, double ridge)
    : lookback_(lookback), horizon_(horizon), channels_(table.cols()) {
  const auto starts = window_starts(train, lookback, horizon, true);
  if (starts.empty()) throw DataError("linear baseline: training range holds no complete window");
  const std::size_t n = starts.size(), p = lookback + 1;
  for (std::size_t ch = 0; ch < channels_; ++ch) {
    Eigen::MatrixXd x(n, p), y(n, horizon);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < lookback; ++t)
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = table.at(starts[i] + t, ch);
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(lookback)) = 1.0;
      for (std::size_t t = 0; t < horizon; ++t)
        y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = table.at(starts[i] + lookback + t, ch);
    }
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += ridge * static_cast<double>(n);
    const Eigen::MatrixXd coef = gram.ldlt().solve(x.transpose() * y);
    coef_.emplace_back(coef.data(), coef.data() + coef.size());  // column-major (p x horizon)
  }
}

Tensor LinearWindowBaseline::forecast(const Tensor& inputs) const {
  if (inputs.rank() != 3 || inputs.dim(1) != lookback_ || inputs.dim(2) != channels_)
    throw UsageError("linear baseline: unexpected input shape " + shape_str(inputs.shape()));
  const std::size_t b = inputs.dim(0), p = lookback_ + 1;
  const auto x = inputs.data();
  std::vector<double> out(b * horizon_ * channels_);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t ch = 0; ch < channels_; ++ch) {
      const auto& coef = coef_[ch];
      for (std::size_t t = 0; t < horizon_; ++t) {
        double acc = coef[t * p + lookback_];
        for (std::size_t k = 0; k < lookback_; ++k) acc += x[(i * lookback_ + k) * channels_ + ch] * coef[t * p + k];
        out[(i * horizon_ + t) * channels_ + ch] = acc;
      }
    }
  return Tensor({b, horizon_, channels_}, std::move(out));
}

}  // namespace prformer
