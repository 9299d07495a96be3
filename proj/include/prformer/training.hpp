// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "prformer/data.hpp"
#include "prformer/model.hpp"

namespace prformer {

// mean(|y_hat - y|); subgradient 0 where they tie.
Tensor mae_loss(const Tensor& y, const Tensor& y_hat);
Tensor mse_loss(const Tensor& y, const Tensor& y_hat);

class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one bias-corrected update using each tensor's accumulated grad.
  // Tensors without a gradient are treated as having a zero gradient.
  void step(std::vector<Tensor>& params, double lr);
  std::size_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// base * decay^max(0, epoch - (decay_start - 1)); epochs count from 1.
double learning_rate_for_epoch(double base, std::size_t epoch, double decay = 0.9, std::size_t decay_start = 4);

// Scales all gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;
  std::vector<double> mse_by_step;  // per horizon step
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_mae = 0.0;
  double val_mae = 0.0;
  double val_mse = 0.0;
  double seconds = 0.0;
};

struct TrainOptions {
  std::string history_csv;      // written after every epoch when non-empty
  std::string checkpoint_path;  // best-validation checkpoint, when non-empty
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double best_val_mae = 0.0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

struct DataSplits {
  SplitRanges ranges;
  bool strict_context = false;
};

// Split ranges for a table under the model's configuration, validated to
// hold at least one window each.
DataSplits resolve_splits(const RunConfig& config, const SeriesTable& table);

// Trains in place, then restores the parameters of the best validation epoch.
TrainResult train(PRformerModel& model, const SeriesTable& table, const TrainOptions& options = {});

// Repeated Adam steps on one batch; returns the MAE after each step.
std::vector<double> fit_batch(PRformerModel& model, const WindowBatch& batch, std::size_t steps, double lr);

using Forecaster = std::function<Tensor(const Tensor& inputs)>;  // (B, L, C) -> (B, H, C)

Metrics evaluate_forecaster(const Forecaster& f, const SeriesTable& table, const IndexRange& range,
                            std::size_t lookback, std::size_t horizon, bool strict_context,
                            std::size_t batch_size = 256);

// Metrics of the model's raw-scale forecasts over every window of `range`, in order.
Metrics evaluate(const PRformerModel& model, const SeriesTable& table, const IndexRange& range,
                 bool strict_context);

enum class SplitPart { Train, Val, Test };
IndexRange pick(const SplitRanges& s, SplitPart part);

struct PredictionRow {
  std::size_t window_start;
  std::size_t horizon_step;
  std::size_t channel;
  double y_true;
  double y_pred;
};

std::vector<PredictionRow> predict_range(const PRformerModel& model, const SeriesTable& table,
                                         const IndexRange& range, bool strict_context);
// Columns window_start,horizon_step,channel,y_true,y_pred.
void write_predictions_csv(const std::vector<PredictionRow>& rows, const std::string& path);
void write_history_csv(const std::vector<EpochRecord>& history, const std::string& path);

// Repeats the last observed value over the horizon.
Tensor persistence_forecast(const Tensor& inputs, std::size_t horizon);

// Per-channel least-squares map from the lookback window (plus intercept) to
// the horizon, fitted on training windows.
class LinearWindowBaseline {
 public:
  LinearWindowBaseline(const SeriesTable& table, const IndexRange& train, std::size_t lookback, std::size_t horizon,
                       double ridge = 1e-6);
  Tensor forecast(const Tensor& inputs) const;

 private:
  std::size_t lookback_, horizon_, channels_;
  std::vector<std::vector<double>> coef_;  // per channel: (lookback + 1) x horizon
};

}  // namespace prformer
