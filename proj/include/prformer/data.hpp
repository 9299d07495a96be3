// SPDX-License-Identifier: Apache-2.0
//
// Series ingestion, chronological splits and sliding windows.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "prformer/tensor.hpp"

namespace prformer {

struct SeriesTable {
  std::vector<std::string> timestamps;
  std::vector<std::string> channels;
  std::vector<double> values;  // rows x channels, row-major

  std::size_t rows() const { return timestamps.size(); }
  std::size_t cols() const { return channels.size(); }
  double at(std::size_t row, std::size_t col) const { return values[row * cols() + col]; }
};

// Header row, first column is the date, remaining columns numeric. Stops
// after max_rows data rows when max_rows > 0.
SeriesTable load_csv(const std::string& path, std::size_t max_rows = 0);
SeriesTable parse_csv(std::istream& in, const std::string& source, std::size_t max_rows = 0);
// Values are printed with max_digits10, so reading back is bit-exact.
void write_csv(const SeriesTable& table, const std::string& path);

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

enum class SplitScheme { Ett622, Standard712 };

// "6:2:2", "7:1:2", or "auto" (6:2:2 when the dataset file name starts with "ETT").
SplitScheme parse_split_scheme(const std::string& scheme, const std::string& dataset_path);

struct SplitRanges {
  IndexRange train, val, test;
};

// train = floor(r_train * n), val = floor(r_val * n), test = the rest.
SplitRanges split(std::size_t n, SplitScheme scheme);

// Windows whose targets lie in `range`. With strict_context the lookback must
// also lie in the range; otherwise it may reach back before range.begin.
std::vector<std::size_t> window_starts(const IndexRange& range, std::size_t lookback, std::size_t horizon,
                                       bool strict_context);

// Throws DataError when any split holds no complete window.
void check_split_fits(const SplitRanges& splits, std::size_t lookback, std::size_t horizon, bool strict_context);

struct WindowBatch {
  Tensor inputs;   // (batch, L, C)
  Tensor targets;  // (batch, H, C)
  std::vector<std::size_t> starts;  // first input row of each window
};

WindowBatch make_batch(const SeriesTable& table, std::span<const std::size_t> starts, std::size_t lookback,
                       std::size_t horizon);

// Batches over a fixed set of window starts. Shuffled streams use a
// seed-determined permutation; the final partial batch is emitted.
class WindowStream {
 public:
  WindowStream(const SeriesTable& table, std::vector<std::size_t> starts, std::size_t lookback, std::size_t horizon,
               std::size_t batch_size, bool shuffle, std::uint64_t seed);

  bool next(WindowBatch& batch);
  std::size_t batch_count() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const SeriesTable& table_;
  std::vector<std::size_t> order_;
  std::size_t lookback_, horizon_, batch_size_;
  std::size_t cursor_ = 0;
};

WindowStream window_iter(const SeriesTable& table, const IndexRange& range, std::size_t lookback, std::size_t horizon,
                         std::size_t batch_size, bool shuffle, std::uint64_t seed, bool strict_context = true);

struct SyntheticOptions {
  std::size_t rows = 2000;
  double noise = 0.1;
  std::uint64_t seed = 7;
};

// Three channels built from period-24 and period-96 sinusoids, a shared
// AR(1) driver with lagged cross-channel coupling, and Gaussian noise.
SeriesTable make_synthetic(const SyntheticOptions& opt);

}  // namespace prformer
