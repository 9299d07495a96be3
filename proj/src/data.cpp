// SPDX-License-Identifier: Apache-2.0

#include "prformer/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "prformer/error.hpp"

namespace prformer {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    out.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

SeriesTable parse_csv(std::istream& in, const std::string& source, std::size_t max_rows) {
  SeriesTable table;
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw DataError(source + ": empty file");
  const auto header = split_fields(trim(line));
  if (header.size() < 2) throw DataError(source + ": need a date column and at least one value column");
  for (std::size_t i = 1; i < header.size(); ++i) table.channels.emplace_back(trim(header[i]));

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    if (max_rows && table.rows() == max_rows) break;
    const auto fields = split_fields(row);
    if (fields.size() != header.size())
      throw DataError(source + ": line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(header.size()));
    std::string stamp(trim(fields[0]));
    if (!table.timestamps.empty() && !(table.timestamps.back() < stamp))
      throw DataError(source + ": line " + std::to_string(line_no) + ": timestamp '" + stamp +
                      "' does not follow '" + table.timestamps.back() + "'");
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const std::string_view cell = trim(fields[c]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
        throw DataError(source + ": line " + std::to_string(line_no) + ", column " + std::to_string(c + 1) + " ('" +
                        table.channels[c - 1] + "'): non-numeric value '" + std::string(cell) + "'");
      table.values.push_back(v);
    }
    table.timestamps.push_back(std::move(stamp));
  }
  if (table.rows() == 0) throw DataError(source + ": no data rows");
  return table;
}

SeriesTable load_csv(const std::string& path, std::size_t max_rows) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return parse_csv(in, path, max_rows);
}

void write_csv(const SeriesTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "date";
  for (const auto& c : table.channels) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < table.rows(); ++r) {
    out << table.timestamps[r];
    for (std::size_t c = 0; c < table.cols(); ++c) out << ',' << table.at(r, c);
    out << '\n';
  }
}

SplitScheme parse_split_scheme(const std::string& scheme, const std::string& dataset_path) {
  if (scheme == "6:2:2") return SplitScheme::Ett622;
  if (scheme == "7:1:2") return SplitScheme::Standard712;
  if (scheme == "auto") {
    const auto slash = dataset_path.find_last_of("/\\");
    const std::string base = slash == std::string::npos ? dataset_path : dataset_path.substr(slash + 1);
    return base.rfind("ETT", 0) == 0 ? SplitScheme::Ett622 : SplitScheme::Standard712;
  }
  throw UsageError("unknown split scheme '" + scheme + "'");
}

SplitRanges split(std::size_t n, SplitScheme scheme) {
  // Integer arithmetic keeps floor(0.6 * n) exact for every n.
  const std::size_t train_parts = scheme == SplitScheme::Ett622 ? 6 : 7;
  const std::size_t val_parts = scheme == SplitScheme::Ett622 ? 2 : 1;
  const std::size_t n_train = n * train_parts / 10;
  const std::size_t n_val = n * val_parts / 10;
  SplitRanges s;
  s.train = {0, n_train};
  s.val = {n_train, n_train + n_val};
  s.test = {n_train + n_val, n};
  return s;
}

std::vector<std::size_t> window_starts(const IndexRange& range, std::size_t lookback, std::size_t horizon,
                                       bool strict_context) {
  std::vector<std::size_t> starts;
  if (range.end < range.begin) return starts;
  // First start whose lookback is available.
  std::size_t first = range.begin;
  if (!strict_context) first = range.begin >= lookback ? range.begin - lookback : 0;
  for (std::size_t s = first; s + lookback + horizon <= range.end; ++s) starts.push_back(s);
  return starts;
}

void check_split_fits(const SplitRanges& splits, std::size_t lookback, std::size_t horizon, bool strict_context) {
  const std::pair<const char*, const IndexRange*> parts[] = {
      {"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}};
  for (const auto& [name, range] : parts) {
    // The training split never has earlier context to borrow.
    const bool strict = strict_context || range->begin == 0;
    if (window_starts(*range, lookback, horizon, strict).empty())
      throw DataError(std::string(name) + " split of " + std::to_string(range->size()) +
                      " rows cannot hold one window of lookback " + std::to_string(lookback) + " + horizon " +
                      std::to_string(horizon));
  }
}

WindowBatch make_batch(const SeriesTable& table, std::span<const std::size_t> starts, std::size_t lookback,
                       std::size_t horizon) {
  const std::size_t c = table.cols();
  const std::size_t b = starts.size();
  std::vector<double> in(b * lookback * c), out(b * horizon * c);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t s = starts[i];
    if (s + lookback + horizon > table.rows())
      throw DataError("window starting at " + std::to_string(s) + " runs past the end of the series");
    const auto first = table.values.begin() + static_cast<std::ptrdiff_t>(s * c);
    std::copy_n(first, lookback * c, in.begin() + static_cast<std::ptrdiff_t>(i * lookback * c));
    std::copy_n(first + static_cast<std::ptrdiff_t>(lookback * c), horizon * c,
                out.begin() + static_cast<std::ptrdiff_t>(i * horizon * c));
  }
  WindowBatch batch;
  batch.inputs = Tensor({b, lookback, c}, std::move(in));
  batch.targets = Tensor({b, horizon, c}, std::move(out));
  batch.starts.assign(starts.begin(), starts.end());
  return batch;
}

WindowStream::WindowStream(const SeriesTable& table, std::vector<std::size_t> starts, std::size_t lookback,
                           std::size_t horizon, std::size_t batch_size, bool shuffle, std::uint64_t seed)
    : table_(table), order_(std::move(starts)), lookback_(lookback), horizon_(horizon), batch_size_(batch_size) {
  if (batch_size_ == 0) throw UsageError("window stream: batch size must be positive");
  if (order_.empty()) throw DataError("window stream: range too short for a single window");
  if (shuffle) {
    std::mt19937_64 rng(seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

bool WindowStream::next(WindowBatch& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  batch = make_batch(table_, std::span<const std::size_t>(order_).subspan(cursor_, n), lookback_, horizon_);
  cursor_ += n;
  return true;
}

std::size_t WindowStream::batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

WindowStream window_iter(const SeriesTable& table, const IndexRange& range, std::size_t lookback, std::size_t horizon,
                         std::size_t batch_size, bool shuffle, std::uint64_t seed, bool strict_context) {
  if (range.end > table.rows()) throw DataError("window range exceeds the series length");
  auto starts = window_starts(range, lookback, horizon, strict_context);
  if (starts.empty())
    throw DataError("range of " + std::to_string(range.size()) + " rows is shorter than lookback + horizon (" +
                    std::to_string(lookback + horizon) + ")");
  return WindowStream(table, std::move(starts), lookback, horizon, batch_size, shuffle, seed);
}

SeriesTable make_synthetic(const SyntheticOptions& opt) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  constexpr std::size_t kLag = 24;
  constexpr double kArCoef = 0.95;
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const std::size_t n = opt.rows;
  // Driver series, kLag samples longer so lagged reads stay in range.
  std::vector<double> z(n + kLag);
  const double innovation = std::sqrt(1.0 - kArCoef * kArCoef);
  z[0] = gauss(rng);
  for (std::size_t t = 1; t < z.size(); ++t) z[t] = kArCoef * z[t - 1] + innovation * gauss(rng);
  auto driver = [&](std::size_t t, std::size_t lag) { return z[t + kLag - lag]; };

  SeriesTable table;
  table.channels = {"lead", "follow", "mixed"};
  table.values.reserve(n * 3);
  for (std::size_t t = 0; t < n; ++t) {
    const double td = static_cast<double>(t);
    const double day = kTwoPi * td / 24.0;
    const double week = kTwoPi * td / 96.0;
    const double lead = std::sin(day) + 0.5 * std::sin(week) + 0.8 * driver(t, 0);
    const double follow = 0.7 * std::sin(day + 1.0) + 0.8 * std::sin(week + 0.5) + 0.8 * driver(t, kLag);
    const double mixed = 0.5 * std::cos(week) + 0.4 * std::cos(day + 0.3) + 0.6 * driver(t, kLag / 2);
    table.values.push_back(lead + opt.noise * gauss(rng));
    table.values.push_back(follow + opt.noise * gauss(rng));
    table.values.push_back(mixed + opt.noise * gauss(rng));
    char stamp[32];
    std::snprintf(stamp, sizeof stamp, "t%08zu", t);
    table.timestamps.emplace_back(stamp);
  }
  return table;
}

}  // namespace prformer
