#ifndef SPINNET_STATS_HPP
#define SPINNET_STATS_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace spinnet {

/// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      carry_ += (sum_ - t) + x;
    } else {
      carry_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) noexcept {
  CompensatedSum s;
  for (double x : xs) s.add(x);
  return s.value();
}

struct MeanSem {
  double mean = 0.0;
  double sem = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

inline MeanSem mean_sem(std::span<const double> xs) {
  MeanSem out;
  out.count = xs.size();
  if (xs.empty()) return out;
  out.mean = compensated_sum(xs) / static_cast<double>(xs.size());
  if (xs.size() < 2) return out;
  CompensatedSum ss;
  for (double x : xs) ss.add((x - out.mean) * (x - out.mean));
  out.stddev = std::sqrt(ss.value() / static_cast<double>(xs.size() - 1));
  out.sem = out.stddev / std::sqrt(static_cast<double>(xs.size()));
  return out;
}

/// Column-wise mean and standard error over realizations (rows). Rows must share a length.
struct SeriesStats {
  std::vector<double> mean;
  std::vector<double> sem;
};

inline SeriesStats column_stats(const std::vector<std::vector<double>>& rows) {
  SeriesStats out;
  if (rows.empty()) return out;
  const std::size_t m = rows.front().size();
  out.mean.resize(m);
  out.sem.resize(m);
  std::vector<double> column(rows.size());
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t r = 0; r < rows.size(); ++r) column[r] = rows[r][j];
    const MeanSem ms = mean_sem(column);
    out.mean[j] = ms.mean;
    out.sem[j] = ms.sem;
  }
  return out;
}

/// Linear-interpolated sample quantile, q in [0, 1]. `sorted` must be ascending.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) return std::nan("");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace spinnet

#endif  // SPINNET_STATS_HPP
