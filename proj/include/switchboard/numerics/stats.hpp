#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace switchboard::num {

// Co-occurrence counts of two binary variables A and B.
struct Crosstab2x2 {
  std::int64_t n11 = 0;  // both
  std::int64_t n10 = 0;  // A only
  std::int64_t n01 = 0;  // B only
  std::int64_t n00 = 0;  // neither

  std::int64_t total() const { return n11 + n10 + n01 + n00; }
  Crosstab2x2 transposed() const { return {n11, n01, n10, n00}; }
};

// Pearson chi-square statistic of independence (no continuity correction).
// Throws InvalidArgument when any marginal is zero.
double chi2_independence(const Crosstab2x2& table);

// 1 - |both| / |either|; 0 when neither ever fires.
double exclusivity(const Crosstab2x2& table);

// Nearest-rank percentile of already sorted data, q in [0, 100].
double nearest_rank(std::span<const double> sorted, double q);

struct BootstrapCi {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> samples;
};

// Percentile bootstrap: resample indices 0..n-1 with replacement and evaluate
// `statistic` on each resample.  95% interval from nearest-rank 2.5 / 97.5
// percentiles.  Deterministic for a given seed.
BootstrapCi bootstrap_ci(std::size_t n,
                         const std::function<double(std::span<const std::size_t>)>& statistic,
                         int n_resamples, std::uint64_t seed);

// Convenience overload for a statistic over scalar records.
BootstrapCi bootstrap_ci(std::span<const double> records,
                         const std::function<double(std::span<const double>)>& statistic,
                         int n_resamples, std::uint64_t seed);

// Seeded uniform permutation split: the first round(train_fraction * n)
// shuffled indices train, the rest validate.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};
Split train_validation_split(std::size_t n, double train_fraction, std::uint64_t seed);

// Seeded uniform subsample of min(n, cap) indices, returned sorted.
std::vector<std::size_t> subsample(std::size_t n, std::size_t cap, std::uint64_t seed);

}  // namespace switchboard::num
