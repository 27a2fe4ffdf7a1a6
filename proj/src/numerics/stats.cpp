#include "switchboard/numerics/stats.hpp"

#include "switchboard/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace switchboard::num {

double chi2_independence(const Crosstab2x2& t) {
  if (t.n11 < 0 || t.n10 < 0 || t.n01 < 0 || t.n00 < 0) {
    throw InvalidArgument("chi2_independence: negative count");
  }
  const double n = static_cast<double>(t.total());
  const double a1 = static_cast<double>(t.n11 + t.n10);
  const double a0 = static_cast<double>(t.n01 + t.n00);
  const double b1 = static_cast<double>(t.n11 + t.n01);
  const double b0 = static_cast<double>(t.n10 + t.n00);
  if (a1 == 0 || a0 == 0 || b1 == 0 || b0 == 0) {
    throw InvalidArgument("chi2_independence: a marginal total is zero");
  }
  auto term = [n](double obs, double ra, double rb) {
    const double exp = ra * rb / n;
    return (obs - exp) * (obs - exp) / exp;
  };
  return term(static_cast<double>(t.n11), a1, b1) + term(static_cast<double>(t.n10), a1, b0) +
         term(static_cast<double>(t.n01), a0, b1) + term(static_cast<double>(t.n00), a0, b0);
}

double exclusivity(const Crosstab2x2& t) {
  const std::int64_t either = t.n11 + t.n10 + t.n01;
  if (either == 0) return 0.0;
  return 1.0 - static_cast<double>(t.n11) / static_cast<double>(either);
}

double nearest_rank(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw InvalidArgument("nearest_rank: empty data");
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

BootstrapCi bootstrap_ci(std::size_t n,
                         const std::function<double(std::span<const std::size_t>)>& statistic,
                         int n_resamples, std::uint64_t seed) {
  if (n < 2) throw InvalidArgument("bootstrap_ci: need at least two records");
  std::vector<std::size_t> identity(n);
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  BootstrapCi ci;
  ci.point = statistic(identity);
  if (n_resamples <= 0) {
    ci.lo = ci.hi = ci.point;
    return ci;
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(n);
  ci.samples.reserve(static_cast<std::size_t>(n_resamples));
  for (int r = 0; r < n_resamples; ++r) {
    for (auto& i : idx) i = pick(rng);
    ci.samples.push_back(statistic(idx));
  }
  std::vector<double> sorted = ci.samples;
  std::sort(sorted.begin(), sorted.end());
  ci.lo = nearest_rank(sorted, 2.5);
  ci.hi = nearest_rank(sorted, 97.5);
  return ci;
}

BootstrapCi bootstrap_ci(std::span<const double> records,
                         const std::function<double(std::span<const double>)>& statistic,
                         int n_resamples, std::uint64_t seed) {
  std::vector<double> buffer(records.size());
  return bootstrap_ci(
      records.size(),
      [&](std::span<const std::size_t> idx) {
        for (std::size_t i = 0; i < idx.size(); ++i) buffer[i] = records[idx[i]];
        return statistic(buffer);
      },
      n_resamples, seed);
}

Split train_validation_split(std::size_t n, double train_fraction, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  Split split;
  split.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  return split;
}

std::vector<std::size_t> subsample(std::size_t n, std::size_t cap, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= cap) return idx;
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: first `cap` slots are a uniform sample.
  for (std::size_t i = 0; i < cap; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace switchboard::num
