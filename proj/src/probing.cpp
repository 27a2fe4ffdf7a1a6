#include "switchboard/probing.hpp"

#include "switchboard/error.hpp"
#include "switchboard/numerics/cluster.hpp"
#include "switchboard/numerics/stats.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace switchboard::probe {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t floor_frac(double f, std::size_t n) {
  return static_cast<std::size_t>(std::floor(f * static_cast<double>(n)));
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXf& cols) { return cols.cast<double>().transpose(); }

// Fraction of compressed-delta variance explained.
// Targets are rescaled to unit overall spread first, so residuals that are
// pure round-off still score near zero instead of being dropped as constant.
double r2(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred) {
  const Eigen::RowVectorXd mean = truth.colwise().mean();
  const double spread = std::sqrt((truth.rowwise() - mean).squaredNorm() / static_cast<double>(truth.size()));
  if (!(spread > 0)) return num::r2_score(truth, pred).variance_weighted;
  return num::r2_score(truth / spread, pred / spread).variance_weighted;
}

int interleaved_width(const ProbeData& d) { return 2 * d.options.context_radius + 1; }

int effective_k(const ProbeData& d, int degree, int k) {
  const int group = interleaved_width(d);
  int kk = std::min<int>(k, static_cast<int>(d.z_train.cols()) / group);
  while (kk > 1 && num::monomial_count(kk * group, degree) > d.options.budget) --kk;
  return kk;
}

template <typename T>
void write_binary(const std::filesystem::path& p, const T* data, std::size_t n) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
  if (!out) throw Error(fmt::format("{}: write failed", p.string()));
}

template <typename T>
void read_binary(const std::filesystem::path& p, T* data, std::size_t n) {
  std::ifstream in(p, std::ios::binary);
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
  if (!in) throw FormatError(fmt::format("{}: short or missing file", p.string()));
}

}  // namespace

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Linear: return "linear";
    case Regime::Barely: return "barely";
    case Regime::High: return "high";
    case Regime::Other: return "other";
  }
  return "?";
}

bool RegimeAssignment::in_top(std::size_t i, double fraction) const {
  return rank[i] >= n() - floor_frac(fraction, n());
}

int RegimeAssignment::quintile(std::size_t i) const {
  return static_cast<int>((5 * static_cast<std::uint64_t>(rank[i])) / n());
}

std::size_t RegimeAssignment::count(Regime r) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), r));
}

RegimeAssignment assign_regimes(std::span<const float> norms, int layer) {
  const std::size_t n = norms.size();
  if (n == 0) throw InvalidArgument("assign_regimes: no tokens");
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return norms[a] < norms[b]; });
  RegimeAssignment ra;
  ra.labels.assign(n, Regime::Other);
  ra.rank.resize(n);
  const std::size_t lin = floor_frac(0.25, n), b_lo = floor_frac(0.5, n), b_hi = floor_frac(0.7, n);
  const std::size_t high = n - floor_frac(0.05, n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto i = order[r];
    ra.rank[i] = static_cast<std::uint32_t>(r);
    if (r < lin) {
      ra.labels[i] = Regime::Linear;
    } else if (r >= b_lo && r < b_hi) {
      ra.labels[i] = Regime::Barely;
    } else if (r >= high) {
      ra.labels[i] = Regime::High;
    }
  }
  std::vector<double> sorted(n);
  for (std::size_t r = 0; r < n; ++r) sorted[r] = norms[order[r]];
  ra.thresholds = {layer,
                   n,
                   num::nearest_rank(sorted, 25),
                   num::nearest_rank(sorted, 50),
                   num::nearest_rank(sorted, 70),
                   num::nearest_rank(sorted, 90),
                   num::nearest_rank(sorted, 95)};
  return ra;
}

Eigen::MatrixXd deltas_of(const num::LinearMap& map, const store::RecordBlock& b) {
  Eigen::MatrixXd d = b.y.cast<double>();
  d.noalias() -= map.W.transpose() * b.x.cast<double>();
  d.colwise() -= map.b;
  return d;
}

DeltaSet compute_delta(const store::CaptureReader& reader, double jitter) {
  const auto& info = reader.info();
  const std::uint64_t need = 10 * static_cast<std::uint64_t>(info.d_model);
  if (reader.size() < need) {
    throw InvalidArgument(fmt::format("compute_delta: layer {} store has {} tokens, need at least {} (10 x d_model)",
                                      info.layer, reader.size(), need));
  }
  const auto moments = store::accumulate_moments(reader);
  const double scale = moments.covariance_xx().trace() / static_cast<double>(info.d_model);
  DeltaSet ds;
  ds.layer = info.layer;
  ds.map = num::least_squares(moments, jitter * scale);
  ds.norms.reserve(reader.size());
  ds.tokens.reserve(reader.size());
  double total = 0.0;
  reader.scan([&](const store::RecordBlock& b) {
    const Eigen::MatrixXd d = deltas_of(ds.map, b);
    for (Eigen::Index t = 0; t < d.cols(); ++t) {
      const double nrm = d.col(t).norm();
      total += nrm;
      ds.norms.push_back(static_cast<float>(nrm));
    }
    ds.tokens.insert(ds.tokens.end(), b.tokens.begin(), b.tokens.end());
  });
  ds.mean_norm = total / static_cast<double>(ds.norms.size());
  ds.regimes = assign_regimes(ds.norms, ds.layer);
  spdlog::info("layer {}: delta over {} tokens, mean |delta| {:.4f}, p95 {:.4f}", ds.layer, ds.norms.size(),
               ds.mean_norm, ds.regimes.thresholds.p95);
  return ds;
}

void save_delta_set(const DeltaSet& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto stem = dir / fmt::format("layer{:02d}.delta", ds.layer);
  const auto& t = ds.regimes.thresholds;
  nlohmann::json j = {{"layer", ds.layer},
                      {"n", ds.norms.size()},
                      {"d_in", ds.map.W.rows()},
                      {"d_out", ds.map.W.cols()},
                      {"mean_norm", ds.mean_norm},
                      {"thresholds", {{"p25", t.p25}, {"p50", t.p50}, {"p70", t.p70}, {"p90", t.p90}, {"p95", t.p95}}},
                      {"percentile_rule", "nearest-rank"}};
  write_binary(stem.string() + ".W.f64", ds.map.W.data(), static_cast<std::size_t>(ds.map.W.size()));
  write_binary(stem.string() + ".b.f64", ds.map.b.data(), static_cast<std::size_t>(ds.map.b.size()));
  write_binary(stem.string() + ".norms.f32", ds.norms.data(), ds.norms.size());
  write_binary(stem.string() + ".tokens.i32", ds.tokens.data(), ds.tokens.size());
  std::ofstream(stem.string() + ".json") << j.dump(1) << '\n';
}

DeltaSet load_delta_set(const std::filesystem::path& dir, int layer) {
  const auto stem = dir / fmt::format("layer{:02d}.delta", layer);
  std::ifstream in(stem.string() + ".json");
  if (!in) throw FormatError(fmt::format("{}.json: missing", stem.string()));
  const auto j = nlohmann::json::parse(in);
  DeltaSet ds;
  ds.layer = layer;
  const auto n = j.at("n").get<std::size_t>();
  ds.map.W.resize(j.at("d_in").get<Eigen::Index>(), j.at("d_out").get<Eigen::Index>());
  ds.map.b.resize(ds.map.W.cols());
  ds.norms.resize(n);
  ds.tokens.resize(n);
  read_binary(stem.string() + ".W.f64", ds.map.W.data(), static_cast<std::size_t>(ds.map.W.size()));
  read_binary(stem.string() + ".b.f64", ds.map.b.data(), static_cast<std::size_t>(ds.map.b.size()));
  read_binary(stem.string() + ".norms.f32", ds.norms.data(), n);
  read_binary(stem.string() + ".tokens.i32", ds.tokens.data(), n);
  ds.mean_norm = j.at("mean_norm").get<double>();
  ds.regimes = assign_regimes(ds.norms, layer);
  return ds;
}

TokenFilter top_fraction_filter(const DeltaSet& ds, double fraction) {
  TokenFilter f;
  f.description = fmt::format("top {:g}% |delta|", fraction * 100.0);
  for (std::size_t i = 0; i < ds.norms.size(); ++i) {
    if (ds.regimes.in_top(i, fraction)) f.indices.push_back(i);
  }
  return f;
}

TokenFilter regime_filter(const DeltaSet& ds, Regime r) {
  TokenFilter f;
  f.description = fmt::format("regime {}", regime_name(r));
  for (std::size_t i = 0; i < ds.norms.size(); ++i) {
    if (ds.regimes.labels[i] == r) f.indices.push_back(i);
  }
  return f;
}

TokenFilter token_class_filter(const DeltaSet& ds, const std::vector<TokenId>& ids, std::string description) {
  TokenFilter f;
  f.description = std::move(description);
  std::vector<TokenId> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < ds.tokens.size(); ++i) {
    if (std::binary_search(sorted.begin(), sorted.end(), ds.tokens[i])) f.indices.push_back(i);
  }
  return f;
}

std::vector<TokenId> paragraph_boundary_ids(const tok::BpeVocab& vocab) {
  std::vector<TokenId> out;
  for (TokenId id = 0; id < vocab.size(); ++id) {
    const std::string s = vocab.bytes_of(id);
    const bool blank = !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
      return c == ' ' || c == '\n' || c == '\t' || c == '\r';
    });
    if (blank && s.find('\n') != std::string::npos) out.push_back(id);
  }
  return out;
}

std::vector<TokenId> function_word_ids(const tok::BpeVocab& vocab) {
  static const char* kWords[] = {
      "the", "a", "an", "of", "to", "in", "and", "or", "but", "is", "was", "are", "were", "be", "been",
      "for", "on", "at", "by", "with", "from", "as", "that", "which", "who", "this", "these", "those",
      "it", "its", "he", "she", "they", "his", "her", "their", "not", "into", "than", "then", "also",
      "had", "has", "have", "would", "could", "after", "before", "during", "while", "about", "over"};
  std::vector<TokenId> out;
  for (const char* w : kWords) {
    std::string enc = vocab.encode_byte(' ');
    enc += w;
    const TokenId id = vocab.id_of(enc);
    if (id >= 0) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

ProbeData prepare_probe_data(const store::CaptureReader& reader, const DeltaSet& ds, const TokenFilter& filter,
                             const ProbeOptions& opt, std::size_t min_tokens) {
  if (filter.indices.size() < min_tokens) {
    throw InvalidArgument(fmt::format("probe: filter '{}' keeps {} tokens, need at least {}", filter.description,
                                      filter.indices.size(), min_tokens));
  }
  if (opt.context_radius < 0) throw InvalidArgument("probe: context radius must be non-negative");
  ProbeData d;
  d.layer = ds.layer;
  d.filter = filter.description;
  d.options = opt;
  d.n_filtered = filter.indices.size();

  const auto pick = num::subsample(filter.indices.size(), opt.cap, opt.seed);
  const auto split = num::train_validation_split(pick.size(), opt.train_fraction, opt.seed + 1);
  for (auto i : split.train) d.train_records.push_back(filter.indices[pick[i]]);
  for (auto i : split.validation) d.val_records.push_back(filter.indices[pick[i]]);
  std::sort(d.train_records.begin(), d.train_records.end());
  std::sort(d.val_records.begin(), d.val_records.end());
  if (d.train_records.size() < 2 || d.val_records.empty()) {
    throw InvalidArgument("probe: split leaves too few tokens on one side");
  }

  const auto train = reader.gather(d.train_records);
  const auto val = reader.gather(d.val_records);
  const Eigen::MatrixXd x_train = rows_of(train.x), x_val = rows_of(val.x);
  const Eigen::MatrixXd delta_train = deltas_of(ds.map, train).transpose();
  const Eigen::MatrixXd delta_val = deltas_of(ds.map, val).transpose();

  const Eigen::Index kx = std::min<Eigen::Index>({opt.k, x_train.cols(), static_cast<Eigen::Index>(x_train.rows()) - 1});
  d.x_pca = num::pca_fit_rows_capped(x_train, kx);
  d.z_scale = d.x_pca.eigenvalues.cwiseMax(1e-300).cwiseSqrt();
  auto whiten = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
    return num::pca_project_rows(x, d.x_pca).array().rowwise() / d.z_scale.transpose().array();
  };

  if (opt.context_radius == 0) {
    d.z_train = whiten(x_train);
    d.z_val = whiten(x_val);
  } else {
    // Columns are grouped per principal component: [pc0 @ -r..+r, pc1 @ -r..+r, ...].
    const int r = opt.context_radius, g = 2 * r + 1;
    auto with_context = [&](const std::vector<std::size_t>& recs, const store::RecordBlock& self) {
      Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(recs.size()), kx * g);
      std::vector<std::size_t> nb;
      std::vector<std::pair<std::size_t, int>> where;  // (row, offset slot)
      for (std::size_t i = 0; i < recs.size(); ++i) {
        for (int o = -r; o <= r; ++o) {
          if (o == 0) continue;
          const auto j = static_cast<std::int64_t>(recs[i]) + o;
          if (j < 0 || j >= static_cast<std::int64_t>(reader.size())) continue;
          nb.push_back(static_cast<std::size_t>(j));
          where.emplace_back(i, o + r);
        }
      }
      const Eigen::MatrixXd zs = whiten(rows_of(self.x));
      for (Eigen::Index c = 0; c < kx; ++c) out.col(c * g + r) = zs.col(c);
      if (!nb.empty()) {
        std::vector<std::size_t> order(nb.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return nb[a] < nb[b]; });
        std::vector<std::size_t> sorted_nb(nb.size());
        for (std::size_t i = 0; i < order.size(); ++i) sorted_nb[i] = nb[order[i]];
        const auto blk = reader.gather(sorted_nb);
        const Eigen::MatrixXd zn = whiten(rows_of(blk.x));
        for (std::size_t q = 0; q < order.size(); ++q) {
          const auto [row, slot] = where[order[q]];
          // Neighbours from another window are not context.
          if (blk.window[q] != self.window[row]) continue;
          for (Eigen::Index c = 0; c < kx; ++c) {
            out(static_cast<Eigen::Index>(row), c * g + slot) = zn(static_cast<Eigen::Index>(q), c);
          }
        }
      }
      return out;
    };
    d.z_train = with_context(d.train_records, train);
    d.z_val = with_context(d.val_records, val);
  }

  const Eigen::Index kd = std::min<Eigen::Index>(
      {opt.delta_dims, delta_train.cols(), static_cast<Eigen::Index>(delta_train.rows()) - 1});
  d.delta_pca = num::pca_fit_rows_capped(delta_train, kd);
  d.y_train = num::pca_project_rows(delta_train, d.delta_pca);
  d.y_val = num::pca_project_rows(delta_val, d.delta_pca);
  auto unit_rows = [](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd u = m;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      const double n = u.row(i).norm();
      if (n > 0) u.row(i) /= n;
    }
    return u;
  };
  d.dir_train = unit_rows(delta_train);
  d.dir_val = unit_rows(delta_val);
  return d;
}

ProbeResult fit_probe(const ProbeData& d, int degree, int k, double alpha) {
  if (degree < 1) throw InvalidArgument("probe: degree must be at least 1");
  const int kk = effective_k(d, degree, k);
  const Eigen::Index cols = static_cast<Eigen::Index>(kk) * interleaved_width(d);
  const auto fit = num::poly_ridge(d.z_train.leftCols(cols), d.y_train, d.z_val.leftCols(cols), degree, alpha,
                                   d.options.budget);
  ProbeResult r;
  r.layer = d.layer;
  r.degree = degree;
  r.k_requested = k;
  r.k_effective = kk;
  r.alpha = alpha;
  r.train_r2 = r2(d.y_train, fit.train);
  r.val_r2 = r2(d.y_val, fit.eval);
  r.filter = d.filter;
  if (d.options.context_radius > 0) r.filter += fmt::format(", context +-{}", d.options.context_radius);
  r.seed = d.options.seed;
  r.n_train = d.train_records.size();
  r.n_val = d.val_records.size();
  r.cap = d.options.cap;
  r.n_features = fit.n_features;
  r.dual = fit.dual;
  return r;
}

ProbeResult poly_probe(const store::CaptureReader& reader, const DeltaSet& ds, const TokenFilter& filter, int degree,
                       const ProbeOptions& options) {
  const auto data = prepare_probe_data(reader, ds, filter, options);
  return fit_probe(data, degree, options.k, options.alpha);
}

std::vector<ProbeResult> hyperparam_grid(const ProbeData& data, const std::vector<int>& degrees,
                                         const std::vector<int>& ks, const std::vector<double>& alphas) {
  std::vector<ProbeResult> out;
  for (int deg : degrees) {
    for (int k : ks) {
      for (double a : alphas) out.push_back(fit_probe(data, deg, k, a));
    }
  }
  return out;
}

const char* branch_method_name(BranchMethod m) {
  switch (m) {
    case BranchMethod::KMeansInput: return "kmeans_input";
    case BranchMethod::KMeansDeltaDir: return "kmeans_delta_dir";
    case BranchMethod::KMeansJoint: return "kmeans_joint";
    case BranchMethod::SpectralDeltaDir: return "spectral_delta_dir";
  }
  return "?";
}

BranchMethod parse_branch_method(const std::string& name) {
  for (auto m : {BranchMethod::KMeansInput, BranchMethod::KMeansDeltaDir, BranchMethod::KMeansJoint,
                 BranchMethod::SpectralDeltaDir}) {
    if (name == branch_method_name(m)) return m;
  }
  throw InvalidArgument(fmt::format(
      "unknown branch method '{}'; valid: kmeans_input, kmeans_delta_dir, kmeans_joint, spectral_delta_dir", name));
}

BranchResult branch_detect(const ProbeData& d, BranchMethod method, const BranchOptions& opt) {
  if (opt.n_clusters < 1) throw InvalidArgument("branch_detect: need at least one cluster");
  const int kk = effective_k(d, opt.degree, opt.k);
  const Eigen::Index cols = static_cast<Eigen::Index>(kk) * interleaved_width(d);
  const Eigen::MatrixXd zt = d.z_train.leftCols(cols), zv = d.z_val.leftCols(cols);

  std::vector<int> lt, lv;
  const int nc = opt.n_clusters;
  if (opt.shuffled) {
    std::mt19937_64 rng(opt.seed ^ 0x5bd1e995u);
    std::uniform_int_distribution<int> pick(0, nc - 1);
    lt.resize(static_cast<std::size_t>(zt.rows()));
    lv.resize(static_cast<std::size_t>(zv.rows()));
    for (auto& l : lt) l = pick(rng);
    for (auto& l : lv) l = pick(rng);
  } else {
    Eigen::MatrixXd ft, fv;
    switch (method) {
      case BranchMethod::KMeansInput:
        ft = zt;
        fv = zv;
        break;
      case BranchMethod::KMeansDeltaDir:
      case BranchMethod::SpectralDeltaDir:
        ft = d.dir_train;
        fv = d.dir_val;
        break;
      case BranchMethod::KMeansJoint: {
        // Whitened inputs have total variance ~cols; scale them to unit total
        // so neither block dominates the unit-norm directions.
        const double s = 1.0 / std::sqrt(static_cast<double>(cols));
        ft.resize(zt.rows(), cols + d.dir_train.cols());
        fv.resize(zv.rows(), cols + d.dir_val.cols());
        ft << zt * s, d.dir_train;
        fv << zv * s, d.dir_val;
        break;
      }
    }
    if (method == BranchMethod::SpectralDeltaDir) {
      const auto sub = num::subsample(static_cast<std::size_t>(ft.rows()),
                                      static_cast<std::size_t>(num::kSpectralPointCap), opt.seed);
      Eigen::MatrixXd pts(static_cast<Eigen::Index>(sub.size()), ft.cols());
      for (std::size_t i = 0; i < sub.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = ft.row(static_cast<Eigen::Index>(sub[i]));
      num::SpectralOptions so;
      so.sigma_scale = opt.spectral_sigma_scale;
      const auto sl = num::spectral_cluster(pts, nc, opt.seed, so);
      Eigen::MatrixXd centroids = num::cluster_means(pts, sl, nc);
      for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        if (!centroids.row(c).allFinite()) centroids.row(c).setConstant(std::numeric_limits<double>::max() / 4);
      }
      lt = num::assign_nearest(ft, centroids);
      for (std::size_t i = 0; i < sub.size(); ++i) lt[sub[i]] = sl[i];
      lv = num::assign_nearest(fv, centroids);
    } else {
      const auto km = num::kmeans(ft, nc, opt.seed);
      lt = km.assignments;
      lv = num::assign_nearest(fv, km.centroids);
    }
  }

  BranchResult res;
  res.method = branch_method_name(method);
  res.n_clusters = nc;
  res.k_effective = kk;
  res.shuffled = opt.shuffled;
  double sum_val = 0.0, sum_train = 0.0;
  int n_val_ok = 0, n_train_ok = 0;
  res.best_val_r2 = kNaN;
  for (int c = 0; c < nc; ++c) {
    std::vector<Eigen::Index> it, iv;
    for (std::size_t i = 0; i < lt.size(); ++i) {
      if (lt[i] == c) it.push_back(static_cast<Eigen::Index>(i));
    }
    for (std::size_t i = 0; i < lv.size(); ++i) {
      if (lv[i] == c) iv.push_back(static_cast<Eigen::Index>(i));
    }
    res.cluster_train_n.push_back(it.size());
    res.cluster_val_n.push_back(iv.size());
    if (it.size() < 2) {
      res.cluster_train_r2.push_back(kNaN);
      res.cluster_val_r2.push_back(std::nullopt);
      continue;
    }
    const Eigen::MatrixXd ztc = zt(it, Eigen::all);
    const Eigen::MatrixXd ytc = d.y_train(it, Eigen::all);
    const Eigen::MatrixXd zvc = zv(iv, Eigen::all);
    const auto fit = num::poly_ridge(ztc, ytc, zvc, opt.degree, opt.alpha, d.options.budget);
    const double tr = r2(ytc, fit.train);
    res.cluster_train_r2.push_back(tr);
    if (std::isfinite(tr)) {
      sum_train += tr;
      ++n_train_ok;
    }
    if (iv.size() < opt.min_val_tokens) {
      res.cluster_val_r2.push_back(std::nullopt);
      continue;
    }
    const double vr = r2(d.y_val(iv, Eigen::all), fit.eval);
    res.cluster_val_r2.push_back(vr);
    sum_val += vr;
    ++n_val_ok;
    if (!(res.best_val_r2 >= vr)) res.best_val_r2 = vr;
  }
  res.average_val_r2 = n_val_ok > 0 ? sum_val / n_val_ok : kNaN;
  res.average_train_r2 = n_train_ok > 0 ? sum_train / n_train_ok : kNaN;
  return res;
}

}  // namespace switchboard::probe
