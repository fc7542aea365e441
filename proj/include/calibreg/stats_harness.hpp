#pragma once

// Null distribution of the PCE under probabilistic calibration, and the
// multi-dataset comparison machinery: Holm, Cohen's d, Friedman, Wilcoxon
// signed-rank, critical-difference cliques and letter values.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>
#include <boost/tokenizer.hpp>
#include <json.hpp>

#include "calibreg/metrics.hpp"

namespace calibreg {

inline constexpr std::size_t kDefaultNullSims = 10000;

struct NullPceDistribution {
  std::size_t n = 0;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  std::vector<double> samples;
};

// Sampling distribution of PCE_1 for n calibrated (uniform) PITs.
inline NullPceDistribution simulate_null_pce(std::size_t n, std::size_t m, std::size_t sims, std::uint64_t seed) {
  if (n == 0 || m == 0 || sims == 0) throw std::invalid_argument("simulate_null_pce: n, M and sims must be positive");
  NullPceDistribution null{n, m, seed, {}};
  null.samples.reserve(sims);
  const auto grid = pce_levels(m);
  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < sims; ++s) {
    const auto f = simulate_uniform_ecdf(n, grid, rng);
    double e = 0.0;
    for (std::size_t j = 0; j < m; ++j) e += std::abs(grid[j] - f[j]);
    null.samples.push_back(e / static_cast<double>(m));
  }
  return null;
}

// One-sided upper-tail p-value #{samples >= observed} / sims; may be 0.
inline double p_value_upper(const NullPceDistribution& null, double observed) {
  if (null.samples.empty()) throw std::invalid_argument("p_value_upper: empty null distribution");
  const auto count = std::count_if(null.samples.begin(), null.samples.end(), [&](double s) { return s >= observed; });
  return static_cast<double>(count) / static_cast<double>(null.samples.size());
}

inline double null_quantile(const NullPceDistribution& null, double q) {
  std::vector<double> s = null.samples;
  std::sort(s.begin(), s.end());
  return empirical_quantile_sorted(s, q);
}

// Step-down Holm procedure; true marks a rejected hypothesis.
inline std::vector<bool> holm_correct(std::span<const double> p_values, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("holm_correct: alpha must lie in (0,1)");
  const std::size_t m = p_values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  std::vector<bool> reject(m, false);
  for (std::size_t i = 0; i < m; ++i) {
    if (!(p_values[order[i]] <= alpha / static_cast<double>(m - i))) break;
    reject[order[i]] = true;
  }
  return reject;
}

inline double cohens_d(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("cohens_d: each sample needs at least 2 values");
  const auto moments = [](std::span<const double> x) {
    const double m = mean_of(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::pair{m, ss / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double pooled = std::sqrt(((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0));
  const double diff = ma - mb;
  if (pooled == 0.0) {
    if (diff == 0.0) return 0.0;
    return diff > 0 ? kInf : -kInf;
  }
  return diff / pooled;
}

// Ranks 1..n with ties sharing their average rank.
inline std::vector<double> average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

// ----------------------------------------------------------- comparisons

struct LongRecord {
  std::string dataset;
  std::string method;
  std::int64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

// Datasets x methods; each cell keeps its per-seed values, ordered by seed.
class ComparisonMatrix {
 public:
  ComparisonMatrix(std::vector<std::string> datasets, std::vector<std::string> methods,
                   std::vector<std::vector<std::vector<double>>> values)
      : datasets_(std::move(datasets)), methods_(std::move(methods)), values_(std::move(values)) {
    if (values_.size() != datasets_.size()) throw std::invalid_argument("ComparisonMatrix: row count mismatch");
    for (const auto& row : values_) {
      if (row.size() != methods_.size()) throw std::invalid_argument("ComparisonMatrix: not rectangular");
      for (const auto& cell : row)
        if (cell.empty()) throw std::invalid_argument("ComparisonMatrix: missing cell");
    }
  }

  static ComparisonMatrix from_records(std::span<const LongRecord> records, const std::string& metric) {
    std::map<std::string, std::map<std::string, std::map<std::int64_t, double>>> cells;
    std::set<std::string> methods;
    for (const auto& r : records) {
      if (r.metric != metric) continue;
      cells[r.dataset][r.method][r.seed] = r.value;
      methods.insert(r.method);
    }
    if (cells.empty()) throw std::invalid_argument("ComparisonMatrix: no records for metric " + metric);
    std::vector<std::string> ds, ms(methods.begin(), methods.end());
    std::vector<std::vector<std::vector<double>>> values;
    for (const auto& [d, row] : cells) {
      ds.push_back(d);
      std::vector<std::vector<double>> vrow;
      for (const auto& m : ms) {
        auto it = row.find(m);
        if (it == row.end()) throw std::invalid_argument("ComparisonMatrix: missing cell " + d + "/" + m);
        std::vector<double> seeds;
        for (const auto& [s, v] : it->second) seeds.push_back(v);
        vrow.push_back(std::move(seeds));
      }
      values.push_back(std::move(vrow));
    }
    return ComparisonMatrix(std::move(ds), std::move(ms), std::move(values));
  }

  std::size_t rows() const { return datasets_.size(); }
  std::size_t cols() const { return methods_.size(); }
  const std::vector<std::string>& datasets() const { return datasets_; }
  const std::vector<std::string>& methods() const { return methods_; }
  const std::vector<double>& seed_values(std::size_t d, std::size_t m) const { return values_[d][m]; }
  double cell(std::size_t d, std::size_t m) const { return mean_of(values_[d][m]); }
  std::vector<double> column(std::size_t m) const {
    std::vector<double> c(rows());
    for (std::size_t d = 0; d < rows(); ++d) c[d] = cell(d, m);
    return c;
  }

  bool operator==(const ComparisonMatrix&) const = default;

 private:
  std::vector<std::string> datasets_;
  std::vector<std::string> methods_;
  std::vector<std::vector<std::vector<double>>> values_;
};

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

inline double chi_square_survival(double x, double df) {
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

// Classic chi-square form of the Friedman test; lower values rank first.
inline TestResult friedman_test(const ComparisonMatrix& matrix) {
  const std::size_t n = matrix.rows(), k = matrix.cols();
  if (k < 2 || n < 2) throw std::invalid_argument("friedman_test: need at least 2 methods and 2 datasets");
  std::vector<double> mean_rank(k, 0.0);
  for (std::size_t d = 0; d < n; ++d) {
    std::vector<double> row(k);
    for (std::size_t m = 0; m < k; ++m) row[m] = matrix.cell(d, m);
    const auto r = average_ranks(row);
    for (std::size_t m = 0; m < k; ++m) mean_rank[m] += r[m];
  }
  double ss = 0.0;
  for (double& r : mean_rank) {
    r /= static_cast<double>(n);
    ss += r * r;
  }
  const double kd = static_cast<double>(k), nd = static_cast<double>(n);
  double stat = 12.0 * nd / (kd * (kd + 1.0)) * (ss - kd * (kd + 1.0) * (kd + 1.0) / 4.0);
  if (std::abs(stat) < 1e-12) stat = 0.0;
  return {stat, chi_square_survival(stat, kd - 1.0)};
}

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double p_value = 1.0;    // two-sided
  std::size_t n_used = 0;  // non-zero differences
  bool exact = false;
  bool all_zero = false;
};

inline constexpr std::size_t kWilcoxonExactMax = 20;

// Two-sided signed-rank test on paired samples. Exact null distribution (by
// dynamic programming over the tied ranks) up to 20 non-zero differences,
// tie-corrected normal approximation beyond.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon_signed_rank: length mismatch");
  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) diff.push_back(a[i] - b[i]);
  WilcoxonResult res;
  res.n_used = diff.size();
  if (diff.empty()) {
    res.all_zero = true;
    res.exact = true;
    return res;
  }
  if (diff.size() < 5) throw std::invalid_argument("wilcoxon_signed_rank: at least 5 non-zero differences required");
  std::vector<double> absd(diff.size());
  for (std::size_t i = 0; i < diff.size(); ++i) absd[i] = std::abs(diff[i]);
  const auto ranks = average_ranks(absd);
  double w_plus = 0.0, w_minus = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) (diff[i] > 0 ? w_plus : w_minus) += ranks[i];
  res.statistic = std::min(w_plus, w_minus);
  const std::size_t n = diff.size();
  if (n <= kWilcoxonExactMax) {
    // doubled ranks are integers under average-rank ties
    std::vector<std::size_t> r2(n);
    std::size_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      r2[i] = static_cast<std::size_t>(std::llround(2.0 * ranks[i]));
      total += r2[i];
    }
    std::vector<double> count(total + 1, 0.0);
    count[0] = 1.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = total; s + 1 > r2[i]; --s) count[s] += count[s - r2[i]];
    const auto w2 = static_cast<std::size_t>(std::llround(2.0 * res.statistic));
    double le = 0.0;
    for (std::size_t s = 0; s <= w2 && s <= total; ++s) le += count[s];
    res.p_value = std::min(1.0, 2.0 * le / std::ldexp(1.0, static_cast<int>(n)));
    res.exact = true;
  } else {
    const double nd = static_cast<double>(n);
    const double mean = nd * (nd + 1.0) / 4.0;
    double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0;
    std::vector<double> sorted = absd;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      var -= (t * t * t - t) / 48.0;
      i = j + 1;
    }
    const double z = (res.statistic - mean) / std::sqrt(var);
    res.p_value = std::min(1.0, 2.0 * normal_cdf(z));
  }
  return res;
}

struct CdRanking {
  std::vector<std::string> methods;
  std::vector<double> average_ranks;
  std::vector<std::vector<double>> p_matrix;  // raw pairwise Wilcoxon p-values
  std::vector<std::vector<bool>> rejected;    // after Holm correction
  std::vector<std::vector<std::string>> cliques;
  TestResult friedman;
};

namespace detail {

inline void bron_kerbosch(std::vector<std::size_t> r, std::vector<std::size_t> p, std::vector<std::size_t> x,
                          const std::vector<std::vector<bool>>& adj, std::vector<std::vector<std::size_t>>& out) {
  if (p.empty() && x.empty()) {
    out.push_back(r);
    return;
  }
  while (!p.empty()) {
    const std::size_t v = p.front();
    std::vector<std::size_t> np, nx;
    for (std::size_t u : p)
      if (adj[v][u]) np.push_back(u);
    for (std::size_t u : x)
      if (adj[v][u]) nx.push_back(u);
    auto nr = r;
    nr.push_back(v);
    bron_kerbosch(nr, np, nx, adj, out);
    p.erase(p.begin());
    x.push_back(v);
  }
}

}  // namespace detail

// Average ranks plus maximal groups of methods with no significant pairwise
// difference (Wilcoxon + Holm at alpha).
inline CdRanking cd_ranking(const ComparisonMatrix& matrix, double alpha) {
  const std::size_t k = matrix.cols(), n = matrix.rows();
  CdRanking out;
  out.methods = matrix.methods();
  out.average_ranks.assign(k, 0.0);
  for (std::size_t d = 0; d < n; ++d) {
    std::vector<double> row(k);
    for (std::size_t m = 0; m < k; ++m) row[m] = matrix.cell(d, m);
    const auto r = average_ranks(row);
    for (std::size_t m = 0; m < k; ++m) out.average_ranks[m] += r[m] / static_cast<double>(n);
  }
  if (k >= 2 && n >= 2) out.friedman = friedman_test(matrix);
  out.p_matrix.assign(k, std::vector<double>(k, 1.0));
  out.rejected.assign(k, std::vector<bool>(k, false));
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<double> ps;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      double p = 1.0;
      try {
        p = wilcoxon_signed_rank(matrix.column(i), matrix.column(j)).p_value;
      } catch (const std::invalid_argument&) {
        p = 1.0;  // too few non-zero differences to test
      }
      out.p_matrix[i][j] = out.p_matrix[j][i] = p;
      pairs.emplace_back(i, j);
      ps.push_back(p);
    }
  if (!ps.empty()) {
    const auto rej = holm_correct(ps, alpha);
    for (std::size_t t = 0; t < pairs.size(); ++t)
      out.rejected[pairs[t].first][pairs[t].second] = out.rejected[pairs[t].second][pairs[t].first] = rej[t];
  }
  std::vector<std::vector<bool>> adj(k, std::vector<bool>(k, false));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) adj[i][j] = i != j && !out.rejected[i][j];
  std::vector<std::size_t> all(k);
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::vector<std::size_t>> raw;
  detail::bron_kerbosch({}, all, {}, adj, raw);
  for (const auto& c : raw) {
    std::vector<std::string> names;
    for (std::size_t i : c) names.push_back(out.methods[i]);
    std::sort(names.begin(), names.end());
    out.cliques.push_back(std::move(names));
  }
  std::sort(out.cliques.begin(), out.cliques.end());
  return out;
}

inline constexpr std::array<double, 5> kLetterValueLevels{0.125, 0.25, 0.5, 0.75, 0.875};

inline std::map<double, double> letter_values(std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("letter_values: empty sample");
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  std::map<double, double> out;
  for (double q : kLetterValueLevels) out[q] = empirical_quantile_sorted(s, q);
  return out;
}

// Per-dataset Cohen's d of a method against a baseline, over seeds.
inline std::vector<double> effect_sizes(const ComparisonMatrix& matrix, std::size_t method, std::size_t baseline) {
  std::vector<double> d(matrix.rows());
  for (std::size_t r = 0; r < matrix.rows(); ++r)
    d[r] = cohens_d(matrix.seed_values(r, method), matrix.seed_values(r, baseline));
  return d;
}

inline nlohmann::json to_json(const CdRanking& r) {
  nlohmann::json j;
  j["methods"] = r.methods;
  nlohmann::json ranks = nlohmann::json::object();
  for (std::size_t i = 0; i < r.methods.size(); ++i) ranks[r.methods[i]] = r.average_ranks[i];
  j["ranks"] = ranks;
  j["cliques"] = r.cliques;
  j["p_matrix"] = r.p_matrix;
  j["friedman"] = {{"statistic", r.friedman.statistic}, {"p_value", r.friedman.p_value}};
  return j;
}

// ------------------------------------------------------------ CSV (long)

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
  std::string l = line;
  if (!l.empty() && l.back() == '\r') l.pop_back();
  Tokenizer tok(l, boost::escaped_list_separator<char>('\\', ',', '"'));
  return {tok.begin(), tok.end()};
}

inline double parse_double(const std::string& s) {
  if (s == "inf" || s == "+inf" || s == "Infinity") return kInf;
  if (s == "-inf" || s == "-Infinity") return -kInf;
  if (s == "nan" || s == "NA" || s.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("not a number: " + s);
  return v;
}

}  // namespace detail

// Reads (dataset, [model,] method, seed, metric, value) rows. With a model
// column the method key becomes "model:method".
inline std::vector<LongRecord> read_long_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("read_long_csv: empty input");
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* need : {"dataset", "method", "seed", "metric", "value"})
    if (!col.count(need)) throw std::invalid_argument(std::string("read_long_csv: missing column ") + need);
  const bool has_model = col.count("model") > 0;
  std::vector<LongRecord> out;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != header.size()) throw std::invalid_argument("read_long_csv: ragged row");
    LongRecord r;
    r.dataset = f[col["dataset"]];
    r.method = has_model ? f[col["model"]] + ":" + f[col["method"]] : f[col["method"]];
    r.seed = std::stoll(f[col["seed"]]);
    r.metric = f[col["metric"]];
    r.value = detail::parse_double(f[col["value"]]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace calibreg
