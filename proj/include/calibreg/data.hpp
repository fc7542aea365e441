#pragma once

// Tabular data ingestion: CSV tables, seeded train/val/cal/test splits with
// train-split normalization, and synthetic tasks with known conditional laws.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "calibreg/dist_core.hpp"
#include "calibreg/stats_harness.hpp"
#include "calibreg/train_reg.hpp"

namespace calibreg {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("missing column: " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline Table read_table(std::istream& in) {
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV input is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.header = detail::split_csv_line(line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != t.header.size()) throw DataError("CSV row " + std::to_string(t.rows.size() + 2) + " is ragged");
    t.rows.push_back(std::move(f));
  }
  return t;
}

inline Table read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  return read_table(in);
}

inline void write_table(std::ostream& os, const Table& t) {
  const auto join = [&](const std::vector<std::string>& f) {
    for (std::size_t i = 0; i < f.size(); ++i) os << (i ? "," : "") << f[i];
    os << '\n';
  };
  join(t.header);
  for (const auto& r : t.rows) join(r);
}

namespace detail {

inline bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "?"; }

inline bool try_parse(const std::string& s, double& out) {
  if (is_missing(s)) return false;
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size() && std::isfinite(out);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

struct Normalization {
  std::vector<std::string> feature_names;
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
  double target_mean = 0.0;
  double target_std = 1.0;

  // Distribution in the original target scale.
  PredictiveDistribution to_original(const PredictiveDistribution& d) const { return rescale(d, target_mean, target_std); }
};

struct SplitDataset {
  Dataset train, val, cal, test;
  Normalization norm;
  std::size_t rows_used = 0;
};

inline constexpr std::size_t kMaxRows = 50000;
inline constexpr std::size_t kMinRows = 40;

// Sizes of (train, val, cal, test): val, cal and test are floored, the
// remainder goes to train.
inline std::array<std::size_t, 4> split_sizes(std::size_t n) {
  const std::size_t val = n * 10 / 100;
  const std::size_t cal = n * 15 / 100;
  const std::size_t test = n * 10 / 100;
  return {n - val - cal - test, val, cal, test};
}

// Shuffles rows with the seed, truncates to 50,000 rows, splits 65/10/15/10
// and standardizes features and target with train-split statistics.
// Non-numeric columns are one-hot encoded with the train vocabulary (unseen
// categories encode as all zeros); missing numeric values take the train
// mean; features constant on train are dropped.
inline SplitDataset prepare_dataset(const Table& table, const std::string& target, std::uint64_t seed) {
  const std::size_t target_col = table.column(target);
  if (table.rows.size() < kMinRows)
    throw DataError("dataset has " + std::to_string(table.rows.size()) + " rows, at least 40 required");
  std::vector<std::size_t> order(table.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  if (order.size() > kMaxRows) order.resize(kMaxRows);
  const std::size_t n = order.size();
  const auto sizes = split_sizes(n);
  std::array<std::vector<std::size_t>, 4> parts;
  std::size_t at = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    parts[s].assign(order.begin() + static_cast<std::ptrdiff_t>(at),
                    order.begin() + static_cast<std::ptrdiff_t>(at + sizes[s]));
    at += sizes[s];
  }
  const auto& train_rows = parts[0];

  std::vector<double> y(table.rows.size(), 0.0);
  for (std::size_t r : order)
    if (!detail::try_parse(table.rows[r][target_col], y[r]))
      throw DataError("target column has a non-numeric or missing value in row " + std::to_string(r + 2));

  // Encoded columns: name and a function of the raw row.
  struct Encoded {
    std::string name;
    std::vector<double> values;  // indexed by raw row
  };
  std::vector<Encoded> cols;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c == target_col) continue;
    bool numeric = true;
    double v = 0.0;
    for (std::size_t r : order)
      if (!detail::is_missing(table.rows[r][c]) && !detail::try_parse(table.rows[r][c], v)) {
        numeric = false;
        break;
      }
    if (numeric) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t r : train_rows)
        if (detail::try_parse(table.rows[r][c], v)) sum += v, ++count;
      const double fill = count ? sum / static_cast<double>(count) : 0.0;
      Encoded e{table.header[c], std::vector<double>(table.rows.size(), fill)};
      for (std::size_t r : order)
        if (detail::try_parse(table.rows[r][c], v)) e.values[r] = v;
      cols.push_back(std::move(e));
    } else {
      std::set<std::string> vocab;
      for (std::size_t r : train_rows) vocab.insert(table.rows[r][c]);
      for (const auto& level : vocab) {
        Encoded e{table.header[c] + "=" + level, std::vector<double>(table.rows.size(), 0.0)};
        for (std::size_t r : order) e.values[r] = table.rows[r][c] == level ? 1.0 : 0.0;
        cols.push_back(std::move(e));
      }
    }
  }

  const auto mean_std = [&](const std::vector<double>& v) {
    double m = 0.0;
    for (std::size_t r : train_rows) m += v[r];
    m /= static_cast<double>(train_rows.size());
    double s = 0.0;
    for (std::size_t r : train_rows) s += (v[r] - m) * (v[r] - m);
    return std::pair<double, double>(m, std::sqrt(s / static_cast<double>(train_rows.size())));
  };

  SplitDataset out;
  out.rows_used = n;
  const auto [ym, ys] = mean_std(y);
  if (!(ys > 0.0)) throw DataError("target is constant on the training split");
  out.norm.target_mean = ym;
  out.norm.target_std = ys;
  std::vector<const Encoded*> kept;
  for (const auto& e : cols) {
    const auto [m, s] = mean_std(e.values);
    if (!(s > 0.0)) continue;
    kept.push_back(&e);
    out.norm.feature_names.push_back(e.name);
    out.norm.feature_mean.push_back(m);
    out.norm.feature_std.push_back(s);
  }
  if (kept.empty()) throw DataError("no non-constant features");

  std::array<Dataset*, 4> dst{&out.train, &out.val, &out.cal, &out.test};
  for (std::size_t s = 0; s < 4; ++s) {
    Dataset& d = *dst[s];
    d.x.resize(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(parts[s].size()));
    d.y.resize(parts[s].size());
    for (std::size_t i = 0; i < parts[s].size(); ++i) {
      const std::size_t r = parts[s][i];
      for (std::size_t f = 0; f < kept.size(); ++f)
        d.x(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(i)) =
            (kept[f]->values[r] - out.norm.feature_mean[f]) / out.norm.feature_std[f];
      d.y[i] = (y[r] - ym) / ys;
    }
  }
  return out;
}

inline SplitDataset prepare_dataset(const std::string& path, const std::string& target, std::uint64_t seed) {
  return prepare_dataset(read_table(path), target, seed);
}

// ------------------------------------------------------------ prepared splits

inline const std::array<const char*, 4> kSplitNames = {"train", "val", "cal", "test"};

inline nlohmann::json to_json(const Normalization& n) {
  return {{"feature_names", n.feature_names},
          {"feature_mean", n.feature_mean},
          {"feature_std", n.feature_std},
          {"target_mean", n.target_mean},
          {"target_std", n.target_std}};
}

inline Normalization normalization_from_json(const nlohmann::json& j) {
  Normalization n;
  n.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  n.feature_mean = j.at("feature_mean").get<std::vector<double>>();
  n.feature_std = j.at("feature_std").get<std::vector<double>>();
  n.target_mean = j.at("target_mean").get<double>();
  n.target_std = j.at("target_std").get<double>();
  return n;
}

inline Table dataset_table(const Dataset& d, const std::vector<std::string>& names) {
  Table t;
  t.header = names;
  t.header.push_back("__target__");
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index f = 0; f < d.x.rows(); ++f) row.push_back(detail::format_double(d.x(f, static_cast<Eigen::Index>(i))));
    row.push_back(detail::format_double(d.y[i]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Dataset dataset_from_table(const Table& t) {
  const std::size_t target = t.column("__target__");
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(t.header.size() - 1), static_cast<Eigen::Index>(t.rows.size()));
  d.y.resize(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    Eigen::Index f = 0;
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      double v = 0.0;
      if (!detail::try_parse(t.rows[i][c], v)) throw DataError("prepared split has a non-numeric value");
      if (c == target)
        d.y[i] = v;
      else
        d.x(f++, static_cast<Eigen::Index>(i)) = v;
    }
  }
  return d;
}

// --------------------------------------------------------------- synthetic

enum class SyntheticKind { Linear, Sinusoidal, HeavyTailed };

inline std::string to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::Linear: return "linear";
    case SyntheticKind::Sinusoidal: return "sinusoidal";
    case SyntheticKind::HeavyTailed: return "heavy-tailed";
  }
  return "?";
}

inline SyntheticKind synthetic_kind_from_string(const std::string& s) {
  if (s == "linear") return SyntheticKind::Linear;
  if (s == "sinusoidal") return SyntheticKind::Sinusoidal;
  if (s == "heavy-tailed") return SyntheticKind::HeavyTailed;
  throw std::invalid_argument("unknown synthetic task: " + s);
}

// Conditional law of Y given the scalar feature x, x ~ U(-3, 3):
//   linear:       Y = x + N(0, 1)
//   sinusoidal:   Y = sin(x) + s(x) e, s(x) = 0.2 + 0.3|x|, e a skewed
//                 two-component mixture with mean 0
//   heavy-tailed: Y = 0.5 x + 0.8 N(0, 0.5^2) + 0.2 N(0, 2.5^2) (mixture)
inline GaussianMixture synthetic_law(SyntheticKind kind, double x) {
  switch (kind) {
    case SyntheticKind::Linear: return GaussianMixture::normal(x, 1.0);
    case SyntheticKind::Sinusoidal: {
      const double s = 0.2 + 0.3 * std::abs(x);
      const double m = std::sin(x);
      return GaussianMixture({0.7, 0.3}, {m - 0.6 * s, m + 1.4 * s}, {0.5 * s, 0.8 * s});
    }
    case SyntheticKind::HeavyTailed: return GaussianMixture({0.8, 0.2}, {0.5 * x, 0.5 * x}, {0.5, 2.5});
  }
  throw std::invalid_argument("synthetic_law: unknown kind");
}

template <class Rng>
double sample(const GaussianMixture& gm, Rng& rng) {
  std::discrete_distribution<std::size_t> pick(gm.weights().begin(), gm.weights().end());
  const std::size_t k = pick(rng);
  std::normal_distribution<double> z(0.0, 1.0);
  return gm.means()[k] + gm.stds()[k] * z(rng);
}

struct SyntheticSample {
  std::vector<double> x;
  std::vector<double> y;
};

inline SyntheticSample generate_synthetic(SyntheticKind kind, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-3.0, 3.0);
  SyntheticSample s{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    s.x[i] = ux(rng);
    s.y[i] = sample(synthetic_law(kind, s.x[i]), rng);
  }
  return s;
}

inline Table synthetic_table(SyntheticKind kind, std::size_t n, std::uint64_t seed) {
  const auto s = generate_synthetic(kind, n, seed);
  Table t;
  t.header = {"x", "y"};
  for (std::size_t i = 0; i < n; ++i) t.rows.push_back({detail::format_double(s.x[i]), detail::format_double(s.y[i])});
  return t;
}

}  // namespace calibreg
