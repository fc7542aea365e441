#pragma once

// Calibration maps fitted on PIT values, and the recalibrated distributions
// F' = phi o F they induce.

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "calibreg/dist_core.hpp"

namespace calibreg {

enum class MapKind { Emp, Lin, Kde, Dcp };

inline constexpr double kDefaultKdeTau = 100.0;

inline std::string to_string(MapKind k) {
  switch (k) {
    case MapKind::Emp: return "EMP";
    case MapKind::Lin: return "LIN";
    case MapKind::Kde: return "KDE";
    case MapKind::Dcp: return "DCP";
  }
  return "?";
}

inline MapKind map_kind_from_string(std::string_view s) {
  if (s == "EMP") return MapKind::Emp;
  if (s == "LIN") return MapKind::Lin;
  if (s == "KDE") return MapKind::Kde;
  if (s == "DCP") return MapKind::Dcp;
  throw std::invalid_argument("unknown calibration map kind: " + std::string(s));
}

class CalibrationMap {
 public:
  CalibrationMap(MapKind kind, std::vector<double> pits_sorted, double tau)
      : kind_(kind), pits_(std::move(pits_sorted)), tau_(tau) {
    if (kind_ == MapKind::Lin) build_lin_knots();
  }

  MapKind kind() const { return kind_; }
  const std::vector<double>& pits_sorted() const { return pits_; }
  std::size_t size() const { return pits_.size(); }
  double tau() const { return tau_; }

  // Interpolation knots of the LIN map, x and y strictly increasing,
  // starting at (0,0) and ending at (1,1).
  const std::vector<std::pair<double, double>>& lin_knots() const { return knots_; }

 private:
  void build_lin_knots() {
    // Duplicate PITs collapse into one knot at the mean of their plotting
    // positions. PITs equal to 0 or 1 merge into the fixed end points.
    const double n1 = static_cast<double>(pits_.size() + 1);
    knots_.emplace_back(0.0, 0.0);
    std::size_t i = 0;
    while (i < pits_.size()) {
      std::size_t j = i;
      while (j + 1 < pits_.size() && pits_[j + 1] == pits_[i]) ++j;
      const double x = pits_[i];
      const double y = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / n1;
      if (x > 0.0 && x < 1.0) knots_.emplace_back(x, y);
      i = j + 1;
    }
    knots_.emplace_back(1.0, 1.0);
  }

  MapKind kind_;
  std::vector<double> pits_;
  double tau_;
  std::vector<std::pair<double, double>> knots_;
};

inline CalibrationMap fit_calibration_map(MapKind kind, std::span<const double> pit_values,
                                          std::optional<double> tau = std::nullopt) {
  if (pit_values.empty()) throw std::invalid_argument("fit_calibration_map: no PIT values");
  for (double z : pit_values)
    if (!(z >= 0.0 && z <= 1.0)) throw std::invalid_argument("fit_calibration_map: PIT outside [0,1]");
  if (kind == MapKind::Kde && !tau) throw std::invalid_argument("fit_calibration_map: KDE map requires tau");
  if (kind != MapKind::Kde && tau) throw std::invalid_argument("fit_calibration_map: tau only applies to KDE maps");
  if (tau && !(*tau > 0.0)) throw std::invalid_argument("fit_calibration_map: tau must be positive");
  std::vector<double> sorted(pit_values.begin(), pit_values.end());
  std::stable_sort(sorted.begin(), sorted.end());
  return CalibrationMap(kind, std::move(sorted), tau.value_or(0.0));
}

namespace detail {

inline double count_le(const std::vector<double>& sorted, double alpha) {
  return static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), alpha) - sorted.begin());
}

inline double interpolate(const std::vector<std::pair<double, double>>& knots, double x, bool inverse) {
  const auto key = [inverse](const std::pair<double, double>& p) { return inverse ? p.second : p.first; };
  const auto val = [inverse](const std::pair<double, double>& p) { return inverse ? p.first : p.second; };
  if (x <= key(knots.front())) return val(knots.front());
  if (x >= key(knots.back())) return val(knots.back());
  auto it = std::upper_bound(knots.begin(), knots.end(), x,
                             [&](double v, const std::pair<double, double>& p) { return v < key(p); });
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double t = (x - key(a)) / (key(b) - key(a));
  return val(a) + t * (val(b) - val(a));
}

}  // namespace detail

inline double map_apply(const CalibrationMap& map, double alpha) {
  const auto& z = map.pits_sorted();
  const double n = static_cast<double>(z.size());
  switch (map.kind()) {
    case MapKind::Emp: return detail::count_le(z, alpha) / n;
    case MapKind::Dcp: return detail::count_le(z, alpha) / (n + 1.0);
    case MapKind::Kde: {
      double s = 0.0;
      for (double zi : z) s += sigmoid(map.tau() * (alpha - zi));
      return s / n;
    }
    case MapKind::Lin: return detail::interpolate(map.lin_knots(), alpha, false);
  }
  return 0.0;
}

// Derivative of the map in alpha (0 almost everywhere for the step maps).
inline double map_derivative(const CalibrationMap& map, double alpha) {
  switch (map.kind()) {
    case MapKind::Emp:
    case MapKind::Dcp: return 0.0;
    case MapKind::Kde: {
      double s = 0.0;
      for (double zi : map.pits_sorted()) s += sigmoid_prime(map.tau() * (alpha - zi));
      return map.tau() * s / static_cast<double>(map.size());
    }
    case MapKind::Lin: {
      const auto& k = map.lin_knots();
      if (alpha < 0.0 || alpha > 1.0) return 0.0;
      auto it = std::upper_bound(k.begin(), k.end(), alpha,
                                 [](double v, const std::pair<double, double>& p) { return v < p.first; });
      if (it == k.end()) --it;
      if (it == k.begin()) ++it;
      return (it->second - (it - 1)->second) / (it->first - (it - 1)->first);
    }
  }
  return 0.0;
}

// Generalized inverse on (0,1]. For DCP the order statistic N'+1 (the +inf
// score of conformal prediction) is represented by the PIT value 1.
inline double map_inverse(const CalibrationMap& map, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::domain_error("map_inverse: alpha must lie in (0,1]");
  const auto& z = map.pits_sorted();
  const std::size_t n = z.size();
  switch (map.kind()) {
    case MapKind::Dcp: {
      const std::size_t k = std::max<std::size_t>(1, robust_ceil(static_cast<double>(n + 1) * alpha));
      return k >= n + 1 ? 1.0 : z[k - 1];
    }
    case MapKind::Emp: {
      const std::size_t k = std::max<std::size_t>(1, robust_ceil(static_cast<double>(n) * alpha));
      return z[std::min(k, n) - 1];
    }
    case MapKind::Lin: return detail::interpolate(map.lin_knots(), alpha, true);
    case MapKind::Kde: {
      if (alpha <= map_apply(map, 0.0)) return 0.0;
      if (alpha >= map_apply(map, 1.0)) return 1.0;
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double f = map_apply(map, mid);
        if (f < alpha)
          lo = mid;
        else
          hi = mid;
      }
      return 0.5 * (lo + hi);
    }
  }
  return 0.0;
}

// F'(y) = phi(F(y)) and Q'(alpha) = Q(phi^{-1}(alpha)). The map is shared so
// that per-point distributions stay cheap to copy.
class RecalibratedDistribution {
 public:
  RecalibratedDistribution(PredictiveDistribution base, std::shared_ptr<const CalibrationMap> map)
      : base_(std::move(base)), map_(std::move(map)) {
    if (!map_) throw std::invalid_argument("RecalibratedDistribution: null map");
  }

  const PredictiveDistribution& base() const { return base_; }
  const CalibrationMap& map() const { return *map_; }
  const std::shared_ptr<const CalibrationMap>& shared_map() const { return map_; }

  double cdf(double y) const { return map_apply(*map_, pit(base_, y)); }

  // alpha in (0,1]; values below the smallest attainable map value clamp to
  // the generalized inverse, alpha = 1 may give the upper support end.
  double quantile(double alpha) const { return quantile_at_base_level(map_inverse(*map_, alpha)); }

  // Base quantile at an already inverted level u = phi^{-1}(alpha). The
  // inversion does not depend on x, so callers evaluating many points at fixed
  // levels can invert once.
  double quantile_at_base_level(double u) const { return detail::quantile_closed(base_, u); }

  // Density f(y) * phi'(F(y)). Defined for mixture bases; zero for the step
  // maps, which makes their NLL infinite.
  std::optional<double> density(double y) const {
    const auto* gm = std::get_if<GaussianMixture>(&base_);
    if (!gm) return std::nullopt;
    if (map_->kind() == MapKind::Emp || map_->kind() == MapKind::Dcp) return 0.0;
    return mixture_pdf(*gm, y) * map_derivative(*map_, mixture_cdf(*gm, y));
  }

  // -log density, computed in log space for the KDE map.
  std::optional<double> nll(double y) const {
    const auto* gm = std::get_if<GaussianMixture>(&base_);
    if (!gm) return std::nullopt;
    if (map_->kind() == MapKind::Emp || map_->kind() == MapKind::Dcp) return kInf;
    const double deriv = map_derivative(*map_, mixture_cdf(*gm, y));
    if (!(deriv > 0.0)) return kInf;
    return calibreg::nll(*gm, y) - std::log(deriv);
  }

 private:
  PredictiveDistribution base_;
  std::shared_ptr<const CalibrationMap> map_;
};

inline RecalibratedDistribution recalibrate(const PredictiveDistribution& dist, const CalibrationMap& map) {
  return RecalibratedDistribution(dist, std::make_shared<const CalibrationMap>(map));
}

inline RecalibratedDistribution recalibrate(const PredictiveDistribution& dist,
                                            std::shared_ptr<const CalibrationMap> map) {
  return RecalibratedDistribution(dist, std::move(map));
}

inline nlohmann::json to_json(const CalibrationMap& map) {
  nlohmann::json j;
  j["kind"] = to_string(map.kind());
  j["tau"] = map.kind() == MapKind::Kde ? nlohmann::json(map.tau()) : nlohmann::json(nullptr);
  j["pits"] = map.pits_sorted();
  return j;
}

inline CalibrationMap calibration_map_from_json(const nlohmann::json& j) {
  const MapKind kind = map_kind_from_string(j.at("kind").get<std::string>());
  std::optional<double> tau;
  if (kind == MapKind::Kde) tau = j.at("tau").get<double>();
  const auto pits = j.at("pits").get<std::vector<double>>();
  return fit_calibration_map(kind, pits, tau);
}

}  // namespace calibreg
