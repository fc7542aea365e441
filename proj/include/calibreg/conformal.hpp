#pragma once

// Inductive conformal prediction of one-sided (left interval) quantiles with
// CQR residual scores or DCP (PIT) scores.

#include <algorithm>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "calibreg/dist_core.hpp"

namespace calibreg {

enum class ScoreKind { Cqr, Dcp };

inline std::string to_string(ScoreKind k) { return k == ScoreKind::Cqr ? "CQR" : "DCP"; }

inline ScoreKind score_kind_from_string(const std::string& s) {
  if (s == "CQR") return ScoreKind::Cqr;
  if (s == "DCP") return ScoreKind::Dcp;
  throw std::invalid_argument("unknown conformity score kind: " + s);
}

class ConformalCalibrator {
 public:
  ConformalCalibrator(ScoreKind kind, std::vector<double> scores, std::optional<double> alpha0 = std::nullopt)
      : kind_(kind), alpha0_(alpha0), scores_(std::move(scores)) {
    if (scores_.empty()) throw std::invalid_argument("ConformalCalibrator: no conformity scores");
    if (kind_ == ScoreKind::Cqr && !alpha0_) throw std::invalid_argument("ConformalCalibrator: CQR requires alpha0");
    if (kind_ == ScoreKind::Dcp && alpha0_) throw std::invalid_argument("ConformalCalibrator: alpha0 only applies to CQR");
    if (alpha0_ && !(*alpha0_ > 0.0 && *alpha0_ < 1.0))
      throw std::invalid_argument("ConformalCalibrator: alpha0 must lie in (0,1)");
    std::stable_sort(scores_.begin(), scores_.end());
  }

  ScoreKind kind() const { return kind_; }
  std::optional<double> alpha0() const { return alpha0_; }
  const std::vector<double>& scores_sorted() const { return scores_; }
  std::size_t size() const { return scores_.size(); }

 private:
  ScoreKind kind_;
  std::optional<double> alpha0_;
  std::vector<double> scores_;
};

inline std::vector<double> conformity_scores(ScoreKind kind, std::span<const PredictiveDistribution> dists,
                                             std::span<const double> targets,
                                             std::optional<double> alpha0 = std::nullopt) {
  if (dists.size() != targets.size()) throw std::invalid_argument("conformity_scores: length mismatch");
  if (kind == ScoreKind::Cqr && !alpha0) throw std::invalid_argument("conformity_scores: CQR requires alpha0");
  std::vector<double> s(dists.size());
  for (std::size_t i = 0; i < dists.size(); ++i) {
    if (kind == ScoreKind::Cqr)
      s[i] = targets[i] - quantile(dists[i], *alpha0);
    else
      s[i] = pit(dists[i], targets[i]);
  }
  return s;
}

// S_(ceil((N'+1) alpha)) among {S_1..S_N', +inf}.
inline double conformal_threshold(const ConformalCalibrator& cal, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::domain_error("conformal_threshold: alpha must lie in (0,1]");
  const std::size_t n = cal.size();
  const std::size_t k = robust_ceil(static_cast<double>(n + 1) * alpha);
  if (k >= n + 1) return kInf;
  return cal.scores_sorted()[std::max<std::size_t>(k, 1) - 1];
}

// Inverse of the score at the threshold: Q(alpha0|x) + q for CQR, Q(q|x) for
// DCP. An infinite threshold yields +infinity.
inline double conformalized_quantile(const ConformalCalibrator& cal, const PredictiveDistribution& dist,
                                     double alpha) {
  const double q = conformal_threshold(cal, alpha);
  if (std::isinf(q)) return kInf;
  if (cal.kind() == ScoreKind::Cqr) return quantile(dist, *cal.alpha0()) + q;
  return detail::quantile_closed(dist, q);
}

// Per-level CQR calibrators for a quantile grid head: one calibrator per
// level, fitted on residuals at that level.
inline std::vector<ConformalCalibrator> fit_cqr_grid(std::span<const QuantileGrid> grids,
                                                     std::span<const double> targets) {
  if (grids.empty()) throw std::invalid_argument("fit_cqr_grid: no calibration points");
  if (grids.size() != targets.size()) throw std::invalid_argument("fit_cqr_grid: length mismatch");
  const auto& levels = grids.front().levels();
  std::vector<ConformalCalibrator> out;
  out.reserve(levels.size());
  for (std::size_t j = 0; j < levels.size(); ++j) {
    std::vector<double> s(grids.size());
    for (std::size_t i = 0; i < grids.size(); ++i) {
      if (grids[i].levels() != levels) throw std::invalid_argument("fit_cqr_grid: grids must share levels");
      s[i] = targets[i] - grids[i].values()[j];
    }
    out.emplace_back(ScoreKind::Cqr, std::move(s), levels[j]);
  }
  return out;
}

// Adjusts every level of a grid by its calibrator's threshold at that level.
// Infinite thresholds (too few calibration points for the level) fall back to
// the largest score so the grid stays finite; crossings are repaired by the
// QuantileGrid sort.
inline QuantileGrid conformalize_grid(std::span<const ConformalCalibrator> cals, const QuantileGrid& grid) {
  if (cals.size() != grid.size()) throw std::invalid_argument("conformalize_grid: one calibrator per level required");
  std::vector<double> values(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) {
    double q = conformal_threshold(cals[j], grid.levels()[j]);
    if (std::isinf(q)) q = cals[j].scores_sorted().back();
    values[j] = grid.values()[j] + q;
  }
  return QuantileGrid(grid.levels(), std::move(values));
}

// DCP forecast: the distribution whose quantile function is the conformalized
// quantile at every level, with CDF y -> #{S_i <= F(y)} / (N'+1).
class DcpForecast {
 public:
  DcpForecast(PredictiveDistribution base, std::shared_ptr<const ConformalCalibrator> cal)
      : base_(std::move(base)), cal_(std::move(cal)) {
    if (!cal_ || cal_->kind() != ScoreKind::Dcp) throw std::invalid_argument("DcpForecast: DCP calibrator required");
  }
  const PredictiveDistribution& base() const { return base_; }
  const ConformalCalibrator& calibrator() const { return *cal_; }
  const std::shared_ptr<const ConformalCalibrator>& shared_calibrator() const { return cal_; }

  double cdf(double y) const {
    const auto& s = cal_->scores_sorted();
    const double z = pit(base_, y);
    return static_cast<double>(std::upper_bound(s.begin(), s.end(), z) - s.begin()) /
           static_cast<double>(s.size() + 1);
  }
  double quantile(double alpha) const { return conformalized_quantile(*cal_, base_, alpha); }

 private:
  PredictiveDistribution base_;
  std::shared_ptr<const ConformalCalibrator> cal_;
};

inline nlohmann::json to_json(const ConformalCalibrator& cal) {
  nlohmann::json j;
  j["kind"] = to_string(cal.kind());
  if (cal.alpha0()) j["alpha0"] = *cal.alpha0();
  j["scores"] = cal.scores_sorted();
  return j;
}

inline ConformalCalibrator conformal_calibrator_from_json(const nlohmann::json& j) {
  std::optional<double> alpha0;
  if (j.contains("alpha0")) alpha0 = j.at("alpha0").get<double>();
  return ConformalCalibrator(score_kind_from_string(j.at("kind").get<std::string>()),
                             j.at("scores").get<std::vector<double>>(), alpha0);
}

}  // namespace calibreg
