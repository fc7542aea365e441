#pragma once

// Experiment orchestration: per seed, prepare splits, train the base model,
// apply each calibration method, evaluate on the test split in the original
// target scale, and write JSON, long CSV and SVG reliability diagrams.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "calibreg/calib_maps.hpp"
#include "calibreg/conformal.hpp"
#include "calibreg/data.hpp"
#include "calibreg/metrics.hpp"
#include "calibreg/stats_harness.hpp"
#include "calibreg/train_reg.hpp"

namespace calibreg {

enum class Method { None, RecEmp, RecLin, RecKde, RecDcp, Cqr, Dcp, Qr, Trunc, PceKde, PceSort };

inline const std::vector<std::pair<Method, std::string>>& method_names() {
  static const std::vector<std::pair<Method, std::string>> names = {
      {Method::None, "None"},   {Method::RecEmp, "Rec-EMP"}, {Method::RecLin, "Rec-LIN"},
      {Method::RecKde, "Rec-KDE"}, {Method::RecDcp, "Rec-DCP"}, {Method::Cqr, "CQR"},
      {Method::Dcp, "DCP"},     {Method::Qr, "QR"},          {Method::Trunc, "Trunc"},
      {Method::PceKde, "PCE-KDE"}, {Method::PceSort, "PCE-Sort"}};
  return names;
}

inline std::string to_string(Method m) {
  for (const auto& [k, v] : method_names())
    if (k == m) return v;
  return "?";
}

namespace detail {
inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}
}  // namespace detail

inline Method method_from_string(const std::string& s) {
  for (const auto& [k, v] : method_names())
    if (detail::lower(v) == detail::lower(s)) return k;
  throw std::invalid_argument("unknown method: " + s);
}

inline bool is_recalibration(Method m) {
  return m == Method::RecEmp || m == Method::RecLin || m == Method::RecKde || m == Method::RecDcp;
}
inline bool is_conformal(Method m) { return m == Method::Cqr || m == Method::Dcp; }
inline bool is_regularized(Method m) {
  return m == Method::Qr || m == Method::Trunc || m == Method::PceKde || m == Method::PceSort;
}

inline RegKind regularizer_of(Method m) {
  switch (m) {
    case Method::Qr: return RegKind::Qr;
    case Method::Trunc: return RegKind::Trunc;
    case Method::PceKde: return RegKind::PceKde;
    case Method::PceSort: return RegKind::PceSort;
    default: throw std::invalid_argument("not a regularization method: " + to_string(m));
  }
}

inline MapKind map_of(Method m) {
  switch (m) {
    case Method::RecEmp: return MapKind::Emp;
    case Method::RecLin: return MapKind::Lin;
    case Method::RecKde: return MapKind::Kde;
    case Method::RecDcp: return MapKind::Dcp;
    default: throw std::invalid_argument("not a recalibration method: " + to_string(m));
  }
}

enum class PosthocSource { Calib, Train };
enum class SplitTag { Train, Val, Cal, Test };

inline std::string to_string(PosthocSource s) { return s == PosthocSource::Calib ? "calib" : "train"; }

inline PosthocSource posthoc_source_from_string(const std::string& s) {
  if (s == "calib" || s == "cal" || s == "calibration") return PosthocSource::Calib;
  if (s == "train" || s == "training") return PosthocSource::Train;
  throw std::invalid_argument("unknown posthoc source: " + s);
}

inline std::string to_string(SplitTag t) {
  switch (t) {
    case SplitTag::Train: return "train";
    case SplitTag::Val: return "val";
    case SplitTag::Cal: return "cal";
    case SplitTag::Test: return "test";
  }
  return "?";
}

inline SplitTag split_of(PosthocSource s) { return s == PosthocSource::Calib ? SplitTag::Cal : SplitTag::Train; }

struct RunConfig {
  std::string dataset_name;  // report label; defaults to the file stem or synthetic kind
  std::string dataset_path;
  std::optional<SyntheticKind> synthetic;
  std::size_t synthetic_rows = 2000;
  std::uint64_t synthetic_seed = 0;
  std::string target = "y";
  ModelKind model = ModelKind::MixNll;
  std::vector<Method> methods = {Method::None};
  std::vector<double> lambda_grid = kDefaultLambdaGrid;
  PosthocSource posthoc_source = PosthocSource::Calib;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::string out_dir = "out";
  NetworkConfig net;
  TrainConfig train;
  std::size_t null_sims = 10000;
  std::uint64_t null_seed = 7;
  double band_level = 0.9;
  std::size_t band_sims = 1000;

  std::string label() const {
    if (!dataset_name.empty()) return dataset_name;
    if (synthetic) return to_string(*synthetic);
    return std::filesystem::path(dataset_path).stem().string();
  }

  void validate() const {
    if (dataset_path.empty() && !synthetic) throw std::invalid_argument("RunConfig: no dataset given");
    if (methods.empty()) throw std::invalid_argument("RunConfig: no methods given");
    if (seeds.empty()) throw std::invalid_argument("RunConfig: no seeds given");
    for (Method m : methods) {
      if (m == Method::Cqr && model != ModelKind::SqrCrps)
        throw std::invalid_argument("RunConfig: CQR requires the SQR-CRPS model");
      if (is_regularized(m) && std::find(lambda_grid.begin(), lambda_grid.end(), 0.0) == lambda_grid.end())
        throw std::invalid_argument("RunConfig: the lambda grid must contain 0");
    }
    for (double l : lambda_grid)
      if (!(l >= 0.0)) throw std::invalid_argument("RunConfig: lambdas must be >= 0");
  }
};

struct EvaluationReport {
  std::string dataset;
  std::string model;
  std::string method;
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::string error;
  std::string fit_split;  // split the post-hoc step was fitted on
  std::optional<double> selected_lambda;
  std::vector<LambdaCandidate> lambda_candidates;
  MetricSummary metrics;
  std::optional<double> pce_p_value;

  bool ok() const { return status == "ok"; }
};

// ----------------------------------------------------------- post-hoc fits

// A fitted post-hoc calibration step, tagged with the split it was fitted on.
struct PosthocFit {
  Method method = Method::None;
  SplitTag fitted_on = SplitTag::Cal;
  std::shared_ptr<const CalibrationMap> map;
  std::shared_ptr<const ConformalCalibrator> dcp;
  std::vector<ConformalCalibrator> cqr;
};

// Fits a recalibration map or conformal calibrator. Fitting on the test split,
// or on any split other than the configured source, is rejected.
inline PosthocFit fit_posthoc(Method method, const std::vector<PredictiveDistribution>& preds,
                              const std::vector<double>& y, SplitTag split, PosthocSource source) {
  if (split == SplitTag::Test) throw std::logic_error("fit_posthoc: refusing to fit on the test split");
  if (split != split_of(source))
    throw std::logic_error("fit_posthoc: fitted on " + to_string(split) + " but the configured source is " +
                           to_string(source));
  PosthocFit fit;
  fit.method = method;
  fit.fitted_on = split;
  if (is_recalibration(method)) {
    std::vector<double> z(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) z[i] = pit(preds[i], y[i]);
    const MapKind kind = map_of(method);
    fit.map = std::make_shared<const CalibrationMap>(
        fit_calibration_map(kind, z, kind == MapKind::Kde ? std::optional<double>(kDefaultKdeTau) : std::nullopt));
  } else if (method == Method::Dcp) {
    fit.dcp = std::make_shared<const ConformalCalibrator>(ScoreKind::Dcp, conformity_scores(ScoreKind::Dcp, preds, y));
  } else if (method == Method::Cqr) {
    std::vector<QuantileGrid> grids;
    for (const auto& p : preds) {
      const auto* g = std::get_if<QuantileGrid>(&p);
      if (!g) throw std::invalid_argument("fit_posthoc: CQR requires quantile predictions");
      grids.push_back(*g);
    }
    fit.cqr = fit_cqr_grid(grids, y);
  } else {
    throw std::invalid_argument("fit_posthoc: not a post-hoc method: " + to_string(method));
  }
  return fit;
}

inline MetricSummary evaluate_posthoc(const PosthocFit& fit, const std::vector<PredictiveDistribution>& test_preds,
                                      const std::vector<double>& y, const EvalOptions& opt) {
  if (fit.map) {
    std::vector<RecalibratedDistribution> f;
    f.reserve(test_preds.size());
    for (const auto& p : test_preds) f.emplace_back(p, fit.map);
    return evaluate(f, y, opt);
  }
  if (fit.dcp) {
    std::vector<DcpForecast> f;
    f.reserve(test_preds.size());
    for (const auto& p : test_preds) f.emplace_back(p, fit.dcp);
    return evaluate(f, y, opt);
  }
  std::vector<PredictiveDistribution> f;
  f.reserve(test_preds.size());
  for (const auto& p : test_preds) f.push_back(conformalize_grid(fit.cqr, std::get<QuantileGrid>(p)));
  return evaluate(f, y, opt);
}

inline nlohmann::json to_json(const PosthocFit& f) {
  nlohmann::json j;
  j["method"] = to_string(f.method);
  j["fitted_on"] = to_string(f.fitted_on);
  if (f.map) j["map"] = to_json(*f.map);
  if (f.dcp) j["calibrator"] = to_json(*f.dcp);
  if (!f.cqr.empty()) {
    j["calibrators"] = nlohmann::json::array();
    for (const auto& c : f.cqr) j["calibrators"].push_back(to_json(c));
  }
  return j;
}

inline PosthocFit posthoc_fit_from_json(const nlohmann::json& j) {
  PosthocFit f;
  f.method = method_from_string(j.at("method").get<std::string>());
  const std::string on = j.at("fitted_on").get<std::string>();
  f.fitted_on = on == "train" ? SplitTag::Train : on == "cal" ? SplitTag::Cal : SplitTag::Val;
  if (j.contains("map")) f.map = std::make_shared<const CalibrationMap>(calibration_map_from_json(j.at("map")));
  if (j.contains("calibrator"))
    f.dcp = std::make_shared<const ConformalCalibrator>(conformal_calibrator_from_json(j.at("calibrator")));
  if (j.contains("calibrators"))
    for (const auto& c : j.at("calibrators")) f.cqr.push_back(conformal_calibrator_from_json(c));
  if (!f.map && !f.dcp && f.cqr.empty()) throw std::invalid_argument("post-hoc file: no fitted calibrator");
  return f;
}

// ---------------------------------------------------------------- pipeline

namespace detail {

inline std::vector<double> original_targets(const Dataset& d, const Normalization& n) {
  std::vector<double> y(d.y.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = n.target_mean + n.target_std * d.y[i];
  return y;
}

inline std::vector<PredictiveDistribution> original_predictions(const TrainedModel& m, const Dataset& d,
                                                                const Normalization& n) {
  auto p = predict(m, d.x);
  for (auto& x : p) x = n.to_original(x);
  return p;
}

inline EvalOptions eval_options(const RunConfig& c, std::uint64_t seed) {
  EvalOptions o;
  o.band_level = c.band_level;
  o.band_sims = c.band_sims;
  o.band_seed = seed;
  return o;
}

inline Table load_table(const RunConfig& c) {
  if (c.synthetic) return synthetic_table(*c.synthetic, c.synthetic_rows, c.synthetic_seed);
  return read_table(c.dataset_path);
}

// All (method) reports of one seed.
inline std::vector<EvaluationReport> run_seed(const RunConfig& c, const Table& table, std::uint64_t seed) {
  std::vector<EvaluationReport> out;
  for (Method m : c.methods) {
    EvaluationReport r;
    r.dataset = c.label();
    r.model = to_string(c.model);
    r.method = to_string(m);
    r.seed = seed;
    out.push_back(std::move(r));
  }
  const auto fail_all = [&](const std::string& msg) {
    for (auto& r : out) {
      r.status = "error";
      r.error = msg;
    }
  };
  SplitDataset data;
  TrainedModel base;
  NetworkConfig net = c.net;
  TrainConfig tcfg = c.train;
  configure_model(c.model, net, tcfg);
  net.seed = seed;
  tcfg.regularizer = RegKind::None;
  tcfg.lambda = 0.0;
  try {
    data = prepare_dataset(table, c.target, seed);
    base = train(net, tcfg, data.train, data.val);
  } catch (const std::exception& e) {
    fail_all(e.what());
    return out;
  }
  const EvalOptions opt = eval_options(c, seed);
  const auto y_test = original_targets(data.test, data.norm);
  const auto test_preds = original_predictions(base, data.test, data.norm);

  for (std::size_t k = 0; k < c.methods.size(); ++k) {
    const Method m = c.methods[k];
    EvaluationReport& r = out[k];
    try {
      if (m == Method::None) {
        r.metrics = evaluate(test_preds, y_test, opt);
      } else if (is_recalibration(m) || is_conformal(m)) {
        const SplitTag split = split_of(c.posthoc_source);
        const Dataset& src = split == SplitTag::Cal ? data.cal : data.train;
        const PosthocFit fit = fit_posthoc(m, original_predictions(base, src, data.norm),
                                           original_targets(src, data.norm), split, c.posthoc_source);
        r.fit_split = to_string(fit.fitted_on);
        r.metrics = evaluate_posthoc(fit, test_preds, y_test, opt);
      } else {
        std::vector<TrainedModel> models;
        for (double lambda : c.lambda_grid) {
          if (lambda == 0.0) {
            models.push_back(base);
          } else {
            TrainConfig reg = tcfg;
            reg.regularizer = regularizer_of(m);
            reg.lambda = lambda;
            models.push_back(train(net, reg, data.train, data.val));
          }
          const EpochLog& sel = models.back().selected();
          r.lambda_candidates.push_back({lambda, sel.val_pce, sel.val_crps});
        }
        const double chosen = select_lambda(r.lambda_candidates);
        r.selected_lambda = chosen;
        const auto it = std::find(c.lambda_grid.begin(), c.lambda_grid.end(), chosen);
        const TrainedModel& best = models[static_cast<std::size_t>(it - c.lambda_grid.begin())];
        r.metrics = evaluate(original_predictions(best, data.test, data.norm), y_test, opt);
      }
      if (c.model == ModelKind::SqrCrps) r.metrics.nll.reset();
    } catch (const std::exception& e) {
      r.status = "error";
      r.error = e.what();
    }
  }
  return out;
}

inline std::size_t thread_cap() {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CALIBREG_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) cap = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return cap;
}

}  // namespace detail

// Runs every (seed, method) job; seeds run concurrently up to
// CALIBREG_THREADS. Reports come back sorted by (dataset, model, method, seed).
inline std::vector<EvaluationReport> run_pipeline(const RunConfig& config) {
  config.validate();
  const Table table = detail::load_table(config);
  std::vector<std::vector<EvaluationReport>> per_seed(config.seeds.size());
  std::size_t next = 0;
  std::mutex mu;
  const auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= config.seeds.size()) return;
        i = next++;
      }
      per_seed[i] = detail::run_seed(config, table, config.seeds[i]);
    }
  };
  const std::size_t threads = std::min(detail::thread_cap(), config.seeds.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<EvaluationReport> reports;
  for (auto& v : per_seed)
    for (auto& r : v) reports.push_back(std::move(r));
  std::stable_sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) {
    return std::tie(a.dataset, a.model, a.method, a.seed) < std::tie(b.dataset, b.model, b.method, b.seed);
  });
  std::map<std::size_t, NullPceDistribution> nulls;
  for (auto& r : reports) {
    if (!r.ok()) continue;
    auto it = nulls.find(r.metrics.n);
    if (it == nulls.end())
      it = nulls.emplace(r.metrics.n, simulate_null_pce(r.metrics.n, kDefaultPceBins, config.null_sims, config.null_seed))
               .first;
    r.pce_p_value = p_value_upper(it->second, r.metrics.pce);
  }
  return reports;
}

// ----------------------------------------------------------------- output

inline constexpr int kReportSchemaVersion = 1;

namespace detail {

// JSON has no infinities; non-finite values are written as strings.
inline nlohmann::json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline nlohmann::json numbers(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

inline std::string sanitize(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return s;
}

}  // namespace detail

inline nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json j;
  j["dataset"] = r.dataset;
  j["model"] = r.model;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["status"] = r.status;
  if (!r.ok()) {
    j["error"] = r.error;
    return j;
  }
  if (!r.fit_split.empty()) j["fit_split"] = r.fit_split;
  if (r.selected_lambda) {
    j["selected_lambda"] = *r.selected_lambda;
    nlohmann::json c = nlohmann::json::array();
    for (const auto& x : r.lambda_candidates)
      c.push_back({{"lambda", x.lambda}, {"val_pce", detail::number(x.val_pce)}, {"val_crps", detail::number(x.val_crps)}});
    j["lambda_candidates"] = std::move(c);
  }
  const auto& m = r.metrics;
  j["n_test"] = m.n;
  j["metrics"] = {{"pce", detail::number(m.pce)},
                  {"crps", detail::number(m.crps)},
                  {"nll", m.nll ? detail::number(*m.nll) : nlohmann::json(nullptr)},
                  {"std", detail::number(m.std_dev)}};
  if (r.pce_p_value) j["pce_p_value"] = *r.pce_p_value;
  j["reliability"] = {{"grid", detail::numbers(m.reliability.grid)},
                      {"empirical", detail::numbers(m.reliability.empirical)},
                      {"band_low", detail::numbers(m.reliability.band_low)},
                      {"band_high", detail::numbers(m.reliability.band_high)}};
  return j;
}

inline nlohmann::json reports_json(const std::vector<EvaluationReport>& reports) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["reports"] = nlohmann::json::array();
  for (const auto& r : reports) j["reports"].push_back(to_json(r));
  return j;
}

// Metric rows of one report, in output order.
inline std::vector<std::pair<std::string, double>> report_metrics(const EvaluationReport& r) {
  std::vector<std::pair<std::string, double>> m = {{"pce", r.metrics.pce}, {"crps", r.metrics.crps}};
  if (r.metrics.nll) m.emplace_back("nll", *r.metrics.nll);
  m.emplace_back("std", r.metrics.std_dev);
  return m;
}

inline void write_long_csv(std::ostream& os, const std::vector<EvaluationReport>& reports) {
  os << "dataset,model,method,seed,metric,value\n";
  for (const auto& r : reports) {
    if (!r.ok()) continue;
    for (const auto& [name, v] : report_metrics(r)) {
      os << r.dataset << ',' << r.model << ',' << r.method << ',' << r.seed << ',' << name << ',';
      if (std::isfinite(v))
        os << detail::format_double(v);
      else
        os << (std::isnan(v) ? "nan" : v > 0 ? "inf" : "-inf");
      os << '\n';
    }
  }
}

// Reliability diagram: diagonal, one consistency band polygon and one
// empirical polyline.
inline std::string reliability_svg(const ReliabilityCurve& c, const std::string& title) {
  constexpr double kSize = 320.0, kMargin = 40.0;
  const auto px = [](double a) { return kMargin + kSize * a; };
  const auto py = [](double f) { return kMargin + kSize * (1.0 - f); };
  const auto pt = [&](double a, double f) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f,%.3f", px(a), py(f));
    return std::string(buf);
  };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" viewBox=\"0 0 400 400\">\n";
  os << "<title>" << title << "</title>\n";
  os << "<rect x=\"40\" y=\"40\" width=\"320\" height=\"320\" fill=\"none\" stroke=\"#444\"/>\n";
  std::string band;
  const bool have_band = !c.band_low.empty();
  for (std::size_t i = 0; i < c.grid.size(); ++i)
    band += (i ? " " : "") + pt(c.grid[i], have_band ? c.band_high[i] : c.grid[i]);
  for (std::size_t i = c.grid.size(); i-- > 0;) band += " " + pt(c.grid[i], have_band ? c.band_low[i] : c.grid[i]);
  os << "<polygon class=\"band\" points=\"" << band << "\" fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\"/>\n";
  os << "<line class=\"diagonal\" x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
     << "\" stroke=\"#888\" stroke-dasharray=\"4 4\"/>\n";
  std::string curve;
  for (std::size_t i = 0; i < c.grid.size(); ++i) curve += (i ? " " : "") + pt(c.grid[i], c.empirical[i]);
  os << "<polyline class=\"empirical\" points=\"" << curve << "\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
  os << "</svg>\n";
  return os.str();
}

inline std::string svg_file_name(const EvaluationReport& r) {
  return "reliability_" + detail::sanitize(r.dataset) + "_" + detail::sanitize(r.model) + "_" +
         detail::sanitize(r.method) + "_seed" + std::to_string(r.seed) + ".svg";
}

// Writes report.json, results.csv and/or one SVG per successful report into
// out_dir. Returns the written paths.
inline std::vector<std::filesystem::path> emit_report(const std::vector<EvaluationReport>& reports,
                                                      const std::filesystem::path& out_dir,
                                                      const std::set<std::string>& formats) {
  if (reports.empty()) throw std::invalid_argument("emit_report: no reports");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("emit_report: cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  const auto open = [&](const std::filesystem::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("emit_report: cannot write " + p.string());
    written.push_back(p);
    return f;
  };
  for (const auto& fmt : formats)
    if (fmt != "json" && fmt != "csv" && fmt != "svg") throw std::invalid_argument("emit_report: unknown format " + fmt);
  if (formats.count("json")) {
    auto f = open(out_dir / "report.json");
    f << reports_json(reports).dump(2) << '\n';
  }
  if (formats.count("csv")) {
    auto f = open(out_dir / "results.csv");
    write_long_csv(f, reports);
  }
  if (formats.count("svg")) {
    for (const auto& r : reports) {
      if (!r.ok()) continue;
      auto f = open(out_dir / svg_file_name(r));
      f << reliability_svg(r.metrics.reliability, r.dataset + " " + r.model + " " + r.method + " seed " +
                                                      std::to_string(r.seed));
    }
  }
  return written;
}

// -------------------------------------------------------------- TOML config

inline RunConfig run_config_from_toml(const toml::table& t) {
  RunConfig c;
  if (auto v = t["dataset"].value<std::string>()) c.dataset_path = *v;
  if (auto v = t["dataset_name"].value<std::string>()) c.dataset_name = *v;
  if (auto v = t["synthetic"].value<std::string>()) c.synthetic = synthetic_kind_from_string(*v);
  if (auto v = t["synthetic_rows"].value<std::int64_t>()) c.synthetic_rows = static_cast<std::size_t>(*v);
  if (auto v = t["synthetic_seed"].value<std::int64_t>()) c.synthetic_seed = static_cast<std::uint64_t>(*v);
  if (auto v = t["target"].value<std::string>()) c.target = *v;
  if (auto v = t["model"].value<std::string>()) c.model = model_kind_from_string(*v);
  if (auto v = t["method"].value<std::string>()) c.methods = {method_from_string(*v)};
  if (const auto* a = t["methods"].as_array()) {
    c.methods.clear();
    for (const auto& e : *a) c.methods.push_back(method_from_string(e.value<std::string>().value()));
  }
  if (const auto* a = t["lambda_grid"].as_array()) {
    c.lambda_grid.clear();
    for (const auto& e : *a) c.lambda_grid.push_back(e.value<double>().value());
  }
  if (auto v = t["posthoc_source"].value<std::string>()) c.posthoc_source = posthoc_source_from_string(*v);
  if (const auto* a = t["seeds"].as_array()) {
    c.seeds.clear();
    for (const auto& e : *a) c.seeds.push_back(static_cast<std::uint64_t>(e.value<std::int64_t>().value()));
  }
  if (auto v = t["out"].value<std::string>()) c.out_dir = *v;
  if (const auto* n = t["network"].as_table()) {
    if (auto v = (*n)["hidden_layers"].value<std::int64_t>()) c.net.hidden_layers = static_cast<std::size_t>(*v);
    if (auto v = (*n)["units"].value<std::int64_t>()) c.net.units = static_cast<std::size_t>(*v);
    if (auto v = (*n)["dropout_rate"].value<double>()) c.net.dropout_rate = *v;
    if (auto v = (*n)["components"].value<std::int64_t>()) c.net.head = {HeadKind::Mixture, static_cast<std::size_t>(*v)};
    if (auto v = (*n)["quantiles"].value<std::int64_t>()) c.net.head = {HeadKind::Quantile, static_cast<std::size_t>(*v)};
  }
  if (const auto* n = t["training"].as_table()) {
    if (auto v = (*n)["batch_size"].value<std::int64_t>()) c.train.batch_size = static_cast<std::size_t>(*v);
    if (auto v = (*n)["learning_rate"].value<double>()) c.train.learning_rate = *v;
    if (auto v = (*n)["max_epochs"].value<std::int64_t>()) c.train.max_epochs = static_cast<std::size_t>(*v);
    if (auto v = (*n)["patience"].value<std::int64_t>()) c.train.patience = static_cast<std::size_t>(*v);
    if (auto v = (*n)["tau_sort"].value<double>()) c.train.tau_sort = *v;
    if (auto v = (*n)["kde_tau"].value<double>()) c.train.kde_tau = *v;
    if (auto v = (*n)["p"].value<double>()) c.train.reg_p = *v;
  }
  if (const auto* n = t["evaluation"].as_table()) {
    if (auto v = (*n)["null_sims"].value<std::int64_t>()) c.null_sims = static_cast<std::size_t>(*v);
    if (auto v = (*n)["band_level"].value<double>()) c.band_level = *v;
    if (auto v = (*n)["band_sims"].value<std::int64_t>()) c.band_sims = static_cast<std::size_t>(*v);
  }
  return c;
}

inline RunConfig run_config_from_toml_file(const std::string& path) {
  try {
    return run_config_from_toml(toml::parse_file(path));
  } catch (const toml::parse_error& e) {
    throw std::invalid_argument("config " + path + ": " + std::string(e.description()));
  }
}

}  // namespace calibreg
