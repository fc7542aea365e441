// calibreg: command line front end for preparing data, training models,
// post-hoc calibration, evaluation, null tests and method comparison.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "calibreg.hpp"

namespace fs = std::filesystem;
using namespace calibreg;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return nlohmann::json::parse(in);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct Prepared {
  SplitDataset data;
};

Prepared load_prepared(const std::string& dir) {
  Prepared p;
  p.data.norm = normalization_from_json(read_json((fs::path(dir) / "normalization.json").string()));
  Dataset* dst[4] = {&p.data.train, &p.data.val, &p.data.cal, &p.data.test};
  for (std::size_t s = 0; s < 4; ++s)
    *dst[s] = dataset_from_table(read_table((fs::path(dir) / (std::string(kSplitNames[s]) + ".csv")).string()));
  return p;
}

const Dataset& split_by_name(const SplitDataset& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  if (name == "cal" || name == "calib") return d.cal;
  if (name == "test") return d.test;
  throw std::invalid_argument("unknown split: " + name);
}

std::vector<double> parse_lambda_grid(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

std::set<std::string> parse_formats(const std::vector<std::string>& f) {
  std::set<std::string> out;
  for (const auto& x : f) {
    std::stringstream ss(x);
    std::string item;
    while (std::getline(ss, item, ',')) out.insert(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibration of probabilistic regression models"};
  app.require_subcommand(1);

  // prepare
  std::string dataset, target = "y", out, synthetic, model_name = "mix-nll", method_name = "None";
  std::string posthoc = "calib", lambda_grid, model_file, map_file, config_file, split_name = "test";
  std::uint64_t seed = 0;
  std::size_t rows = 2000, epochs = 1000, sims = 10000, n = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> formats;
  double lambda = 0.0, observed = -1.0, alpha = 0.01;
  std::string metric = "pce", pits_file;

  auto* prepare = app.add_subcommand("prepare", "Shuffle, split and normalize a CSV dataset");
  prepare->add_option("--dataset", dataset, "CSV file");
  prepare->add_option("--synthetic", synthetic, "Generate a synthetic task: linear, sinusoidal, heavy-tailed");
  prepare->add_option("--rows", rows, "Rows of the synthetic task");
  prepare->add_option("--target", target, "Target column");
  prepare->add_option("--seed", seed, "Split seed");
  prepare->add_option("--out", out, "Output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a model on a prepared dataset");
  train_cmd->add_option("--dataset", dataset, "Prepared dataset directory")->required();
  train_cmd->add_option("--model", model_name, "mix-nll, mix-crps or sqr-crps");
  train_cmd->add_option("--method", method_name, "None, QR, Trunc, PCE-KDE or PCE-Sort");
  train_cmd->add_option("--lambda", lambda, "Regularization strength");
  train_cmd->add_option("--lambda-grid", lambda_grid, "Comma-separated lambdas; selects one by the CRPS cap rule");
  train_cmd->add_option("--seed", seed, "Initialization seed");
  train_cmd->add_option("--epochs", epochs, "Maximum epochs");
  train_cmd->add_option("--out", out, "Model JSON file")->required();

  auto* recal = app.add_subcommand("recalibrate", "Fit a recalibration map");
  auto* conf = app.add_subcommand("conformalize", "Fit a conformal calibrator");
  for (auto* c : {recal, conf}) {
    c->add_option("--dataset", dataset, "Prepared dataset directory")->required();
    c->add_option("--model-file", model_file, "Model JSON file")->required();
    c->add_option("--method", method_name, "Post-hoc method")->required();
    c->add_option("--posthoc-source", posthoc, "calib or train");
    c->add_option("--out", out, "Output JSON file")->required();
  }

  auto* eval = app.add_subcommand("evaluate", "Evaluate a model on a split");
  eval->add_option("--dataset", dataset, "Prepared dataset directory")->required();
  eval->add_option("--model-file", model_file, "Model JSON file")->required();
  eval->add_option("--posthoc-file", map_file, "Output of recalibrate or conformalize");
  eval->add_option("--split", split_name, "Split to evaluate");
  eval->add_option("--seed", seed, "Seed of the consistency band");
  eval->add_option("--format", formats, "json, csv, svg");
  eval->add_option("--out", out, "Output directory")->required();

  auto* null_test = app.add_subcommand("null-test", "Upper-tail p-value of a PCE under calibration");
  null_test->add_option("--n", n, "Number of PIT values");
  null_test->add_option("--pits", pits_file, "File with one PIT per line (sets n and the observed PCE)");
  null_test->add_option("--observed", observed, "Observed PCE");
  null_test->add_option("--sims", sims, "Null samples");
  null_test->add_option("--seed", seed, "Simulation seed");

  auto* compare = app.add_subcommand("compare", "Friedman test and critical difference ranking");
  compare->add_option("--dataset", dataset, "Long-format results CSV")->required();
  compare->add_option("--metric", metric, "Metric to compare");
  compare->add_option("--alpha", alpha, "Holm level");
  compare->add_option("--out", out, "Ranking JSON file");

  auto* report = app.add_subcommand("report", "Run the full pipeline and write reports");
  report->add_option("--config", config_file, "TOML run configuration");
  report->add_option("--dataset", dataset, "CSV file");
  report->add_option("--synthetic", synthetic, "Synthetic task instead of a CSV file");
  report->add_option("--rows", rows, "Rows of the synthetic task");
  report->add_option("--target", target, "Target column");
  report->add_option("--model", model_name, "mix-nll, mix-crps or sqr-crps");
  report->add_option("--method", method_name, "Comma-separated methods");
  report->add_option("--lambda-grid", lambda_grid, "Comma-separated lambdas");
  report->add_option("--seeds", seeds, "Seeds")->delimiter(',');
  report->add_option("--posthoc-source", posthoc, "calib or train");
  report->add_option("--epochs", epochs, "Maximum epochs");
  report->add_option("--format", formats, "json, csv, svg");
  report->add_option("--out", out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) {
      Table table;
      if (!synthetic.empty()) {
        table = synthetic_table(synthetic_kind_from_string(synthetic), rows, seed);
        std::ostringstream os;
        write_table(os, table);
        write_text(fs::path(out) / "source.csv", os.str());
      } else if (!dataset.empty()) {
        table = read_table(dataset);
      } else {
        throw std::invalid_argument("prepare: --dataset or --synthetic required");
      }
      const SplitDataset d = prepare_dataset(table, target, seed);
      const Dataset* src[4] = {&d.train, &d.val, &d.cal, &d.test};
      for (std::size_t s = 0; s < 4; ++s) {
        std::ostringstream os;
        write_table(os, dataset_table(*src[s], d.norm.feature_names));
        write_text(fs::path(out) / (std::string(kSplitNames[s]) + ".csv"), os.str());
      }
      write_text(fs::path(out) / "normalization.json", to_json(d.norm).dump(2) + "\n");
      std::cout << "rows " << d.rows_used << ": train " << d.train.size() << ", val " << d.val.size() << ", cal "
                << d.cal.size() << ", test " << d.test.size() << "\n";
    } else if (train_cmd->parsed()) {
      const Prepared p = load_prepared(dataset);
      NetworkConfig net;
      TrainConfig cfg;
      configure_model(model_kind_from_string(model_name), net, cfg);
      net.seed = seed;
      cfg.max_epochs = epochs;
      const Method m = method_from_string(method_name);
      if (m != Method::None && !is_regularized(m))
        throw std::invalid_argument("train: --method must be None or a regularizer");
      if (m != Method::None) cfg.regularizer = regularizer_of(m);
      TrainedModel model;
      if (!lambda_grid.empty() && m != Method::None) {
        std::vector<LambdaCandidate> cands;
        std::vector<TrainedModel> models;
        for (double l : parse_lambda_grid(lambda_grid)) {
          TrainConfig c = cfg;
          c.lambda = l;
          models.push_back(train(net, c, p.data.train, p.data.val));
          cands.push_back({l, models.back().selected().val_pce, models.back().selected().val_crps});
        }
        const double chosen = select_lambda(cands);
        for (auto& mm : models)
          if (mm.train.lambda == chosen) model = std::move(mm);
        std::cout << "selected lambda " << chosen << "\n";
      } else {
        cfg.lambda = m == Method::None ? 0.0 : lambda;
        model = train(net, cfg, p.data.train, p.data.val);
      }
      write_text(out, to_json(model).dump() + "\n");
      std::ostringstream log;
      write_training_log(log, model.log);
      write_text(fs::path(out).replace_extension(".log.csv"), log.str());
      const auto& sel = model.selected();
      std::cout << "best epoch " << model.best_epoch << ": val loss " << sel.val_loss << ", val PCE " << sel.val_pce
                << ", val CRPS " << sel.val_crps << "\n";
    } else if (recal->parsed() || conf->parsed()) {
      const Prepared p = load_prepared(dataset);
      const TrainedModel model = trained_model_from_json(read_json(model_file));
      const Method m = method_from_string(method_name);
      if (recal->parsed() && !is_recalibration(m)) throw std::invalid_argument("recalibrate: --method must be Rec-*");
      if (conf->parsed() && !is_conformal(m)) throw std::invalid_argument("conformalize: --method must be CQR or DCP");
      const PosthocSource source = posthoc_source_from_string(posthoc);
      const SplitTag split = split_of(source);
      const Dataset& src = split == SplitTag::Cal ? p.data.cal : p.data.train;
      const PosthocFit fit = fit_posthoc(m, detail::original_predictions(model, src, p.data.norm),
                                         detail::original_targets(src, p.data.norm), split, source);
      write_text(out, to_json(fit).dump() + "\n");
      std::cout << to_string(m) << " fitted on " << to_string(split) << " (" << src.size() << " points)\n";
    } else if (eval->parsed()) {
      const Prepared p = load_prepared(dataset);
      const TrainedModel model = trained_model_from_json(read_json(model_file));
      const Dataset& d = split_by_name(p.data, split_name);
      const auto preds = detail::original_predictions(model, d, p.data.norm);
      const auto y = detail::original_targets(d, p.data.norm);
      EvalOptions opt;
      opt.band_level = 0.9;
      opt.band_seed = seed;
      EvaluationReport r;
      r.dataset = fs::path(dataset).filename().string();
      r.model = model.net.head.kind == HeadKind::Quantile ? "SQR-CRPS"
                : model.train.base_loss == BaseLoss::Nll ? "MIX-NLL"
                                                          : "MIX-CRPS";
      r.seed = model.net.seed;
      r.method = model.train.regularizer == RegKind::None ? "None" : to_string(model.train.regularizer);
      if (!map_file.empty()) {
        const PosthocFit fit = posthoc_fit_from_json(read_json(map_file));
        r.method = to_string(fit.method);
        r.fit_split = to_string(fit.fitted_on);
        r.metrics = evaluate_posthoc(fit, preds, y, opt);
      } else {
        r.metrics = evaluate(preds, y, opt);
      }
      if (model.net.head.kind == HeadKind::Quantile) r.metrics.nll.reset();
      r.pce_p_value = p_value_upper(simulate_null_pce(r.metrics.n, kDefaultPceBins, sims, seed), r.metrics.pce);
      auto f = parse_formats(formats);
      if (f.empty()) f = {"json"};
      for (const auto& path : emit_report({r}, out, f)) std::cout << path.string() << "\n";
    } else if (null_test->parsed()) {
      if (!pits_file.empty()) {
        std::ifstream in(pits_file);
        if (!in) throw std::runtime_error("cannot read " + pits_file);
        std::vector<double> z;
        for (double v; in >> v;) z.push_back(v);
        n = z.size();
        observed = pce(z);
      }
      if (n == 0) throw std::invalid_argument("null-test: --n or --pits required");
      const auto null = simulate_null_pce(n, kDefaultPceBins, sims, seed);
      nlohmann::json j = {{"n", n},
                          {"sims", sims},
                          {"seed", seed},
                          {"q95", null_quantile(null, 0.95)},
                          {"q99", null_quantile(null, 0.99)},
                          {"q999", null_quantile(null, 0.999)}};
      if (observed >= 0.0) {
        j["observed"] = observed;
        j["p_value"] = p_value_upper(null, observed);
      }
      std::cout << j.dump(2) << "\n";
    } else if (compare->parsed()) {
      std::ifstream in(dataset);
      if (!in) throw std::runtime_error("cannot read " + dataset);
      const auto records = read_long_csv(in);
      const auto matrix = ComparisonMatrix::from_records(records, metric);
      const auto ranking = cd_ranking(matrix, alpha);
      const std::string text = to_json(ranking).dump(2) + "\n";
      if (out.empty())
        std::cout << text;
      else
        write_text(out, text);
    } else if (report->parsed()) {
      RunConfig c;
      if (!config_file.empty()) c = run_config_from_toml_file(config_file);
      if (!dataset.empty()) c.dataset_path = dataset;
      if (!synthetic.empty()) c.synthetic = synthetic_kind_from_string(synthetic);
      if (report->count("--rows")) c.synthetic_rows = rows;
      if (report->count("--target")) c.target = target;
      if (report->count("--model")) c.model = model_kind_from_string(model_name);
      if (report->count("--method")) {
        c.methods.clear();
        std::stringstream ss(method_name);
        for (std::string item; std::getline(ss, item, ',');) c.methods.push_back(method_from_string(item));
      }
      if (!lambda_grid.empty()) c.lambda_grid = parse_lambda_grid(lambda_grid);
      if (!seeds.empty()) c.seeds = seeds;
      if (report->count("--posthoc-source")) c.posthoc_source = posthoc_source_from_string(posthoc);
      if (report->count("--epochs")) c.train.max_epochs = epochs;
      if (!out.empty()) c.out_dir = out;
      auto f = parse_formats(formats);
      if (f.empty()) f = {"json", "csv", "svg"};
      const auto reports = run_pipeline(c);
      for (const auto& r : reports)
        if (!r.ok()) std::cerr << r.method << " seed " << r.seed << ": " << r.error << "\n";
      for (const auto& path : emit_report(reports, c.out_dir, f)) std::cout << path.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
