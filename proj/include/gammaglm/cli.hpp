#pragma once

// Command-line front end: simulate, fit, replay, cv, evaluate.
//
// Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
// Results go to stdout, diagnostics to stderr. Every stochastic command
// records its fully resolved options ("manifest.*" keys in model files) so a
// run can be replayed with `replay --model MODEL --out NEW`.

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gammaglm/data.hpp"
#include "gammaglm/init_select.hpp"
#include "gammaglm/model_io.hpp"

namespace gammaglm::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

namespace detail {

using Options = std::map<std::string, std::string>;

inline double to_double(const Options& o, const std::string& key) {
  const std::string& s = o.at(key);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("--" + key + ": expected a number, got '" + s + "'");
  return v;
}

inline std::uint64_t to_u64(const Options& o, const std::string& key) {
  const std::string& s = o.at(key);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("--" + key + ": expected a nonnegative integer, got '" + s + "'");
  return v;
}

inline std::size_t to_size(const Options& o, const std::string& key) {
  return static_cast<std::size_t>(to_u64(o, key));
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(' ');
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline std::vector<double> to_doubles(const std::string& s, const std::string& key) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    Options tmp{{key, item}};
    out.push_back(to_double(tmp, key));
  }
  return out;
}

inline void add(CLI::App* app, Options& o, const std::string& name, const std::string& def, const std::string& help) {
  o[name] = def;
  app->add_option("--" + name, o[name], help)->default_str(def);
}

inline void add_data_options(CLI::App* app, Options& o) {
  add(app, o, "family", "linear", "model family: linear | logistic | poisson");
  app->add_option("--data", o["data"], "training CSV (header row required)")->required();
  add(app, o, "response", "y", "response column");
  add(app, o, "offset", "", "offset column (Poisson only)");
  add(app, o, "log-offset", "0", "1 to take the log of the offset column");
  add(app, o, "ignore", "", "comma-separated columns to skip");
}

inline void add_pipeline_options(CLI::App* app, Options& o) {
  add(app, o, "gamma", "0.1", "density-power exponent gamma");
  add(app, o, "optimizer", "2rspg", "rspg | 2rspg | sgd | mm");
  add(app, o, "seed", "0", "random seed");
  add(app, o, "n-init", "200", "pilot sample size for the initial point and (L, tau2)");
  add(app, o, "ransac-trials", "100", "RANSAC trials");
  add(app, o, "init-noise", "0.1", "Gaussian perturbation added to the RANSAC estimate");
  add(app, o, "n-probe", "20", "probe pairs for the smoothness estimate");
  add(app, o, "probe-radius", "0.1", "probe radius around the initial point");
  add(app, o, "n-total", "auto", "sample budget N (default: training size)");
  add(app, o, "d-tilde", "1", "D-tilde of the mini-batch policy");
  add(app, o, "psi-star", "", "known lower bound of the objective (switches to D_Psi)");
  add(app, o, "n-cand", "5", "two-phase candidates");
  add(app, o, "n-post", "auto", "two-phase post-optimisation samples (default ceil(N/10))");
  add(app, o, "sgd-batch", "10", "SGD mini-batch size");
  add(app, o, "sgd-eta0", "auto", "SGD base step (eta_t = eta0 / sqrt(t); default 1/(2L))");
  add(app, o, "mm-max-iter", "500", "MM outer iterations");
  add(app, o, "mm-tol", "1e-8", "MM max-norm parameter tolerance");
}

inline CsvSchema schema_from(const Options& o) {
  CsvSchema s;
  s.response = o.at("response");
  if (!o.at("offset").empty()) s.offset = o.at("offset");
  s.log_offset = o.at("log-offset") == "1" || o.at("log-offset") == "true";
  s.ignore = split_list(o.at("ignore"));
  return s;
}

inline PipelineOptions pipeline_from(const Options& o, std::size_t n_train) {
  PipelineOptions p;
  p.optimizer = optimizer_from_string(o.at("optimizer"));
  p.gamma = to_double(o, "gamma");
  if (!(p.gamma > 0.0)) throw ConfigError("--gamma must be positive");
  p.seed = to_u64(o, "seed");
  p.n_init = to_size(o, "n-init");
  p.ransac_trials = to_size(o, "ransac-trials");
  p.init_noise = to_double(o, "init-noise");
  p.n_probe = to_size(o, "n-probe");
  p.probe_radius = to_double(o, "probe-radius");
  p.n_total = o.at("n-total") == "auto" ? n_train : to_size(o, "n-total");
  p.d_tilde = to_double(o, "d-tilde");
  if (!o.at("psi-star").empty()) p.psi_star = to_double(o, "psi-star");
  p.n_cand = to_size(o, "n-cand");
  p.n_post = o.at("n-post") == "auto" ? (*p.n_total + 9) / 10 : to_size(o, "n-post");
  p.sgd_batch = to_size(o, "sgd-batch");
  if (o.at("sgd-eta0") != "auto") p.sgd_eta0 = to_double(o, "sgd-eta0");
  p.mm.max_iter = to_size(o, "mm-max-iter");
  p.mm.tol = to_double(o, "mm-tol");
  if (p.n_init < 2) throw ConfigError("--n-init must be >= 2");
  return p;
}

inline void warn_all(std::ostream& err, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) err << "warning: " << w << '\n';
}

// ---------------------------------------------------------------------------

inline int cmd_simulate(const Options& o, std::ostream& out, std::ostream& err) {
  SimSpec spec;
  spec.family = family_from_string(o.at("family"));
  spec.N = to_size(o, "n");
  spec.p = to_size(o, "p");
  spec.epsilon = to_double(o, "eps");
  spec.seed = to_u64(o, "seed");
  const auto sim = simulate(spec);
  const std::string& path = o.at("out");
  write_csv(path, sim.data);
  auto truth = truth_json(sim, spec);
  for (const auto& [k, v] : o) truth["manifest"][k] = v;
  truth["manifest"]["command"] = "simulate";
  std::ofstream side(path + ".truth.json");
  if (!side) throw DataError("cannot write '" + path + ".truth.json'");
  side << truth.dump(2) << '\n';
  out << "rows = " << sim.data.size() << '\n'
      << "p = " << sim.data.p() << '\n'
      << "contaminated = " << sim.contaminated.size() << '\n'
      << "data = " << path << '\n'
      << "truth = " << path << ".truth.json\n";
  (void)err;
  return kOk;
}

inline int cmd_fit(Options o, std::ostream& out, std::ostream& err) {
  const Family family = family_from_string(o.at("family"));
  const double lambda = to_double(o, "lambda");
  if (!(lambda >= 0.0)) throw ConfigError("--lambda must be nonnegative");
  const auto table = load_csv(o.at("data"), family, schema_from(o));
  const Dataset& data = table.data;
  const PipelineOptions popt = [&] {
    auto p = pipeline_from(o, data.size());
    p.lambda = lambda;
    return p;
  }();
  if (popt.optimizer == Optimizer::Mm && family != Family::Linear)
    throw ConfigError("--optimizer mm supports the linear family only");

  const auto res = fit_pipeline(data, popt);
  warn_all(err, res.warnings);

  // Resolved values go back into the manifest.
  o["n-total"] = std::to_string(*popt.n_total);
  o["n-post"] = std::to_string(*popt.n_post);
  if (popt.optimizer == Optimizer::Sgd && o.at("sgd-eta0") == "auto")
    o["sgd-eta0"] = format_double(1.0 / (2.0 * res.smoothness.L));

  const FitReport& r = res.report;
  KeyValueFile f;
  f.set("family", std::string(to_string(family)));
  f.set("optimizer", std::string(to_string(popt.optimizer)));
  f.set("gamma", popt.gamma);
  f.set("lambda", lambda);
  write_theta(f, r.theta_hat);
  f.set("seed", o.at("seed"));
  f.set("stop_index", r.stop_index_R);
  f.set("pg_norm", r.pg_norm);
  f.set("emp_risk", r.emp_risk);
  f.set("batch_size", r.policy.m);
  f.set("iterations", r.policy.T);
  f.set("eta", r.policy.eta);
  f.set("L", res.smoothness.L);
  f.set("tau2", res.smoothness.tau2);
  if (!r.candidates.empty()) {
    std::string c;
    for (std::size_t s = 0; s < r.candidates.size(); ++s) {
      if (s) c += ", ";
      c += std::to_string(r.candidates[s].stop_index) + ":" + format_double(r.candidates[s].score);
    }
    f.set("candidates", c);
    f.set("selected", r.selected);
  }
  f.set("covariates", [&] {
    std::string s;
    for (std::size_t j = 0; j < table.covariate_names.size(); ++j) s += (j ? "," : "") + table.covariate_names[j];
    return s;
  }());
  f.set("manifest.command", std::string("fit"));
  for (const auto& [k, v] : o)
    if (k != "out") f.set("manifest." + k, v);

  const std::string& path = o.at("out");
  std::ofstream mf(path);
  if (!mf) throw DataError("cannot write '" + path + "'");
  f.write(mf, "gammaglm model");

  out << "stop_index = " << r.stop_index_R << '\n'
      << "pg_norm = " << format_double(r.pg_norm) << '\n'
      << "emp_risk = " << format_double(r.emp_risk) << '\n'
      << "nonzeros = " << (r.theta_hat.beta.array() != 0.0).count() << '\n'
      << "model = " << path << '\n';
  return kOk;
}

inline int cmd_cv(const Options& o, std::ostream& out, std::ostream& err) {
  const Family family = family_from_string(o.at("family"));
  const auto grid = to_doubles(o.at("grid"), "grid");
  if (grid.empty()) throw ConfigError("--grid is empty");
  for (double g : grid)
    if (!(g >= 0.0)) throw ConfigError("--grid entries must be nonnegative");
  const double gamma0 = to_double(o, "gamma0");
  const std::size_t folds = to_size(o, "folds");
  const auto table = load_csv(o.at("data"), family, schema_from(o));
  const Dataset& data = table.data;
  // Fold fits train on roughly (K-1)/K of the data.
  const std::size_t n_fold = data.size() - data.size() / std::max<std::size_t>(folds, 1);
  Options fo = o;
  if (fo.at("n-total") == "auto") fo["n-total"] = std::to_string(n_fold);
  const PipelineOptions popt = pipeline_from(fo, n_fold);
  if (popt.optimizer == Optimizer::Mm && family != Family::Linear)
    throw ConfigError("--optimizer mm supports the linear family only");

  const auto res = rocv_select(data, grid, gamma0, folds, pipeline_fitter(popt), popt.seed);
  warn_all(err, res.warnings);

  std::ostringstream table_txt;
  table_txt << "# lambda rocv\n";
  for (std::size_t g = 0; g < grid.size(); ++g)
    table_txt << format_double(grid[g]) << ' ' << format_double(res.scores[g]) << '\n';
  table_txt << "lambda_star = " << format_double(res.lambda_star) << '\n';
  out << table_txt.str();
  if (!o.at("out").empty()) {
    std::ofstream f(o.at("out"));
    if (!f) throw DataError("cannot write '" + o.at("out") + "'");
    f << table_txt.str();
    f << "# manifest\n";
    f << "manifest.command = cv\n";
    for (const auto& [k, v] : fo)
      if (k != "out") f << "manifest." << k << " = " << v << '\n';
  }
  return kOk;
}

inline int cmd_evaluate(const Options& o, std::ostream& out, std::ostream&) {
  std::ifstream mf(o.at("model"));
  if (!mf) throw DataError("cannot open model '" + o.at("model") + "'");
  const auto model = KeyValueFile::read(mf);
  const Family family = family_from_string(model.get("family"));
  const Theta theta = read_theta(model, family);
  const double gamma = model.get_double("gamma");
  const double lambda = model.get_double("lambda");

  Options so;
  for (const char* k : {"response", "offset", "log-offset", "ignore"}) {
    const std::string key = std::string("manifest.") + k;
    so[k] = o.at(k) != "model" ? o.at(k) : (model.has(key) ? model.get(key) : std::string());
  }
  if (so["response"].empty()) so["response"] = "y";
  if (so["log-offset"].empty()) so["log-offset"] = "0";
  CsvSchema schema = schema_from(so);
  if (model.has("covariates") && !model.get("covariates").empty()) schema.covariates = split_list(model.get("covariates"));
  const auto test = load_csv(o.at("test"), family, schema).data;
  if (test.p() != theta.p())
    throw DataError("test data has p = " + std::to_string(test.p()) + ", model has p = " + std::to_string(theta.p()));

  const std::string& metric = o.at("metric");
  if (metric == "emprisk" || metric == "exprisk") {
    const auto r = metric == "emprisk" ? emp_risk(test, theta, gamma, lambda) : exp_risk(test, theta, gamma, lambda);
    out << metric << " = " << format_double(r.value) << '\n' << "n = " << r.n_samples << '\n';
  } else if (metric == "rtmspe") {
    if (family != Family::Poisson) throw ConfigError("rtmspe applies to the Poisson family");
    const auto pred = predict_counts(test, theta);
    const std::vector<double> truth(test.y().data(), test.y().data() + test.y().size());
    for (double a : to_doubles(o.at("trim"), "trim"))
      out << "rtmspe[" << format_double(a) << "] = " << format_double(rtmspe(pred, truth, a)) << '\n';
  } else {
    throw ConfigError("unknown metric '" + metric + "'");
  }
  return kOk;
}

}  // namespace detail

/// Runs one command. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using namespace detail;
  CLI::App app{"Robust sparse GLMs via the density-power (gamma) divergence", "gammaglm"};
  app.require_subcommand(1);

  Options sim_o;
  auto* sim = app.add_subcommand("simulate", "generate a contaminated simulation dataset");
  add(sim, sim_o, "family", "linear", "model family");
  add(sim, sim_o, "n", "1000", "rows");
  add(sim, sim_o, "p", "20", "covariates (>= 11)");
  add(sim, sim_o, "eps", "0", "contamination fraction");
  add(sim, sim_o, "seed", "0", "random seed");
  sim->add_option("--out", sim_o["out"], "output CSV")->required();

  Options fit_o;
  auto* fit = app.add_subcommand("fit", "fit a sparse gamma-GLM");
  add_data_options(fit, fit_o);
  add_pipeline_options(fit, fit_o);
  add(fit, fit_o, "lambda", "0.01", "L1 penalty weight");
  fit->add_option("--out", fit_o["out"], "output model file")->required();

  Options replay_o;
  auto* replay = app.add_subcommand("replay", "re-run a fit from the manifest stored in a model file");
  replay->add_option("--model", replay_o["model"], "model file written by fit")->required();
  replay->add_option("--out", replay_o["out"], "output model file")->required();

  Options cv_o;
  auto* cv = app.add_subcommand("cv", "select lambda by robust cross-validation");
  add_data_options(cv, cv_o);
  add_pipeline_options(cv, cv_o);
  add(cv, cv_o, "grid", "1e-1,1e-2,1e-3", "comma-separated lambda grid");
  add(cv, cv_o, "gamma0", "1.0", "gamma used to score held-out folds");
  add(cv, cv_o, "folds", "5", "number of folds (n for leave-one-out)");
  add(cv, cv_o, "out", "", "optional score table file");

  Options ev_o;
  auto* ev = app.add_subcommand("evaluate", "evaluate a fitted model on a test CSV");
  ev->add_option("--model", ev_o["model"], "model file")->required();
  ev->add_option("--test", ev_o["test"], "test CSV")->required();
  add(ev, ev_o, "metric", "exprisk", "emprisk | exprisk | rtmspe");
  add(ev, ev_o, "trim", "0.05", "trim fraction(s) for rtmspe, comma-separated");
  add(ev, ev_o, "response", "model", "response column (default: from the model manifest)");
  add(ev, ev_o, "offset", "model", "offset column (default: from the model manifest)");
  add(ev, ev_o, "log-offset", "model", "log-transform the offset (default: from the model manifest)");
  add(ev, ev_o, "ignore", "model", "columns to skip (default: from the model manifest)");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(std::move(rev));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return kUsage;
  }

  const auto t0 = std::chrono::steady_clock::now();
  int code = kOk;
  try {
    if (sim->parsed()) {
      code = cmd_simulate(sim_o, out, err);
    } else if (fit->parsed()) {
      code = cmd_fit(fit_o, out, err);
    } else if (replay->parsed()) {
      std::ifstream mf(replay_o["model"]);
      if (!mf) throw DataError("cannot open model '" + replay_o["model"] + "'");
      const auto model = KeyValueFile::read(mf);
      std::vector<std::string> again{"fit"};
      for (const auto& [k, v] : model.entries()) {
        if (k.rfind("manifest.", 0) != 0 || k == "manifest.command") continue;
        again.push_back("--" + k.substr(9));
        again.push_back(v);
      }
      again.push_back("--out");
      again.push_back(replay_o["out"]);
      return run(again, out, err);
    } else if (cv->parsed()) {
      code = cmd_cv(cv_o, out, err);
    } else if (ev->parsed()) {
      code = cmd_evaluate(ev_o, out, err);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const nlohmann::json::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  err << "elapsed_seconds = " << secs << '\n';
  return code;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, out, err);
}

}  // namespace gammaglm::cli
